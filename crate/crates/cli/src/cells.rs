//! The experiment grid: one cell is a (model family, feature input, task)
//! triple. A cell splits the features, selects hyperparameters by
//! cross-validated grid search on the training side, fits the winner, and
//! scores the held-out side — plus the label-leakage diagnostic over the
//! held-out posts. `matrix` sweeps every cell into one results table.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use cbe_core::corpus::{LabeledCorpus, Task};
use cbe_core::eval::{
    bias_check, bias_reports_to_tsv, confusion_matrix, grid_search_parallel, metrics,
    results_to_tsv, stratified_kfold, stratified_split_indices, train_config, BiasReport,
    ResultRow,
};
use cbe_core::fusion::Standardizer;
use cbe_core::learn::{model_to_string, parse_model, predict, Dataset, TrainedModel};

use crate::artifacts::{is_cached, stage_key, write_artifact};
use crate::stages::{ensure_fuse, load_features, load_ingested, Ctx, FeatureSet, StageOut};
use crate::CliError;

pub const FAMILIES: [&str; 3] = ["logreg", "mlp", "knn"];
pub const INPUTS: [&str; 3] = ["text", "kge", "cbe"];

/// Derives a stable sub-seed for one role from the base training seed.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update([0]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// One evaluated cell.
pub struct CellOutcome {
    pub row: ResultRow,
    pub bias: BiasReport,
    pub model: TrainedModel,
    pub grid_seed: u64,
    pub fit_seed: u64,
}

fn split_for_task(
    ctx: &Ctx,
    labels: &[u8],
    task: Task,
) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    let seed = derive_seed(ctx.cfg.train.seed, &["split", task.column()]);
    Ok(stratified_split_indices(labels, ctx.cfg.train.ratio, seed)?)
}

/// The standardized train/test datasets for one (input, task) pair. The
/// scaler is fit on the training rows only and applied to both sides.
fn datasets(
    ctx: &Ctx,
    features: &StageOut,
    corpus: &LabeledCorpus,
    task: Task,
) -> Result<(Dataset, Dataset, Vec<usize>), CliError> {
    let (ids, labels_map, rows) = load_features(&features.path)?;
    let corpus_ids: Vec<&str> = corpus.posts().iter().map(|p| p.id.as_str()).collect();
    if ids.iter().map(String::as_str).ne(corpus_ids.iter().copied()) {
        return Err(CliError::Artifact(format!(
            "feature table {} does not match the ingested corpus",
            features.path.display()
        )));
    }
    let labels = labels_map.get(&task).ok_or_else(|| {
        CliError::Artifact(format!(
            "feature table {} has no labels for task {}",
            features.path.display(),
            task.column()
        ))
    })?;
    let (train_idx, test_idx) = split_for_task(ctx, labels, task)?;
    let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
    let scaler = Standardizer::fit(&train_rows)?;
    let scaled = scaler.transform_all(&rows)?;
    let full = Dataset::new(scaled, labels.clone(), ids)?;
    let train = full.subset(&train_idx)?;
    let test = full.subset(&test_idx)?;
    Ok((train, test, test_idx))
}

/// The corpus restricted to the given post indices, labels included.
fn subset_corpus(corpus: &LabeledCorpus, indices: &[usize]) -> Result<LabeledCorpus, CliError> {
    let posts = indices.iter().map(|&i| corpus.posts()[i].clone()).collect();
    let mut labels = BTreeMap::new();
    for task in corpus.tasks() {
        let all = corpus.labels(task)?;
        labels.insert(task, indices.iter().map(|&i| all[i]).collect());
    }
    Ok(LabeledCorpus::new(posts, labels)?)
}

/// Runs one cell end to end: grid search, final fit, held-out metrics, and
/// the held-out bias report.
pub fn run_cell(
    ctx: &Ctx,
    features: &StageOut,
    corpus: &LabeledCorpus,
    family: &str,
    input: &str,
    task: Task,
) -> Result<CellOutcome, CliError> {
    let (train, test, test_idx) = datasets(ctx, features, corpus, task)?;
    let fold_seed = derive_seed(ctx.cfg.train.seed, &["folds", task.column()]);
    let folds = stratified_kfold(&train.labels, ctx.cfg.train.folds, fold_seed)?;
    let grid = ctx.cfg.grids.for_family(family)?;
    let grid_seed = derive_seed(ctx.cfg.train.seed, &["grid", input, family, task.column()]);
    let (best, _scores) = grid_search_parallel(
        &grid,
        &train,
        &folds,
        ctx.cfg.train.score,
        grid_seed,
        ctx.workers(),
    )?;
    let fit_seed = derive_seed(ctx.cfg.train.seed, &["fit", input, family, task.column()]);
    let model = train_config(&best, &train, fit_seed)?;

    let (predicted, _) = predict(&model, &test.features)?;
    let report = metrics(&confusion_matrix(&test.labels, &predicted)?)?;
    let row = ResultRow {
        model: family.to_string(),
        input: input.to_string(),
        task,
        f1: report.f1,
        accuracy: report.accuracy,
    };

    let held_out = subset_corpus(corpus, &test_idx)?;
    let mut bias = bias_check(&held_out, task, &predicted, ctx.cfg.bias.top_n, ctx.cfg.bias.mode)?;
    bias.input_kind = input.to_string();
    bias.model_name = family.to_string();

    Ok(CellOutcome {
        row,
        bias,
        model,
        grid_seed,
        fit_seed,
    })
}

fn cell_canon(ctx: &Ctx, family: &str, input: &str, task: Task) -> String {
    format!(
        "cell.family={family}\ncell.input={input}\ncell.task={}\n{}{}{}",
        task.column(),
        ctx.cfg.canon_train(),
        ctx.cfg.canon_grids(),
        ctx.cfg.canon_bias(),
    )
}

fn cell_name(prefix: &str, family: &str, input: &str, task: Task) -> String {
    format!("{prefix}_{input}_{family}_{}.tsv", task.column())
}

/// Trains one cell's model and stores it as a reloadable artifact.
pub fn ensure_train(
    ctx: &Ctx,
    family: &str,
    input: &str,
    task: Task,
) -> Result<StageOut, CliError> {
    let features = ensure_fuse(ctx)?;
    let feature = features.for_input(input)?;
    let (corpus, _) = load_ingested(ctx)?;
    let key = stage_key("train", &cell_canon(ctx, family, input, task), &[&feature.hash]);
    let artifact = ctx
        .out
        .join(format!("model_{input}_{family}_{}.txt", task.column()));
    if is_cached(&artifact, &key) {
        return finish_stage("train", artifact, true);
    }
    let outcome = run_cell(ctx, feature, &corpus, family, input, task)?;
    let seeds = BTreeMap::from([
        ("train".to_string(), ctx.cfg.train.seed),
        ("grid".to_string(), outcome.grid_seed),
        ("fit".to_string(), outcome.fit_seed),
    ]);
    write_artifact(
        &artifact,
        &model_to_string(&outcome.model),
        "train",
        &key,
        &[&feature.hash],
        &seeds,
    )?;
    finish_stage("train", artifact, false)
}

fn finish_stage(stage: &str, path: std::path::PathBuf, cached: bool) -> Result<StageOut, CliError> {
    let hash = crate::artifacts::hash_file(&path)?;
    println!(
        "{stage}: {} {}",
        if cached { "cached" } else { "wrote" },
        path.display()
    );
    Ok(StageOut { path, hash, cached })
}

/// Scores one cell's stored model on the held-out split and writes a
/// single-row results table.
pub fn ensure_evaluate(
    ctx: &Ctx,
    family: &str,
    input: &str,
    task: Task,
) -> Result<StageOut, CliError> {
    let features = ensure_fuse(ctx)?;
    let feature = features.for_input(input)?;
    let model_stage = ensure_train(ctx, family, input, task)?;
    let (corpus, _) = load_ingested(ctx)?;
    let key = stage_key(
        "evaluate",
        &cell_canon(ctx, family, input, task),
        &[&feature.hash, &model_stage.hash],
    );
    let artifact = ctx.out.join(cell_name("eval", family, input, task));
    if is_cached(&artifact, &key) {
        return finish_stage("evaluate", artifact, true);
    }
    let model = parse_model(&crate::read_file(&model_stage.path)?)?;
    let (_, test, _) = datasets(ctx, feature, &corpus, task)?;
    let (predicted, _) = predict(&model, &test.features)?;
    let report = metrics(&confusion_matrix(&test.labels, &predicted)?)?;
    let row = ResultRow {
        model: family.to_string(),
        input: input.to_string(),
        task,
        f1: report.f1,
        accuracy: report.accuracy,
    };
    write_artifact(
        &artifact,
        &results_to_tsv(&[row]),
        "evaluate",
        &key,
        &[&feature.hash, &model_stage.hash],
        &BTreeMap::new(),
    )?;
    finish_stage("evaluate", artifact, false)
}

/// Runs the label-leakage diagnostic for one cell's stored model over the
/// held-out posts and writes a single-row bias table.
pub fn ensure_bias_check(
    ctx: &Ctx,
    family: &str,
    input: &str,
    task: Task,
) -> Result<StageOut, CliError> {
    let features = ensure_fuse(ctx)?;
    let feature = features.for_input(input)?;
    let model_stage = ensure_train(ctx, family, input, task)?;
    let (corpus, _) = load_ingested(ctx)?;
    let key = stage_key(
        "bias-check",
        &cell_canon(ctx, family, input, task),
        &[&feature.hash, &model_stage.hash],
    );
    let artifact = ctx.out.join(cell_name("bias", family, input, task));
    if is_cached(&artifact, &key) {
        return finish_stage("bias-check", artifact, true);
    }
    let model = parse_model(&crate::read_file(&model_stage.path)?)?;
    let (_, test, test_idx) = datasets(ctx, feature, &corpus, task)?;
    let (predicted, _) = predict(&model, &test.features)?;
    let held_out = subset_corpus(&corpus, &test_idx)?;
    let mut report =
        bias_check(&held_out, task, &predicted, ctx.cfg.bias.top_n, ctx.cfg.bias.mode)?;
    report.input_kind = input.to_string();
    report.model_name = family.to_string();
    write_artifact(
        &artifact,
        &bias_reports_to_tsv(&[report]),
        "bias-check",
        &key,
        &[&feature.hash, &model_stage.hash],
        &BTreeMap::new(),
    )?;
    finish_stage("bias-check", artifact, false)
}

/// Sweeps every (model family × input × task) cell and writes the combined
/// results and bias tables.
pub fn ensure_matrix(ctx: &Ctx) -> Result<(StageOut, StageOut), CliError> {
    let features: FeatureSet = ensure_fuse(ctx)?;
    let (corpus, ingest) = load_ingested(ctx)?;
    let canon = format!(
        "{}{}{}",
        ctx.cfg.canon_train(),
        ctx.cfg.canon_grids(),
        ctx.cfg.canon_bias()
    );
    let inputs = [
        features.text.hash.as_str(),
        features.kge.hash.as_str(),
        features.cbe.hash.as_str(),
        ingest.hash.as_str(),
    ];
    let key = stage_key("matrix", &canon, &inputs);
    let results_path = ctx.out.join("results.tsv");
    let bias_path = ctx.out.join("bias.tsv");
    if is_cached(&results_path, &key) && is_cached(&bias_path, &key) {
        let results = finish_stage("matrix", results_path, true)?;
        let bias = finish_stage("matrix", bias_path, true)?;
        return Ok((results, bias));
    }

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for family in FAMILIES {
        for input in INPUTS {
            let feature = features.for_input(input)?;
            for task in corpus.tasks() {
                let outcome = run_cell(ctx, feature, &corpus, family, input, task)?;
                println!(
                    "matrix: {family}/{input}/{} f1={} accuracy={:.6}",
                    task.column(),
                    outcome
                        .row
                        .f1
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_else(|| "NA".to_string()),
                    outcome.row.accuracy,
                );
                rows.push(outcome.row);
                reports.push(outcome.bias);
            }
        }
    }
    let seeds = BTreeMap::from([("train".to_string(), ctx.cfg.train.seed)]);
    write_artifact(&results_path, &results_to_tsv(&rows), "matrix", &key, &inputs, &seeds)?;
    write_artifact(&bias_path, &bias_reports_to_tsv(&reports), "matrix", &key, &inputs, &seeds)?;
    let results = finish_stage("matrix", results_path, false)?;
    let bias = finish_stage("matrix", bias_path, false)?;
    Ok((results, bias))
}
