//! Evaluation harness: stratified splitting and k-fold assignment, the
//! precision/recall/F1/accuracy formulas with explicit handling of
//! undefined cases, Spearman rank correlation with a Student-t p-value,
//! hyperparameter grid search, and the label-bias diagnostic comparing
//! per-class term distributions under gold and predicted labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{LabeledCorpus, Task};
use crate::learn::{
    predict, train_knn, train_logreg, train_mlp, Dataset, LearnError, Metric, TrainedModel,
};

/// Smallest p-value ever reported; perfect correlations floor here.
pub const P_VALUE_FLOOR: f64 = 1e-12;

/// Errors from splitting, metrics, correlation, and grid search.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("only one class present")]
    SingleClass,
    #[error("minority class has fewer members than folds")]
    TooFewMinority,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired observations")]
    TooShort,
    #[error("an input has zero rank variance")]
    ZeroVariance,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no labels for task {0}")]
    UnknownTask(Task),
    #[error("invalid ratio or fold count: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

// ------------------------------------------------------------------ metrics

/// Binary confusion counts. The trailing underscore on `fn_` dodges the
/// keyword; it holds the false negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Tallies predictions against gold labels (positive class = 1).
pub fn confusion_matrix(gold: &[u8], predicted: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(gold.len(), predicted.len()));
    }
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&g, &p) in gold.iter().zip(predicted) {
        match (g, p) {
            (1, 1) => cm.tp += 1,
            (0, 1) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Precision, recall, F1, and accuracy. A metric whose denominator is zero
/// is absent rather than silently zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

/// Computes the four standard metrics from a confusion matrix.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let precision = if cm.tp + cm.fp > 0 {
        Some(cm.tp as f64 / (cm.tp + cm.fp) as f64)
    } else {
        None
    };
    let recall = if cm.tp + cm.fn_ > 0 {
        Some(cm.tp as f64 / (cm.tp + cm.fn_) as f64)
    } else {
        None
    };
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        accuracy,
    })
}

// ----------------------------------------------------------------- spearman

/// Ranks with ties assigned the average of the positions they occupy
/// (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite values")
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &position in &order[i..=j] {
            ranks[position] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    let n = xs.len() as f64;
    let mean_x: f64 = xs.iter().sum::<f64>() / n;
    let mean_y: f64 = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    // One square root of the product keeps identical inputs at exactly 1.
    Ok(cov / (var_x * var_y).sqrt())
}

/// Spearman rank correlation with average-rank tie handling. The p-value
/// uses the two-sided t-approximation t = rho·√((n−2)/(1−rho²)) with n−2
/// degrees of freedom; |rho| = 1 reports the configured floor.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(EvalError::TooShort);
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    // Rank rounding can nudge a hair past ±1; clamp before the p-value.
    let rho = rho.clamp(-1.0, 1.0);
    let n = xs.len() as f64;
    let p = if rho.abs() >= 1.0 {
        P_VALUE_FLOOR
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0)
            .expect("n ≥ 3 gives positive degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(P_VALUE_FLOOR, 1.0)
    };
    Ok((rho, p))
}

// ---------------------------------------------------------------- splitting

fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Splits row indices into (train, test) preserving class proportions:
/// each class's train share is rounded to the nearest integer, and when
/// the per-class roundings disagree with the overall rounded train size,
/// the larger class absorbs the difference (ties favor class 0).
/// Membership is shuffled deterministically from the seed; the returned
/// index lists are sorted.
pub fn stratified_split_indices(
    labels: &[u8],
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(EvalError::InvalidConfig(format!(
            "train ratio must be strictly between 0 and 1, got {train_ratio}"
        )));
    }
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::SingleClass);
    }
    let target_total = round_half_away(train_ratio * labels.len() as f64);
    let mut train_pos = round_half_away(train_ratio * positives.len() as f64);
    let mut train_neg = round_half_away(train_ratio * negatives.len() as f64);
    let conflict = train_pos + train_neg - target_total;
    if conflict != 0 {
        if positives.len() > negatives.len() {
            train_pos -= conflict;
        } else {
            train_neg -= conflict;
        }
    }
    let train_pos = train_pos.clamp(0, positives.len() as i64) as usize;
    let train_neg = train_neg.clamp(0, negatives.len() as i64) as usize;
    if train_pos + train_neg == 0 || train_pos + train_neg == labels.len() {
        return Err(EvalError::InvalidConfig(
            "split leaves train or test empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut train: Vec<usize> = positives[..train_pos]
        .iter()
        .chain(&negatives[..train_neg])
        .copied()
        .collect();
    let mut test: Vec<usize> = positives[train_pos..]
        .iter()
        .chain(&negatives[train_neg..])
        .copied()
        .collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// [`stratified_split_indices`] over a labeled corpus, returning post ids.
pub fn stratified_split(
    corpus: &LabeledCorpus,
    task: Task,
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), EvalError> {
    let labels = corpus
        .labels(task)
        .map_err(|_| EvalError::UnknownTask(task))?;
    let (train, test) = stratified_split_indices(labels, train_ratio, seed)?;
    let id_of = |i: &usize| corpus.posts()[*i].id.clone();
    Ok((train.iter().map(id_of).collect(), test.iter().map(id_of).collect()))
}

/// A stratified assignment of rows to k cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold index of each row, aligned with the labels it was built from.
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Deals each class round-robin into k folds, carrying the rotation across
/// classes so fold sizes differ by at most one overall and per class.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!(
            "fold count must be ≥ 2, got {k}"
        )));
    }
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::SingleClass);
    }
    if k > positives.len().min(negatives.len()) {
        return Err(EvalError::TooFewMinority);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut fold_of = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in [positives, negatives] {
        for index in class {
            fold_of[index] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

// -------------------------------------------------------------- grid search

/// One hyperparameter setting for one model family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    LogReg { l2: f64, lr: f64, epochs: usize },
    Mlp { hidden: usize, lr: f64, epochs: usize },
    Knn { k: usize, metric: Metric },
}

impl ModelConfig {
    /// Short family name for report rows.
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::LogReg { .. } => "logreg",
            ModelConfig::Mlp { .. } => "mlp",
            ModelConfig::Knn { .. } => "knn",
        }
    }
}

impl std::fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelConfig::LogReg { l2, lr, epochs } => {
                write!(f, "logreg(l2={l2},lr={lr},epochs={epochs})")
            }
            ModelConfig::Mlp { hidden, lr, epochs } => {
                write!(f, "mlp(hidden={hidden},lr={lr},epochs={epochs})")
            }
            ModelConfig::Knn { k, metric } => write!(f, "knn(k={k},metric={metric})"),
        }
    }
}

/// Trains the model a config describes. The seed only matters for
/// families with random initialization.
pub fn train_config(cfg: &ModelConfig, ds: &Dataset, seed: u64) -> Result<TrainedModel, LearnError> {
    match cfg {
        ModelConfig::LogReg { l2, lr, epochs } => {
            Ok(TrainedModel::LogReg(train_logreg(ds, *l2, *lr, *epochs, seed)?))
        }
        ModelConfig::Mlp { hidden, lr, epochs } => {
            Ok(TrainedModel::Mlp(train_mlp(ds, *hidden, *lr, *epochs, seed)?))
        }
        ModelConfig::Knn { k, metric } => Ok(TrainedModel::Knn(train_knn(ds, *k, *metric)?)),
    }
}

/// Value lists per hyperparameter; expansion order follows field order,
/// outermost first.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelGrid {
    LogReg {
        l2: Vec<f64>,
        lr: Vec<f64>,
        epochs: Vec<usize>,
    },
    Mlp {
        hidden: Vec<usize>,
        lr: Vec<f64>,
        epochs: Vec<usize>,
    },
    Knn {
        k: Vec<usize>,
        metric: Vec<Metric>,
    },
}

impl ModelGrid {
    /// Cartesian product of the value lists, in declared enumeration order.
    pub fn expand(&self) -> Vec<ModelConfig> {
        let mut configs = Vec::new();
        match self {
            ModelGrid::LogReg { l2, lr, epochs } => {
                for &l2 in l2 {
                    for &lr in lr {
                        for &epochs in epochs {
                            configs.push(ModelConfig::LogReg { l2, lr, epochs });
                        }
                    }
                }
            }
            ModelGrid::Mlp { hidden, lr, epochs } => {
                for &hidden in hidden {
                    for &lr in lr {
                        for &epochs in epochs {
                            configs.push(ModelConfig::Mlp { hidden, lr, epochs });
                        }
                    }
                }
            }
            ModelGrid::Knn { k, metric } => {
                for &k in k {
                    for &metric in metric {
                        configs.push(ModelConfig::Knn { k, metric });
                    }
                }
            }
        }
        configs
    }
}

/// Which score a grid search optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMetric {
    #[default]
    F1,
    Accuracy,
}

impl std::fmt::Display for ScoreMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreMetric::F1 => write!(f, "f1"),
            ScoreMetric::Accuracy => write!(f, "accuracy"),
        }
    }
}

impl std::str::FromStr for ScoreMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "f1" => Ok(ScoreMetric::F1),
            "accuracy" | "acc" => Ok(ScoreMetric::Accuracy),
            other => Err(format!("unknown score metric {other:?}")),
        }
    }
}

/// Score of one prediction set. An undefined F1 (degenerate classifier)
/// counts as 0.0 here so fold means stay comparable; [`metrics`] itself
/// still reports absence explicitly.
fn fold_score(gold: &[u8], predicted: &[u8], metric: ScoreMetric) -> Result<f64, EvalError> {
    let report = metrics(&confusion_matrix(gold, predicted)?)?;
    Ok(match metric {
        ScoreMetric::F1 => report.f1.unwrap_or(0.0),
        ScoreMetric::Accuracy => report.accuracy,
    })
}

fn evaluate_config_on_folds(
    cfg: &ModelConfig,
    ds: &Dataset,
    folds: &FoldAssignment,
    metric: ScoreMetric,
    seed: u64,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for fold in 0..folds.k {
        let train = ds.subset(&folds.train_indices(fold))?;
        let test_indices = folds.test_indices(fold);
        let test = ds.subset(&test_indices)?;
        let model = train_config(cfg, &train, seed)?;
        let (predicted, _) = predict(&model, &test.features)?;
        sum += fold_score(&test.labels, &predicted, metric)?;
    }
    Ok(sum / folds.k as f64)
}

/// Exhaustively scores every config in the grid by mean held-out score
/// across the folds and returns the best config plus every config's mean.
/// Ties keep the earliest config in enumeration order.
pub fn grid_search(
    grid: &ModelGrid,
    ds: &Dataset,
    folds: &FoldAssignment,
    metric: ScoreMetric,
    seed: u64,
) -> Result<(ModelConfig, Vec<(ModelConfig, f64)>), EvalError> {
    let configs = grid.expand();
    if configs.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut scored = Vec::with_capacity(configs.len());
    for cfg in configs {
        let mean = evaluate_config_on_folds(&cfg, ds, folds, metric, seed)?;
        scored.push((cfg, mean));
    }
    let mut best = 0;
    for (i, (_, score)) in scored.iter().enumerate().skip(1) {
        if *score > scored[best].1 {
            best = i;
        }
    }
    Ok((scored[best].0.clone(), scored))
}

/// [`grid_search`] with configs fanned out over worker threads; the
/// reduction is ordered by config index, so results match the sequential
/// version exactly.
pub fn grid_search_parallel(
    grid: &ModelGrid,
    ds: &Dataset,
    folds: &FoldAssignment,
    metric: ScoreMetric,
    seed: u64,
    workers: usize,
) -> Result<(ModelConfig, Vec<(ModelConfig, f64)>), EvalError> {
    if workers <= 1 {
        return grid_search(grid, ds, folds, metric, seed);
    }
    let configs = grid.expand();
    if configs.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut slots: Vec<Option<Result<f64, EvalError>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..workers {
            let configs = &configs;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for i in (worker..configs.len()).step_by(workers) {
                    out.push((i, evaluate_config_on_folds(&configs[i], ds, folds, metric, seed)));
                }
                out
            }));
        }
        for handle in handles {
            for (i, result) in handle.join().expect("grid worker panicked") {
                slots[i] = Some(result);
            }
        }
    });
    let mut scored = Vec::with_capacity(configs.len());
    for (cfg, slot) in configs.into_iter().zip(slots) {
        scored.push((cfg, slot.expect("slot filled")?));
    }
    let mut best = 0;
    for (i, (_, score)) in scored.iter().enumerate().skip(1) {
        if *score > scored[best].1 {
            best = i;
        }
    }
    Ok((scored[best].0.clone(), scored))
}

// --------------------------------------------------------------- bias check

/// Whether term frequencies count every token occurrence or one per post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TermCountMode {
    #[default]
    Tokens,
    Documents,
}

impl std::str::FromStr for TermCountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "tokens" => Ok(TermCountMode::Tokens),
            "documents" | "docs" => Ok(TermCountMode::Documents),
            other => Err(format!("unknown term count mode {other:?}")),
        }
    }
}

/// A Spearman result that may be undefined for degenerate partitions.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationOutcome {
    Value { rho: f64, p: f64 },
    Degenerate(String),
}

/// Correlation between the per-class distributions of the most frequent
/// terms, once under gold labels and once under predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub task: Task,
    /// Which feature input produced the predictions (filled by the caller).
    pub input_kind: String,
    /// Which model produced the predictions (filled by the caller).
    pub model_name: String,
    pub top_n: usize,
    pub input: CorrelationOutcome,
    pub output: CorrelationOutcome,
}

fn per_class_term_vectors(
    term_order: &[String],
    posts_tokens: &[Vec<String>],
    labels: &[u8],
    mode: TermCountMode,
) -> (Vec<f64>, Vec<f64>) {
    let index: BTreeMap<&str, usize> = term_order
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut class0 = vec![0.0; term_order.len()];
    let mut class1 = vec![0.0; term_order.len()];
    for (tokens, &label) in posts_tokens.iter().zip(labels) {
        let target = if label == 1 { &mut class1 } else { &mut class0 };
        match mode {
            TermCountMode::Tokens => {
                for token in tokens {
                    if let Some(&i) = index.get(token.as_str()) {
                        target[i] += 1.0;
                    }
                }
            }
            TermCountMode::Documents => {
                let mut seen = std::collections::BTreeSet::new();
                for token in tokens {
                    if let Some(&i) = index.get(token.as_str()) {
                        if seen.insert(i) {
                            target[i] += 1.0;
                        }
                    }
                }
            }
        }
    }
    (class0, class1)
}

fn correlate(class0: &[f64], class1: &[f64]) -> CorrelationOutcome {
    match spearman(class0, class1) {
        Ok((rho, p)) => CorrelationOutcome::Value { rho, p },
        Err(e) => CorrelationOutcome::Degenerate(e.to_string()),
    }
}

/// Compares the per-class count vectors of the `top_n` most frequent
/// unigrams under gold labels against the same vectors under predicted
/// labels. A confident, unbiased classifier should leave the correlation
/// structure intact.
pub fn bias_check(
    corpus: &LabeledCorpus,
    task: Task,
    predictions: &[u8],
    top_n: usize,
    mode: TermCountMode,
) -> Result<BiasReport, EvalError> {
    let gold = corpus
        .labels(task)
        .map_err(|_| EvalError::UnknownTask(task))?;
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch(gold.len(), predictions.len()));
    }
    let posts_tokens: Vec<Vec<String>> = corpus
        .posts()
        .iter()
        .map(|p| {
            crate::embed::tokenize(&p.clean_text)
                .into_iter()
                .filter(|t| !t.starts_with('#'))
                .collect()
        })
        .collect();
    // Overall frequency ranking, stable across label assignments.
    let mut overall: BTreeMap<&str, u64> = BTreeMap::new();
    for tokens in &posts_tokens {
        match mode {
            TermCountMode::Tokens => {
                for token in tokens {
                    *overall.entry(token.as_str()).or_insert(0) += 1;
                }
            }
            TermCountMode::Documents => {
                let mut seen = std::collections::BTreeSet::new();
                for token in tokens {
                    if seen.insert(token.as_str()) {
                        *overall.entry(token.as_str()).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = overall.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let term_order: Vec<String> = ranked
        .into_iter()
        .take(top_n)
        .map(|(t, _)| t.to_string())
        .collect();
    let (gold0, gold1) = per_class_term_vectors(&term_order, &posts_tokens, gold, mode);
    let (pred0, pred1) = per_class_term_vectors(&term_order, &posts_tokens, predictions, mode);
    Ok(BiasReport {
        task,
        input_kind: String::new(),
        model_name: String::new(),
        top_n: term_order.len(),
        input: correlate(&gold0, &gold1),
        output: correlate(&pred0, &pred1),
    })
}

// ------------------------------------------------------------ result tables

/// One row of the final results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub input: String,
    pub task: Task,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

/// Serializes result rows as the canonical results TSV.
pub fn results_to_tsv(rows: &[ResultRow]) -> String {
    let mut out = String::from("model\tinput\ttask\tf1\taccuracy\n");
    for row in rows {
        let f1 = row
            .f1
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "NA".to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\n",
            row.model, row.input, row.task, f1, row.accuracy
        ));
    }
    out
}

fn outcome_columns(outcome: &CorrelationOutcome) -> (String, String, Option<String>) {
    match outcome {
        CorrelationOutcome::Value { rho, p } => {
            (format!("{rho:.6}"), format!("{p:.3e}"), None)
        }
        CorrelationOutcome::Degenerate(reason) => {
            ("NA".to_string(), "NA".to_string(), Some(reason.clone()))
        }
    }
}

/// Serializes bias reports as TSV, one row per (model, input, task).
pub fn bias_reports_to_tsv(reports: &[BiasReport]) -> String {
    let mut out =
        String::from("model\tinput\ttask\ttop_n\trho_input\tp_input\trho_output\tp_output\tnote\n");
    for report in reports {
        let (rho_in, p_in, note_in) = outcome_columns(&report.input);
        let (rho_out, p_out, note_out) = outcome_columns(&report.output);
        let note = match (note_in, note_out) {
            (Some(a), Some(b)) => format!("input: {a}; output: {b}"),
            (Some(a), None) => format!("input: {a}"),
            (None, Some(b)) => format!("output: {b}"),
            (None, None) => String::new(),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            report.model_name,
            report.input_kind,
            report.task,
            report.top_n,
            rho_in,
            p_in,
            rho_out,
            p_out,
            note
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn metrics_match_the_worked_numbers() {
        let cm = ConfusionMatrix {
            tp: 50,
            fp: 10,
            tn: 30,
            fn_: 10,
        };
        let report = metrics(&cm).unwrap();
        assert_abs_diff_eq!(report.precision.unwrap(), 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.recall.unwrap(), 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.f1.unwrap(), 5.0 / 6.0, epsilon = 1e-15);
        assert_eq!(report.accuracy, 0.8);
    }

    #[test]
    fn perfect_classifier_scores_one_everywhere() {
        let cm = ConfusionMatrix {
            tp: 7,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        let report = metrics(&cm).unwrap();
        assert_eq!(report.precision, Some(1.0));
        assert_eq!(report.recall, Some(1.0));
        assert_eq!(report.f1, Some(1.0));
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn undefined_metrics_are_absent_not_zero() {
        let cm = ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 3,
            fn_: 2,
        };
        let report = metrics(&cm).unwrap();
        assert_eq!(report.precision, None);
        assert_eq!(report.recall, Some(0.0));
        assert_eq!(report.f1, None);
        assert!(matches!(
            metrics(&ConfusionMatrix {
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 0
            }),
            Err(EvalError::EmptyMatrix)
        ));
    }

    #[test]
    fn f1_is_the_harmonic_mean_when_defined() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let cm = ConfusionMatrix {
                tp: rng.random_range(0..50),
                fp: rng.random_range(0..50),
                tn: rng.random_range(0..50),
                fn_: rng.random_range(0..50),
            };
            if cm.total() == 0 {
                continue;
            }
            let report = metrics(&cm).unwrap();
            assert_eq!(
                report.accuracy,
                (cm.tp + cm.tn) as f64 / cm.total() as f64
            );
            if let (Some(p), Some(r), Some(f1)) = (report.precision, report.recall, report.f1) {
                assert_abs_diff_eq!(f1, 2.0 * p * r / (p + r), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn confusion_matrix_tallies_all_cells() {
        let cm = confusion_matrix(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 2,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        assert!(confusion_matrix(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn spearman_hits_the_textbook_values() {
        let (rho, p) = spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rho, 1.0);
        assert_eq!(p, P_VALUE_FLOOR);
        let (rho, _) = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(rho, -1.0);
        let (rho, p) = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(rho, 0.8, epsilon = 1e-12);
        assert!(p > P_VALUE_FLOOR && p < 1.0);
    }

    #[test]
    fn spearman_ignores_monotone_transforms() {
        let xs = vec![0.3, 1.7, 0.9, 4.2, 2.2, 0.1];
        let ys = vec![5.0, 2.0, 8.0, 1.0, 9.0, 4.0];
        let (rho, p) = spearman(&xs, &ys).unwrap();
        let xs_exp: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let ys_cube: Vec<f64> = ys.iter().map(|y| y * y * y).collect();
        let (rho2, p2) = spearman(&xs_exp, &ys_cube).unwrap();
        assert_eq!(rho, rho2);
        assert_eq!(p, p2);
    }

    #[test]
    fn spearman_averages_tied_ranks() {
        // xs has a tie on positions 0 and 1 → both rank 1.5.
        let ranks = average_ranks(&[5.0, 5.0, 7.0, 6.0]);
        assert_eq!(ranks, vec![1.5, 1.5, 4.0, 3.0]);
        let (rho, _) = spearman(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_rejects_degenerate_input() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(EvalError::TooShort)
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch(3, 2))
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::ZeroVariance)
        ));
    }

    fn labels_with(n: usize, positives: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < positives)).collect()
    }

    #[test]
    fn split_of_100_posts_20_positive_gives_14_and_6() {
        let labels = labels_with(100, 20);
        let (train, test) = stratified_split_indices(&labels, 0.7, 5).unwrap();
        assert_eq!(train.len(), 70);
        assert_eq!(test.len(), 30);
        let train_pos = train.iter().filter(|&&i| labels[i] == 1).count();
        let test_pos = test.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(train_pos, 14);
        assert_eq!(test_pos, 6);
    }

    #[test]
    fn split_of_2000_posts_gives_1400_600() {
        let labels = labels_with(2000, 357);
        let (train, test) = stratified_split_indices(&labels, 0.7, 1).unwrap();
        assert_eq!(train.len(), 1400);
        assert_eq!(test.len(), 600);
    }

    #[test]
    fn split_covers_every_index_exactly_once() {
        let labels = labels_with(37, 11);
        let (train, test) = stratified_split_indices(&labels, 0.7, 9).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        // Deterministic given the seed; different seed moves membership.
        let again = stratified_split_indices(&labels, 0.7, 9).unwrap();
        assert_eq!((train.clone(), test.clone()), again);
        let other = stratified_split_indices(&labels, 0.7, 10).unwrap();
        assert_ne!((train, test), other);
    }

    #[test]
    fn degenerate_ratios_and_single_class_rejected() {
        let labels = labels_with(10, 5);
        assert!(stratified_split_indices(&labels, 1.0, 0).is_err());
        assert!(stratified_split_indices(&labels, 0.0, 0).is_err());
        assert!(stratified_split_indices(&labels_with(10, 0), 0.7, 0).is_err());
        assert!(stratified_split_indices(&labels_with(10, 10), 0.7, 0).is_err());
    }

    #[test]
    fn kfold_2000_posts_gives_folds_of_exactly_200() {
        let labels = labels_with(2000, 359);
        let folds = stratified_kfold(&labels, 10, 3).unwrap();
        for fold in 0..10 {
            assert_eq!(folds.test_indices(fold).len(), 200);
        }
    }

    #[test]
    fn kfold_balanced_ten_posts_gives_one_of_each_per_fold() {
        let labels = labels_with(10, 5);
        let folds = stratified_kfold(&labels, 5, 7).unwrap();
        for fold in 0..5 {
            let test = folds.test_indices(fold);
            assert_eq!(test.len(), 2);
            let positives = test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(positives, 1);
        }
    }

    #[test]
    fn kfold_stratification_invariants_hold_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let n = rng.random_range(20..200);
            let positives = rng.random_range(5..n - 5);
            let mut labels = labels_with(n, positives);
            labels.shuffle(&mut rng);
            let k = rng.random_range(2..=5.min(positives).min(n - positives));
            let folds = stratified_kfold(&labels, k, rng.random()).unwrap();
            let sizes: Vec<usize> = (0..k).map(|f| folds.test_indices(f).len()).collect();
            let pos: Vec<usize> = (0..k)
                .map(|f| {
                    folds
                        .test_indices(f)
                        .iter()
                        .filter(|&&i| labels[i] == 1)
                        .count()
                })
                .collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
            assert_eq!(sizes.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn kfold_rejects_bad_k() {
        let labels = labels_with(10, 3);
        assert!(matches!(
            stratified_kfold(&labels, 1, 0),
            Err(EvalError::InvalidConfig(_))
        ));
        assert!(matches!(
            stratified_kfold(&labels, 4, 0),
            Err(EvalError::TooFewMinority)
        ));
    }

    fn linear_dataset(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for i in 0..n {
            let label = u8::from(i % 2 == 0);
            let center = if label == 1 { 1.5 } else { -1.5 };
            features.push(vec![center + rng.random::<f64>() - 0.5]);
            labels.push(label);
            ids.push(format!("r{i}"));
        }
        Dataset::new(features, labels, ids).unwrap()
    }

    #[test]
    fn singleton_grid_returns_its_only_config() {
        let ds = linear_dataset(4, 40);
        let folds = stratified_kfold(&ds.labels, 4, 0).unwrap();
        let grid = ModelGrid::Knn {
            k: vec![3],
            metric: vec![Metric::Euclidean],
        };
        let (best, scored) = grid_search(&grid, &ds, &folds, ScoreMetric::F1, 0).unwrap();
        assert_eq!(
            best,
            ModelConfig::Knn {
                k: 3,
                metric: Metric::Euclidean
            }
        );
        assert_eq!(scored.len(), 1);
    }

    #[test]
    fn grid_prefers_the_config_that_can_learn() {
        let ds = linear_dataset(5, 60);
        let folds = stratified_kfold(&ds.labels, 3, 1).unwrap();
        // Zero epochs cannot learn (w = 0 → all labels 1); 300 epochs can.
        let grid = ModelGrid::LogReg {
            l2: vec![0.0],
            lr: vec![0.5],
            epochs: vec![0, 300],
        };
        let (best, scored) = grid_search(&grid, &ds, &folds, ScoreMetric::Accuracy, 0).unwrap();
        assert_eq!(
            best,
            ModelConfig::LogReg {
                l2: 0.0,
                lr: 0.5,
                epochs: 300
            }
        );
        assert!(scored[1].1 > scored[0].1);
    }

    #[test]
    fn grid_ties_keep_enumeration_order() {
        let ds = linear_dataset(6, 30);
        let folds = stratified_kfold(&ds.labels, 3, 2).unwrap();
        // Identical configs except an l2 that does nothing at 0 epochs:
        // scores are bitwise equal, so the first must win.
        let grid = ModelGrid::LogReg {
            l2: vec![0.0, 0.1],
            lr: vec![0.1],
            epochs: vec![0],
        };
        let (best, scored) = grid_search(&grid, &ds, &folds, ScoreMetric::F1, 0).unwrap();
        assert_eq!(scored[0].1.to_bits(), scored[1].1.to_bits());
        assert_eq!(
            best,
            ModelConfig::LogReg {
                l2: 0.0,
                lr: 0.1,
                epochs: 0
            }
        );
    }

    #[test]
    fn grid_mean_equals_arithmetic_mean_of_fold_scores() {
        let ds = linear_dataset(7, 40);
        let folds = stratified_kfold(&ds.labels, 4, 3).unwrap();
        let cfg = ModelConfig::Knn {
            k: 3,
            metric: Metric::Euclidean,
        };
        let mean = evaluate_config_on_folds(&cfg, &ds, &folds, ScoreMetric::F1, 0).unwrap();
        let mut manual = 0.0;
        for fold in 0..folds.k {
            let train = ds.subset(&folds.train_indices(fold)).unwrap();
            let test = ds.subset(&folds.test_indices(fold)).unwrap();
            let model = train_config(&cfg, &train, 0).unwrap();
            let (predicted, _) = predict(&model, &test.features).unwrap();
            manual += fold_score(&test.labels, &predicted, ScoreMetric::F1).unwrap();
        }
        manual /= folds.k as f64;
        assert!((mean - manual).abs() < 1e-12);
    }

    #[test]
    fn parallel_grid_matches_sequential() {
        let ds = linear_dataset(9, 40);
        let folds = stratified_kfold(&ds.labels, 4, 4).unwrap();
        let grid = ModelGrid::Knn {
            k: vec![1, 3, 5],
            metric: vec![Metric::Euclidean, Metric::Cosine],
        };
        let sequential = grid_search(&grid, &ds, &folds, ScoreMetric::F1, 0).unwrap();
        let parallel = grid_search_parallel(&grid, &ds, &folds, ScoreMetric::F1, 0, 3).unwrap();
        assert_eq!(sequential.0, parallel.0);
        assert_eq!(sequential.1, parallel.1);
    }

    #[test]
    fn empty_grid_rejected() {
        let ds = linear_dataset(10, 20);
        let folds = stratified_kfold(&ds.labels, 2, 0).unwrap();
        let grid = ModelGrid::Knn {
            k: vec![],
            metric: vec![Metric::Euclidean],
        };
        assert!(matches!(
            grid_search(&grid, &ds, &folds, ScoreMetric::F1, 0),
            Err(EvalError::EmptyGrid)
        ));
    }

    fn bias_corpus() -> LabeledCorpus {
        let texts = [
            "thin mirror scale body",
            "thin thin fear scale",
            "food recipe dinner body",
            "food happy dinner recipe",
            "mirror fear body thin",
            "recipe dinner happy food",
        ];
        let posts: Vec<Post> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Post {
                id: format!("p{i}"),
                text: t.to_string(),
                clean_text: t.to_string(),
                author_id: None,
                emojis: Vec::new(),
            })
            .collect();
        let labels: BTreeMap<Task, Vec<u8>> =
            [(Task::Ed1, vec![1, 1, 0, 0, 1, 0])].into_iter().collect();
        LabeledCorpus::new(posts, labels).unwrap()
    }

    #[test]
    fn gold_predictions_reproduce_input_correlation_exactly() {
        let corpus = bias_corpus();
        let gold = corpus.labels(Task::Ed1).unwrap().to_vec();
        let report = bias_check(&corpus, Task::Ed1, &gold, 10, TermCountMode::Tokens).unwrap();
        match (&report.input, &report.output) {
            (
                CorrelationOutcome::Value { rho: ri, p: pi },
                CorrelationOutcome::Value { rho: ro, p: po },
            ) => {
                assert_eq!(ri.to_bits(), ro.to_bits());
                assert_eq!(pi.to_bits(), po.to_bits());
            }
            other => panic!("expected values on both sides, got {other:?}"),
        }
    }

    #[test]
    fn all_one_predictions_surface_a_degenerate_output() {
        let corpus = bias_corpus();
        let report =
            bias_check(&corpus, Task::Ed1, &[1; 6], 10, TermCountMode::Tokens).unwrap();
        assert!(matches!(report.input, CorrelationOutcome::Value { .. }));
        assert!(matches!(report.output, CorrelationOutcome::Degenerate(_)));
    }

    #[test]
    fn bias_check_validates_inputs() {
        let corpus = bias_corpus();
        assert!(matches!(
            bias_check(&corpus, Task::Ed2, &[1; 6], 10, TermCountMode::Tokens),
            Err(EvalError::UnknownTask(Task::Ed2))
        ));
        assert!(matches!(
            bias_check(&corpus, Task::Ed1, &[1; 3], 10, TermCountMode::Tokens),
            Err(EvalError::LengthMismatch(6, 3))
        ));
    }

    #[test]
    fn document_counting_caps_repeats() {
        let corpus = bias_corpus();
        let gold = corpus.labels(Task::Ed1).unwrap().to_vec();
        // "thin" appears twice in post p1; token and document counting must
        // produce different class-1 vectors, both still valid reports.
        let tokens = bias_check(&corpus, Task::Ed1, &gold, 3, TermCountMode::Tokens).unwrap();
        let docs = bias_check(&corpus, Task::Ed1, &gold, 3, TermCountMode::Documents).unwrap();
        assert_eq!(tokens.top_n, 3);
        assert_eq!(docs.top_n, 3);
    }

    #[test]
    fn report_tables_serialize_stably() {
        let rows = vec![ResultRow {
            model: "knn".into(),
            input: "cbe".into(),
            task: Task::Ed1,
            f1: Some(0.5),
            accuracy: 0.75,
        }];
        let tsv = results_to_tsv(&rows);
        assert_eq!(
            tsv,
            "model\tinput\ttask\tf1\taccuracy\nknn\tcbe\ted1\t0.500000\t0.750000\n"
        );
        let na = results_to_tsv(&[ResultRow {
            f1: None,
            ..rows[0].clone()
        }]);
        assert!(na.contains("\tNA\t"));
        let bias = bias_reports_to_tsv(&[BiasReport {
            task: Task::Ed1,
            input_kind: "cbe".into(),
            model_name: "knn".into(),
            top_n: 3,
            input: CorrelationOutcome::Value { rho: 0.9, p: 0.01 },
            output: CorrelationOutcome::Degenerate("one class empty".into()),
        }]);
        assert!(bias.contains("knn\tcbe\ted1\t3\t0.900000\t1.000e-2\tNA\tNA\toutput: one class empty"));
    }
}
