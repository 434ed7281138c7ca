//! The artifact-producing pipeline stages. Each `ensure_*` function computes
//! its cache key from the stage config and the content hashes of its inputs,
//! reuses the artifact on disk when the key matches, and otherwise runs the
//! stage and writes artifact + manifest. Stages call their upstream
//! `ensure_*` first, so any subcommand can start from a bare output
//! directory.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Duration;

use cbe_core::corpus::{
    class_distribution, emoji_statistics, load_corpus, corpus_to_tsv, ItemKind, LabeledCorpus,
    PreprocessConfig, Task,
};
use cbe_core::embed::{
    embeddings_to_string, parse_embeddings, sif_embed_full, tokenize, train_skipgram_parallel,
    EmbeddingTable,
};
use cbe_core::eval::spearman;
use cbe_core::fusion::{
    entity_frequencies, features_to_tsv, fuse, kg_sentence_embedding_with_freq, parse_features,
};
use cbe_core::kgstore::{
    apply_additions, default_additions, entity_iri, load_additions, load_ntriples,
};
use cbe_core::linker::{
    apply_curation, default_curation_rules, load_curation_rules, load_gazetteer, merge_mentions,
    recognize_gazetteer, recognize_remote_batch, EntityMention, MentionSource, TabuTypeList,
};
use cbe_core::walks::{generate_walks_parallel, sequences_from_corpus, to_corpus_string};

use crate::artifacts::{hash_bytes, hash_file, is_cached, stage_key, write_artifact};
use crate::config::{LinkerMode, PipelineConfig};
use crate::CliError;

/// Everything a stage needs besides its own config section.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub deterministic: bool,
    pub remote_enabled: bool,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, deterministic: bool, remote_enabled: bool) -> Ctx {
        let out = cfg.output_dir();
        Ctx {
            cfg,
            out,
            deterministic,
            remote_enabled,
        }
    }

    /// Worker count for parallel sections; deterministic mode forces 1.
    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// A finished stage: where the artifact lives, its content hash (the input
/// hash for downstream stages), and whether the cache satisfied it.
pub struct StageOut {
    pub path: PathBuf,
    pub hash: String,
    pub cached: bool,
}

fn finish(ctx_stage: &str, path: PathBuf, cached: bool) -> Result<StageOut, CliError> {
    let hash = hash_file(&path)?;
    println!(
        "{ctx_stage}: {} {}",
        if cached { "cached" } else { "wrote" },
        path.display()
    );
    Ok(StageOut { path, hash, cached })
}

/// Validates the corpus file and writes its normalized TSV form.
pub fn ensure_ingest(ctx: &Ctx) -> Result<StageOut, CliError> {
    let corpus_path = ctx.cfg.corpus_path()?;
    let corpus_hash = hash_file(&corpus_path)?;
    let key = stage_key("ingest", &ctx.cfg.canon_preprocess(), &[&corpus_hash]);
    let artifact = ctx.artifact("corpus_ingested.tsv");
    if is_cached(&artifact, &key) {
        return finish("ingest", artifact, true);
    }
    let corpus = load_corpus(&corpus_path)?;
    write_artifact(
        &artifact,
        &corpus_to_tsv(&corpus)?,
        "ingest",
        &key,
        &[&corpus_hash],
        &BTreeMap::new(),
    )?;
    finish("ingest", artifact, false)
}

/// Loads the ingested corpus with text cleaning applied.
pub fn load_ingested(ctx: &Ctx) -> Result<(LabeledCorpus, StageOut), CliError> {
    let stage = ensure_ingest(ctx)?;
    let mut corpus = load_corpus(&stage.path)?;
    corpus.preprocess_all(&PreprocessConfig::default());
    Ok((corpus, stage))
}

fn push_row(rows: &mut Vec<(String, String)>, key: impl Into<String>, value: impl Into<String>) {
    rows.push((key.into(), value.into()));
}

/// Corpus diagnostics: emoji usage overall and per task/class, plus label
/// balance, as a two-column `metric<TAB>value` table.
pub fn ensure_analyze(ctx: &Ctx) -> Result<StageOut, CliError> {
    let (corpus, ingest) = load_ingested(ctx)?;
    let canon = format!("analyze.top_n={}\n", ctx.cfg.bias.top_n);
    let key = stage_key("analyze", &canon, &[&ingest.hash]);
    let artifact = ctx.artifact("analysis.tsv");
    if is_cached(&artifact, &key) {
        return finish("analyze", artifact, true);
    }

    let mut rows: Vec<(String, String)> = Vec::new();
    push_row(&mut rows, "posts", corpus.len().to_string());
    let (with_emoji, fraction) = emoji_statistics(&corpus)?;
    push_row(&mut rows, "posts_with_emoji", with_emoji.to_string());
    push_row(&mut rows, "emoji_fraction", format!("{fraction:.6}"));

    for task in corpus.tasks() {
        let labels = corpus.labels(task)?;
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let t = task.column();
        push_row(&mut rows, format!("task_{t}_positives"), positives.to_string());
        push_row(
            &mut rows,
            format!("task_{t}_negatives"),
            (labels.len() - positives).to_string(),
        );
        let (d0, d1) = class_distribution(&corpus, task, ItemKind::Emoji, ctx.cfg.bias.top_n)?;
        push_row(&mut rows, format!("task_{t}_emoji_class0_total"), d0.total().to_string());
        push_row(&mut rows, format!("task_{t}_emoji_class1_total"), d1.total().to_string());
        let keys: std::collections::BTreeSet<&String> =
            d0.counts.keys().chain(d1.counts.keys()).collect();
        let xs: Vec<f64> = keys.iter().map(|k| *d0.counts.get(*k).unwrap_or(&0) as f64).collect();
        let ys: Vec<f64> = keys.iter().map(|k| *d1.counts.get(*k).unwrap_or(&0) as f64).collect();
        let (rho, p) = match spearman(&xs, &ys) {
            Ok((rho, p)) => (format!("{rho:.6}"), format!("{p:.3e}")),
            Err(_) => ("NA".to_string(), "NA".to_string()),
        };
        push_row(&mut rows, format!("task_{t}_emoji_rho"), rho);
        push_row(&mut rows, format!("task_{t}_emoji_p"), p);
    }

    let mut content = String::from("metric\tvalue\n");
    for (k, v) in rows {
        content.push_str(&format!("{k}\t{v}\n"));
    }
    write_artifact(&artifact, &content, "analyze", &key, &[&ingest.hash], &BTreeMap::new())?;
    finish("analyze", artifact, false)
}

fn source_token(source: MentionSource) -> &'static str {
    match source {
        MentionSource::Gazetteer => "gazetteer",
        MentionSource::Remote => "remote",
        MentionSource::Merged => "merged",
    }
}

/// Hash of the curation rules actually in force (file or bundled default).
fn curation_hash(ctx: &Ctx) -> Result<(Vec<cbe_core::linker::CurationRule>, String), CliError> {
    match ctx.cfg.curation_path()? {
        Some(path) => Ok((load_curation_rules(&path)?, hash_file(&path)?)),
        None => {
            let rules = default_curation_rules();
            let repr: String = rules
                .iter()
                .map(|r| format!("{}\t{}\t{}\n", r.surface, r.wrong_qid, r.correct_qid))
                .collect();
            Ok((rules, hash_bytes(repr.as_bytes())))
        }
    }
}

/// Recognizes, merges, curates, and frequency-filters entity mentions;
/// writes one row per mention with its curation and retention flags.
pub fn ensure_link(ctx: &Ctx) -> Result<StageOut, CliError> {
    let (corpus, ingest) = load_ingested(ctx)?;
    let mode = ctx.cfg.effective_linker_mode(ctx.remote_enabled)?;
    let gazetteer_path = ctx.cfg.gazetteer_path()?;
    let gazetteer_hash = hash_file(&gazetteer_path)?;
    let (rules, rules_hash) = curation_hash(ctx)?;
    let key = stage_key(
        "link",
        &ctx.cfg.canon_link(mode),
        &[&ingest.hash, &gazetteer_hash, &rules_hash],
    );
    let artifact = ctx.artifact("mentions.tsv");
    if is_cached(&artifact, &key) {
        return finish("link", artifact, true);
    }

    let gazetteer = load_gazetteer(&gazetteer_path)?;
    let local: Vec<Vec<EntityMention>> = if mode == LinkerMode::Remote {
        vec![Vec::new(); corpus.len()]
    } else {
        corpus
            .posts()
            .iter()
            .map(|p| recognize_gazetteer(&p.clean_text, &gazetteer))
            .collect()
    };
    let remote: Vec<Vec<EntityMention>> = if mode == LinkerMode::Gazetteer {
        vec![Vec::new(); corpus.len()]
    } else {
        let texts: Vec<String> = corpus.posts().iter().map(|p| p.clean_text.clone()).collect();
        let timeout = Duration::from_millis(ctx.cfg.linker.timeout_ms);
        let results = recognize_remote_batch(
            &texts,
            &ctx.cfg.linker.endpoint,
            timeout,
            ctx.workers(),
        );
        let mut collected = Vec::with_capacity(results.len());
        for (post, result) in corpus.posts().iter().zip(results) {
            collected.push(result.map_err(|e| {
                CliError::Artifact(format!("remote linking failed for post {}: {e}", post.id))
            })?);
        }
        collected
    };

    let type_of = gazetteer.type_map();
    let tabu = TabuTypeList::default();
    let curated: Vec<Vec<EntityMention>> = local
        .iter()
        .zip(&remote)
        .map(|(a, b)| apply_curation(&merge_mentions(a, b), &rules, &tabu, &type_of))
        .collect();

    // Frequency filter: an entity is retained when its unflagged mentions
    // across the corpus reach linker.min_count.
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for mention in curated.iter().flatten().filter(|m| !m.needs_curation) {
        *counts.entry(mention.qid.as_str()).or_insert(0) += 1;
    }
    let min_count = ctx.cfg.linker.min_count.max(1);

    let mut content =
        String::from("id\tsurface\tstart\tend\tqid\ttype\tsource\tflagged\tretained\n");
    let mut total = 0u64;
    let mut retained_mentions = 0u64;
    for (post, mentions) in corpus.posts().iter().zip(&curated) {
        for m in mentions {
            total += 1;
            let retained =
                !m.needs_curation && counts.get(m.qid.as_str()).copied().unwrap_or(0) >= min_count;
            if retained {
                retained_mentions += 1;
            }
            content.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                post.id,
                m.surface,
                m.span.0,
                m.span.1,
                m.qid,
                m.entity_type.as_deref().unwrap_or(""),
                source_token(m.source),
                u8::from(m.needs_curation),
                u8::from(retained),
            ));
        }
    }
    let unique = counts.len();
    let retained_unique = counts.values().filter(|&&c| c >= min_count).count();
    println!(
        "link: {total} mentions, {unique} unique entities, {retained_unique} retained \
         ({retained_mentions} mentions kept)"
    );
    write_artifact(
        &artifact,
        &content,
        "link",
        &key,
        &[&ingest.hash, &gazetteer_hash, &rules_hash],
        &BTreeMap::new(),
    )?;
    finish("link", artifact, false)
}

/// Retained entity ids per post, aligned with the given post-id order.
pub fn load_mention_qids(
    mentions_path: &std::path::Path,
    ids: &[String],
) -> Result<Vec<Vec<String>>, CliError> {
    let content = crate::read_file(mentions_path)?;
    let mut per_post: HashMap<&str, Vec<String>> = HashMap::new();
    for (index, line) in content.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(CliError::Artifact(format!(
                "{}: line {}: expected 9 fields, got {}",
                mentions_path.display(),
                index + 1,
                fields.len()
            )));
        }
        if fields[8] == "1" {
            per_post.entry(fields[0]).or_default().push(fields[4].to_string());
        }
    }
    Ok(ids
        .iter()
        .map(|id| per_post.get(id.as_str()).cloned().unwrap_or_default())
        .collect())
}

/// Hash of the concept additions in force (file or bundled default).
fn additions_hash(ctx: &Ctx) -> Result<(Vec<cbe_core::kgstore::ConceptAddition>, String), CliError> {
    match ctx.cfg.additions_path()? {
        Some(path) => Ok((load_additions(&path)?, hash_file(&path)?)),
        None => {
            let adds = default_additions();
            let repr: String = adds
                .iter()
                .map(|a| format!("{}\t{}\t{}\n", a.label, a.qid, a.triples.len()))
                .collect();
            Ok((adds, hash_bytes(repr.as_bytes())))
        }
    }
}

/// Random walks over the knowledge graph from every retained entity.
pub fn ensure_walk(ctx: &Ctx) -> Result<StageOut, CliError> {
    let link = ensure_link(ctx)?;
    let kg_path = ctx.cfg.kg_path()?;
    let kg_hash = hash_file(&kg_path)?;
    let (additions, adds_hash) = additions_hash(ctx)?;
    let key = stage_key(
        "walk",
        &ctx.cfg.canon_walk(),
        &[&link.hash, &kg_hash, &adds_hash],
    );
    let artifact = ctx.artifact("walks.txt");
    if is_cached(&artifact, &key) {
        return finish("walk", artifact, true);
    }

    let graph = apply_additions(&load_ntriples(&kg_path)?, &additions)?;
    let content = crate::read_file(&link.path)?;
    let mut seeds: Vec<String> = content
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .filter_map(|l| {
            let fields: Vec<&str> = l.split('\t').collect();
            (fields.len() == 9 && fields[8] == "1").then(|| entity_iri(fields[4]))
        })
        .collect();
    seeds.sort();
    seeds.dedup();

    let walks = generate_walks_parallel(&graph, &seeds, &ctx.cfg.walk.to_core(), ctx.workers())?;
    if !walks.unknown_seeds.is_empty() {
        println!(
            "walk: {} linked entities absent from the graph (first: {})",
            walks.unknown_seeds.len(),
            walks.unknown_seeds[0]
        );
    }
    let seeds_map = BTreeMap::from([("walk".to_string(), ctx.cfg.walk.seed)]);
    write_artifact(
        &artifact,
        &to_corpus_string(&walks),
        "walk",
        &key,
        &[&link.hash, &kg_hash, &adds_hash],
        &seeds_map,
    )?;
    finish("walk", artifact, false)
}

/// Skip-gram embeddings of graph nodes, trained on the walk corpus.
pub fn ensure_embed_kg(ctx: &Ctx) -> Result<StageOut, CliError> {
    let walk = ensure_walk(ctx)?;
    let key = stage_key("embed-kg", &ctx.cfg.canon_embed_kg(), &[&walk.hash]);
    let artifact = ctx.artifact("kg.vec");
    if is_cached(&artifact, &key) {
        return finish("embed-kg", artifact, true);
    }
    let sequences = sequences_from_corpus(&crate::read_file(&walk.path)?);
    let table = train_skipgram_parallel(&sequences, &ctx.cfg.kg_embed.to_core(), ctx.workers())?;
    let seeds = BTreeMap::from([("embed.kg".to_string(), ctx.cfg.kg_embed.seed)]);
    write_artifact(
        &artifact,
        &embeddings_to_string(&table)?,
        "embed-kg",
        &key,
        &[&walk.hash],
        &seeds,
    )?;
    finish("embed-kg", artifact, false)
}

/// Text-side vectors: either a skip-gram table trained on the cleaned
/// corpus, or a user-supplied per-post embedding file passed through.
pub fn ensure_embed_text(ctx: &Ctx) -> Result<StageOut, CliError> {
    let artifact = ctx.artifact("text.vec");
    if let Some(external) = ctx.cfg.text_vectors_path()? {
        let external_hash = hash_file(&external)?;
        let key = stage_key("embed-text", "embed.text.source=external\n", &[&external_hash]);
        if is_cached(&artifact, &key) {
            return finish("embed-text", artifact, true);
        }
        let content = crate::read_file(&external)?;
        parse_embeddings(&content)?;
        write_artifact(&artifact, &content, "embed-text", &key, &[&external_hash], &BTreeMap::new())?;
        return finish("embed-text", artifact, false);
    }

    let (corpus, ingest) = load_ingested(ctx)?;
    let canon = format!("embed.text.source=trained\n{}", ctx.cfg.canon_embed_text());
    let key = stage_key("embed-text", &canon, &[&ingest.hash]);
    if is_cached(&artifact, &key) {
        return finish("embed-text", artifact, true);
    }
    let sentences: Vec<Vec<String>> =
        corpus.posts().iter().map(|p| tokenize(&p.clean_text)).collect();
    let table = train_skipgram_parallel(&sentences, &ctx.cfg.text_embed.to_core(), ctx.workers())?;
    let seeds = BTreeMap::from([("embed.text".to_string(), ctx.cfg.text_embed.seed)]);
    write_artifact(
        &artifact,
        &embeddings_to_string(&table)?,
        "embed-text",
        &key,
        &[&ingest.hash],
        &seeds,
    )?;
    finish("embed-text", artifact, false)
}

/// The three per-post feature tables the evaluation consumes.
pub struct FeatureSet {
    pub text: StageOut,
    pub kge: StageOut,
    pub cbe: StageOut,
}

impl FeatureSet {
    /// The feature table for an input name (`text`, `kge`, or `cbe`).
    pub fn for_input(&self, input: &str) -> Result<&StageOut, CliError> {
        match input {
            "text" => Ok(&self.text),
            "kge" => Ok(&self.kge),
            "cbe" => Ok(&self.cbe),
            other => Err(CliError::Config(format!(
                "unknown input {other:?} (expected text, kge, or cbe)"
            ))),
        }
    }
}

/// Builds sentence vectors for both sides and writes the text-only,
/// graph-only, and fused feature tables.
pub fn ensure_fuse(ctx: &Ctx) -> Result<FeatureSet, CliError> {
    let (corpus, ingest) = load_ingested(ctx)?;
    let link = ensure_link(ctx)?;
    let text_stage = ensure_embed_text(ctx)?;
    let kg_stage = ensure_embed_kg(ctx)?;

    let external = ctx.cfg.text_vectors_path()?.is_some();
    let text_source = if external { "external" } else { "trained" };
    let sif_canon = ctx.cfg.canon_sif();
    let text_canon = format!("text.source={text_source}\n{sif_canon}");
    let cbe_canon = format!("text.source={text_source}\n{sif_canon}{}", ctx.cfg.canon_fusion());

    let text_key = stage_key("fuse-text", &text_canon, &[&text_stage.hash, &ingest.hash]);
    let kge_key = stage_key("fuse-kge", &sif_canon, &[&kg_stage.hash, &link.hash, &ingest.hash]);
    let cbe_key = stage_key(
        "fuse-cbe",
        &cbe_canon,
        &[&text_stage.hash, &kg_stage.hash, &link.hash, &ingest.hash],
    );
    let text_path = ctx.artifact("features_text.tsv");
    let kge_path = ctx.artifact("features_kge.tsv");
    let cbe_path = ctx.artifact("features_cbe.tsv");

    if is_cached(&text_path, &text_key)
        && is_cached(&kge_path, &kge_key)
        && is_cached(&cbe_path, &cbe_key)
    {
        return Ok(FeatureSet {
            text: finish("fuse", text_path, true)?,
            kge: finish("fuse", kge_path, true)?,
            cbe: finish("fuse", cbe_path, true)?,
        });
    }

    let ids: Vec<String> = corpus.posts().iter().map(|p| p.id.clone()).collect();
    let mut labels: BTreeMap<Task, Vec<u8>> = BTreeMap::new();
    for task in corpus.tasks() {
        labels.insert(task, corpus.labels(task)?.to_vec());
    }

    // Text side: per-post sentence vectors.
    let text_table = parse_embeddings(&crate::read_file(&text_stage.path)?)?;
    let text_rows: Vec<Vec<f64>> = if external {
        ids.iter()
            .map(|id| {
                text_table.vector(id).map(<[f64]>::to_vec).ok_or_else(|| {
                    CliError::Artifact(format!("external text vectors have no row for post {id}"))
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        let sentences: Vec<Vec<String>> =
            corpus.posts().iter().map(|p| tokenize(&p.clean_text)).collect();
        let mut counts: HashMap<String, f64> = HashMap::new();
        let mut total = 0.0;
        for token in sentences.iter().flatten() {
            *counts.entry(token.clone()).or_insert(0.0) += 1.0;
            total += 1.0;
        }
        counts.values_mut().for_each(|c| *c /= total);
        sif_embed_full(&sentences, &text_table, &counts, &ctx.cfg.sif_config(), None)?.vectors
    };

    // Graph side: sentence vectors over each post's retained entities.
    let kg_table: EmbeddingTable = parse_embeddings(&crate::read_file(&kg_stage.path)?)?;
    let mention_qids = load_mention_qids(&link.path, &ids)?;
    let freqs = entity_frequencies(&mention_qids);
    let (kg_rows, kg_missing) = kg_sentence_embedding_with_freq(
        &mention_qids,
        &kg_table,
        &freqs,
        &ctx.cfg.sif_config(),
        None,
    )?;

    let cbe_rows: Vec<Vec<f64>> = (0..ids.len())
        .map(|i| {
            fuse(&text_rows[i], &kg_rows[i], kg_missing[i], ctx.cfg.fusion_strategy)
                .map(|v| v.values)
        })
        .collect::<Result<_, _>>()?;

    let mut outs = Vec::new();
    for (path, key, rows, inputs) in [
        (&text_path, &text_key, &text_rows, vec![text_stage.hash.as_str(), ingest.hash.as_str()]),
        (
            &kge_path,
            &kge_key,
            &kg_rows,
            vec![kg_stage.hash.as_str(), link.hash.as_str(), ingest.hash.as_str()],
        ),
        (
            &cbe_path,
            &cbe_key,
            &cbe_rows,
            vec![
                text_stage.hash.as_str(),
                kg_stage.hash.as_str(),
                link.hash.as_str(),
                ingest.hash.as_str(),
            ],
        ),
    ] {
        if is_cached(path, key) {
            outs.push(finish("fuse", path.clone(), true)?);
            continue;
        }
        let table = features_to_tsv(&ids, &labels, rows)?;
        write_artifact(path, &table, "fuse", key, &inputs, &BTreeMap::new())?;
        outs.push(finish("fuse", path.clone(), false)?);
    }
    let mut outs = outs.into_iter();
    Ok(FeatureSet {
        text: outs.next().expect("three feature outputs"),
        kge: outs.next().expect("three feature outputs"),
        cbe: outs.next().expect("three feature outputs"),
    })
}

/// Reads a feature table back as (ids, per-task labels, rows).
pub fn load_features(
    path: &std::path::Path,
) -> Result<(Vec<String>, BTreeMap<Task, Vec<u8>>, Vec<Vec<f64>>), CliError> {
    Ok(parse_features(&crate::read_file(path)?)?)
}
