//! Shared helpers for the integration suites: fixture paths, a runner for
//! the compiled binary, and a synthetic benchmark corpus whose labels are
//! recoverable from the graph neighborhoods of the linked entities.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::{Command, Output};

use cbe_core::corpus::{LabeledCorpus, Post, PreprocessConfig, Task};
use cbe_core::embed::{sif_embed_full, tokenize, train_skipgram, SgnsConfig, SifConfig};
use cbe_core::eval::{confusion_matrix, metrics, stratified_kfold, train_config, ModelConfig};
use cbe_core::fusion::{
    entity_frequencies, fuse, kg_sentence_embedding_with_freq, FusionStrategy, Standardizer,
};
use cbe_core::kgstore::{entity_iri, KnowledgeGraph, Object, Triple};
use cbe_core::learn::{predict, Dataset};
use cbe_core::linker::{recognize_gazetteer, Gazetteer};
use cbe_core::walks::{generate_walks, walks_to_sequences, WalkConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Path of a bundled fixture file.
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the compiled `cbe` binary with the given arguments and extra
/// environment variables, capturing the output.
pub fn run_cbe(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cbe"));
    cmd.args(args);
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().expect("failed to spawn the cbe binary")
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

const ENTITIES_PER_CLASS: usize = 40;
const BENCHMARK_POSTS: usize = 400;
/// Class-indicative vocabulary stems: each class draws from its own set of
/// rare words, the way real posts carry topic-specific terms.
const CLASS_STEMS: [&str; 2] = ["calm", "loud"];

fn entity_qid(class: usize, index: usize) -> String {
    format!("Q9{}00{:03}", class + 1, index)
}

fn entity_surface(class: usize, index: usize) -> String {
    format!("c{class}e{index:02}")
}

fn hub_qid(index: usize) -> String {
    format!("Q93000{index}")
}

const P361: &str = "http://www.wikidata.org/prop/direct/P361";
const P527: &str = "http://www.wikidata.org/prop/direct/P527";
const P2283: &str = "http://www.wikidata.org/prop/direct/P2283";

/// A corpus, graph, and gazetteer where class-1 posts mention entities that
/// cluster together in the graph, far from the class-0 cluster.
pub struct Benchmark {
    pub corpus: LabeledCorpus,
    pub graph: KnowledgeGraph,
    pub gazetteer: Gazetteer,
}

/// Builds the synthetic benchmark: two entity clusters with dedicated hub
/// nodes and a 400-post corpus. Filler words follow a Zipf-like law so both
/// classes share the same frequent vocabulary; about a quarter of each
/// post's words come from a rare class-specific vocabulary, and only about
/// half the posts mention 1–3 entities of their own class's cluster — so
/// neither the text nor the graph signal suffices alone and the fused
/// representation sees strictly more than either input.
pub fn planted_benchmark(seed: u64) -> Benchmark {
    let mut triples = Vec::new();
    let mut edge = |s: &str, p: &str, o: &str| {
        triples.push(Triple::new(entity_iri(s), p, Object::Iri(entity_iri(o))));
    };
    for class in 0..2 {
        // Hub 0/1 per class, plus hub 4 shared by both clusters.
        let own_hub = hub_qid(class);
        for i in 0..ENTITIES_PER_CLASS {
            let qid = entity_qid(class, i);
            edge(&qid, P361, &own_hub);
            edge(&own_hub, P527, &qid);
            edge(&qid, P2283, &entity_qid(class, (i + 1) % ENTITIES_PER_CLASS));
            edge(&qid, P2283, &entity_qid(class, (i + 7) % ENTITIES_PER_CLASS));
            if i % 8 == 0 {
                edge(&qid, P361, &hub_qid(4));
            }
        }
    }
    let graph = KnowledgeGraph::from_triples(triples);

    let mut gazetteer = Gazetteer::new();
    for class in 0..2 {
        for i in 0..ENTITIES_PER_CLASS {
            gazetteer
                .insert(&entity_surface(class, i), &entity_qid(class, i), None)
                .expect("benchmark gazetteer entry");
        }
    }

    // Cumulative 1/(rank+1) weights: natural-looking token frequencies whose
    // counts correlate across classes instead of being independent noise.
    let mut pool_cdf = Vec::with_capacity(100);
    let mut running = 0.0f64;
    for rank in 0..100 {
        running += 1.0 / (rank + 1) as f64;
        pool_cdf.push(running);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = Vec::with_capacity(BENCHMARK_POSTS);
    let mut labels = Vec::with_capacity(BENCHMARK_POSTS);
    for i in 0..BENCHMARK_POSTS {
        let class = i % 2;
        let mut tokens: Vec<String> = Vec::new();
        let n_words = rng.random_range(6..=10);
        for _ in 0..n_words {
            if rng.random_range(0.0..1.0) < 0.25 {
                tokens.push(format!("{}{:02}", CLASS_STEMS[class], rng.random_range(0..30)));
            } else {
                let draw = rng.random_range(0.0..running);
                let rank = pool_cdf.partition_point(|&c| c < draw);
                tokens.push(format!("w{rank:02}"));
            }
        }
        if rng.random_range(0.0..1.0) < 0.55 {
            let k = rng.random_range(1..=3);
            let mut indices: Vec<usize> = (0..ENTITIES_PER_CLASS).collect();
            indices.shuffle(&mut rng);
            for &idx in indices.iter().take(k) {
                tokens.push(entity_surface(class, idx));
            }
        }
        tokens.shuffle(&mut rng);
        posts.push(Post::new(format!("b{i:03}"), tokens.join(" ")));
        labels.push(class as u8);
    }
    let mut corpus = LabeledCorpus::new(posts, BTreeMap::from([(Task::Ed1, labels)]))
        .expect("benchmark corpus");
    corpus.preprocess_all(&PreprocessConfig::default());
    Benchmark {
        corpus,
        graph,
        gazetteer,
    }
}

/// Standardized per-post feature tables for the three input kinds, plus the
/// labels and the per-post linked entity ids.
pub struct BenchmarkFeatures {
    pub text: Vec<Vec<f64>>,
    pub kge: Vec<Vec<f64>>,
    pub cbe: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

/// Runs the full representation pipeline on the benchmark: gazetteer
/// linking, random walks, skip-gram on both sides, weighted-average sentence
/// vectors, and concatenation fusion.
pub fn benchmark_features(bench: &Benchmark, seed: u64) -> BenchmarkFeatures {
    let posts = bench.corpus.posts();
    let mention_qids: Vec<Vec<String>> = posts
        .iter()
        .map(|p| {
            recognize_gazetteer(&p.clean_text, &bench.gazetteer)
                .into_iter()
                .map(|m| m.qid)
                .collect()
        })
        .collect();

    let mut seeds: Vec<String> =
        mention_qids.iter().flatten().map(|qid| entity_iri(qid)).collect();
    seeds.sort();
    seeds.dedup();
    let walk_cfg = WalkConfig {
        seed: seed.wrapping_mul(131).wrapping_add(3),
        ..WalkConfig::default()
    };
    let walks = generate_walks(&bench.graph, &seeds, &walk_cfg).expect("benchmark walks");
    let kg_table = train_skipgram(
        &walks_to_sequences(&walks),
        &SgnsConfig {
            dim: 16,
            window: 2,
            epochs: 8,
            seed: seed.wrapping_mul(977).wrapping_add(11),
            ..SgnsConfig::default()
        },
    )
    .expect("kg skip-gram");

    let sentences: Vec<Vec<String>> = posts.iter().map(|p| tokenize(&p.clean_text)).collect();
    let text_table = train_skipgram(
        &sentences,
        &SgnsConfig {
            dim: 16,
            window: 3,
            epochs: 8,
            seed: seed.wrapping_mul(613).wrapping_add(5),
            ..SgnsConfig::default()
        },
    )
    .expect("text skip-gram");

    let sif = SifConfig::default();
    let mut word_freq: HashMap<String, f64> = HashMap::new();
    let mut total = 0.0;
    for token in sentences.iter().flatten() {
        *word_freq.entry(token.clone()).or_insert(0.0) += 1.0;
        total += 1.0;
    }
    word_freq.values_mut().for_each(|c| *c /= total);
    let text_rows =
        sif_embed_full(&sentences, &text_table, &word_freq, &sif, None).expect("text vectors").vectors;

    let entity_freq = entity_frequencies(&mention_qids);
    let (kge_rows, kg_missing) =
        kg_sentence_embedding_with_freq(&mention_qids, &kg_table, &entity_freq, &sif, None)
            .expect("kg vectors");

    let cbe_rows: Vec<Vec<f64>> = (0..posts.len())
        .map(|i| {
            fuse(&text_rows[i], &kge_rows[i], kg_missing[i], FusionStrategy::Concat)
                .expect("fusion")
                .values
        })
        .collect();

    let standardize = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let scaler = Standardizer::fit(&rows).expect("scaler");
        scaler.transform_all(&rows).expect("transform")
    };
    BenchmarkFeatures {
        text: standardize(text_rows),
        kge: standardize(kge_rows),
        cbe: standardize(cbe_rows),
        labels: bench.corpus.labels(Task::Ed1).expect("labels").to_vec(),
        ids: posts.iter().map(|p| p.id.clone()).collect(),
    }
}

/// Mean F1 over a stratified k-fold cross-validation with a fixed model
/// configuration; folds where F1 is undefined count as zero.
pub fn mean_kfold_f1(
    rows: &[Vec<f64>],
    labels: &[u8],
    ids: &[String],
    k: usize,
    cfg: &ModelConfig,
    seed: u64,
) -> f64 {
    let ds = Dataset::new(rows.to_vec(), labels.to_vec(), ids.to_vec()).expect("dataset");
    let folds = stratified_kfold(labels, k, seed).expect("folds");
    let mut sum = 0.0;
    for fold in 0..k {
        let train = ds.subset(&folds.train_indices(fold)).expect("train subset");
        let test = ds.subset(&folds.test_indices(fold)).expect("test subset");
        let model = train_config(cfg, &train, seed.wrapping_add(fold as u64)).expect("fit");
        let (predictions, _) = predict(&model, &test.features).expect("predict");
        let cm = confusion_matrix(&test.labels, &predictions).expect("confusion");
        sum += metrics(&cm).expect("metrics").f1.unwrap_or(0.0);
    }
    sum / k as f64
}
