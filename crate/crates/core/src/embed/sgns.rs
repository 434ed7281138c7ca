//! Skip-gram with negative sampling, following the original word2vec
//! training loop: dynamic window shrinking, unigram^0.75 negative table,
//! frequent-token subsampling, and linear learning-rate decay.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_vocab, EmbedError, EmbeddingTable, Vocabulary};

/// Hyperparameters for [`train_skipgram`].
#[derive(Debug, Clone)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    /// Passes over the sequence list; 0 returns the seeded initialization.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Floor of the linear learning-rate decay.
    pub learning_rate_min: f64,
    /// Frequent-token subsampling threshold; 0 disables subsampling.
    pub subsample_threshold: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            learning_rate_min: 1e-4,
            subsample_threshold: 1e-3,
            min_count: 1,
            seed: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |what: &str| Err(EmbedError::InvalidConfig(what.to_string()));
        if self.dim < 1 {
            return bad("dim must be ≥ 1");
        }
        if self.window < 1 {
            return bad("window must be ≥ 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be ≥ 1");
        }
        if !(self.learning_rate > 0.0) || !(self.learning_rate_min > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.subsample_threshold < 0.0 {
            return bad("subsample_threshold must be ≥ 0");
        }
        Ok(())
    }
}

/// Gradients of the SGNS loss with respect to each input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradients {
    pub d_center: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln(1 + e^x) without overflow for large |x|.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss `−log σ(context·center) − Σ log σ(−neg·center)` and its exact
/// gradients with respect to every vector.
pub fn sgns_loss_and_grad(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> Result<(f64, SgnsGradients), EmbedError> {
    let dim = center.len();
    for other in std::iter::once(context).chain(negatives.iter().copied()) {
        if other.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: other.len(),
            });
        }
    }

    let pos_dot = dot(context, center);
    let mut loss = softplus(-pos_dot);
    let mut d_center = vec![0.0; dim];
    let pos_coeff = sigmoid(pos_dot) - 1.0;
    let d_context: Vec<f64> = center.iter().map(|v| pos_coeff * v).collect();
    for (dc, u) in d_center.iter_mut().zip(context) {
        *dc += pos_coeff * u;
    }

    let mut d_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let neg_dot = dot(neg, center);
        loss += softplus(neg_dot);
        let coeff = sigmoid(neg_dot);
        d_negatives.push(center.iter().map(|v| coeff * v).collect());
        for (dc, u) in d_center.iter_mut().zip(*neg) {
            *dc += coeff * u;
        }
    }

    Ok((
        loss,
        SgnsGradients {
            d_center,
            d_context,
            d_negatives,
        },
    ))
}

/// Cumulative sampling table over vocabulary counts raised to 0.75.
struct NegativeTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NegativeTable {
    fn new(vocab: &Vocabulary) -> Self {
        let mut cumulative = Vec::with_capacity(vocab.len());
        let mut total = 0.0;
        for position in 0..vocab.len() {
            total += (vocab.count_at(position) as f64).powf(0.75);
            cumulative.push(total);
        }
        NegativeTable { cumulative, total }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let r = rng.random::<f64>() * self.total;
        self.cumulative.partition_point(|&c| c <= r).min(self.cumulative.len() - 1)
    }
}

fn seeded_init(vocab: &Vocabulary, cfg: &SgnsConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = 0.5 / cfg.dim as f64;
    let input: Vec<f64> = (0..vocab.len() * cfg.dim)
        .map(|_| rng.random_range(-half..half))
        .collect();
    let output = vec![0.0; vocab.len() * cfg.dim];
    (input, output)
}

/// Keep-probability of the word2vec subsampling rule; values ≥ 1 mean the
/// token is never dropped.
fn keep_probability(frequency: f64, threshold: f64) -> f64 {
    ((frequency / threshold).sqrt() + 1.0) * threshold / frequency
}

/// Maps a sequence to vocabulary ids, dropping out-of-vocabulary tokens and
/// subsampling frequent ones; advances `processed` for every in-vocab token.
fn sequence_to_ids(
    sequence: &[String],
    vocab: &Vocabulary,
    threshold: f64,
    rng: &mut impl Rng,
    processed: &mut u64,
) -> Vec<usize> {
    let mut ids = Vec::with_capacity(sequence.len());
    for token in sequence {
        let Some(id) = vocab.index_of(token) else {
            continue;
        };
        *processed += 1;
        if threshold > 0.0 {
            let keep = keep_probability(vocab.frequency(id), threshold);
            if rng.random::<f64>() > keep {
                continue;
            }
        }
        ids.push(id);
    }
    ids
}

/// Trains token embeddings over the given sequences. Input vectors start
/// uniform in `[-0.5/dim, 0.5/dim]` from the seed, output vectors start at
/// zero. Single-threaded and bitwise deterministic for a fixed config.
pub fn train_skipgram(
    sequences: &[Vec<String>],
    cfg: &SgnsConfig,
) -> Result<EmbeddingTable, EmbedError> {
    cfg.validate()?;
    let vocab = build_vocab(sequences, cfg.min_count)?;
    let (mut input, mut output) = seeded_init(&vocab, cfg);
    let table = NegativeTable::new(&vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let dim = cfg.dim;
    let train_words = vocab.total_count();
    let schedule_span = (cfg.epochs as u64 * train_words) as f64 + 1.0;
    let mut processed = 0u64;
    let mut d_center = vec![0.0; dim];

    for epoch in 0..cfg.epochs {
        for sequence in sequences {
            let sent = sequence_to_ids(
                sequence,
                &vocab,
                cfg.subsample_threshold,
                &mut rng,
                &mut processed,
            );
            for pos in 0..sent.len() {
                let alpha = (cfg.learning_rate * (1.0 - processed as f64 / schedule_span))
                    .max(cfg.learning_rate_min);
                let shrink = rng.random_range(0..cfg.window);
                let reach = cfg.window - shrink;
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sent.len().saturating_sub(1));
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    // Following the original tool, the context token's input
                    // vector is trained against the output vectors of the
                    // center token (positive) and sampled negatives.
                    let v_id = sent[ctx_pos];
                    let positive = sent[pos];
                    let v_start = v_id * dim;
                    d_center.iter_mut().for_each(|d| *d = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (positive, 1.0)
                        } else {
                            let sampled = table.sample(&mut rng);
                            if sampled == positive {
                                continue;
                            }
                            (sampled, 0.0)
                        };
                        let u_start = target * dim;
                        let f = dot(
                            &output[u_start..u_start + dim],
                            &input[v_start..v_start + dim],
                        );
                        let g = (label - sigmoid(f)) * alpha;
                        for d in 0..dim {
                            d_center[d] += g * output[u_start + d];
                            output[u_start + d] += g * input[v_start + d];
                        }
                    }
                    for d in 0..dim {
                        input[v_start + d] += d_center[d];
                    }
                }
            }
        }
        if !input.iter().chain(output.iter()).all(|v| v.is_finite()) {
            return Err(EmbedError::NonFinite { epoch });
        }
    }

    Ok(EmbeddingTable::from_parts(vocab, dim, input, output))
}

/// Hogwild-style variant: workers train over sequence shards with
/// unsynchronized vector updates. Faster but not deterministic; the learned
/// structure (and finiteness) still holds.
pub fn train_skipgram_parallel(
    sequences: &[Vec<String>],
    cfg: &SgnsConfig,
    workers: usize,
) -> Result<EmbeddingTable, EmbedError> {
    if workers <= 1 {
        return train_skipgram(sequences, cfg);
    }
    cfg.validate()?;
    let vocab = build_vocab(sequences, cfg.min_count)?;
    let (input_init, output_init) = seeded_init(&vocab, cfg);
    let input: Vec<AtomicU64> = input_init.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
    let output: Vec<AtomicU64> = output_init.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
    let table = NegativeTable::new(&vocab);

    let dim = cfg.dim;
    let train_words = vocab.total_count();
    let schedule_span = (cfg.epochs as u64 * train_words) as f64 + 1.0;
    let processed = AtomicU64::new(0);

    std::thread::scope(|scope| {
        for worker in 0..workers {
            let vocab = &vocab;
            let table = &table;
            let input = &input;
            let output = &output;
            let processed = &processed;
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    cfg.seed.wrapping_add(1).wrapping_add(worker as u64),
                );
                let mut d_center = vec![0.0; dim];
                let mut v_buf = vec![0.0; dim];
                let load = |cell: &AtomicU64| f64::from_bits(cell.load(Ordering::Relaxed));
                for _ in 0..cfg.epochs {
                    for sequence in sequences.iter().skip(worker).step_by(workers) {
                        let mut local_processed = 0u64;
                        let sent = sequence_to_ids(
                            sequence,
                            vocab,
                            cfg.subsample_threshold,
                            &mut rng,
                            &mut local_processed,
                        );
                        let done =
                            processed.fetch_add(local_processed, Ordering::Relaxed) + local_processed;
                        let alpha = (cfg.learning_rate * (1.0 - done as f64 / schedule_span))
                            .max(cfg.learning_rate_min);
                        for pos in 0..sent.len() {
                            let shrink = rng.random_range(0..cfg.window);
                            let reach = cfg.window - shrink;
                            let lo = pos.saturating_sub(reach);
                            let hi = (pos + reach).min(sent.len().saturating_sub(1));
                            for ctx_pos in lo..=hi {
                                if ctx_pos == pos {
                                    continue;
                                }
                                let v_start = sent[ctx_pos] * dim;
                                let positive = sent[pos];
                                for d in 0..dim {
                                    v_buf[d] = load(&input[v_start + d]);
                                    d_center[d] = 0.0;
                                }
                                for k in 0..=cfg.negatives {
                                    let (target, label) = if k == 0 {
                                        (positive, 1.0)
                                    } else {
                                        let sampled = table.sample(&mut rng);
                                        if sampled == positive {
                                            continue;
                                        }
                                        (sampled, 0.0)
                                    };
                                    let u_start = target * dim;
                                    let mut f = 0.0;
                                    for d in 0..dim {
                                        f += load(&output[u_start + d]) * v_buf[d];
                                    }
                                    let g = (label - sigmoid(f)) * alpha;
                                    for d in 0..dim {
                                        let u = load(&output[u_start + d]);
                                        d_center[d] += g * u;
                                        output[u_start + d]
                                            .store((u + g * v_buf[d]).to_bits(), Ordering::Relaxed);
                                    }
                                }
                                for d in 0..dim {
                                    input[v_start + d].store(
                                        (v_buf[d] + d_center[d]).to_bits(),
                                        Ordering::Relaxed,
                                    );
                                }
                            }
                        }
                    }
                }
            });
        }
    });

    let unpack = |cells: Vec<AtomicU64>| -> Vec<f64> {
        cells
            .into_iter()
            .map(|cell| f64::from_bits(cell.into_inner()))
            .collect()
    };
    let result = EmbeddingTable::from_parts(vocab, dim, unpack(input), unpack(output));
    result.check_finite(cfg.epochs.saturating_sub(1))?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(dim: usize, epochs: usize, seed: u64) -> SgnsConfig {
        SgnsConfig {
            dim,
            window: 3,
            negatives: 4,
            epochs,
            subsample_threshold: 0.0,
            min_count: 1,
            seed,
            ..SgnsConfig::default()
        }
    }

    fn clique_sequences(seed: u64) -> Vec<Vec<String>> {
        let a: Vec<String> = (0..6).map(|i| format!("a{i}")).collect();
        let b: Vec<String> = (0..6).map(|i| format!("b{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sequences = Vec::new();
        for _ in 0..150 {
            for clique in [&a, &b] {
                let sentence: Vec<String> = (0..8)
                    .map(|_| clique[rng.random_range(0..clique.len())].clone())
                    .collect();
                sequences.push(sentence);
            }
        }
        sequences
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let na = dot(a, a).sqrt();
        let nb = dot(b, b).sqrt();
        dot(a, b) / (na * nb)
    }

    fn clique_separation(table: &EmbeddingTable) -> (f64, f64) {
        let vec_of = |t: &str| table.vector(t).unwrap().to_vec();
        let a: Vec<Vec<f64>> = (0..6).map(|i| vec_of(&format!("a{i}"))).collect();
        let b: Vec<Vec<f64>> = (0..6).map(|i| vec_of(&format!("b{i}"))).collect();
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for i in 0..6 {
            for j in (i + 1)..6 {
                intra.push(cosine(&a[i], &a[j]));
                intra.push(cosine(&b[i], &b[j]));
            }
        }
        for x in &a {
            for y in &b {
                inter.push(cosine(x, y));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&intra), mean(&inter))
    }

    #[test]
    fn loss_at_zero_vectors_is_two_ln_two() {
        let z = [0.0; 4];
        let (loss, grads) = sgns_loss_and_grad(&z, &z, &[&z]).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12, "{loss}");
        // σ(0) = 0.5, so each gradient block is determined but zero here
        // because the opposing vectors are zero.
        assert!(grads.d_center.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn loss_vanishes_for_strongly_aligned_pair() {
        let v = [5.0, 5.0];
        let (loss, _) = sgns_loss_and_grad(&v, &v, &[]).unwrap();
        assert!(loss < 1e-8, "{loss}");
    }

    #[test]
    fn loss_rejects_mixed_dimensions() {
        assert!(matches!(
            sgns_loss_and_grad(&[0.0, 0.0], &[0.0], &[]),
            Err(EmbedError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-5;
        for instance in 0..100 {
            let dim = rng.random_range(1..=8);
            let n_neg = rng.random_range(0..=5);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
            };
            let center = draw(&mut rng);
            let context = draw(&mut rng);
            let negatives: Vec<Vec<f64>> = (0..n_neg).map(|_| draw(&mut rng)).collect();
            let neg_refs: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
            let (_, grads) = sgns_loss_and_grad(&center, &context, &neg_refs).unwrap();

            let loss_of = |c: &[f64], x: &[f64], negs: &[Vec<f64>]| {
                let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
                sgns_loss_and_grad(c, x, &refs).unwrap().0
            };
            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let numeric = (plus - minus) / (2.0 * h);
                let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / scale < 1e-4,
                    "instance {instance} {what}: analytic {analytic} vs numeric {numeric}"
                );
            };
            for d in 0..dim {
                let mut p = center.clone();
                p[d] += h;
                let mut m = center.clone();
                m[d] -= h;
                check(
                    grads.d_center[d],
                    loss_of(&p, &context, &negatives),
                    loss_of(&m, &context, &negatives),
                    "center",
                );

                let mut p = context.clone();
                p[d] += h;
                let mut m = context.clone();
                m[d] -= h;
                check(
                    grads.d_context[d],
                    loss_of(&center, &p, &negatives),
                    loss_of(&center, &m, &negatives),
                    "context",
                );

                for n in 0..n_neg {
                    let mut p = negatives.clone();
                    p[n][d] += h;
                    let mut m = negatives.clone();
                    m[n][d] -= h;
                    check(
                        grads.d_negatives[n][d],
                        loss_of(&center, &context, &p),
                        loss_of(&center, &context, &m),
                        "negative",
                    );
                }
            }
        }
    }

    #[test]
    fn zero_epochs_returns_seeded_initialization() {
        let sequences = vec![vec!["a".to_string(), "b".to_string(), "a".to_string()]];
        let cfg = small_cfg(8, 0, 7);
        let table = train_skipgram(&sequences, &cfg).unwrap();
        let bound = 0.5 / 8.0;
        for position in 0..table.vocab().len() {
            assert!(table
                .input_row(position)
                .iter()
                .all(|v| v.abs() <= bound && *v != 0.0));
            assert!(table.output_row(position).iter().all(|v| *v == 0.0));
        }
        // And it is exactly the initialization another run would see.
        let again = train_skipgram(&sequences, &cfg).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn same_seed_same_input_bitwise_identical() {
        let sequences = clique_sequences(3);
        let cfg = small_cfg(8, 2, 42);
        let first = train_skipgram(&sequences, &cfg).unwrap();
        let second = train_skipgram(&sequences, &cfg).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn different_seed_changes_vectors() {
        let sequences = clique_sequences(3);
        let a = train_skipgram(&sequences, &small_cfg(8, 1, 1)).unwrap();
        let b = train_skipgram(&sequences, &small_cfg(8, 1, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn disjoint_cliques_separate() {
        let sequences = clique_sequences(11);
        let cfg = SgnsConfig {
            dim: 16,
            epochs: 25,
            subsample_threshold: 0.0,
            seed: 5,
            ..SgnsConfig::default()
        };
        let table = train_skipgram(&sequences, &cfg).unwrap();
        let (intra, inter) = clique_separation(&table);
        assert!(
            intra > inter,
            "intra-clique cosine {intra} not above inter-clique {inter}"
        );
    }

    #[test]
    fn subsampling_path_trains_and_stays_finite() {
        let mut sequences = clique_sequences(4);
        // Flood with one very frequent token so subsampling actually fires.
        for sequence in &mut sequences {
            sequence.push("the".to_string());
            sequence.push("the".to_string());
        }
        let cfg = SgnsConfig {
            dim: 8,
            epochs: 3,
            subsample_threshold: 1e-2,
            seed: 9,
            ..SgnsConfig::default()
        };
        let table = train_skipgram(&sequences, &cfg).unwrap();
        assert!(table.vector("the").is_some());
    }

    #[test]
    fn min_count_two_drops_singletons() {
        let sequences = vec![
            vec!["a".to_string(), "b".to_string(), "a".to_string()],
            vec!["b".to_string(), "rare".to_string()],
        ];
        let cfg = SgnsConfig {
            dim: 4,
            epochs: 1,
            min_count: 2,
            subsample_threshold: 0.0,
            ..SgnsConfig::default()
        };
        let table = train_skipgram(&sequences, &cfg).unwrap();
        assert!(table.vector("rare").is_none());
        assert!(table.vector("a").is_some());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let sequences = vec![vec!["a".to_string(), "b".to_string()]];
        for broken in [
            SgnsConfig { dim: 0, ..SgnsConfig::default() },
            SgnsConfig { window: 0, ..SgnsConfig::default() },
            SgnsConfig { negatives: 0, ..SgnsConfig::default() },
            SgnsConfig { learning_rate: 0.0, ..SgnsConfig::default() },
        ] {
            assert!(matches!(
                train_skipgram(&sequences, &broken),
                Err(EmbedError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn parallel_mode_learns_the_same_structure() {
        let sequences = clique_sequences(21);
        let cfg = SgnsConfig {
            dim: 16,
            epochs: 25,
            subsample_threshold: 0.0,
            seed: 5,
            ..SgnsConfig::default()
        };
        let table = train_skipgram_parallel(&sequences, &cfg, 4).unwrap();
        let (intra, inter) = clique_separation(&table);
        assert!(
            intra > inter,
            "parallel intra-clique cosine {intra} not above inter-clique {inter}"
        );
    }
}
