//! Smoothed-inverse-frequency sentence embedding: frequency-weighted token
//! averages with optional removal of the shared first principal direction.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbedError, EmbeddingTable};

/// Parameters for [`sif_embed`].
#[derive(Debug, Clone)]
pub struct SifConfig {
    /// Smoothing constant in the token weight `a / (a + p(w))`.
    pub a: f64,
    /// Remove the first singular direction of the stacked sentence matrix.
    pub remove_pc: bool,
}

impl Default for SifConfig {
    fn default() -> Self {
        SifConfig {
            a: 1e-3,
            remove_pc: true,
        }
    }
}

/// Sentence vectors plus the bookkeeping downstream fusion needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SifOutput {
    pub vectors: Vec<Vec<f64>>,
    /// True where a sentence had no in-vocabulary token (its vector is zero).
    pub all_oov: Vec<bool>,
    /// The removed direction, when principal-component removal ran; persist
    /// it at train time and pass it back in to embed held-out sentences
    /// without refitting.
    pub direction: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// First right-singular direction of the row matrix, by power iteration on
/// the Gram operator (tolerance 1e-9, at most 1000 iterations). Returns
/// `None` when every row is zero.
fn principal_direction(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let dim = rows.first()?.len();
    if dim == 0 || rows.iter().all(|r| r.iter().all(|x| *x == 0.0)) {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x51F0);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..1000 {
        let mut w = vec![0.0; dim];
        for row in rows {
            let proj = dot(row, &v);
            if proj != 0.0 {
                for (wi, ri) in w.iter_mut().zip(row) {
                    *wi += proj * ri;
                }
            }
        }
        let norm = dot(&w, &w).sqrt();
        if norm < 1e-300 {
            // The start vector fell in the null space; re-draw and continue.
            v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            continue;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let delta = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = w;
        if delta < 1e-9 {
            break;
        }
    }
    Some(v)
}

/// Embeds each sentence as `(1/|s|) Σ_{w∈s∩vocab} [a/(a+p(w))]·vec(w)`,
/// dividing by the full token count so unknown tokens dilute the vector.
/// With `remove_pc` and at least two sentences, the projection onto the
/// first singular direction of the stacked matrix is subtracted.
pub fn sif_embed(
    sentences: &[Vec<String>],
    table: &EmbeddingTable,
    word_freq: &HashMap<String, f64>,
    cfg: &SifConfig,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    sif_embed_full(sentences, table, word_freq, cfg, None).map(|out| out.vectors)
}

/// [`sif_embed`] with the all-out-of-vocabulary flags and the fitted
/// direction exposed. Passing `reuse_direction` skips fitting and removes the
/// given direction instead — the train-time direction applied to held-out
/// sentences.
pub fn sif_embed_full(
    sentences: &[Vec<String>],
    table: &EmbeddingTable,
    word_freq: &HashMap<String, f64>,
    cfg: &SifConfig,
    reuse_direction: Option<&[f64]>,
) -> Result<SifOutput, EmbedError> {
    if !(cfg.a > 0.0) {
        return Err(EmbedError::InvalidConfig("sif a must be > 0".into()));
    }
    if sentences.is_empty() {
        return Err(EmbedError::NoSentences);
    }
    for (token, &p) in word_freq {
        if !(p > 0.0 && p <= 1.0) {
            return Err(EmbedError::InvalidFrequency {
                token: token.clone(),
                value: p,
            });
        }
    }
    if let Some(direction) = reuse_direction {
        if direction.len() != table.dim() {
            return Err(EmbedError::DimensionMismatch {
                expected: table.dim(),
                got: direction.len(),
            });
        }
    }

    let dim = table.dim();
    let mut vectors = Vec::with_capacity(sentences.len());
    let mut all_oov = Vec::with_capacity(sentences.len());
    for sentence in sentences {
        let mut v = vec![0.0; dim];
        let mut in_vocab = 0usize;
        for token in sentence {
            let Some(word_vec) = table.vector(token) else {
                continue;
            };
            in_vocab += 1;
            // A token never seen in the frequency map is treated as
            // vanishingly rare: weight → 1.
            let weight = match word_freq.get(token) {
                Some(&p) => cfg.a / (cfg.a + p),
                None => 1.0,
            };
            for (vi, wi) in v.iter_mut().zip(word_vec) {
                *vi += weight * wi;
            }
        }
        if !sentence.is_empty() {
            let inv = 1.0 / sentence.len() as f64;
            v.iter_mut().for_each(|x| *x *= inv);
        }
        all_oov.push(in_vocab == 0);
        vectors.push(v);
    }

    let direction = if cfg.remove_pc {
        match reuse_direction {
            Some(d) => Some(d.to_vec()),
            None if sentences.len() >= 2 => principal_direction(&vectors),
            None => None,
        }
    } else {
        None
    };
    if let Some(d) = &direction {
        for v in &mut vectors {
            let proj = dot(v, d);
            for (vi, di) in v.iter_mut().zip(d) {
                *vi -= proj * di;
            }
        }
    }

    Ok(SifOutput {
        vectors,
        all_oov,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::build_vocab;

    fn table_for(tokens: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = tokens[0].1.len();
        let sequences: Vec<Vec<String>> =
            vec![tokens.iter().map(|(t, _)| t.to_string()).collect()];
        let vocab = build_vocab(&sequences, 1).unwrap();
        let mut input = vec![0.0; vocab.len() * dim];
        for (token, values) in tokens {
            let position = vocab.index_of(token).unwrap();
            input[position * dim..(position + 1) * dim].copy_from_slice(values);
        }
        let output = vec![0.0; vocab.len() * dim];
        EmbeddingTable::from_parts(vocab, dim, input, output)
    }

    fn sent(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    fn uniform_freq(tokens: &[&str], p: f64) -> HashMap<String, f64> {
        tokens.iter().map(|t| (t.to_string(), p)).collect()
    }

    #[test]
    fn uniform_frequencies_give_scaled_mean() {
        let table = table_for(&[("a", &[1.0, 0.0]), ("b", &[0.0, 2.0])]);
        let freq = uniform_freq(&["a", "b"], 0.25);
        let cfg = SifConfig {
            a: 1e-3,
            remove_pc: false,
        };
        let out = sif_embed(&[sent(&["a", "b"])], &table, &freq, &cfg).unwrap();
        let weight = 1e-3 / (1e-3 + 0.25);
        let expected = [weight * 0.5, weight * 1.0];
        for (got, want) in out[0].iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn weight_is_half_when_p_equals_a() {
        let table = table_for(&[("w", &[2.0])]);
        let freq = uniform_freq(&["w"], 0.001);
        let cfg = SifConfig {
            a: 0.001,
            remove_pc: false,
        };
        let out = sif_embed(&[sent(&["w"])], &table, &freq, &cfg).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-12, "weight should be exactly 0.5");
    }

    #[test]
    fn weights_decrease_as_frequency_rises() {
        let a = 1e-3;
        let weight = |p: f64| a / (a + p);
        let grid = [1e-6, 1e-4, 1e-2, 0.5, 1.0];
        for pair in grid.windows(2) {
            assert!(weight(pair[0]) > weight(pair[1]));
        }
        assert!((weight(1e-12) - 1.0).abs() < 1e-8);
        assert!((weight(1.0) - a / (a + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn identical_sentences_vanish_after_pc_removal() {
        let table = table_for(&[("x", &[0.3, -0.7, 0.2]), ("y", &[1.1, 0.4, -0.5])]);
        let freq = uniform_freq(&["x", "y"], 0.1);
        let out = sif_embed_full(
            &[sent(&["x", "y"]), sent(&["x", "y"])],
            &table,
            &freq,
            &SifConfig::default(),
            None,
        )
        .unwrap();
        for v in &out.vectors {
            for value in v {
                assert!(value.abs() < 1e-8, "residual {value}");
            }
        }
    }

    #[test]
    fn outputs_are_orthogonal_to_removed_direction() {
        let table = table_for(&[
            ("a", &[0.9, 0.1, -0.3, 0.4]),
            ("b", &[-0.2, 0.8, 0.5, -0.1]),
            ("c", &[0.3, -0.6, 0.7, 0.2]),
        ]);
        let freq = uniform_freq(&["a", "b", "c"], 0.05);
        let sentences = vec![
            sent(&["a", "b"]),
            sent(&["b", "c"]),
            sent(&["a", "c", "c"]),
            sent(&["a"]),
        ];
        let out =
            sif_embed_full(&sentences, &table, &freq, &SifConfig::default(), None).unwrap();
        let direction = out.direction.expect("direction should be fitted");
        for v in &out.vectors {
            assert!(dot(v, &direction).abs() < 1e-6);
        }
    }

    #[test]
    fn all_oov_sentence_is_zero_and_flagged() {
        let table = table_for(&[("known", &[1.0, 1.0])]);
        let freq = uniform_freq(&["known"], 0.5);
        let cfg = SifConfig {
            remove_pc: false,
            ..SifConfig::default()
        };
        let out = sif_embed_full(
            &[sent(&["known"]), sent(&["mystery", "tokens"])],
            &table,
            &freq,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(out.all_oov, vec![false, true]);
        assert!(out.vectors[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oov_tokens_still_dilute_the_average() {
        let table = table_for(&[("known", &[4.0])]);
        let freq = uniform_freq(&["known"], 1.0);
        let cfg = SifConfig {
            a: 1.0,
            remove_pc: false,
        };
        // weight = 1/(1+1) = 0.5; |s| = 2 → 4.0 * 0.5 / 2 = 1.0
        let out = sif_embed(&[sent(&["known", "zzz"])], &table, &freq, &cfg).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_sentences_is_an_error() {
        let table = table_for(&[("a", &[1.0])]);
        assert!(matches!(
            sif_embed(&[], &table, &HashMap::new(), &SifConfig::default()),
            Err(EmbedError::NoSentences)
        ));
    }

    #[test]
    fn out_of_range_frequency_is_rejected() {
        let table = table_for(&[("a", &[1.0])]);
        for bad in [0.0, -0.1, 1.5] {
            let freq = uniform_freq(&["a"], bad);
            assert!(matches!(
                sif_embed(&[sent(&["a"])], &table, &freq, &SifConfig::default()),
                Err(EmbedError::InvalidFrequency { .. })
            ));
        }
    }

    #[test]
    fn single_sentence_is_not_pc_removed() {
        let table = table_for(&[("a", &[1.0, 2.0])]);
        let freq = uniform_freq(&["a"], 0.5);
        let out = sif_embed_full(
            &[sent(&["a"])],
            &table,
            &freq,
            &SifConfig::default(),
            None,
        )
        .unwrap();
        assert!(out.direction.is_none());
        assert!(out.vectors[0][0] != 0.0);
    }

    #[test]
    fn reused_direction_matches_manual_projection() {
        let table = table_for(&[("a", &[0.6, -0.2]), ("b", &[0.1, 0.9])]);
        let freq = uniform_freq(&["a", "b"], 0.2);
        let cfg = SifConfig::default();
        let train = sif_embed_full(
            &[sent(&["a", "b"]), sent(&["b"]), sent(&["a", "a"])],
            &table,
            &freq,
            &cfg,
            None,
        )
        .unwrap();
        let direction = train.direction.clone().unwrap();

        let no_removal = SifConfig {
            remove_pc: false,
            ..cfg.clone()
        };
        let raw = sif_embed(&[sent(&["a"])], &table, &freq, &no_removal).unwrap();
        let reused =
            sif_embed_full(&[sent(&["a"])], &table, &freq, &cfg, Some(&direction)).unwrap();
        let proj = dot(&raw[0], &direction);
        for d in 0..2 {
            let expected = raw[0][d] - proj * direction[d];
            assert!((reused.vectors[0][d] - expected).abs() < 1e-12);
        }
        assert_eq!(reused.direction.as_deref(), Some(direction.as_slice()));
    }

    #[test]
    fn reused_direction_with_wrong_dimension_is_rejected() {
        let table = table_for(&[("a", &[1.0, 1.0])]);
        let freq = uniform_freq(&["a"], 0.5);
        let bad = [1.0];
        assert!(matches!(
            sif_embed_full(&[sent(&["a"])], &table, &freq, &SifConfig::default(), Some(&bad)),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }
}
