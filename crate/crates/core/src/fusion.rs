//! Combines the text sentence embedding and the knowledge-graph sentence
//! embedding of each post into a single context-based embedding, and dumps
//! the resulting feature matrix for the classifiers.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::Task;
use crate::embed::{sif_embed_full, EmbedError, EmbeddingTable, SifConfig};

/// Errors from fusion and feature-matrix handling.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the two blocks are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionStrategy {
    /// Keep both blocks side by side (the default).
    #[default]
    Concat,
    Sum,
    Average,
}

impl std::fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FusionStrategy::Concat => write!(f, "concat"),
            FusionStrategy::Sum => write!(f, "sum"),
            FusionStrategy::Average => write!(f, "average"),
        }
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "concat" => Ok(FusionStrategy::Concat),
            "sum" => Ok(FusionStrategy::Sum),
            "average" | "avg" => Ok(FusionStrategy::Average),
            other => Err(format!("unknown fusion strategy {other:?}")),
        }
    }
}

/// One post's fused context-based embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CbeVector {
    pub values: Vec<f64>,
    pub text_dim: usize,
    pub kg_dim: usize,
    /// True when the post had no linked entity with a trained embedding.
    pub kg_missing: bool,
}

/// Relative frequency of each entity id across the given mention lists.
/// Pass the training split's lists to freeze weights without test leakage.
pub fn entity_frequencies(mention_qids: &[Vec<String>]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for qids in mention_qids {
        for qid in qids {
            *counts.entry(qid.clone()).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return BTreeMap::new();
    }
    counts
        .into_iter()
        .map(|(qid, c)| (qid, c as f64 / total as f64))
        .collect()
}

/// Looks a mention token up in the entity embedding table, falling back to
/// the Wikidata entity IRI when the bare Q-number is not a token itself
/// (walk corpora carry full IRIs).
fn resolve_entity_token(table: &EmbeddingTable, token: &str) -> Option<String> {
    if table.vocab().index_of(token).is_some() {
        return Some(token.to_string());
    }
    if crate::kgstore::is_valid_qid(token) {
        let iri = crate::kgstore::entity_iri(token);
        if table.vocab().index_of(&iri).is_some() {
            return Some(iri);
        }
    }
    None
}

/// Weighted-average embedding of each post's entity mentions, with the
/// frequency distribution computed from the given lists themselves.
/// Posts with no in-vocabulary entity yield the zero vector and a flag.
pub fn kg_sentence_embedding(
    mention_qids: &[Vec<String>],
    kge_table: &EmbeddingTable,
    cfg: &SifConfig,
) -> Result<(Vec<Vec<f64>>, Vec<bool>), FusionError> {
    let freqs = entity_frequencies(mention_qids);
    kg_sentence_embedding_with_freq(mention_qids, kge_table, &freqs, cfg, None)
}

/// [`kg_sentence_embedding`] with a frozen frequency distribution and,
/// optionally, a previously fitted common-direction vector to remove.
pub fn kg_sentence_embedding_with_freq(
    mention_qids: &[Vec<String>],
    kge_table: &EmbeddingTable,
    freqs: &BTreeMap<String, f64>,
    cfg: &SifConfig,
    reuse_direction: Option<&[f64]>,
) -> Result<(Vec<Vec<f64>>, Vec<bool>), FusionError> {
    // Rewrite each post's mention list in the table's own token space so
    // frequencies follow the tokens they describe.
    let sentences: Vec<Vec<String>> = mention_qids
        .iter()
        .map(|qids| {
            qids.iter()
                .map(|q| resolve_entity_token(kge_table, q).unwrap_or_else(|| q.clone()))
                .collect()
        })
        .collect();
    let mut token_freqs: std::collections::HashMap<String, f64> =
        std::collections::HashMap::new();
    for (qids, tokens) in mention_qids.iter().zip(&sentences) {
        for (qid, token) in qids.iter().zip(tokens) {
            if let Some(f) = freqs.get(qid).or_else(|| freqs.get(token)) {
                token_freqs.insert(token.clone(), *f);
            }
        }
    }
    let out = sif_embed_full(&sentences, kge_table, &token_freqs, cfg, reuse_direction)?;
    Ok((out.vectors, out.all_oov))
}

/// Fuses one post's text and KG vectors. `kg_missing` is carried through
/// onto the output unchanged.
pub fn fuse(
    text_vec: &[f64],
    kg_vec: &[f64],
    kg_missing: bool,
    strategy: FusionStrategy,
) -> Result<CbeVector, FusionError> {
    match strategy {
        FusionStrategy::Concat => {
            let mut values = Vec::with_capacity(text_vec.len() + kg_vec.len());
            values.extend_from_slice(text_vec);
            values.extend_from_slice(kg_vec);
            Ok(CbeVector {
                values,
                text_dim: text_vec.len(),
                kg_dim: kg_vec.len(),
                kg_missing,
            })
        }
        FusionStrategy::Sum | FusionStrategy::Average => {
            if text_vec.len() != kg_vec.len() {
                return Err(FusionError::DimensionMismatch {
                    expected: text_vec.len(),
                    got: kg_vec.len(),
                });
            }
            let scale = if strategy == FusionStrategy::Average {
                0.5
            } else {
                1.0
            };
            let values: Vec<f64> = text_vec
                .iter()
                .zip(kg_vec)
                .map(|(t, k)| (t + k) * scale)
                .collect();
            Ok(CbeVector {
                values,
                text_dim: text_vec.len(),
                kg_dim: 0,
                kg_missing,
            })
        }
    }
}

/// Per-dimension z-scoring fit on training rows; constant dimensions keep
/// their values untouched (unit divisor).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fits means and standard deviations over the given rows.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, FusionError> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(FusionError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Ok(Standardizer { means, stds })
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>, FusionError> {
        if row.len() != self.means.len() {
            return Err(FusionError::DimensionMismatch {
                expected: self.means.len(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FusionError> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Serializes a feature matrix as TSV: post id, one column per task label,
/// then the feature values.
pub fn features_to_tsv(
    ids: &[String],
    labels: &BTreeMap<Task, Vec<u8>>,
    rows: &[Vec<f64>],
) -> Result<String, FusionError> {
    if ids.len() != rows.len() {
        return Err(FusionError::DimensionMismatch {
            expected: ids.len(),
            got: rows.len(),
        });
    }
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut out = String::from("id");
    for task in labels.keys() {
        out.push('\t');
        out.push_str(task.column());
    }
    for d in 0..dim {
        out.push_str(&format!("\tf{d}"));
    }
    out.push('\n');
    for (i, (id, row)) in ids.iter().zip(rows).enumerate() {
        if row.len() != dim {
            return Err(FusionError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        out.push_str(id);
        for values in labels.values() {
            out.push_str(&format!("\t{}", values[i]));
        }
        for v in row {
            out.push_str(&format!("\t{v:?}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a feature-matrix TSV produced by [`features_to_tsv`].
#[allow(clippy::type_complexity)]
pub fn parse_features(
    content: &str,
) -> Result<(Vec<String>, BTreeMap<Task, Vec<u8>>, Vec<Vec<f64>>), FusionError> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(FusionError::ParseError {
        line: 1,
        reason: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split('\t').collect();
    if columns.first() != Some(&"id") {
        return Err(FusionError::ParseError {
            line: 1,
            reason: "header must start with 'id'".into(),
        });
    }
    let mut tasks = Vec::new();
    let mut feature_start = columns.len();
    for (i, col) in columns.iter().enumerate().skip(1) {
        if let Ok(task) = col.parse::<Task>() {
            if feature_start != columns.len() {
                return Err(FusionError::ParseError {
                    line: 1,
                    reason: format!("label column {col:?} after feature columns"),
                });
            }
            tasks.push(task);
        } else {
            feature_start = feature_start.min(i);
            if !col.starts_with('f') {
                return Err(FusionError::ParseError {
                    line: 1,
                    reason: format!("unexpected column {col:?}"),
                });
            }
        }
    }
    let dim = columns.len() - 1 - tasks.len();
    let mut ids = Vec::new();
    let mut labels: BTreeMap<Task, Vec<u8>> = tasks.iter().map(|t| (*t, Vec::new())).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(FusionError::ParseError {
                line: idx + 1,
                reason: format!("expected {} fields, got {}", columns.len(), fields.len()),
            });
        }
        ids.push(fields[0].to_string());
        for (task, field) in tasks.iter().zip(&fields[1..=tasks.len()]) {
            let label = match *field {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(FusionError::ParseError {
                        line: idx + 1,
                        reason: format!("label must be 0 or 1, got {other:?}"),
                    })
                }
            };
            labels.get_mut(task).expect("task present").push(label);
        }
        let mut row = Vec::with_capacity(dim);
        for field in &fields[1 + tasks.len()..] {
            row.push(field.parse::<f64>().map_err(|e| FusionError::ParseError {
                line: idx + 1,
                reason: format!("bad feature value {field:?}: {e}"),
            })?);
        }
        rows.push(row);
    }
    Ok((ids, labels, rows))
}
