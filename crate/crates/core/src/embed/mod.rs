//! Shared embedding machinery: tokenization, vocabulary construction,
//! skip-gram training with negative sampling over arbitrary token sequences
//! (text sentences or graph walks), SIF sentence combination, and a
//! plain-text vector file format.

mod sgns;
mod sif;

pub use sgns::{
    sgns_loss_and_grad, train_skipgram, train_skipgram_parallel, SgnsConfig, SgnsGradients,
};
pub use sif::{sif_embed, sif_embed_full, SifConfig, SifOutput};

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

/// Errors produced by the embedding layer.
#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocabulary is empty after min_count filtering")]
    EmptyAfterFiltering,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no sentences to embed")]
    NoSentences,
    #[error("frequency for token {token:?} is {value}, not in (0,1]")]
    InvalidFrequency { token: String, value: f64 },
    #[error("non-finite vector entry after epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("embedding file parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("token {0:?} cannot be serialized (contains whitespace)")]
    InvalidToken(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Splits preprocessed text into tokens: alphanumerics and `#` stick
/// together, `-` survives only between alphanumerics, and every other
/// character separates. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || c == '#'
            || (c == '-'
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if keep {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token inventory with frequencies, ordered by descending count then
/// lexicographic token so identical inputs always produce identical layouts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    total_count: u64,
}

impl Vocabulary {
    pub(crate) fn from_sorted(entries: Vec<(String, u64)>) -> Self {
        let total_count = entries.iter().map(|(_, c)| c).sum();
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (position, (token, count)) in entries.into_iter().enumerate() {
            index.insert(token.clone(), position);
            tokens.push(token);
            counts.push(count);
        }
        Vocabulary {
            tokens,
            index,
            counts,
            total_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, position: usize) -> &str {
        &self.tokens[position]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn count_at(&self, position: usize) -> u64 {
        self.counts[position]
    }

    pub fn count(&self, token: &str) -> u64 {
        self.index_of(token).map_or(0, |i| self.counts[i])
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    /// Relative frequency of the token at `position`.
    pub fn frequency(&self, position: usize) -> f64 {
        self.counts[position] as f64 / self.total_count as f64
    }

    /// Relative frequencies keyed by token, e.g. for SIF weighting.
    pub fn frequency_map(&self) -> HashMap<String, f64> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), self.frequency(i)))
            .collect()
    }
}

/// Counts tokens over all sequences and keeps those with frequency
/// ≥ `min_count` (a `min_count` of 0 behaves like 1).
pub fn build_vocab(
    sequences: &[Vec<String>],
    min_count: u64,
) -> Result<Vocabulary, EmbedError> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sequence in sequences {
        for token in sequence {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let threshold = min_count.max(1);
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= threshold)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    if entries.is_empty() {
        return Err(EmbedError::EmptyAfterFiltering);
    }
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::from_sorted(entries))
}

/// Dense token vectors: the input side is "the" embedding, the output side is
/// the context table skip-gram trains against.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingTable {
    pub(crate) fn from_parts(vocab: Vocabulary, dim: usize, input: Vec<f64>, output: Vec<f64>) -> Self {
        debug_assert_eq!(input.len(), vocab.len() * dim);
        debug_assert_eq!(output.len(), vocab.len() * dim);
        EmbeddingTable {
            vocab,
            dim,
            input,
            output,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Input-side vector for `token`, if in vocabulary.
    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab.index_of(token).map(|i| self.input_row(i))
    }

    pub fn input_row(&self, position: usize) -> &[f64] {
        &self.input[position * self.dim..(position + 1) * self.dim]
    }

    pub fn output_row(&self, position: usize) -> &[f64] {
        &self.output[position * self.dim..(position + 1) * self.dim]
    }

    fn all_finite(&self) -> bool {
        self.input.iter().chain(self.output.iter()).all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, epoch: usize) -> Result<(), EmbedError> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(EmbedError::NonFinite { epoch })
        }
    }
}

/// Serializes the input-side vectors: a `<vocab_size> <dim>` header line,
/// then one `<token> <v1> ... <vdim>` line per token.
pub fn embeddings_to_string(table: &EmbeddingTable) -> Result<String, EmbedError> {
    let mut out = format!("{} {}\n", table.vocab.len(), table.dim);
    for position in 0..table.vocab.len() {
        let token = table.vocab.token(position);
        if token.chars().any(char::is_whitespace) || token.is_empty() {
            return Err(EmbedError::InvalidToken(token.to_string()));
        }
        out.push_str(token);
        for value in table.input_row(position) {
            out.push(' ');
            out.push_str(&format!("{value:.8}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes the table to `path` in the plain-text format.
pub fn export_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<(), EmbedError> {
    std::fs::write(path, embeddings_to_string(table)?)?;
    Ok(())
}

/// Parses the plain-text format back into a table. Counts are not stored in
/// the file, so every token gets count 1; output-side vectors are zero.
pub fn parse_embeddings(content: &str) -> Result<EmbeddingTable, EmbedError> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(EmbedError::ParseError {
        line: 1,
        reason: "empty file".into(),
    })?;
    let parts: Vec<&str> = header.split(' ').collect();
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| EmbedError::ParseError {
            line: 1,
            reason: format!("bad {what} in header: {s:?}"),
        })
    };
    if parts.len() != 2 {
        return Err(EmbedError::ParseError {
            line: 1,
            reason: format!("header must be `<vocab_size> <dim>`, got {header:?}"),
        });
    }
    let declared = parse_usize(parts[0], "vocab size")?;
    let dim = parse_usize(parts[1], "dimension")?;

    let mut entries = Vec::with_capacity(declared);
    let mut input = Vec::with_capacity(declared * dim);
    let mut seen = std::collections::HashSet::new();
    for (index, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = index + 1;
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or("");
        if token.is_empty() {
            return Err(EmbedError::ParseError {
                line: line_no,
                reason: "missing token".into(),
            });
        }
        if !seen.insert(token.to_string()) {
            return Err(EmbedError::ParseError {
                line: line_no,
                reason: format!("duplicate token {token:?}"),
            });
        }
        let values: Result<Vec<f64>, _> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| EmbedError::ParseError {
                    line: line_no,
                    reason: format!("bad float {f:?}"),
                })
            })
            .collect();
        let values = values?;
        if values.len() != dim {
            return Err(EmbedError::ParseError {
                line: line_no,
                reason: format!("expected {dim} values, got {}", values.len()),
            });
        }
        entries.push((token.to_string(), 1));
        input.extend(values);
    }
    if entries.len() != declared {
        return Err(EmbedError::ParseError {
            line: 1,
            reason: format!("header declares {declared} tokens, file has {}", entries.len()),
        });
    }
    let vocab = Vocabulary::from_sorted(entries);
    let output = vec![0.0; vocab.len() * dim];
    Ok(EmbeddingTable::from_parts(vocab, dim, input, output))
}

/// Reads a plain-text embedding file.
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbedError> {
    parse_embeddings(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(raw: &[&[&str]]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.iter().map(|t| t.to_string()).collect())
            .collect()
    }

    #[test]
    fn tokenize_keeps_inner_hyphen() {
        let tokens =
            tokenize("higher-calorie diets patients anorexia nervosa shorten hospital stays via");
        assert_eq!(tokens.len(), 9);
        assert_eq!(tokens[0], "higher-calorie");
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_hashtag_sheds_trailing_punctuation() {
        assert_eq!(tokenize("#proana!!"), vec!["#proana"]);
    }

    #[test]
    fn tokenize_edge_hyphens_split() {
        assert_eq!(tokenize("pre- and post-op"), vec!["pre", "and", "post-op"]);
        assert_eq!(tokenize("-dash"), vec!["dash"]);
        assert_eq!(tokenize("a--b"), vec!["a", "b"]);
    }

    #[test]
    fn tokenize_splits_on_punctuation_not_hash() {
        assert_eq!(tokenize("a,b.c#d"), vec!["a", "b", "c#d"]);
    }

    #[test]
    fn build_vocab_counts_and_orders() {
        let vocab = build_vocab(&seqs(&[&["a", "b", "a"]]), 1).unwrap();
        assert_eq!(vocab.tokens(), &["a".to_string(), "b".to_string()]);
        assert_eq!(vocab.count("a"), 2);
        assert_eq!(vocab.count("b"), 1);
        assert_eq!(vocab.total_count(), 3);
    }

    #[test]
    fn build_vocab_min_count_can_empty() {
        assert!(matches!(
            build_vocab(&seqs(&[&["a", "b", "a"]]), 3),
            Err(EmbedError::EmptyAfterFiltering)
        ));
    }

    #[test]
    fn build_vocab_doubling_doubles_counts() {
        let once = build_vocab(&seqs(&[&["a", "b", "a"]]), 1).unwrap();
        let twice = build_vocab(&seqs(&[&["a", "b", "a"], &["a", "b", "a"]]), 1).unwrap();
        assert_eq!(once.tokens(), twice.tokens());
        assert_eq!(twice.count("a"), 2 * once.count("a"));
        assert_eq!(twice.total_count(), 2 * once.total_count());
    }

    #[test]
    fn build_vocab_ties_break_lexicographically() {
        let vocab = build_vocab(&seqs(&[&["zeta", "alpha", "mid", "mid"]]), 1).unwrap();
        assert_eq!(
            vocab.tokens(),
            &["mid".to_string(), "alpha".to_string(), "zeta".to_string()]
        );
    }

    #[test]
    fn index_inverts_tokens() {
        let vocab = build_vocab(&seqs(&[&["x", "y", "z", "x"]]), 1).unwrap();
        for (position, token) in vocab.tokens().iter().enumerate() {
            assert_eq!(vocab.index_of(token), Some(position));
        }
        assert_eq!(vocab.index_of("missing"), None);
    }

    fn toy_table() -> EmbeddingTable {
        let vocab = build_vocab(&seqs(&[&["tok", "other", "tok"]]), 1).unwrap();
        let input = vec![0.25, -1.5, 3.00000001, 0.0, 1e-7, -0.125];
        let output = vec![0.0; 6];
        EmbeddingTable::from_parts(vocab, 3, input, output)
    }

    #[test]
    fn export_has_header_plus_row_per_token() {
        let text = embeddings_to_string(&toy_table()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "2 3");
    }

    #[test]
    fn export_import_round_trip_within_1e6() {
        let table = toy_table();
        let reread = parse_embeddings(&embeddings_to_string(&table).unwrap()).unwrap();
        assert_eq!(reread.vocab().tokens(), table.vocab().tokens());
        assert_eq!(reread.dim(), table.dim());
        for position in 0..table.vocab().len() {
            for (a, b) in table.input_row(position).iter().zip(reread.input_row(position)) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn import_rejects_short_row() {
        let err = parse_embeddings("1 3\ntok 0.5 0.5\n").unwrap_err();
        assert!(matches!(err, EmbedError::ParseError { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn import_rejects_count_mismatch_with_header() {
        assert!(parse_embeddings("2 2\ntok 0.0 0.0\n").is_err());
    }

    #[test]
    fn import_rejects_duplicate_token() {
        assert!(parse_embeddings("2 1\ntok 0.0\ntok 1.0\n").is_err());
    }

    #[test]
    fn export_rejects_token_with_space() {
        let vocab = Vocabulary::from_sorted(vec![("bad token".into(), 1)]);
        let table = EmbeddingTable::from_parts(vocab, 1, vec![0.0], vec![0.0]);
        assert!(matches!(
            embeddings_to_string(&table),
            Err(EmbedError::InvalidToken(_))
        ));
    }
}
