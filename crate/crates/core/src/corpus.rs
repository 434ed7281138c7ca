//! Labeled short-text corpus: TSV loading, tweet-style preprocessing, and
//! per-class item statistics (emoji, unigram, hashtag distributions).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Errors produced by corpus loading, preprocessing, and statistics.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate post id: {0}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("task {0} has no label column in this corpus")]
    UnknownTask(Task),
    #[error("both distributions are empty")]
    BothEmpty,
    #[error("post {id}: text contains an embedded tab or newline")]
    EmbeddedSeparator { id: String },
    #[error("label column for {task} has {got} entries, expected {expected}")]
    LabelLengthMismatch { task: Task, got: usize, expected: usize },
}

/// The four binary classification tasks a corpus may carry labels for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Ed1,
    Ed2,
    Ed3,
    Ed4,
}

impl Task {
    /// All tasks in canonical column order.
    pub const ALL: [Task; 4] = [Task::Ed1, Task::Ed2, Task::Ed3, Task::Ed4];

    /// Column name used in corpus TSV headers.
    pub fn column(&self) -> &'static str {
        match self {
            Task::Ed1 => "ed1",
            Task::Ed2 => "ed2",
            Task::Ed3 => "ed3",
            Task::Ed4 => "ed4",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ed1" => Ok(Task::Ed1),
            "ed2" => Ok(Task::Ed2),
            "ed3" => Ok(Task::Ed3),
            "ed4" => Ok(Task::Ed4),
            other => Err(format!("unknown task name: {other}")),
        }
    }
}

/// A single short text with its preprocessing products.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub id: String,
    /// Raw text as collected.
    pub text: String,
    /// Lowercased text with URLs, mentions, and emojis removed; empty until
    /// [`preprocess`] has run.
    pub clean_text: String,
    pub author_id: Option<String>,
    /// Emoji grapheme clusters removed from `text`, in order of appearance.
    pub emojis: Vec<String>,
}

impl Post {
    /// A post carrying only id and raw text.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Post {
            id: id.into(),
            text: text.into(),
            clean_text: String::new(),
            author_id: None,
            emojis: Vec::new(),
        }
    }
}

/// An ordered post collection with aligned binary label columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    posts: Vec<Post>,
    labels: BTreeMap<Task, Vec<u8>>,
}

impl LabeledCorpus {
    /// Builds a corpus, validating id uniqueness, label column lengths, and
    /// label values.
    pub fn new(posts: Vec<Post>, labels: BTreeMap<Task, Vec<u8>>) -> Result<Self, CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for post in &posts {
            if !seen.insert(post.id.as_str()) {
                return Err(CorpusError::DuplicateId(post.id.clone()));
            }
        }
        for (task, column) in &labels {
            if column.len() != posts.len() {
                return Err(CorpusError::LabelLengthMismatch {
                    task: *task,
                    got: column.len(),
                    expected: posts.len(),
                });
            }
            if let Some(bad) = column.iter().find(|v| **v > 1) {
                return Err(CorpusError::MalformedRow {
                    line: 0,
                    reason: format!("label value {bad} for {task} is not 0 or 1"),
                });
            }
        }
        Ok(LabeledCorpus { posts, labels })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Tasks that have a label column, in canonical order.
    pub fn tasks(&self) -> Vec<Task> {
        self.labels.keys().copied().collect()
    }

    /// Label column for `task`, aligned with [`posts`](Self::posts).
    pub fn labels(&self, task: Task) -> Result<&[u8], CorpusError> {
        self.labels
            .get(&task)
            .map(Vec::as_slice)
            .ok_or(CorpusError::UnknownTask(task))
    }

    /// Replaces every post with its preprocessed form.
    pub fn preprocess_all(&mut self, cfg: &PreprocessConfig) {
        for post in &mut self.posts {
            *post = preprocess(post.clone(), cfg);
        }
    }
}

/// Rules applied by [`preprocess`].
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    /// Inclusive codepoint ranges treated as emoji.
    pub emoji_ranges: Vec<(u32, u32)>,
    pub lowercase: bool,
    pub strip_urls: bool,
    pub strip_mentions: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            emoji_ranges: vec![
                (0x1F300, 0x1F5FF),
                (0x1F600, 0x1F64F),
                (0x1F680, 0x1F6FF),
                (0x1F900, 0x1F9FF),
                (0x2600, 0x27BF),
            ],
            lowercase: true,
            strip_urls: true,
            strip_mentions: true,
        }
    }
}

const VARIATION_SELECTOR: char = '\u{FE0F}';
const ZERO_WIDTH_JOINER: char = '\u{200D}';

impl PreprocessConfig {
    fn is_emoji(&self, c: char) -> bool {
        let cp = c as u32;
        self.emoji_ranges.iter().any(|&(lo, hi)| cp >= lo && cp <= hi)
    }
}

/// Lowercases, removes URL tokens (`http://`, `https://`, `www.` prefixes) and
/// `@`-mentions, and extracts emoji clusters in order of appearance. Hashtag
/// tokens keep their leading `#`. Total function; never fails.
///
/// A cluster is one emoji codepoint plus any immediately following U+FE0F
/// variation selectors, extended through U+200D joiners (so a joined family
/// sequence counts once). Skin-tone modifiers are separate codepoints in the
/// configured ranges and therefore count as their own cluster.
pub fn preprocess(post: Post, cfg: &PreprocessConfig) -> Post {
    let (clean_text, emojis) = clean_rules(&post.text, cfg);
    Post {
        clean_text,
        emojis,
        ..post
    }
}

/// The text-rewriting core of [`preprocess`]: returns the cleaned string and
/// the removed emoji clusters. Applying it to its own output is the identity.
pub fn clean_rules(text: &str, cfg: &PreprocessConfig) -> (String, Vec<String>) {
    let mut emojis = Vec::new();
    let mut stripped = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if cfg.is_emoji(c) {
            let mut cluster = String::new();
            cluster.push(c);
            loop {
                while chars.peek() == Some(&VARIATION_SELECTOR) {
                    cluster.push(chars.next().unwrap());
                }
                if chars.peek() == Some(&ZERO_WIDTH_JOINER) {
                    let mut lookahead = chars.clone();
                    lookahead.next(); // the joiner
                    match lookahead.peek() {
                        Some(&next) if cfg.is_emoji(next) => {
                            cluster.push(chars.next().unwrap());
                            cluster.push(chars.next().unwrap());
                            continue;
                        }
                        _ => break,
                    }
                }
                break;
            }
            emojis.push(cluster);
        } else if c == VARIATION_SELECTOR || c == ZERO_WIDTH_JOINER {
            // Orphan joiner outside a cluster: drop it, record nothing.
        } else {
            stripped.push(c);
        }
    }

    let lowered = if cfg.lowercase {
        stripped.to_lowercase()
    } else {
        stripped
    };
    let kept: Vec<&str> = lowered
        .split_whitespace()
        .filter(|token| {
            if cfg.strip_urls
                && (token.starts_with("http://")
                    || token.starts_with("https://")
                    || token.starts_with("www."))
            {
                return false;
            }
            !(cfg.strip_mentions && token.starts_with('@'))
        })
        .collect();
    (kept.join(" "), emojis)
}

/// Counts posts whose emoji list is nonempty and the fraction of the corpus
/// they make up.
pub fn emoji_statistics(corpus: &LabeledCorpus) -> Result<(usize, f64), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let with_emoji = corpus.posts().iter().filter(|p| !p.emojis.is_empty()).count();
    Ok((with_emoji, with_emoji as f64 / corpus.len() as f64))
}

/// What [`class_distribution`] counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Emoji,
    /// Tokens of `clean_text` that do not start with `#`.
    Unigram,
    /// Tokens of `clean_text` that start with `#`.
    Hashtag,
}

/// Per-class frequency table over one item kind for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDistribution {
    pub task: Task,
    pub class_label: u8,
    pub counts: BTreeMap<String, u64>,
}

impl ClassDistribution {
    /// Sum of all stored counts.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

fn items_of(post: &Post, kind: ItemKind) -> Vec<String> {
    match kind {
        ItemKind::Emoji => post.emojis.clone(),
        ItemKind::Unigram => crate::embed::tokenize(&post.clean_text)
            .into_iter()
            .filter(|t| !t.starts_with('#'))
            .collect(),
        ItemKind::Hashtag => crate::embed::tokenize(&post.clean_text)
            .into_iter()
            .filter(|t| t.starts_with('#'))
            .collect(),
    }
}

/// Per-class frequency tables for `task`, restricted to the `top_n` most
/// frequent items over both classes together. Ties at the cutoff are broken
/// lexicographically so the table is stable across platforms.
pub fn class_distribution(
    corpus: &LabeledCorpus,
    task: Task,
    kind: ItemKind,
    top_n: usize,
) -> Result<(ClassDistribution, ClassDistribution), CorpusError> {
    let labels = corpus.labels(task)?;

    let mut overall: BTreeMap<String, u64> = BTreeMap::new();
    let mut per_class: [BTreeMap<String, u64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (post, &label) in corpus.posts().iter().zip(labels) {
        for item in items_of(post, kind) {
            *overall.entry(item.clone()).or_insert(0) += 1;
            *per_class[label as usize].entry(item).or_insert(0) += 1;
        }
    }

    // BTreeMap iteration is lexicographic, so a stable sort on descending
    // count leaves ties in lexicographic order.
    let mut ranked: Vec<(String, u64)> = overall.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    let keep: std::collections::HashSet<&str> =
        ranked.iter().take(top_n).map(|(item, _)| item.as_str()).collect();

    let [class0, class1] = per_class;
    let restrict = |counts: BTreeMap<String, u64>, class_label: u8| ClassDistribution {
        task,
        class_label,
        counts: counts
            .into_iter()
            .filter(|(item, _)| keep.contains(item.as_str()))
            .collect(),
    };
    Ok((restrict(class0, 0), restrict(class1, 1)))
}

/// Jaccard overlap of the two distributions' key sets: |K0∩K1| / |K0∪K1|.
pub fn overlap_analysis(
    d0: &ClassDistribution,
    d1: &ClassDistribution,
) -> Result<f64, CorpusError> {
    if d0.counts.is_empty() && d1.counts.is_empty() {
        return Err(CorpusError::BothEmpty);
    }
    let k0: std::collections::HashSet<&str> = d0.counts.keys().map(String::as_str).collect();
    let k1: std::collections::HashSet<&str> = d1.counts.keys().map(String::as_str).collect();
    let intersection = k0.intersection(&k1).count();
    let union = k0.union(&k1).count();
    Ok(intersection as f64 / union as f64)
}

/// Loads a corpus from its TSV form: header `id<TAB>text` followed by any
/// subset of the task columns `ed1..ed4`, labels written as literal `0`/`1`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<LabeledCorpus, CorpusError> {
    let content = std::fs::read_to_string(path)?;
    parse_corpus(&content)
}

/// Parses the TSV corpus format from an in-memory string.
pub fn parse_corpus(content: &str) -> Result<LabeledCorpus, CorpusError> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(CorpusError::MalformedRow {
        line: 1,
        reason: "missing header row".into(),
    })?;
    let columns: Vec<&str> = header.split('\t').collect();
    if columns.len() < 2 || columns[0] != "id" || columns[1] != "text" {
        return Err(CorpusError::MalformedRow {
            line: 1,
            reason: format!("header must start with id<TAB>text, got {header:?}"),
        });
    }
    let mut tasks = Vec::new();
    for name in &columns[2..] {
        let task = Task::from_str(name).map_err(|reason| CorpusError::MalformedRow {
            line: 1,
            reason,
        })?;
        if tasks.contains(&task) {
            return Err(CorpusError::MalformedRow {
                line: 1,
                reason: format!("duplicate task column {task}"),
            });
        }
        tasks.push(task);
    }

    let mut posts = Vec::new();
    let mut labels: BTreeMap<Task, Vec<u8>> = tasks.iter().map(|t| (*t, Vec::new())).collect();
    for (index, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = index + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                reason: format!("expected {} columns, got {}", columns.len(), fields.len()),
            });
        }
        posts.push(Post::new(fields[0], fields[1]));
        for (task, value) in tasks.iter().zip(&fields[2..]) {
            let label = match *value {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(CorpusError::MalformedRow {
                        line: line_no,
                        reason: format!("label {other:?} for {task} is not 0 or 1"),
                    })
                }
            };
            labels.get_mut(task).unwrap().push(label);
        }
    }
    LabeledCorpus::new(posts, labels)
}

/// Writes the corpus back to its TSV form (raw text and labels; preprocessing
/// products are recomputable and not persisted).
pub fn save_corpus(corpus: &LabeledCorpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    std::fs::write(path, corpus_to_tsv(corpus)?)?;
    Ok(())
}

/// Serializes the corpus to the TSV format accepted by [`parse_corpus`].
pub fn corpus_to_tsv(corpus: &LabeledCorpus) -> Result<String, CorpusError> {
    let tasks = corpus.tasks();
    let mut out = String::from("id\ttext");
    for task in &tasks {
        out.push('\t');
        out.push_str(task.column());
    }
    out.push('\n');
    for (row, post) in corpus.posts().iter().enumerate() {
        for field in [&post.id, &post.text] {
            if field.contains('\t') || field.contains('\n') || field.contains('\r') {
                return Err(CorpusError::EmbeddedSeparator { id: post.id.clone() });
            }
        }
        out.push_str(&post.id);
        out.push('\t');
        out.push_str(&post.text);
        for task in &tasks {
            out.push('\t');
            out.push(if corpus.labels(*task)?[row] == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    Ok(out)
}
