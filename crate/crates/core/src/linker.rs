//! Entity linking: find mentions of knowledge-graph entities in cleaned post
//! text. Two recognizers are supported — a local gazetteer (longest-match
//! lookup) and an optional remote HTTP annotator — whose outputs are merged
//! by union and then passed through a curation step that fixes known
//! mislinkings and flags suspicious entity types for review.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::kgstore::is_valid_qid;

/// Errors from gazetteer loading, curation parsing, and remote annotation.
#[derive(Debug, Error)]
pub enum LinkerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("invalid curation rule: {0}")]
    InvalidRule(String),
    #[error("remote annotator timed out")]
    Timeout,
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("bad remote response: {0}")]
    BadResponse(String),
}

/// Where a mention came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentionSource {
    Gazetteer,
    Remote,
    /// Produced by both recognizers and merged.
    Merged,
}

/// One linked entity mention. `span` holds character offsets into the clean
/// text, and `surface` always equals the text slice at that span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub surface: String,
    pub span: (usize, usize),
    pub qid: String,
    pub entity_type: Option<String>,
    pub source: MentionSource,
    pub needs_curation: bool,
}

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Surface-form lookup table mapping normalized surfaces to entity ids.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: BTreeMap<String, (String, Option<String>)>,
    /// Longest key measured in whitespace tokens; bounds the n-gram scan.
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Gazetteer::default()
    }

    /// Adds one surface → entity entry; the surface is normalized first.
    pub fn insert(
        &mut self,
        surface: &str,
        qid: &str,
        entity_type: Option<&str>,
    ) -> Result<(), LinkerError> {
        if !is_valid_qid(qid) {
            return Err(LinkerError::InvalidRule(format!(
                "gazetteer id {qid:?} is not a Q-number"
            )));
        }
        let key = normalize_surface(surface);
        if key.is_empty() {
            return Err(LinkerError::InvalidRule("empty surface form".into()));
        }
        self.max_tokens = self.max_tokens.max(key.split(' ').count());
        self.entries
            .insert(key, (qid.to_string(), entity_type.map(str::to_string)));
        Ok(())
    }

    pub fn get(&self, surface: &str) -> Option<&(String, Option<String>)> {
        self.entries.get(&normalize_surface(surface))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entity id → type lookup derived from the typed entries.
    pub fn type_map(&self) -> BTreeMap<String, String> {
        self.entries
            .values()
            .filter_map(|(qid, ty)| ty.as_ref().map(|t| (qid.clone(), t.clone())))
            .collect()
    }
}

/// Parses gazetteer TSV content: `surface<TAB>qid[<TAB>type]` per line.
/// Blank lines are skipped; conflicting duplicate surfaces are rejected.
pub fn parse_gazetteer(content: &str) -> Result<Gazetteer, LinkerError> {
    let mut g = Gazetteer::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(LinkerError::ParseError {
                line: idx + 1,
                reason: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let entity_type = fields.get(2).map(|t| t.trim()).filter(|t| !t.is_empty());
        let key = normalize_surface(fields[0]);
        if let Some((existing_qid, existing_ty)) = g.entries.get(&key) {
            let same = existing_qid == fields[1].trim()
                && existing_ty.as_deref() == entity_type;
            if !same {
                return Err(LinkerError::ParseError {
                    line: idx + 1,
                    reason: format!("conflicting duplicate surface form {:?}", fields[0]),
                });
            }
            continue;
        }
        g.insert(fields[0], fields[1].trim(), entity_type)
            .map_err(|e| LinkerError::ParseError {
                line: idx + 1,
                reason: e.to_string(),
            })?;
    }
    Ok(g)
}

pub fn load_gazetteer(path: &Path) -> Result<Gazetteer, LinkerError> {
    parse_gazetteer(&std::fs::read_to_string(path)?)
}

/// Whitespace tokens with their character-offset spans.
fn tokens_with_spans(text: &str) -> Vec<(String, usize, usize)> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;
    let mut pos = 0usize;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push((std::mem::take(&mut current), start, pos));
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.push(ch);
        }
        pos += 1;
    }
    if !current.is_empty() {
        tokens.push((current, start, pos));
    }
    tokens
}

fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}

/// Greedy longest-match recognition over token n-grams, scanning left to
/// right without overlaps. Matches are non-overlapping by construction.
pub fn recognize_gazetteer(text: &str, g: &Gazetteer) -> Vec<EntityMention> {
    let tokens = tokens_with_spans(text);
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = g.max_tokens.min(tokens.len() - i);
        let mut matched = None;
        for n in (1..=longest).rev() {
            let key = tokens[i..i + n]
                .iter()
                .map(|(t, _, _)| t.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if let Some((qid, entity_type)) = g.get(&key) {
                let span = (tokens[i].1, tokens[i + n - 1].2);
                matched = Some((n, qid.clone(), entity_type.clone(), span));
                break;
            }
        }
        match matched {
            Some((n, qid, entity_type, span)) => {
                mentions.push(EntityMention {
                    surface: slice_chars(text, span.0, span.1),
                    span,
                    qid,
                    entity_type,
                    source: MentionSource::Gazetteer,
                    needs_curation: false,
                });
                i += n;
            }
            None => i += 1,
        }
    }
    mentions
}

/// Extracts a Q-number from a bare id or an entity IRI.
fn qid_from_value(s: &str) -> Option<String> {
    let trimmed = s.trim().trim_matches(|c| c == '<' || c == '>');
    let tail = trimmed.rsplit('/').next().unwrap_or(trimmed);
    if is_valid_qid(tail) {
        Some(tail.to_string())
    } else {
        None
    }
}

/// First case-insensitive occurrence of `needle` in `haystack`, as a
/// character-offset span.
fn find_ci(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    let hay: Vec<char> = haystack.chars().flat_map(|c| c.to_lowercase()).collect();
    let need: Vec<char> = needle.chars().flat_map(|c| c.to_lowercase()).collect();
    if need.is_empty() || need.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - need.len())
        .find(|&i| hay[i..i + need.len()] == need[..])
        .map(|i| (i, i + need.len()))
}

const SURFACE_KEYS: &[&str] = &[
    "surface form",
    "surface_form",
    "surface",
    "mention",
    "text",
    "label",
];

/// Pulls (qid, surface) pairs out of one element of a response array,
/// tolerating strings, arrays, and objects with assorted field names.
fn mention_candidates(element: &serde_json::Value) -> Option<(String, Option<String>)> {
    use serde_json::Value;
    match element {
        Value::String(s) => qid_from_value(s).map(|qid| (qid, None)),
        Value::Array(items) => {
            let mut qid = None;
            let mut surface = None;
            for item in items {
                if let Value::String(s) = item {
                    match qid_from_value(s) {
                        Some(q) if qid.is_none() => qid = Some(q),
                        None if surface.is_none() => surface = Some(s.clone()),
                        _ => {}
                    }
                }
            }
            qid.map(|q| (q, surface))
        }
        Value::Object(fields) => {
            let surface = SURFACE_KEYS
                .iter()
                .filter_map(|k| fields.get(*k))
                .filter_map(|v| v.as_str())
                .map(str::to_string)
                .next();
            // Field order is sorted, so extraction is deterministic.
            let qid = fields
                .values()
                .filter_map(|v| v.as_str())
                .filter_map(qid_from_value)
                .next();
            qid.map(|q| (q, surface))
        }
        _ => None,
    }
}

/// Parses a remote annotator response body. Accepts any JSON object with at
/// least one top-level array field whose elements carry an entity IRI or
/// Q-number and, optionally, a surface string. Mentions whose surface is
/// missing or cannot be found in the text are dropped, since no valid span
/// can be produced for them.
fn parse_remote_response(body: &str, text: &str) -> Result<Vec<EntityMention>, LinkerError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| LinkerError::BadResponse(format!("not JSON: {e}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| LinkerError::BadResponse("top level is not an object".into()))?;
    let arrays: Vec<&Vec<serde_json::Value>> =
        object.values().filter_map(|v| v.as_array()).collect();
    if arrays.is_empty() {
        return Err(LinkerError::BadResponse(
            "no array field in response object".into(),
        ));
    }
    let mut seen = HashSet::new();
    let mut mentions = Vec::new();
    for element in arrays.into_iter().flatten() {
        let Some((qid, surface)) = mention_candidates(element) else {
            continue;
        };
        let Some(surface) = surface else { continue };
        let Some(span) = find_ci(text, &surface) else {
            continue;
        };
        if !seen.insert((qid.clone(), span)) {
            continue;
        }
        mentions.push(EntityMention {
            surface: slice_chars(text, span.0, span.1),
            span,
            qid,
            entity_type: None,
            source: MentionSource::Remote,
            needs_curation: false,
        });
    }
    mentions.sort_by(|a, b| a.span.0.cmp(&b.span.0).then(a.qid.cmp(&b.qid)));
    Ok(mentions)
}

/// Calls a remote annotator (`POST {"text": ...}`) and parses its response.
/// Empty text short-circuits to an empty list without touching the network.
pub fn recognize_remote(
    text: &str,
    endpoint: &str,
    timeout: Duration,
) -> Result<Vec<EntityMention>, LinkerError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| LinkerError::NetworkError(e.to_string()))?;
    remote_request(&client, text, endpoint)
}

fn remote_request(
    client: &reqwest::blocking::Client,
    text: &str,
    endpoint: &str,
) -> Result<Vec<EntityMention>, LinkerError> {
    let response = client
        .post(endpoint)
        .json(&serde_json::json!({ "text": text }))
        .send()
        .map_err(|e| {
            if e.is_timeout() {
                LinkerError::Timeout
            } else {
                LinkerError::NetworkError(e.to_string())
            }
        })?;
    let status = response.status();
    if !status.is_success() {
        return Err(LinkerError::BadResponse(format!("HTTP status {status}")));
    }
    let body = response.text().map_err(|e| {
        if e.is_timeout() {
            LinkerError::Timeout
        } else {
            LinkerError::NetworkError(e.to_string())
        }
    })?;
    parse_remote_response(&body, text)
}

/// [`recognize_remote`] over many texts with a bounded worker pool. Results
/// come back indexed like the input, independent of completion order; each
/// text gets its own success-or-error slot so callers can degrade per post.
pub fn recognize_remote_batch(
    texts: &[String],
    endpoint: &str,
    timeout: Duration,
    workers: usize,
) -> Vec<Result<Vec<EntityMention>, LinkerError>> {
    let workers = workers.max(1);
    let client = match reqwest::blocking::Client::builder().timeout(timeout).build() {
        Ok(c) => c,
        Err(e) => {
            return texts
                .iter()
                .map(|_| Err(LinkerError::NetworkError(e.to_string())))
                .collect()
        }
    };
    let mut slots: Vec<Option<Result<Vec<EntityMention>, LinkerError>>> =
        (0..texts.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..workers {
            let client = &client;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for i in (worker..texts.len()).step_by(workers) {
                    let result = if texts[i].trim().is_empty() {
                        Ok(Vec::new())
                    } else {
                        remote_request(client, &texts[i], endpoint)
                    };
                    out.push((i, result));
                }
                out
            }));
        }
        for handle in handles {
            for (i, result) in handle.join().expect("remote worker panicked") {
                slots[i] = Some(result);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

/// Union of two mention lists over the same text, keyed by entity id. A
/// mention found by both sources keeps the first list's span and is marked
/// [`MentionSource::Merged`]; output is sorted by span start, then id.
pub fn merge_mentions(a: &[EntityMention], b: &[EntityMention]) -> Vec<EntityMention> {
    let mut merged: Vec<EntityMention> = Vec::new();
    let mut by_qid: BTreeMap<&str, usize> = BTreeMap::new();
    for m in a {
        if !by_qid.contains_key(m.qid.as_str()) {
            by_qid.insert(m.qid.as_str(), merged.len());
            merged.push(m.clone());
        }
    }
    for m in b {
        match by_qid.get(m.qid.as_str()) {
            Some(&idx) => {
                merged[idx].source = MentionSource::Merged;
                if merged[idx].entity_type.is_none() {
                    merged[idx].entity_type = m.entity_type.clone();
                }
            }
            None => {
                merged.push(m.clone());
            }
        }
    }
    merged.sort_by(|x, y| x.span.0.cmp(&y.span.0).then(x.qid.cmp(&y.qid)));
    merged
}

/// A known mislinking and its fix: mentions of `surface` linked to
/// `wrong_qid` should point at `correct_qid` instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurationRule {
    pub surface: String,
    pub wrong_qid: String,
    pub correct_qid: String,
}

impl CurationRule {
    pub fn new(surface: &str, wrong_qid: &str, correct_qid: &str) -> Result<Self, LinkerError> {
        if !is_valid_qid(wrong_qid) || !is_valid_qid(correct_qid) {
            return Err(LinkerError::InvalidRule(format!(
                "ids must be Q-numbers, got {wrong_qid:?} and {correct_qid:?}"
            )));
        }
        if wrong_qid == correct_qid {
            return Err(LinkerError::InvalidRule(format!(
                "rule for {surface:?} maps {wrong_qid} to itself"
            )));
        }
        Ok(CurationRule {
            surface: normalize_surface(surface),
            wrong_qid: wrong_qid.to_string(),
            correct_qid: correct_qid.to_string(),
        })
    }
}

/// Parses curation TSV content: `surface<TAB>wrong_qid<TAB>correct_qid`.
pub fn parse_curation_rules(content: &str) -> Result<Vec<CurationRule>, LinkerError> {
    let mut rules = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(LinkerError::ParseError {
                line: idx + 1,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        rules.push(
            CurationRule::new(fields[0], fields[1].trim(), fields[2].trim()).map_err(|e| {
                LinkerError::ParseError {
                    line: idx + 1,
                    reason: e.to_string(),
                }
            })?,
        );
    }
    Ok(rules)
}

pub fn load_curation_rules(path: &Path) -> Result<Vec<CurationRule>, LinkerError> {
    parse_curation_rules(&std::fs::read_to_string(path)?)
}

/// The shipped default curation rules for the eating-disorder domain.
pub fn default_curation_rules() -> Vec<CurationRule> {
    parse_curation_rules(include_str!("../data/curation_default.tsv"))
        .expect("bundled curation rules parse")
}

/// Entity types whose mentions are suspicious enough to flag for review.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabuTypeList {
    pub types: BTreeSet<String>,
}

impl Default for TabuTypeList {
    fn default() -> Self {
        TabuTypeList {
            types: ["Album", "Book", "Streets", "Organization", "Song", "Movie"]
                .into_iter()
                .map(str::to_string)
                .collect(),
        }
    }
}

impl TabuTypeList {
    pub fn contains(&self, entity_type: &str) -> bool {
        self.types.contains(entity_type)
    }
}

/// Applies curation rules and tabu-type flagging. A mention matching a
/// rule's (surface, wrong id) pair is rewritten to the correct id and is
/// never flagged; an uncorrected mention whose linked type is tabu gets
/// `needs_curation = true`.
pub fn apply_curation(
    mentions: &[EntityMention],
    rules: &[CurationRule],
    tabu: &TabuTypeList,
    type_of: &BTreeMap<String, String>,
) -> Vec<EntityMention> {
    mentions
        .iter()
        .map(|m| {
            let mut out = m.clone();
            let normalized = normalize_surface(&m.surface);
            let corrected = rules
                .iter()
                .find(|r| r.surface == normalized && r.wrong_qid == m.qid);
            if let Some(rule) = corrected {
                out.qid = rule.correct_qid.clone();
                out.needs_curation = false;
            } else {
                let linked_type = type_of.get(&out.qid).or(out.entity_type.as_ref());
                out.needs_curation = linked_type.is_some_and(|t| tabu.contains(t));
            }
            out
        })
        .collect()
}

/// Entity ids that occur at least `min_count` times across all posts,
/// sorted by descending count, then id.
pub fn entity_vocabulary(all_mentions: &[Vec<EntityMention>], min_count: u64) -> Vec<String> {
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for mentions in all_mentions {
        for m in mentions {
            *counts.entry(m.qid.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().map(|(qid, _)| qid.to_string()).collect()
}

/// Total, unique, and retained mention counts — the corpus-level shape of
/// the linking stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkingStatistics {
    pub total_mentions: u64,
    pub unique_entities: u64,
    pub retained_entities: u64,
}

pub fn linking_statistics(all_mentions: &[Vec<EntityMention>], min_count: u64) -> LinkingStatistics {
    let total: u64 = all_mentions.iter().map(|m| m.len() as u64).sum();
    let unique: HashSet<&str> = all_mentions
        .iter()
        .flatten()
        .map(|m| m.qid.as_str())
        .collect();
    LinkingStatistics {
        total_mentions: total,
        unique_entities: unique.len() as u64,
        retained_entities: entity_vocabulary(all_mentions, min_count).len() as u64,
    }
}
