//! In-memory knowledge graph: an N-Triples subset parser, out-adjacency over
//! IRI objects, and post-hoc concept additions.
//!
//! The supported grammar covers what entity snapshots need — IRIs in angle
//! brackets and plain/language-tagged/typed literals — and deliberately
//! rejects blank nodes to keep the parser small.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use thiserror::Error;

/// IRI prefix of entity identifiers in Wikidata-style snapshots.
pub const ENTITY_PREFIX: &str = "http://www.wikidata.org/entity/";
/// Direct-claim "instance of" predicate.
pub const INSTANCE_OF: &str = "http://www.wikidata.org/prop/direct/P31";
/// Label predicate used for human-readable names.
pub const LABEL_PREDICATE: &str = "http://www.w3.org/2000/01/rdf-schema#label";

/// Full entity IRI for a bare identifier like `Q254327`.
pub fn entity_iri(qid: &str) -> String {
    format!("{ENTITY_PREFIX}{qid}")
}

/// True for identifiers of the form `Q[0-9]+`.
pub fn is_valid_qid(qid: &str) -> bool {
    let mut chars = qid.chars();
    chars.next() == Some('Q') && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
    }
}

/// Errors from snapshot parsing and graph edits.
#[derive(Debug, Error)]
pub enum KgError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("invalid entity identifier: {0:?}")]
    InvalidQid(String),
}

/// Object position of a triple: an IRI node or a literal value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Object {
    Iri(String),
    Literal {
        value: String,
        lang: Option<String>,
        datatype: Option<String>,
    },
}

impl Object {
    pub fn literal(value: impl Into<String>) -> Self {
        Object::Literal {
            value: value.into(),
            lang: None,
            datatype: None,
        }
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Object::Iri(iri) => Some(iri),
            Object::Literal { .. } => None,
        }
    }
}

/// A single subject–predicate–object statement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Object,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Object) -> Self {
        Triple {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }
}

/// Immutable triple set with precomputed out-adjacency over IRI objects.
/// Literal-valued triples are kept but never appear in adjacency, so walks
/// only ever traverse entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    out_adjacency: BTreeMap<String, Vec<(String, String)>>,
    nodes: BTreeSet<String>,
}

impl KnowledgeGraph {
    /// Builds a graph from any triple collection, deduplicating as a set.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let triples: BTreeSet<Triple> = triples.into_iter().collect();
        let mut out_adjacency: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut nodes = BTreeSet::new();
        for triple in &triples {
            nodes.insert(triple.subject.clone());
            if let Object::Iri(object) = &triple.object {
                nodes.insert(object.clone());
                out_adjacency
                    .entry(triple.subject.clone())
                    .or_default()
                    .push((triple.predicate.clone(), object.clone()));
            }
        }
        // BTreeSet iteration is already (subject, predicate, object)-sorted,
        // so each adjacency list arrives sorted by (predicate, object).
        KnowledgeGraph {
            triples,
            out_adjacency,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    /// Outgoing (predicate, object) pairs of `node`, sorted by (predicate,
    /// object). Unknown nodes and nodes without IRI out-edges yield `[]`.
    pub fn neighbors(&self, node: &str) -> &[(String, String)] {
        self.out_adjacency
            .get(node)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// True if `node` occurs anywhere as a subject or IRI object.
    pub fn contains_node(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    /// All nodes (subjects and IRI objects), sorted.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }
}

/// A curated concept to insert into the graph: display label, entity id, and
/// the triples carrying it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptAddition {
    pub label: String,
    pub qid: String,
    pub triples: Vec<Triple>,
}

impl ConceptAddition {
    /// An addition carrying an English label triple, plus an `instance of`
    /// typing triple when `class_qid` is given.
    pub fn labeled(label: impl Into<String>, qid: impl Into<String>, class_qid: Option<&str>) -> Self {
        let label = label.into();
        let qid = qid.into();
        let iri = entity_iri(&qid);
        let mut triples = vec![Triple::new(
            iri.clone(),
            LABEL_PREDICATE,
            Object::Literal {
                value: label.clone(),
                lang: Some("en".into()),
                datatype: None,
            },
        )];
        if let Some(class_qid) = class_qid {
            triples.push(Triple::new(
                iri,
                INSTANCE_OF,
                Object::Iri(entity_iri(class_qid)),
            ));
        }
        ConceptAddition {
            label,
            qid,
            triples,
        }
    }
}

/// Inserts every addition's triples, validating entity identifiers first.
/// The input graph is untouched; re-applying the same additions returns an
/// equal graph.
pub fn apply_additions(
    g: &KnowledgeGraph,
    adds: &[ConceptAddition],
) -> Result<KnowledgeGraph, KgError> {
    for add in adds {
        if !is_valid_qid(&add.qid) {
            return Err(KgError::InvalidQid(add.qid.clone()));
        }
    }
    let mut triples = g.triples.clone();
    for add in adds {
        for triple in &add.triples {
            validate_triple(triple).map_err(|reason| KgError::ParseError { line: 0, reason })?;
            triples.insert(triple.clone());
        }
    }
    Ok(KnowledgeGraph::from_triples(triples))
}

/// The concepts this project ships as graph additions by default, parsed
/// from `data/additions_default.tsv` (label and entity id per row).
pub fn default_additions() -> Vec<ConceptAddition> {
    parse_additions(include_str!("../data/additions_default.tsv"))
        .expect("bundled additions file is well-formed")
}

/// Parses an additions TSV: `label<TAB>qid`, with an optional third column
/// naming a class qid to type the concept via `instance of`.
pub fn parse_additions(content: &str) -> Result<Vec<ConceptAddition>, KgError> {
    let mut additions = Vec::new();
    for (index, line) in content.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(KgError::ParseError {
                line: line_no,
                reason: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let (label, qid) = (fields[0], fields[1]);
        if !is_valid_qid(qid) {
            return Err(KgError::InvalidQid(qid.to_string()));
        }
        let class_qid = fields.get(2).copied().filter(|c| !c.is_empty());
        if let Some(class_qid) = class_qid {
            if !is_valid_qid(class_qid) {
                return Err(KgError::InvalidQid(class_qid.to_string()));
            }
        }
        additions.push(ConceptAddition::labeled(label, qid, class_qid));
    }
    Ok(additions)
}

/// Loads an additions TSV from disk.
pub fn load_additions(path: impl AsRef<Path>) -> Result<Vec<ConceptAddition>, KgError> {
    parse_additions(&std::fs::read_to_string(path)?)
}

fn validate_triple(triple: &Triple) -> Result<(), String> {
    validate_iri(&triple.subject)?;
    validate_iri(&triple.predicate)?;
    match &triple.object {
        Object::Iri(iri) => validate_iri(iri),
        Object::Literal { value, .. } if value.is_empty() => Err("empty literal".into()),
        Object::Literal { .. } => Ok(()),
    }
}

fn validate_iri(iri: &str) -> Result<(), String> {
    if iri.is_empty() {
        return Err("empty IRI".into());
    }
    if let Some(bad) = iri
        .chars()
        .find(|c| c.is_whitespace() || matches!(c, '<' | '>' | '"'))
    {
        return Err(format!("IRI contains forbidden character {bad:?}"));
    }
    Ok(())
}

/// Loads a snapshot from an `.nt` file; a `.gz` extension triggers
/// transparent gzip decompression.
pub fn load_ntriples(path: impl AsRef<Path>) -> Result<KnowledgeGraph, KgError> {
    let path = path.as_ref();
    let raw = std::fs::read(path)?;
    let content = if path.extension().is_some_and(|e| e == "gz") {
        let mut decoder = flate2::read::GzDecoder::new(raw.as_slice());
        let mut out = String::new();
        decoder.read_to_string(&mut out)?;
        out
    } else {
        String::from_utf8(raw).map_err(|e| KgError::ParseError {
            line: 0,
            reason: format!("snapshot is not UTF-8: {e}"),
        })?
    };
    parse_ntriples(&content)
}

/// Parses N-Triples text: one triple per line, `#` comments and blank lines
/// skipped, duplicates deduplicated.
pub fn parse_ntriples(content: &str) -> Result<KnowledgeGraph, KgError> {
    let mut triples = Vec::new();
    for (index, line) in content.lines().enumerate() {
        if let Some(triple) = parse_line(line, index + 1)? {
            triples.push(triple);
        }
    }
    Ok(KnowledgeGraph::from_triples(triples))
}

/// Serializes the graph back to N-Triples, in sorted triple order.
pub fn to_ntriples(g: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for triple in g.triples() {
        out.push('<');
        out.push_str(&triple.subject);
        out.push_str("> <");
        out.push_str(&triple.predicate);
        out.push_str("> ");
        match &triple.object {
            Object::Iri(iri) => {
                out.push('<');
                out.push_str(iri);
                out.push('>');
            }
            Object::Literal {
                value,
                lang,
                datatype,
            } => {
                out.push('"');
                for c in value.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\r' => out.push_str("\\r"),
                        '\t' => out.push_str("\\t"),
                        other => out.push(other),
                    }
                }
                out.push('"');
                if let Some(lang) = lang {
                    out.push('@');
                    out.push_str(lang);
                } else if let Some(datatype) = datatype {
                    out.push_str("^^<");
                    out.push_str(datatype);
                    out.push('>');
                }
            }
        }
        out.push_str(" .\n");
    }
    out
}

struct Cursor<'a> {
    rest: &'a str,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, reason: impl Into<String>) -> KgError {
        KgError::ParseError {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start_matches([' ', '\t']);
    }

    fn take(&mut self, prefix: char) -> bool {
        if let Some(stripped) = self.rest.strip_prefix(prefix) {
            self.rest = stripped;
            true
        } else {
            false
        }
    }

    fn take_iri(&mut self) -> Result<String, KgError> {
        if !self.take('<') {
            if self.rest.starts_with("_:") {
                return Err(self.error("blank nodes are not supported"));
            }
            return Err(self.error(format!("expected '<', found {:?}", head(self.rest))));
        }
        let end = self
            .rest
            .find('>')
            .ok_or_else(|| self.error("unterminated IRI"))?;
        let iri = &self.rest[..end];
        validate_iri(iri).map_err(|reason| self.error(reason))?;
        self.rest = &self.rest[end + 1..];
        Ok(iri.to_string())
    }

    fn take_literal(&mut self) -> Result<Object, KgError> {
        // Opening quote already consumed by the caller.
        let mut value = String::new();
        let mut chars = self.rest.char_indices();
        let closing = loop {
            let Some((at, c)) = chars.next() else {
                return Err(self.error("unterminated literal"));
            };
            match c {
                '"' => break at + 1,
                '\\' => {
                    let Some((_, escaped)) = chars.next() else {
                        return Err(self.error("dangling escape"));
                    };
                    match escaped {
                        't' => value.push('\t'),
                        'n' => value.push('\n'),
                        'r' => value.push('\r'),
                        '"' => value.push('"'),
                        '\\' => value.push('\\'),
                        'u' | 'U' => {
                            let width = if escaped == 'u' { 4 } else { 8 };
                            let mut code = 0u32;
                            for _ in 0..width {
                                let Some((_, hex)) = chars.next() else {
                                    return Err(self.error("truncated \\u escape"));
                                };
                                let digit = hex
                                    .to_digit(16)
                                    .ok_or_else(|| self.error("bad hex digit in \\u escape"))?;
                                code = code * 16 + digit;
                            }
                            let decoded = char::from_u32(code)
                                .ok_or_else(|| self.error("\\u escape is not a scalar value"))?;
                            value.push(decoded);
                        }
                        other => {
                            return Err(self.error(format!("unsupported escape \\{other}")));
                        }
                    }
                }
                other => value.push(other),
            }
        };
        self.rest = &self.rest[closing..];
        if value.is_empty() {
            return Err(self.error("empty literal"));
        }

        let mut lang = None;
        let mut datatype = None;
        if self.take('@') {
            let end = self
                .rest
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
                .unwrap_or(self.rest.len());
            if end == 0 {
                return Err(self.error("empty language tag"));
            }
            lang = Some(self.rest[..end].to_string());
            self.rest = &self.rest[end..];
        } else if let Some(stripped) = self.rest.strip_prefix("^^") {
            self.rest = stripped;
            datatype = Some(self.take_iri()?);
        }
        Ok(Object::Literal {
            value,
            lang,
            datatype,
        })
    }

    fn take_object(&mut self) -> Result<Object, KgError> {
        if self.rest.starts_with('<') {
            Ok(Object::Iri(self.take_iri()?))
        } else if self.take('"') {
            self.take_literal()
        } else if self.rest.starts_with("_:") {
            Err(self.error("blank nodes are not supported"))
        } else {
            Err(self.error(format!("expected IRI or literal, found {:?}", head(self.rest))))
        }
    }
}

fn head(s: &str) -> &str {
    &s[..s.len().min(12)]
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<Triple>, KgError> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut cursor = Cursor {
        rest: trimmed,
        line: line_no,
    };
    let subject = cursor.take_iri()?;
    cursor.skip_ws();
    let predicate = cursor.take_iri()?;
    cursor.skip_ws();
    let object = cursor.take_object()?;
    cursor.skip_ws();
    if !cursor.take('.') {
        return Err(cursor.error("missing terminating '.'"));
    }
    cursor.skip_ws();
    if !cursor.rest.is_empty() {
        return Err(cursor.error(format!("trailing content after '.': {:?}", head(cursor.rest))));
    }
    Ok(Some(Triple {
        subject,
        predicate,
        object,
    }))
}
