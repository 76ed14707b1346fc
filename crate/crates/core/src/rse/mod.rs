//! Unified data model: one passage, one condition, and the gold relational
//! structure (a list of spans, each with its relationship to the condition).

mod adapt;
mod io;
mod schema;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adapt::{adapt_task, Task};
pub use io::{
    read_corpus, read_jsonl, records_to_structure, spans_to_records, write_corpus, write_jsonl, ConditionRecord, CorpusRecord, SpanRecord,
};
pub use schema::{default_verbalization, RelationSchema, SchemaDocument, DEFAULT_SEPARATOR};

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Non-empty and within a passage of `n` tokens.
    pub fn fits(&self, n: usize) -> bool {
        self.start < self.end && self.end <= n
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Passage {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            id: id.into(),
            tokens,
        }
    }

    pub fn from_words(id: impl Into<String>, words: &[&str]) -> Self {
        Self::new(id, words.iter().map(|w| w.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self, span: TokenSpan) -> &[String] {
        &self.tokens[span.start..span.end]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Span,
    Concept,
}

/// The anchor a structure is extracted for: a span of the passage (trigger,
/// head entity) or a concept that has no surface span (intent).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Condition {
    pub kind: ConditionKind,
    pub span: Option<TokenSpan>,
    pub type_label: String,
}

impl Condition {
    pub fn span(span: TokenSpan, type_label: impl Into<String>) -> Self {
        Self {
            kind: ConditionKind::Span,
            span: Some(span),
            type_label: type_label.into(),
        }
    }

    pub fn concept(type_label: impl Into<String>) -> Self {
        Self {
            kind: ConditionKind::Concept,
            span: None,
            type_label: type_label.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Argument {
    pub span: TokenSpan,
    pub relation: String,
}

impl Argument {
    pub fn new(span: TokenSpan, relation: impl Into<String>) -> Self {
        Self {
            span,
            relation: relation.into(),
        }
    }
}

/// Spans paired with their relationship to the condition. Exact duplicate
/// `(span, relation)` pairs are rejected on construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct RelationalStructure {
    arguments: Vec<Argument>,
}

/// A span dropped while making a structure expressible as one BIO sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DroppedOverlap {
    pub dropped: Argument,
    pub kept: Argument,
}

impl fmt::Display for DroppedOverlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dropped overlap: {} {} conflicts with kept {} {}",
            self.dropped.span, self.dropped.relation, self.kept.span, self.kept.relation
        )
    }
}

impl RelationalStructure {
    pub fn new(arguments: Vec<Argument>) -> Result<Self> {
        let mut out = Self::default();
        for arg in arguments {
            out.push(arg)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, arg: Argument) -> Result<()> {
        if self.arguments.contains(&arg) {
            return Err(Error::DuplicatePair {
                span: arg.span,
                relation: arg.relation,
            });
        }
        self.arguments.push(arg);
        Ok(())
    }

    /// Adds `arg` unless the identical pair is already present.
    pub fn insert(&mut self, arg: Argument) -> bool {
        if self.arguments.contains(&arg) {
            false
        } else {
            self.arguments.push(arg);
            true
        }
    }

    pub fn arguments(&self) -> &[Argument] {
        &self.arguments
    }

    pub fn spans(&self) -> impl Iterator<Item = TokenSpan> + '_ {
        self.arguments.iter().map(|a| a.span)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> + '_ {
        self.arguments.iter().map(|a| a.relation.as_str())
    }

    pub fn len(&self) -> usize {
        self.arguments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arguments.is_empty()
    }

    /// Same pairs, sorted by `(start, end, relation)`.
    pub fn canonical(&self) -> Self {
        let mut arguments = self.arguments.clone();
        arguments.sort();
        Self { arguments }
    }

    pub fn filtered(&self, relation: &str) -> Self {
        Self {
            arguments: self
                .arguments
                .iter()
                .filter(|a| a.relation == relation)
                .cloned()
                .collect(),
        }
    }

    /// Greedy overlap resolution for a single BIO sequence: spans are visited
    /// by ascending start, longer first on equal start, then by relation
    /// label; a span overlapping an already kept span is dropped.
    pub fn resolve_overlaps(&self, relation_filter: Option<&str>) -> (Self, Vec<DroppedOverlap>) {
        let mut candidates: Vec<&Argument> = self
            .arguments
            .iter()
            .filter(|a| relation_filter.is_none_or(|r| a.relation == r))
            .collect();
        candidates.sort_by(|a, b| {
            a.span
                .start
                .cmp(&b.span.start)
                .then(b.span.len().cmp(&a.span.len()))
                .then(a.relation.cmp(&b.relation))
        });
        let mut kept: Vec<Argument> = Vec::new();
        let mut dropped = Vec::new();
        for arg in candidates {
            match kept.iter().find(|k| k.span.overlaps(&arg.span)) {
                Some(k) => dropped.push(DroppedOverlap {
                    dropped: arg.clone(),
                    kept: k.clone(),
                }),
                None => kept.push(arg.clone()),
            }
        }
        (Self { arguments: kept }, dropped)
    }
}

impl FromIterator<Argument> for RelationalStructure {
    /// Collects, silently skipping exact duplicates.
    fn from_iter<I: IntoIterator<Item = Argument>>(iter: I) -> Self {
        let mut out = Self::default();
        for arg in iter {
            out.insert(arg);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RseInstance {
    pub passage: Passage,
    pub condition: Condition,
    pub gold: RelationalStructure,
}

/// One broken invariant found by [`validate_instance`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyPassage,
    EmptyToken { index: usize },
    ReservedSeparator { index: usize },
    ConditionSpanMissing,
    UnexpectedConditionSpan,
    ConditionSpanOutOfBounds { span: TokenSpan },
    UnknownConditionType { label: String },
    SpanOutOfBounds { span: TokenSpan, len: usize },
    UnknownRelation { label: String },
    DuplicatePair { span: TokenSpan, relation: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPassage => write!(f, "empty passage"),
            Violation::EmptyToken { index } => write!(f, "empty token at {index}"),
            Violation::ReservedSeparator { index } => {
                write!(f, "token {index} contains the reserved separator")
            }
            Violation::ConditionSpanMissing => write!(f, "condition span missing"),
            Violation::UnexpectedConditionSpan => write!(f, "concept condition carries a span"),
            Violation::ConditionSpanOutOfBounds { span } => {
                write!(f, "condition span out of bounds: {span}")
            }
            Violation::UnknownConditionType { label } => {
                write!(f, "unknown condition type: {label}")
            }
            Violation::SpanOutOfBounds { .. } => write!(f, "span out of bounds"),
            Violation::UnknownRelation { .. } => write!(f, "unknown relation label"),
            Violation::DuplicatePair { span, relation } => {
                write!(f, "duplicate pair {span} {relation}")
            }
        }
    }
}

impl Violation {
    pub fn detail(&self) -> String {
        match self {
            Violation::SpanOutOfBounds { span, len } => {
                format!("span out of bounds: {span} in a {len}-token passage")
            }
            Violation::UnknownRelation { label } => format!("unknown relation label: {label}"),
            other => other.to_string(),
        }
    }
}

/// Checks every instance invariant against `schema`. An empty result means
/// the instance is well formed.
pub fn validate_instance(inst: &RseInstance, schema: &RelationSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = inst.passage.len();
    if n == 0 {
        out.push(Violation::EmptyPassage);
    }
    for (index, tok) in inst.passage.tokens.iter().enumerate() {
        if tok.is_empty() {
            out.push(Violation::EmptyToken { index });
        } else if tok.contains(schema.separator()) {
            out.push(Violation::ReservedSeparator { index });
        }
    }
    match (inst.condition.kind, inst.condition.span) {
        (ConditionKind::Span, None) => out.push(Violation::ConditionSpanMissing),
        (ConditionKind::Span, Some(span)) if !span.fits(n) => {
            out.push(Violation::ConditionSpanOutOfBounds { span })
        }
        (ConditionKind::Concept, Some(_)) => out.push(Violation::UnexpectedConditionSpan),
        _ => {}
    }
    if schema.condition_type_index(&inst.condition.type_label).is_none() {
        out.push(Violation::UnknownConditionType {
            label: inst.condition.type_label.clone(),
        });
    }
    for (i, arg) in inst.gold.arguments().iter().enumerate() {
        if !arg.span.fits(n) {
            out.push(Violation::SpanOutOfBounds { span: arg.span, len: n });
        }
        if schema.relation_index(&arg.relation).is_none() {
            out.push(Violation::UnknownRelation {
                label: arg.relation.clone(),
            });
        }
        if inst.gold.arguments()[..i].contains(arg) {
            out.push(Violation::DuplicatePair {
                span: arg.span,
                relation: arg.relation.clone(),
            });
        }
    }
    out
}

/// [`validate_instance`] as a `Result`, for ingestion paths.
pub fn ensure_valid(inst: &RseInstance, schema: &RelationSchema) -> Result<()> {
    let violations = validate_instance(inst, schema);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidInstance {
            id: inst.passage.id.clone(),
            violations: violations
                .iter()
                .map(Violation::detail)
                .collect::<Vec<_>>()
                .join("; "),
        })
    }
}
