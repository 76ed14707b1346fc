//! Input construction. Priming appends verbalized condition (and optionally
//! relation) words after the passage:
//!
//! ```text
//! passage SEP span-words SEP type-words [SEP relation-words]
//! ```
//!
//! The span segment is omitted for concept conditions. Only passage tokens are
//! ever tagged; the loss mask is false on every priming token.

use std::ops::Range;

use crate::rse::{Condition, ConditionKind, Passage, RelationSchema, TokenSpan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Passage,
    ConditionWords,
    ConditionTypeWords,
    RelationWords,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimedInput {
    pub tokens: Vec<String>,
    pub passage_len: usize,
    pub segments: Vec<Segment>,
    pub loss_mask: Vec<bool>,
}

impl PrimedInput {
    pub fn passage_only(passage: &Passage) -> Self {
        let n = passage.len();
        Self {
            tokens: passage.tokens.clone(),
            passage_len: n,
            segments: vec![Segment {
                kind: SegmentKind::Passage,
                range: 0..n,
            }],
            loss_mask: vec![true; n],
        }
    }

    fn push_segment(&mut self, kind: SegmentKind, sep: &str, words: &[String]) {
        self.tokens.push(sep.to_string());
        let start = self.tokens.len();
        self.tokens.extend(words.iter().cloned());
        self.segments.push(Segment {
            kind,
            range: start..self.tokens.len(),
        });
        self.loss_mask.resize(self.tokens.len(), false);
    }

    /// Appends a relation tail built by [`relation_tail`].
    pub fn with_tail(mut self, tail: &[String]) -> Self {
        let start = self.tokens.len() + 1;
        self.tokens.extend(tail.iter().cloned());
        self.segments.push(Segment {
            kind: SegmentKind::RelationWords,
            range: start..self.tokens.len(),
        });
        self.loss_mask.resize(self.tokens.len(), false);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    pub fn is_primed(&self) -> bool {
        self.tokens.len() > self.passage_len
    }

    /// The passage tokens with all priming removed.
    pub fn strip_priming(&self) -> &[String] {
        &self.tokens[..self.passage_len]
    }
}

pub(crate) fn check_condition(passage: &Passage, condition: &Condition) -> Result<()> {
    let ok = match (condition.kind, condition.span) {
        (ConditionKind::Span, Some(span)) => span.fits(passage.len()),
        (ConditionKind::Concept, None) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInstance {
            id: passage.id.clone(),
            violations: format!("condition span {:?} does not fit the passage", condition.span),
        })
    }
}

/// The words appended for relationship priming: a separator followed by the
/// relation's verbalization.
pub fn relation_tail(schema: &RelationSchema, relation: &str) -> Result<Vec<String>> {
    if schema.relation_index(relation).is_none() {
        return Err(Error::MissingVerbalization(relation.to_string()));
    }
    let words = schema.verbalize_relation(relation)?;
    let mut tail = Vec::with_capacity(words.len() + 1);
    tail.push(schema.separator().to_string());
    tail.extend(words.iter().cloned());
    Ok(tail)
}

/// Passage plus condition priming, plus relation priming when `relation` is set.
pub fn build_input(
    passage: &Passage,
    condition: &Condition,
    schema: &RelationSchema,
    relation: Option<&str>,
) -> Result<PrimedInput> {
    check_condition(passage, condition)?;
    let sep = schema.separator();
    let type_words = schema.verbalize_condition(&condition.type_label)?;
    let mut input = PrimedInput::passage_only(passage);
    if let Some(span) = condition.span {
        input.push_segment(SegmentKind::ConditionWords, sep, passage.words(span));
    }
    input.push_segment(SegmentKind::ConditionTypeWords, sep, type_words);
    match relation {
        Some(rel) => Ok(input.with_tail(&relation_tail(schema, rel)?)),
        None => Ok(input),
    }
}

/// Which conditional-feature embeddings the encoder appends to each token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FeatureRequest {
    /// Average of the contextual vectors over this passage span.
    pub span: Option<TokenSpan>,
    pub condition_type: Option<usize>,
    pub relation: Option<usize>,
}

impl FeatureRequest {
    pub fn is_empty(&self) -> bool {
        self.span.is_none() && self.condition_type.is_none() && self.relation.is_none()
    }
}

/// The unprimed passage plus every conditional feature available for this
/// condition/relation: span average only for span conditions, type id always,
/// relation id when a relation is given.
pub fn feature_inputs(
    passage: &Passage,
    condition: &Condition,
    schema: &RelationSchema,
    relation: Option<&str>,
) -> Result<(PrimedInput, FeatureRequest)> {
    check_condition(passage, condition)?;
    let condition_type = schema
        .condition_type_index(&condition.type_label)
        .ok_or_else(|| Error::UnknownLabel(condition.type_label.clone()))?;
    let relation = relation
        .map(|r| {
            schema
                .relation_index(r)
                .ok_or_else(|| Error::UnknownLabel(r.to_string()))
        })
        .transpose()?;
    Ok((
        PrimedInput::passage_only(passage),
        FeatureRequest {
            span: condition.span,
            condition_type: Some(condition_type),
            relation,
        },
    ))
}
