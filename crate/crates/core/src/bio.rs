//! BIO tagging of relational structures.
//!
//! Two schemes: role-typed tags (`O`, `B-<role>`, `I-<role>`) for a single
//! pass over all relations, and binary tags (`O`, `B`, `I`) for one
//! relation-specific subtask at a time.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rse::{Argument, DroppedOverlap, RelationalStructure, TokenSpan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RoleTyped,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagKind {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// Ordered tag inventory. Tag 0 is always `O`; role `r` owns tags `1 + 2r`
/// (`B`) and `2 + 2r` (`I`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    scheme: Scheme,
    roles: Vec<String>,
    names: Vec<String>,
}

impl TagSet {
    pub fn role_typed<S: AsRef<str>>(roles: &[S]) -> Self {
        let roles: Vec<String> = roles.iter().map(|r| r.as_ref().to_string()).collect();
        let mut names = vec!["O".to_string()];
        for r in &roles {
            names.push(format!("B-{r}"));
            names.push(format!("I-{r}"));
        }
        Self {
            scheme: Scheme::RoleTyped,
            roles,
            names,
        }
    }

    pub fn binary() -> Self {
        Self {
            scheme: Scheme::Binary,
            roles: Vec::new(),
            names: vec!["O".into(), "B".into(), "I".into()],
        }
    }

    /// Rebuilds a tag set from its serialized names.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<&str> = names.iter().map(AsRef::as_ref).collect();
        if names == ["O", "B", "I"] {
            return Ok(Self::binary());
        }
        if names.first() != Some(&"O") || names.len() % 2 == 0 {
            return Err(Error::TagScheme(format!("not a BIO tag inventory: {names:?}")));
        }
        let mut roles = Vec::new();
        for pair in names[1..].chunks(2) {
            let role = pair[0]
                .strip_prefix("B-")
                .filter(|r| pair[1].strip_prefix("I-") == Some(*r))
                .ok_or_else(|| Error::TagScheme(format!("bad tag pair {pair:?}")))?;
            roles.push(role.to_string());
        }
        Ok(Self::role_typed(&roles))
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, tag: usize) -> &str {
        &self.names[tag]
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        self.roles.iter().position(|r| r == role)
    }

    pub fn kind(&self, tag: usize) -> TagKind {
        match tag {
            0 => TagKind::Outside,
            t if t % 2 == 1 => TagKind::Begin((t - 1) / 2),
            t => TagKind::Inside((t - 2) / 2),
        }
    }

    pub fn begin(&self, role: usize) -> usize {
        1 + 2 * role
    }

    pub fn inside(&self, role: usize) -> usize {
        2 + 2 * role
    }

    /// BIO validity of `prev -> next`; `prev = None` is the sequence start.
    pub fn transition_allowed(&self, prev: Option<usize>, next: usize) -> bool {
        match self.kind(next) {
            TagKind::Inside(r) => matches!(
                prev.map(|p| self.kind(p)),
                Some(TagKind::Begin(q)) | Some(TagKind::Inside(q)) if q == r
            ),
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSequence {
    pub tags: Vec<usize>,
    pub tagset: Arc<TagSet>,
}

impl TagSequence {
    pub fn new(tags: Vec<usize>, tagset: Arc<TagSet>) -> Self {
        Self { tags, tagset }
    }

    pub fn scheme(&self) -> Scheme {
        self.tagset.scheme()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.tags.iter().map(|&t| self.tagset.name(t)).collect()
    }

    /// Every `I` continues a `B`/`I` of the same role.
    pub fn is_valid(&self) -> bool {
        let mut prev = None;
        for &t in &self.tags {
            if !self.tagset.transition_allowed(prev, t) {
                return false;
            }
            prev = Some(t);
        }
        true
    }
}

/// Tags `structure` over `n` tokens. Binary sequences take exactly one
/// relation filter and keep only spans of that relation; role-typed sequences
/// take none. Spans must already be overlap-free (see
/// [`RelationalStructure::resolve_overlaps`]).
pub fn encode_tags(
    structure: &RelationalStructure,
    n: usize,
    tagset: &Arc<TagSet>,
    relation_filter: Option<&str>,
) -> Result<TagSequence> {
    let kept: Vec<(&Argument, usize)> = match (tagset.scheme(), relation_filter) {
        (Scheme::Binary, Some(rel)) => structure
            .arguments()
            .iter()
            .filter(|a| a.relation == rel)
            .map(|a| (a, 0))
            .collect(),
        (Scheme::RoleTyped, None) => structure
            .arguments()
            .iter()
            .map(|a| {
                tagset
                    .role_index(&a.relation)
                    .map(|r| (a, r))
                    .ok_or_else(|| Error::UnknownLabel(a.relation.clone()))
            })
            .collect::<Result<_>>()?,
        (Scheme::Binary, None) => {
            return Err(Error::TagScheme("binary tagging needs a relation filter".into()))
        }
        (Scheme::RoleTyped, Some(_)) => {
            return Err(Error::TagScheme(
                "role-typed tagging takes no relation filter".into(),
            ))
        }
    };
    for (i, (a, _)) in kept.iter().enumerate() {
        if !a.span.fits(n) {
            return Err(Error::TagScheme(format!(
                "span {} does not fit {n} tokens",
                a.span
            )));
        }
        if let Some((b, _)) = kept[..i].iter().find(|(b, _)| b.span.overlaps(&a.span)) {
            let (first, second) = order(b.span, a.span);
            return Err(Error::OverlappingSpans { first, second });
        }
    }
    let mut tags = vec![0; n];
    for (a, role) in kept {
        tags[a.span.start] = tagset.begin(role);
        for t in &mut tags[a.span.start + 1..a.span.end] {
            *t = tagset.inside(role);
        }
    }
    Ok(TagSequence::new(tags, Arc::clone(tagset)))
}

fn order(a: TokenSpan, b: TokenSpan) -> (TokenSpan, TokenSpan) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Resolves overlaps (within the filtered relation for binary tags) and then
/// encodes; returns the spans that had to be dropped.
pub fn encode_resolved(
    structure: &RelationalStructure,
    n: usize,
    tagset: &Arc<TagSet>,
    relation_filter: Option<&str>,
) -> Result<(TagSequence, Vec<DroppedOverlap>)> {
    let (resolved, dropped) = structure.resolve_overlaps(relation_filter);
    Ok((encode_tags(&resolved, n, tagset, relation_filter)?, dropped))
}

/// Maximal `B I*` runs become spans. An `I` after `O`, at the start, or after
/// a different role opens a new span at that token. Binary spans are labelled
/// `relation_for_binary` (empty when absent). Never fails.
pub fn decode_tags(tags: &TagSequence, relation_for_binary: Option<&str>) -> RelationalStructure {
    let tagset = &tags.tagset;
    let label = |role: usize| -> String {
        match tagset.scheme() {
            Scheme::RoleTyped => tagset.roles()[role].clone(),
            Scheme::Binary => relation_for_binary.unwrap_or_default().to_string(),
        }
    };
    let mut out = RelationalStructure::default();
    let mut open: Option<(usize, usize)> = None;
    let close = |open: &mut Option<(usize, usize)>, end: usize, out: &mut RelationalStructure| {
        if let Some((start, role)) = open.take() {
            out.insert(Argument::new(TokenSpan::new(start, end), label(role)));
        }
    };
    for (i, &t) in tags.tags.iter().enumerate() {
        match tagset.kind(t) {
            TagKind::Outside => close(&mut open, i, &mut out),
            TagKind::Begin(r) => {
                close(&mut open, i, &mut out);
                open = Some((i, r));
            }
            TagKind::Inside(r) => match open {
                Some((_, q)) if q == r => {}
                _ => {
                    close(&mut open, i, &mut out);
                    open = Some((i, r));
                }
            },
        }
    }
    close(&mut open, tags.len(), &mut out);
    out
}
