//! Line-delimited JSON corpus format, one instance per line:
//!
//! ```text
//! {"id":"p0","tokens":["a","b"],"condition":{"kind":"span","start":1,"end":2,"type":"T"},
//!  "spans":[{"start":0,"end":1,"relation":"R"}]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    ensure_valid, Argument, Condition, ConditionKind, Passage, RelationSchema, RelationalStructure,
    RseInstance, TokenSpan,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionRecord {
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    #[serde(rename = "type")]
    pub type_label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    pub relation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub condition: ConditionRecord,
    pub spans: Vec<SpanRecord>,
}

impl From<&Condition> for ConditionRecord {
    fn from(c: &Condition) -> Self {
        Self {
            kind: c.kind,
            start: c.span.map(|s| s.start),
            end: c.span.map(|s| s.end),
            type_label: c.type_label.clone(),
        }
    }
}

impl ConditionRecord {
    pub fn to_condition(&self) -> Result<Condition> {
        let malformed = |reason: &str| Error::MalformedRecord {
            task: "corpus",
            reason: reason.to_string(),
        };
        match self.kind {
            ConditionKind::Span => {
                let start = self.start.ok_or_else(|| malformed("missing field `condition.start`"))?;
                let end = self.end.ok_or_else(|| malformed("missing field `condition.end`"))?;
                Ok(Condition::span(TokenSpan::new(start, end), &self.type_label))
            }
            ConditionKind::Concept => {
                if self.start.is_some() || self.end.is_some() {
                    return Err(malformed("concept condition must not carry offsets"));
                }
                Ok(Condition::concept(&self.type_label))
            }
        }
    }
}

pub fn spans_to_records(s: &RelationalStructure) -> Vec<SpanRecord> {
    s.arguments()
        .iter()
        .map(|a| SpanRecord {
            start: a.span.start,
            end: a.span.end,
            relation: a.relation.clone(),
        })
        .collect()
}

pub fn records_to_structure(spans: &[SpanRecord]) -> Result<RelationalStructure> {
    RelationalStructure::new(
        spans
            .iter()
            .map(|s| Argument::new(TokenSpan::new(s.start, s.end), &s.relation))
            .collect(),
    )
}

impl From<&RseInstance> for CorpusRecord {
    fn from(inst: &RseInstance) -> Self {
        Self {
            id: inst.passage.id.clone(),
            tokens: inst.passage.tokens.clone(),
            condition: (&inst.condition).into(),
            spans: spans_to_records(&inst.gold),
        }
    }
}

impl TryFrom<CorpusRecord> for RseInstance {
    type Error = Error;

    fn try_from(rec: CorpusRecord) -> Result<Self> {
        Ok(RseInstance {
            condition: rec.condition.to_condition()?,
            gold: records_to_structure(&rec.spans)?,
            passage: Passage::new(rec.id, rec.tokens),
        })
    }
}

/// Reads a JSON-lines file; blank lines are skipped. Errors carry the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Json {
            context: format!("{}:{}", path.display(), i + 1),
            source: e,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a corpus against `schema`.
pub fn read_corpus(path: impl AsRef<Path>, schema: &RelationSchema) -> Result<Vec<RseInstance>> {
    let records: Vec<CorpusRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|rec| {
            let inst = RseInstance::try_from(rec)?;
            ensure_valid(&inst, schema)?;
            Ok(inst)
        })
        .collect()
}

pub fn write_corpus(path: impl AsRef<Path>, instances: &[RseInstance]) -> Result<()> {
    let records: Vec<CorpusRecord> = instances.iter().map(CorpusRecord::from).collect();
    write_jsonl(path, &records)
}
