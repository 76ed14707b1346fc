//! Task adapters: event-argument extraction, head-to-tail relation extraction
//! and intent-to-slot parsing all become an [`RseInstance`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Argument, Condition, Passage, RelationalStructure, RseInstance, TokenSpan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    EventArgument,
    RelationExtraction,
    SemanticParsing,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::EventArgument => "event_argument",
            Task::RelationExtraction => "relation_extraction",
            Task::SemanticParsing => "semantic_parsing",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "event_argument" | "ee" => Ok(Task::EventArgument),
            "relation_extraction" | "re" => Ok(Task::RelationExtraction),
            "semantic_parsing" | "tosp" => Ok(Task::SemanticParsing),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct Anchor {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    type_label: String,
}

#[derive(Deserialize)]
struct RoleSpan {
    start: usize,
    end: usize,
    role: String,
}

#[derive(Deserialize)]
struct TailSpan {
    start: usize,
    end: usize,
    relation: String,
}

/// `{"id","tokens","trigger":{"start","end","type"},"arguments":[{"start","end","role"}]}`
#[derive(Deserialize)]
struct EventRecord {
    id: String,
    tokens: Vec<String>,
    trigger: Anchor,
    arguments: Vec<RoleSpan>,
}

/// `{"id","tokens","head":{"start","end","type"},"tails":[{"start","end","relation"}]}`
#[derive(Deserialize)]
struct RelationRecord {
    id: String,
    tokens: Vec<String>,
    head: Anchor,
    tails: Vec<TailSpan>,
}

/// `{"id","tokens","intent":"NAME","slots":[{"start","end","role"}]}`
#[derive(Deserialize)]
struct ParseRecord {
    id: String,
    tokens: Vec<String>,
    intent: String,
    #[serde(default)]
    slots: Vec<RoleSpan>,
}

fn parse<T: serde::de::DeserializeOwned>(task: Task, raw: &Value) -> Result<T> {
    T::deserialize(raw).map_err(|e| Error::MalformedRecord {
        task: task.name(),
        reason: e.to_string(),
    })
}

fn structure(items: impl Iterator<Item = (usize, usize, String)>) -> Result<RelationalStructure> {
    RelationalStructure::new(
        items
            .map(|(s, e, r)| Argument::new(TokenSpan::new(s, e), r))
            .collect(),
    )
}

/// Maps a task-specific raw record onto the unified instance. Pure: the same
/// record always yields the same instance.
pub fn adapt_task(task: Task, raw: &Value) -> Result<RseInstance> {
    match task {
        Task::EventArgument => {
            let rec: EventRecord = parse(task, raw)?;
            Ok(RseInstance {
                passage: Passage::new(rec.id, rec.tokens),
                condition: Condition::span(
                    TokenSpan::new(rec.trigger.start, rec.trigger.end),
                    rec.trigger.type_label,
                ),
                gold: structure(rec.arguments.into_iter().map(|a| (a.start, a.end, a.role)))?,
            })
        }
        Task::RelationExtraction => {
            let rec: RelationRecord = parse(task, raw)?;
            Ok(RseInstance {
                passage: Passage::new(rec.id, rec.tokens),
                condition: Condition::span(
                    TokenSpan::new(rec.head.start, rec.head.end),
                    rec.head.type_label,
                ),
                gold: structure(rec.tails.into_iter().map(|t| (t.start, t.end, t.relation)))?,
            })
        }
        Task::SemanticParsing => {
            let rec: ParseRecord = parse(task, raw)?;
            Ok(RseInstance {
                passage: Passage::new(rec.id, rec.tokens),
                condition: Condition::concept(rec.intent),
                gold: structure(rec.slots.into_iter().map(|s| (s.start, s.end, s.role)))?,
            })
        }
    }
}
