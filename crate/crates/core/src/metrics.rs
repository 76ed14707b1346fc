//! Micro-averaged span metrics for the three tasks.
//!
//! Predicted and gold items are first deduplicated at the finest key (all
//! offsets, labels and types). Each metric projects that key to the fields it
//! checks and counts `tp = sum over keys of min(pred count, gold count)`, so
//! a classification metric can never exceed its identification metric.
//! Arg-I matches the condition span and the argument offsets; Arg-C also
//! needs the condition type and the role. Rel+ takes the tail type from the
//! entity list (the conditions) of the same passage on each side.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rse::{Condition, RelationalStructure, RseInstance, Task, TokenSpan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    TriC,
    ArgI,
    ArgC,
    Ent,
    Rel,
    RelPlus,
    Intent,
    SlotI,
    SlotC,
}

impl MetricId {
    pub fn name(self) -> &'static str {
        match self {
            MetricId::TriC => "Tri-C",
            MetricId::ArgI => "Arg-I",
            MetricId::ArgC => "Arg-C",
            MetricId::Ent => "Ent",
            MetricId::Rel => "Rel",
            MetricId::RelPlus => "Rel+",
            MetricId::Intent => "Intent",
            MetricId::SlotI => "Slot-I",
            MetricId::SlotC => "Slot-C",
        }
    }

    pub fn for_task(task: Task) -> &'static [MetricId] {
        match task {
            Task::EventArgument => &[MetricId::TriC, MetricId::ArgI, MetricId::ArgC],
            Task::RelationExtraction => &[MetricId::Ent, MetricId::Rel, MetricId::RelPlus],
            Task::SemanticParsing => &[MetricId::Intent, MetricId::SlotI, MetricId::SlotC],
        }
    }

    /// The stricter metric reported for a task.
    pub fn strict(task: Task) -> MetricId {
        match task {
            Task::EventArgument => MetricId::ArgC,
            Task::RelationExtraction => MetricId::RelPlus,
            Task::SemanticParsing => MetricId::SlotC,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricScore {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp: predicted - tp,
            fn_: gold - tp,
        }
    }
}

/// One system output: the condition it was made for and the extracted pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub condition: Condition,
    pub structure: RelationalStructure,
}

impl Prediction {
    pub fn new(id: impl Into<String>, condition: Condition, structure: RelationalStructure) -> Self {
        Self {
            id: id.into(),
            condition,
            structure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub note: String,
    pub scores: BTreeMap<MetricId, MetricScore>,
}

impl EvalReport {
    pub fn get(&self, metric: MetricId) -> Option<&MetricScore> {
        self.scores.get(&metric)
    }

    pub fn strict(&self) -> MetricScore {
        self.scores[&MetricId::strict(self.task)]
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("# {}\n# {}\n", self.task, self.note);
        out.push_str(&format!(
            "{:<8} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}\n",
            "metric", "P", "R", "F1", "tp", "fp", "fn"
        ));
        for (id, s) in &self.scores {
            out.push_str(&format!(
                "{:<8} {:>7.2} {:>7.2} {:>7.2} {:>6} {:>6} {:>6}\n",
                id.name(),
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1,
                s.tp,
                s.fp,
                s.fn_
            ));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

const NOTE: &str = "micro-averaged; Arg-I needs condition span and argument offsets, \
Arg-C also condition type and role; Rel+ tail types come from each side's entity list";

/// All labels an item may carry, in a fixed order; metrics project subsets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Item {
    pid: String,
    cond_span: Option<TokenSpan>,
    cond_type: String,
    span: Option<TokenSpan>,
    relation: String,
    tail_type: Option<String>,
}

#[derive(Clone, Copy)]
enum Field {
    CondSpan,
    CondType,
    Span,
    Relation,
    TailType,
}

type Key = Vec<String>;

fn project(item: &Item, fields: &[Field]) -> Key {
    let mut key = vec![item.pid.clone()];
    for f in fields {
        key.push(match f {
            Field::CondSpan => format!("{:?}", item.cond_span),
            Field::CondType => item.cond_type.clone(),
            Field::Span => format!("{:?}", item.span),
            Field::Relation => item.relation.clone(),
            Field::TailType => format!("{:?}", item.tail_type),
        });
    }
    key
}

fn matched(gold: &BTreeSet<Item>, pred: &BTreeSet<Item>, fields: &[Field]) -> MetricScore {
    let mut counts: HashMap<Key, (usize, usize)> = HashMap::new();
    for i in gold {
        counts.entry(project(i, fields)).or_default().0 += 1;
    }
    for i in pred {
        counts.entry(project(i, fields)).or_default().1 += 1;
    }
    let tp = counts.values().map(|&(g, p)| g.min(p)).sum();
    MetricScore::from_counts(tp, pred.len(), gold.len())
}

struct Side<'a> {
    pid: &'a str,
    condition: &'a Condition,
    structure: &'a RelationalStructure,
}

fn condition_items(sides: &[Side<'_>]) -> BTreeSet<Item> {
    sides
        .iter()
        .map(|s| Item {
            pid: s.pid.to_string(),
            cond_span: s.condition.span,
            cond_type: s.condition.type_label.clone(),
            span: None,
            relation: String::new(),
            tail_type: None,
        })
        .collect()
}

fn argument_items(sides: &[Side<'_>], with_tail_types: bool) -> BTreeSet<Item> {
    let mut entity_types: HashMap<(&str, TokenSpan), BTreeSet<&str>> = HashMap::new();
    if with_tail_types {
        for s in sides {
            if let Some(span) = s.condition.span {
                entity_types
                    .entry((s.pid, span))
                    .or_default()
                    .insert(s.condition.type_label.as_str());
            }
        }
    }
    let mut out = BTreeSet::new();
    for s in sides {
        for a in s.structure.arguments() {
            let tail_type = entity_types
                .get(&(s.pid, a.span))
                .and_then(|t| t.iter().next())
                .map(|t| t.to_string());
            out.insert(Item {
                pid: s.pid.to_string(),
                cond_span: s.condition.span,
                cond_type: s.condition.type_label.clone(),
                span: Some(a.span),
                relation: a.relation.clone(),
                tail_type,
            });
        }
    }
    out
}

/// Scores predictions against gold. Every prediction must name a passage id
/// present in `gold`; gold instances without predictions count as misses.
pub fn score(gold: &[RseInstance], pred: &[Prediction], task: Task) -> Result<EvalReport> {
    let known: BTreeSet<&str> = gold.iter().map(|g| g.passage.id.as_str()).collect();
    if let Some(p) = pred.iter().find(|p| !known.contains(p.id.as_str())) {
        return Err(Error::UnknownId(p.id.clone()));
    }
    let gold_sides: Vec<Side> = gold
        .iter()
        .map(|g| Side {
            pid: &g.passage.id,
            condition: &g.condition,
            structure: &g.gold,
        })
        .collect();
    let pred_sides: Vec<Side> = pred
        .iter()
        .map(|p| Side {
            pid: &p.id,
            condition: &p.condition,
            structure: &p.structure,
        })
        .collect();

    use Field::*;
    let mut scores = BTreeMap::new();
    let (gc, pc) = (condition_items(&gold_sides), condition_items(&pred_sides));
    let tails = task == Task::RelationExtraction;
    let (ga, pa) = (argument_items(&gold_sides, tails), argument_items(&pred_sides, tails));
    match task {
        Task::EventArgument => {
            scores.insert(MetricId::TriC, matched(&gc, &pc, &[CondSpan, CondType]));
            scores.insert(MetricId::ArgI, matched(&ga, &pa, &[CondSpan, Span]));
            scores.insert(
                MetricId::ArgC,
                matched(&ga, &pa, &[CondSpan, CondType, Span, Relation]),
            );
        }
        Task::RelationExtraction => {
            scores.insert(MetricId::Ent, matched(&gc, &pc, &[CondSpan, CondType]));
            scores.insert(MetricId::Rel, matched(&ga, &pa, &[CondSpan, Span, Relation]));
            scores.insert(
                MetricId::RelPlus,
                matched(&ga, &pa, &[CondSpan, CondType, Span, Relation, TailType]),
            );
        }
        Task::SemanticParsing => {
            scores.insert(MetricId::Intent, matched(&gc, &pc, &[CondType]));
            scores.insert(MetricId::SlotI, matched(&ga, &pa, &[Span]));
            scores.insert(MetricId::SlotC, matched(&ga, &pa, &[Span, Relation]));
        }
    }
    Ok(EvalReport {
        task,
        note: NOTE.to_string(),
        scores,
    })
}
