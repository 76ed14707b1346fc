//! Metric fixture corpora with counts worked out by hand.

use rse_core::metrics::{MetricId, Prediction};
use rse_core::rse::{Argument, Condition, Passage, RelationalStructure, RseInstance, Task, TokenSpan};

pub type Args<'a> = &'a [(usize, usize, &'a str)];

pub fn structure(args: Args) -> RelationalStructure {
    args.iter()
        .map(|&(s, e, r)| Argument::new(TokenSpan::new(s, e), r))
        .collect()
}

pub fn sp(s: usize, e: usize, t: &str) -> Condition {
    Condition::span(TokenSpan::new(s, e), t)
}

pub fn gold(id: &str, cond: Condition, args: Args) -> RseInstance {
    RseInstance {
        passage: Passage::from_words(id, &["a", "b", "c", "d", "e", "f", "g"]),
        condition: cond,
        gold: structure(args),
    }
}

pub fn pred(id: &str, cond: Condition, args: Args) -> Prediction {
    Prediction::new(id, cond, structure(args))
}

/// `(tp, predicted, gold)` per metric, counted by hand.
pub struct Fixture {
    pub name: &'static str,
    pub task: Task,
    pub gold: Vec<RseInstance>,
    pub pred: Vec<Prediction>,
    pub expect: [(MetricId, usize, usize, usize); 3],
}

pub fn fixtures() -> Vec<Fixture> {
    use MetricId::*;
    let ea = Task::EventArgument;
    let re = Task::RelationExtraction;
    let sp_task = Task::SemanticParsing;
    let t = || sp(2, 3, "Attack");
    vec![
        Fixture {
            name: "perfect event",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A"), (4, 6, "B")])],
            pred: vec![pred("x", t(), &[(0, 1, "A"), (4, 6, "B")])],
            expect: [(TriC, 1, 1, 1), (ArgI, 2, 2, 2), (ArgC, 2, 2, 2)],
        },
        Fixture {
            name: "no predictions",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A"), (4, 6, "B")])],
            pred: vec![],
            expect: [(TriC, 0, 0, 1), (ArgI, 0, 0, 2), (ArgC, 0, 0, 2)],
        },
        Fixture {
            name: "wrong role",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A")])],
            pred: vec![pred("x", t(), &[(0, 1, "B")])],
            expect: [(TriC, 1, 1, 1), (ArgI, 1, 1, 1), (ArgC, 0, 1, 1)],
        },
        Fixture {
            name: "wrong trigger type",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A")])],
            pred: vec![pred("x", sp(2, 3, "Die"), &[(0, 1, "A")])],
            expect: [(TriC, 0, 1, 1), (ArgI, 1, 1, 1), (ArgC, 0, 1, 1)],
        },
        Fixture {
            name: "wrong trigger span",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A")])],
            pred: vec![pred("x", sp(3, 4, "Attack"), &[(0, 1, "A")])],
            expect: [(TriC, 0, 1, 1), (ArgI, 0, 1, 1), (ArgC, 0, 1, 1)],
        },
        Fixture {
            name: "extra argument",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A")])],
            pred: vec![pred("x", t(), &[(0, 1, "A"), (4, 5, "B")])],
            expect: [(TriC, 1, 1, 1), (ArgI, 1, 2, 1), (ArgC, 1, 2, 1)],
        },
        Fixture {
            name: "boundary error",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 2, "A")])],
            pred: vec![pred("x", t(), &[(0, 1, "A")])],
            expect: [(TriC, 1, 1, 1), (ArgI, 0, 1, 1), (ArgC, 0, 1, 1)],
        },
        Fixture {
            name: "two triggers in one passage",
            task: ea,
            gold: vec![
                gold("x", sp(1, 2, "T"), &[(0, 1, "A")]),
                gold("x", sp(3, 4, "U"), &[(5, 6, "B")]),
            ],
            pred: vec![
                pred("x", sp(1, 2, "T"), &[(0, 1, "A")]),
                pred("x", sp(3, 4, "U"), &[(0, 1, "A")]),
            ],
            expect: [(TriC, 2, 2, 2), (ArgI, 1, 2, 2), (ArgC, 1, 2, 2)],
        },
        Fixture {
            name: "one span two roles",
            task: ea,
            gold: vec![gold("x", t(), &[(0, 1, "A"), (0, 1, "B")])],
            pred: vec![pred("x", t(), &[(0, 1, "A")])],
            expect: [(TriC, 1, 1, 1), (ArgI, 1, 1, 2), (ArgC, 1, 1, 2)],
        },
        Fixture {
            name: "two passages, one empty prediction",
            task: ea,
            gold: vec![
                gold("x", sp(2, 3, "T"), &[(0, 1, "A")]),
                gold("y", sp(2, 3, "U"), &[(4, 5, "B"), (5, 6, "C")]),
            ],
            pred: vec![pred("x", sp(2, 3, "T"), &[(0, 1, "A")]), pred("y", sp(2, 3, "U"), &[])],
            expect: [(TriC, 2, 2, 2), (ArgI, 1, 1, 3), (ArgC, 1, 1, 3)],
        },
        Fixture {
            name: "perfect relation with typed tail",
            task: re,
            gold: vec![
                gold("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]),
                gold("x", sp(3, 4, "Loc"), &[]),
            ],
            pred: vec![pred("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]), pred("x", sp(3, 4, "Loc"), &[])],
            expect: [(Ent, 2, 2, 2), (Rel, 1, 1, 1), (RelPlus, 1, 1, 1)],
        },
        Fixture {
            name: "wrong head type",
            task: re,
            gold: vec![
                gold("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]),
                gold("x", sp(3, 4, "Loc"), &[]),
            ],
            pred: vec![pred("x", sp(1, 2, "Per"), &[(3, 4, "PHYS")]), pred("x", sp(3, 4, "Loc"), &[])],
            expect: [(Ent, 1, 2, 2), (Rel, 1, 1, 1), (RelPlus, 0, 1, 1)],
        },
        Fixture {
            name: "tail entity not predicted",
            task: re,
            gold: vec![
                gold("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]),
                gold("x", sp(3, 4, "Loc"), &[]),
            ],
            pred: vec![pred("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")])],
            expect: [(Ent, 1, 1, 2), (Rel, 1, 1, 1), (RelPlus, 0, 1, 1)],
        },
        Fixture {
            name: "wrong relation",
            task: re,
            gold: vec![
                gold("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]),
                gold("x", sp(3, 4, "Loc"), &[]),
            ],
            pred: vec![pred("x", sp(1, 2, "Org"), &[(3, 4, "ART")]), pred("x", sp(3, 4, "Loc"), &[])],
            expect: [(Ent, 2, 2, 2), (Rel, 0, 1, 1), (RelPlus, 0, 1, 1)],
        },
        Fixture {
            name: "symmetric pair half found",
            task: re,
            gold: vec![
                gold("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]),
                gold("x", sp(3, 4, "Loc"), &[(1, 2, "PHYS")]),
            ],
            pred: vec![pred("x", sp(1, 2, "Org"), &[(3, 4, "PHYS")]), pred("x", sp(3, 4, "Loc"), &[])],
            expect: [(Ent, 2, 2, 2), (Rel, 1, 1, 2), (RelPlus, 1, 1, 2)],
        },
        Fixture {
            name: "untyped tail on both sides",
            task: re,
            gold: vec![gold("x", sp(0, 1, "Org"), &[(5, 6, "ART")])],
            pred: vec![pred("x", sp(0, 1, "Org"), &[(5, 6, "ART")])],
            expect: [(Ent, 1, 1, 1), (Rel, 1, 1, 1), (RelPlus, 1, 1, 1)],
        },
        Fixture {
            name: "perfect utterance",
            task: sp_task,
            gold: vec![gold("a", Condition::concept("GET"), &[(0, 1, "LOC"), (2, 4, "DATE")])],
            pred: vec![pred("a", Condition::concept("GET"), &[(0, 1, "LOC"), (2, 4, "DATE")])],
            expect: [(Intent, 1, 1, 1), (SlotI, 2, 2, 2), (SlotC, 2, 2, 2)],
        },
        Fixture {
            name: "wrong intent, right slots",
            task: sp_task,
            gold: vec![gold("a", Condition::concept("GET"), &[(0, 1, "LOC"), (2, 4, "DATE")])],
            pred: vec![pred("a", Condition::concept("SET"), &[(0, 1, "LOC"), (2, 4, "DATE")])],
            expect: [(Intent, 0, 1, 1), (SlotI, 2, 2, 2), (SlotC, 2, 2, 2)],
        },
        Fixture {
            name: "mislabelled and extra slot",
            task: sp_task,
            gold: vec![gold("a", Condition::concept("GET"), &[(0, 1, "LOC"), (2, 4, "DATE")])],
            pred: vec![pred(
                "a",
                Condition::concept("GET"),
                &[(0, 1, "DATE"), (2, 4, "DATE"), (5, 6, "LOC")],
            )],
            expect: [(Intent, 1, 1, 1), (SlotI, 2, 3, 2), (SlotC, 1, 3, 2)],
        },
        Fixture {
            name: "three utterances",
            task: sp_task,
            gold: vec![
                gold("a", Condition::concept("GET"), &[(0, 1, "L")]),
                gold("b", Condition::concept("SET"), &[]),
                gold("c", Condition::concept("PLAY"), &[(1, 3, "S")]),
            ],
            pred: vec![
                pred("a", Condition::concept("GET"), &[(0, 1, "L")]),
                pred("b", Condition::concept("GET"), &[(3, 4, "T")]),
            ],
            expect: [(Intent, 1, 2, 3), (SlotI, 1, 2, 2), (SlotC, 1, 2, 2)],
        },
    ]
}

