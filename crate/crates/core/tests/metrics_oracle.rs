//! Hand-counted fixture corpora and strictness properties for the metrics.

mod common;

use proptest::prelude::*;
use common::fixtures::{fixtures, sp};
use rse_core::metrics::{score, EvalReport, MetricId, Prediction};
use rse_core::rse::{Argument, Passage, RelationalStructure, RseInstance, Task, TokenSpan};

#[test]
fn fixtures_match_hand_counts() {
    let all = fixtures();
    assert_eq!(all.len(), 20);
    for f in &all {
        let report = score(&f.gold, &f.pred, f.task).unwrap();
        for &(metric, tp, predicted, gold) in &f.expect {
            let s = report.get(metric).unwrap_or_else(|| panic!("{}: no {metric}", f.name));
            let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
            let f1 = if tp == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert_eq!((s.tp, s.fp, s.fn_), (tp, predicted - tp, gold - tp), "{}: {metric}", f.name);
            assert!((s.precision - p).abs() < 1e-12, "{}: {metric} P", f.name);
            assert!((s.recall - r).abs() < 1e-12, "{}: {metric} R", f.name);
            assert!((s.f1 - f1).abs() < 1e-12, "{}: {metric} F1", f.name);
        }
    }
}

fn arb_args(n: usize) -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0..n, 1..3usize, 0..3usize), 0..4)
        .prop_map(move |v| v.into_iter().map(|(s, l, r)| (s, (s + l).min(n), r)).collect())
}

/// Gold and prediction corpora over three passages with random conditions
/// and arguments.
fn arb_corpus() -> impl Strategy<Value = (Vec<RseInstance>, Vec<Prediction>)> {
    let side = || (0..3usize, 0..6usize, 0..2usize, arb_args(7));
    (prop::collection::vec(side(), 1..6), prop::collection::vec(side(), 0..6)).prop_map(|(g, p)| {
        let roles = ["A", "B", "C"];
        let types = ["T", "U"];
        let build = |(pid, c, t, args): &(usize, usize, usize, Vec<(usize, usize, usize)>)| {
            (
                format!("p{pid}"),
                sp(*c, c + 1, types[*t]),
                args.iter()
                    .map(|&(s, e, r)| Argument::new(TokenSpan::new(s, e), roles[r]))
                    .collect::<RelationalStructure>(),
            )
        };
        let gold: Vec<RseInstance> = g
            .iter()
            .map(|x| {
                let (id, condition, gold) = build(x);
                RseInstance {
                    passage: Passage::from_words(id, &["a", "b", "c", "d", "e", "f", "g"]),
                    condition,
                    gold,
                }
            })
            .collect();
        let ids: Vec<String> = gold.iter().map(|i| i.passage.id.clone()).collect();
        let pred = p
            .iter()
            .filter(|x| ids.contains(&format!("p{}", x.0)))
            .map(|x| {
                let (id, condition, structure) = build(x);
                Prediction::new(id, condition, structure)
            })
            .collect();
        (gold, pred)
    })
}

fn within_unit(r: &EvalReport) -> bool {
    r.scores
        .values()
        .all(|s| (0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall) && (0.0..=1.0).contains(&s.f1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn strict_metrics_never_exceed_lenient((gold, pred) in arb_corpus()) {
        let ea = score(&gold, &pred, Task::EventArgument).unwrap();
        let (i, c) = (ea.get(MetricId::ArgI).unwrap(), ea.get(MetricId::ArgC).unwrap());
        prop_assert!(c.tp <= i.tp && c.f1 <= i.f1 + 1e-12);
        prop_assert!(within_unit(&ea));

        let re = score(&gold, &pred, Task::RelationExtraction).unwrap();
        let (r, rp) = (re.get(MetricId::Rel).unwrap(), re.get(MetricId::RelPlus).unwrap());
        prop_assert!(rp.tp <= r.tp && rp.f1 <= r.f1 + 1e-12);
        prop_assert!(within_unit(&re));

        let sparse = score(&gold, &pred, Task::SemanticParsing).unwrap();
        let (si, sc) = (sparse.get(MetricId::SlotI).unwrap(), sparse.get(MetricId::SlotC).unwrap());
        prop_assert!(sc.tp <= si.tp && sc.f1 <= si.f1 + 1e-12);
        prop_assert!(within_unit(&sparse));
    }

    #[test]
    fn scores_ignore_corpus_order((gold, pred) in arb_corpus(), rot in 0..6usize) {
        let base = score(&gold, &pred, Task::EventArgument).unwrap();
        let mut g = gold.clone();
        let mut p = pred.clone();
        let shift = rot % g.len();
        g.rotate_left(shift);
        p.reverse();
        prop_assert_eq!(score(&g, &p, Task::EventArgument).unwrap(), base);
    }

    #[test]
    fn gold_against_itself_is_perfect((gold, _) in arb_corpus()) {
        let pred: Vec<Prediction> = gold
            .iter()
            .map(|i| Prediction::new(i.passage.id.clone(), i.condition.clone(), i.gold.clone()))
            .collect();
        let r = score(&gold, &pred, Task::EventArgument).unwrap();
        for s in r.scores.values() {
            prop_assert_eq!(s.fp, 0);
            prop_assert_eq!(s.fn_, 0);
        }
    }
}
