//! Ablation grid and split-layer benchmark, shared by the CLI and tests.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::SplitConfig;
use crate::metrics::{score, EvalReport, Prediction};
use crate::model::{ModelConfig, Tagger, TrainConfig, VariantConfig};
use crate::rse::{RelationSchema, RseInstance, Task};
use crate::{Error, Result, Scalar};

/// Scores `model` on `test` with the split encoder at `split`.
pub fn evaluate<T: Scalar>(
    model: &Tagger<T>,
    test: &[RseInstance],
    task: Task,
    split: SplitConfig,
) -> Result<EvalReport> {
    let preds = model.predict_many(test, split)?;
    let preds: Vec<Prediction> = test
        .iter()
        .zip(preds)
        .map(|(i, p)| Prediction::new(i.passage.id.clone(), i.condition.clone(), p.structure))
        .collect();
    score(test, &preds, task)
}

pub struct AblationSetup<'a> {
    pub train: &'a [RseInstance],
    pub test: &'a [RseInstance],
    pub schema: &'a RelationSchema,
    pub task: Task,
    pub model: ModelConfig,
    pub train_config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: u8,
    pub seeds: Vec<u64>,
    pub f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    /// Cases from strongest to weakest expected mean.
    pub order: Vec<u8>,
    pub min_gap: f64,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<CaseResult>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl AblationReport {
    pub fn row(&self, case: u8) -> Option<&CaseResult> {
        self.rows.iter().find(|r| r.case == case)
    }

    /// Checks `mean(order[0]) >= mean(order[1]) >= ...` and that the first
    /// exceeds the last by at least `min_gap` (F1 in [0, 1]).
    pub fn check_ordering(&self, order: &[u8], min_gap: f64) -> Result<OrderingCheck> {
        let means = order
            .iter()
            .map(|c| {
                self.row(*c)
                    .map(|r| r.mean)
                    .ok_or_else(|| Error::Config(format!("case {c} was not run")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let chain = means.windows(2).all(|w| w[0] >= w[1]);
        let gap = means.first().zip(means.last()).map_or(0.0, |(a, b)| a - b);
        let detail = order
            .iter()
            .zip(&means)
            .map(|(c, m)| format!("case {c} {:.2}", 100.0 * m))
            .collect::<Vec<_>>()
            .join(" >= ");
        Ok(OrderingCheck {
            order: order.to_vec(),
            min_gap,
            holds: chain && gap >= min_gap,
            detail: format!("{detail}; gap {:.2}", 100.0 * gap),
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6} {:>8} {:>8}  per-seed strict F1\n", "case", "mean", "std");
        for r in &self.rows {
            let per: Vec<String> = r.f1.iter().map(|f| format!("{:.2}", 100.0 * f)).collect();
            out.push_str(&format!(
                "{:<6} {:>8.2} {:>8.2}  {}\n",
                r.case,
                100.0 * r.mean,
                100.0 * r.std,
                per.join(" ")
            ));
        }
        out
    }
}

pub fn check_ablation_request(cases: &[u8], seeds: &[u64]) -> Result<()> {
    if cases.len() < 2 {
        return Err(Error::Config("an ablation needs at least two cases".into()));
    }
    if seeds.len() < 3 {
        return Err(Error::Config(
            "an ablation needs at least three seeds to report a spread; pass --seeds 3 or more".into(),
        ));
    }
    for (i, c) in cases.iter().enumerate() {
        VariantConfig::case(*c)?;
        if cases[..i].contains(c) {
            return Err(Error::Config(format!("case {c} listed twice")));
        }
    }
    Ok(())
}

/// Trains every case with every seed and reports strict test F1.
/// `progress(case, seed, f1)` runs after each model.
pub fn run_ablation(
    setup: &AblationSetup<'_>,
    cases: &[u8],
    seeds: &[u64],
    mut progress: impl FnMut(u8, u64, f64),
) -> Result<AblationReport> {
    check_ablation_request(cases, seeds)?;
    let mut rows = Vec::with_capacity(cases.len());
    for &case in cases {
        let variant = VariantConfig::case(case)?;
        let mut f1 = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let tc = TrainConfig {
                seed,
                ..setup.train_config.clone()
            };
            let (model, _) = Tagger::<f32>::train(setup.train, setup.schema, variant, &setup.model, &tc)?;
            let report = evaluate(&model, setup.test, setup.task, SplitConfig::default())?;
            let f = report.strict().f1;
            progress(case, seed, f);
            f1.push(f);
        }
        let (mean, std) = mean_std(&f1);
        rows.push(CaseResult {
            case,
            seeds: seeds.to_vec(),
            f1,
            mean,
            std,
        });
    }
    Ok(AblationReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub instances_per_second: f64,
    pub mean_seconds: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub repetitions: usize,
    pub workers: usize,
    pub instances: usize,
    pub relations: usize,
}

impl BenchReport {
    pub fn row(&self, k: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# {} instances x {} repetitions, {} relations, {} workers\n{:<4} {:>12} {:>10} {:>8}\n",
            self.instances, self.repetitions, self.relations, self.workers, "k", "inst/s", "sec/pass", "F1"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<4} {:>12.1} {:>10.4} {:>8.2}\n",
                r.k,
                r.instances_per_second,
                r.mean_seconds,
                100.0 * r.f1
            ));
        }
        out
    }
}

pub const MIN_REPETITIONS: usize = 5;
pub const DEFAULT_REPETITIONS: usize = 50;

/// Times inference over all of `test` for each split layer. Repetitions are
/// interleaved across `ks` so slow drift affects every row alike.
pub fn run_bench<T: Scalar>(
    model: &Tagger<T>,
    test: &[RseInstance],
    task: Task,
    ks: &[usize],
    repetitions: usize,
    workers: usize,
) -> Result<BenchReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Config(format!(
            "benchmarks need at least {MIN_REPETITIONS} repetitions (default {DEFAULT_REPETITIONS})"
        )));
    }
    if !model.variant().rel_priming {
        return Err(Error::Config("the split benchmark needs a relationship-priming model".into()));
    }
    if ks.is_empty() {
        return Err(Error::Config("no split layers given".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let layers = model.config().encoder.layers;
    for &k in ks {
        SplitConfig::new(k).validate(layers)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut f1 = Vec::with_capacity(ks.len());
        for &k in ks {
            f1.push(evaluate(model, test, task, SplitConfig::new(k))?.strict().f1);
        }
        let mut seconds = vec![0.0; ks.len()];
        for _ in 0..repetitions {
            for (i, &k) in ks.iter().enumerate() {
                let start = Instant::now();
                model.predict_many(test, SplitConfig::new(k))?;
                seconds[i] += start.elapsed().as_secs_f64();
            }
        }
        let rows = ks
            .iter()
            .zip(seconds)
            .zip(f1)
            .map(|((&k, total), f1)| {
                let mean = total / repetitions as f64;
                BenchRow {
                    k,
                    instances_per_second: test.len() as f64 / mean,
                    mean_seconds: mean,
                    f1,
                }
            })
            .collect();
        Ok(BenchReport {
            rows,
            repetitions,
            workers: workers.max(1),
            instances: test.len(),
            relations: model.schema().relation_labels().len(),
        })
    })
}
