use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rse_core::encoder::SplitConfig;
use rse_core::experiment::{self, AblationSetup};
use rse_core::model::{load_checkpoint, save_checkpoint, SubtaskTags, Tagger};
use rse_core::rse::{read_corpus, spans_to_records, write_corpus, write_jsonl, ConditionRecord, SpanRecord};
use rse_core::rse::{RelationSchema, RseInstance};
use rse_core::synth::{generate as synthesize, SynthSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{AblateArgs, BenchArgs, EvalArgs, GenerateArgs, PredictArgs, TrainArgs, UserError};

/// One line of `predict` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub condition: ConditionRecord,
    pub gold: Vec<SpanRecord>,
    pub predicted: Vec<SpanRecord>,
    pub subtasks: Vec<SubtaskTags>,
}

fn finish(manifest: &RunManifest, runs: &Path) -> Result<()> {
    let path = manifest.write(runs)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<(Tagger<f32>, SplitConfig)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_corpus(path: &Path, schema: &RelationSchema) -> Result<Vec<RseInstance>> {
    let corpus = read_corpus(path, schema).with_context(|| format!("reading corpus {}", path.display()))?;
    if corpus.is_empty() {
        return Err(UserError(format!("corpus {} is empty", path.display())).into());
    }
    Ok(corpus)
}

fn split_or(model: &Tagger<f32>, stored: SplitConfig, k: Option<usize>) -> Result<SplitConfig> {
    let split = k.map_or(stored, SplitConfig::new);
    split.validate(model.config().encoder.layers)?;
    Ok(split)
}

pub fn generate(args: GenerateArgs, runs: &Path) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UserError(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| UserError(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(r) = args.relations {
        spec.relations = r;
    }
    if let Some(c) = args.cue_strength {
        spec.cue_strength = c;
    }
    if let Some(a) = args.ambiguity {
        spec.ambiguity = a;
    }
    if let Some(m) = args.multi_relation {
        spec.multi_relation = m;
    }
    spec.validate()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let start = Instant::now();
    let mut counts = serde_json::Map::new();
    for (offset, (name, count)) in [("train", args.train), ("dev", args.dev), ("test", args.test)]
        .into_iter()
        .enumerate()
    {
        if count == 0 {
            continue;
        }
        let split_spec = SynthSpec {
            seed: spec.seed + offset as u64,
            ..spec.clone()
        };
        let (corpus, schema) = synthesize(&split_spec, count)?;
        write_corpus(args.out.join(format!("{name}.jsonl")), &corpus)?;
        schema.save(args.out.join("schema.json"))?;
        counts.insert(name.to_string(), json!(count));
    }
    let schema = spec.schema();
    println!("wrote {} ({})", args.out.display(), serde_json::Value::Object(counts.clone()));

    let mut manifest = RunManifest::new("generate", &spec);
    manifest.seed = Some(spec.seed);
    manifest.schema_hash = Some(schema.hash());
    manifest.metrics = json!({ "instances": counts });
    manifest.time("generate", start.elapsed().as_secs_f64());
    finish(&manifest, runs)
}

pub fn train(args: TrainArgs, runs: &Path) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let schema = RelationSchema::load(&config.schema)
        .with_context(|| format!("reading schema {}", config.schema.display()))?;
    let train = load_corpus(&config.train, &schema)?;
    let dev = config.dev.as_deref().map(|p| load_corpus(p, &schema)).transpose()?;

    let start = Instant::now();
    let quiet = args.quiet;
    let (model, log) = Tagger::<f32>::train_with(
        &train,
        &schema,
        config.variant()?,
        &config.model(),
        &config.train_config(),
        |epoch, loss| {
            if !quiet {
                eprintln!("epoch {epoch:>3} loss {loss:.4}");
            }
        },
    )?;
    let train_seconds = start.elapsed().as_secs_f64();
    let split = SplitConfig::new(config.split);
    ensure_parent(&config.checkpoint)?;
    save_checkpoint(&model, split, &config.checkpoint)?;
    println!("checkpoint: {}", config.checkpoint.display());

    let mut manifest = RunManifest::new("train", &config);
    manifest.seed = Some(config.seed);
    manifest.schema_hash = Some(schema.hash());
    manifest.checkpoint = Some(config.checkpoint.clone());
    manifest.time("train", train_seconds);
    let mut metrics = json!({
        "final_loss": log.epoch_losses.last(),
        "examples": log.examples,
        "dropped_overlaps": log.dropped_overlaps,
    });
    if let Some(dev) = dev {
        let start = Instant::now();
        let report = experiment::evaluate(&model, &dev, config.task, split)?;
        manifest.time("dev_eval", start.elapsed().as_secs_f64());
        print!("{}", report.to_table());
        metrics["dev"] = serde_json::to_value(&report)?;
    }
    manifest.metrics = metrics;
    finish(&manifest, runs)
}

pub fn eval(args: EvalArgs, runs: &Path) -> Result<()> {
    let (model, stored) = load_model(&args.checkpoint)?;
    let split = split_or(&model, stored, args.split)?;
    let corpus = load_corpus(&args.corpus, model.schema())?;
    let start = Instant::now();
    let report = experiment::evaluate(&model, &corpus, args.task, split)?;
    print!("{}", report.to_table());

    let mut manifest = RunManifest::new(
        "eval",
        json!({ "checkpoint": args.checkpoint, "corpus": args.corpus, "task": args.task, "split": split.k }),
    );
    manifest.schema_hash = Some(model.schema().hash());
    manifest.checkpoint = Some(args.checkpoint);
    manifest.metrics = serde_json::to_value(&report)?;
    manifest.time("eval", start.elapsed().as_secs_f64());
    finish(&manifest, runs)
}

pub fn predict(args: PredictArgs, runs: &Path) -> Result<()> {
    let (model, stored) = load_model(&args.checkpoint)?;
    let split = split_or(&model, stored, args.split)?;
    let corpus = load_corpus(&args.corpus, model.schema())?;
    let start = Instant::now();
    let preds = model.predict_many(&corpus, split)?;
    let records: Vec<PredictionRecord> = corpus
        .iter()
        .zip(preds)
        .map(|(inst, p)| PredictionRecord {
            id: inst.passage.id.clone(),
            tokens: inst.passage.tokens.clone(),
            condition: (&inst.condition).into(),
            gold: spans_to_records(&inst.gold),
            predicted: spans_to_records(&p.structure),
            subtasks: p.subtasks,
        })
        .collect();
    ensure_parent(&args.out)?;
    write_jsonl(&args.out, &records)?;
    println!("wrote {} predictions to {}", records.len(), args.out.display());

    let mut manifest = RunManifest::new(
        "predict",
        json!({ "checkpoint": args.checkpoint, "corpus": args.corpus, "out": args.out, "split": split.k }),
    );
    manifest.schema_hash = Some(model.schema().hash());
    manifest.checkpoint = Some(args.checkpoint);
    manifest.metrics = json!({ "instances": records.len() });
    manifest.time("predict", start.elapsed().as_secs_f64());
    finish(&manifest, runs)
}

pub fn ablate(args: AblateArgs, runs: &Path) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| config.seed + i).collect();
    experiment::check_ablation_request(&args.cases, &seeds).map_err(|e| UserError(e.to_string()))?;
    if let Some(order) = &args.expect_order {
        if let Some(c) = order.iter().find(|c| !args.cases.contains(c)) {
            return Err(UserError(format!("--expect-order names case {c}, which is not in --cases")).into());
        }
    }
    let schema = RelationSchema::load(&config.schema)
        .with_context(|| format!("reading schema {}", config.schema.display()))?;
    let train = load_corpus(&config.train, &schema)?;
    let test = load_corpus(&args.test, &schema)?;
    let setup = AblationSetup {
        train: &train,
        test: &test,
        schema: &schema,
        task: config.task,
        model: config.model(),
        train_config: config.train_config(),
    };
    let start = Instant::now();
    let report = experiment::run_ablation(&setup, &args.cases, &seeds, |case, seed, f1| {
        eprintln!("case {case} seed {seed}: strict F1 {:.2}", 100.0 * f1);
    })?;
    print!("{}", report.to_table());
    let check = args
        .expect_order
        .as_deref()
        .map(|order| report.check_ordering(order, args.min_gap / 100.0))
        .transpose()?;
    if let Some(c) = &check {
        println!("ordering {}: {}", if c.holds { "holds" } else { "FAILS" }, c.detail);
    }

    let mut manifest = RunManifest::new("ablate", &config);
    manifest.seed = Some(config.seed);
    manifest.schema_hash = Some(schema.hash());
    manifest.metrics = json!({ "cases": args.cases, "seeds": seeds, "report": report, "ordering": check });
    manifest.time("ablate", start.elapsed().as_secs_f64());
    finish(&manifest, runs)?;
    match check {
        Some(c) if !c.holds => bail!("expected ordering did not hold: {}", c.detail),
        _ => Ok(()),
    }
}

pub fn bench(args: BenchArgs, runs: &Path) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let layers = model.config().encoder.layers;
    let ks = args.ks.clone().unwrap_or_else(|| (0..=layers).collect());
    let corpus = load_corpus(&args.corpus, model.schema())?;
    let start = Instant::now();
    let report = experiment::run_bench(&model, &corpus, args.task, &ks, args.repetitions, args.workers)?;
    print!("{}", report.to_table());

    let mut manifest = RunManifest::new(
        "bench",
        json!({
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "task": args.task,
            "ks": ks,
            "repetitions": args.repetitions,
        }),
    );
    manifest.schema_hash = Some(model.schema().hash());
    manifest.checkpoint = Some(PathBuf::from(&args.checkpoint));
    manifest.workers = Some(report.workers);
    manifest.metrics = serde_json::to_value(&report)?;
    manifest.time("bench", start.elapsed().as_secs_f64());
    finish(&manifest, runs)
}
