//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod fixtures;

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rse_core::bio::TagSet;
use rse_core::crf::CrfLayer;
use rse_core::encoder::EncoderConfig;
use rse_core::model::{build_vocab, ModelConfig, Tagger, TrainingExample, VariantConfig};
use rse_core::rse::{Argument, Condition, Passage, RelationSchema, RelationalStructure, RseInstance, TokenSpan};

/// Every tag sequence of length `n` over `k` tags whose transitions are all
/// allowed by `crf`.
pub fn valid_paths(crf: &CrfLayer<f64>, n: usize) -> Vec<Vec<usize>> {
    let k = crf.num_tags();
    let mut out = Vec::new();
    let mut path = vec![0; n];
    loop {
        let mut ok = crf.allowed(crf.start(), path[0]) && crf.allowed(path[n - 1], crf.end());
        for w in path.windows(2) {
            ok &= crf.allowed(w[0], w[1]);
        }
        if ok {
            out.push(path.clone());
        }
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Path score computed directly from the tensors.
pub fn brute_score(crf: &CrfLayer<f64>, em: &Array2<f64>, path: &[usize]) -> f64 {
    let mut s = crf.score(crf.start(), path[0]) + crf.score(path[path.len() - 1], crf.end());
    for (i, &t) in path.iter().enumerate() {
        s += em[[i, t]];
    }
    for w in path.windows(2) {
        s += crf.score(w[0], w[1]);
    }
    s
}

pub fn brute_log_partition(crf: &CrfLayer<f64>, em: &Array2<f64>) -> f64 {
    let scores: Vec<f64> = valid_paths(crf, em.nrows())
        .iter()
        .map(|p| brute_score(crf, em, p))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Best valid path; among equal scores the one that is smallest when
/// compared from the last position backwards.
pub fn brute_viterbi(crf: &CrfLayer<f64>, em: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in valid_paths(crf, em.nrows()) {
        let s = brute_score(crf, em, &p);
        let better = match &best {
            None => true,
            Some((bp, bs)) => s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((p, s));
        }
    }
    best.expect("at least one valid path")
}

/// A random tag set with at most `max_tags` tags (role typed or binary).
pub fn random_tagset(rng: &mut impl Rng, max_tags: usize) -> TagSet {
    let max_roles = (max_tags - 1) / 2;
    if max_roles == 0 || rng.gen_bool(0.3) {
        TagSet::binary()
    } else {
        let roles: Vec<String> = (0..rng.gen_range(1..=max_roles)).map(|r| format!("r{r}")).collect();
        TagSet::role_typed(&roles)
    }
}

pub fn random_crf(rng: &mut ChaCha8Rng, max_tags: usize) -> CrfLayer<f64> {
    let tagset = Arc::new(random_tagset(rng, max_tags));
    let mut crf = CrfLayer::<f64>::new(3, tagset, rng.gen_bool(0.7), rng);
    crf.transitions.mapv_inplace(|_| rng.gen_range(-2.0..2.0));
    crf
}

pub fn random_emissions(rng: &mut impl Rng, n: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0))
}

/// Central finite-difference check of a model's analytic gradients.
/// Returns the worst relative error over `probes` random coordinates.
pub fn gradient_probe(
    model: &mut Tagger<f64>,
    example: &TrainingExample,
    k: usize,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let (_, grads) = model.example_loss_and_grad(example, k).unwrap();
    let analytic: Vec<Array2<f64>> = grads.tensors().into_iter().cloned().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    // Probe coordinates with non-negligible gradient half of the time so the
    // check is not dominated by unused embedding rows.
    let candidates: Vec<(usize, usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(t, g)| {
            g.indexed_iter()
                .filter(|(_, v)| v.abs() > 1e-6)
                .map(move |((r, c), _)| (t, r, c))
        })
        .collect();
    let shapes: Vec<(usize, usize)> = analytic.iter().map(|g| g.dim()).collect();
    while checked < probes {
        let (t, r, c) = if rng.gen_bool(0.5) && !candidates.is_empty() {
            candidates[rng.gen_range(0..candidates.len())]
        } else {
            let t = rng.gen_range(0..shapes.len());
            (t, rng.gen_range(0..shapes[t].0), rng.gen_range(0..shapes[t].1))
        };
        let original = {
            let mut params = model.params_mut();
            let p = &mut params[t].1;
            let v = p[[r, c]];
            p[[r, c]] = v + h;
            v
        };
        let plus = model.example_loss(example, k).unwrap();
        model.params_mut()[t].1[[r, c]] = original - h;
        let minus = model.example_loss(example, k).unwrap();
        model.params_mut()[t].1[[r, c]] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[t][[r, c]];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(err);
        checked += 1;
    }
    (worst, checked)
}

pub fn tiny_schema() -> RelationSchema {
    RelationSchema::new(
        vec!["Org".into(), "Per".into()],
        vec!["Part-Whole".into(), "ART".into(), "PHYS".into()],
        [("Part-Whole".to_string(), vec!["is".into(), "part".into(), "of".into()])].into(),
        [("Org".to_string(), vec!["Organization".into()])].into(),
    )
    .unwrap()
}

/// A random instance over `tiny_schema` with `n` tokens.
pub fn random_tiny_instance(rng: &mut impl Rng, n: usize) -> RseInstance {
    let words = ["the", "Iraqi", "military", "base", "near", "city", "unhappiness"];
    let tokens: Vec<String> = (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
    let c = rng.gen_range(0..n);
    let cond = Condition::span(TokenSpan::new(c, c + 1), if rng.gen_bool(0.5) { "Org" } else { "Per" });
    let rels = ["Part-Whole", "ART", "PHYS"];
    let mut gold = RelationalStructure::default();
    for _ in 0..rng.gen_range(0..3) {
        let s = rng.gen_range(0..n);
        let e = (s + rng.gen_range(1..=2)).min(n);
        gold.insert(Argument::new(TokenSpan::new(s, e), rels[rng.gen_range(0..3)]));
    }
    RseInstance {
        passage: Passage::new("g", tokens),
        condition: cond,
        gold,
    }
}

/// Random small model config for gradient checks: d <= 16, L <= 2.
pub fn random_small_config(rng: &mut impl Rng) -> ModelConfig {
    let heads = [1, 2][rng.gen_range(0..2)];
    let model_dim = heads * [4, 8][rng.gen_range(0..2)];
    ModelConfig {
        encoder: EncoderConfig {
            vocab_size: 1,
            model_dim,
            layers: rng.gen_range(1..=2),
            heads,
            local_heads: rng.gen_range(0..=heads),
            locality: rng.gen_range(0.0..1.5),
            feedforward_dim: rng.gen_range(4..=12),
            dropout: 0.1,
            max_len: 48,
            feature_dim: rng.gen_range(2..=5),
        },
        mlp_dim: rng.gen_range(4..=10),
        crf_masking: rng.gen_bool(0.5),
        tied_branch: rng.gen_bool(0.5),
    }
}

/// Runs the gradient check over random models of every variant; returns the
/// worst relative error and the number of probes.
pub fn gradient_suite(seed: u64, models: usize, probes_per_model: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = tiny_schema();
    let mut worst: f64 = 0.0;
    let mut total = 0;
    for m in 0..models {
        let case = (m % 8) as u8 + 1;
        let config = random_small_config(&mut rng);
        let n = rng.gen_range(2..=6);
        let inst = random_tiny_instance(&mut rng, n);
        let vocab = build_vocab(std::slice::from_ref(&inst), &schema);
        let mut model = Tagger::<f64>::new(
            &schema,
            VariantConfig::case(case).unwrap(),
            &config,
            vocab,
            true,
            &mut rng,
        )
        .unwrap();
        // Non-zero transitions and biases so every term is exercised.
        for (_, t) in model.params_mut() {
            t.mapv_inplace(|v| v + rng.gen_range(-0.1..0.1));
        }
        let (examples, _) = model.training_examples(std::slice::from_ref(&inst)).unwrap();
        let ex = &examples[rng.gen_range(0..examples.len())];
        let k = if ex.subtask.tail.is_some() {
            rng.gen_range(0..=config.encoder.layers)
        } else {
            0
        };
        let (w, c) = gradient_probe(&mut model, ex, k, probes_per_model, &mut rng);
        worst = worst.max(w);
        total += c;
    }
    (worst, total)
}

/// Worst absolute error over `count` random CRFs against brute-force
/// enumeration, as `(log_partition, viterbi, nll, gradient)`.
pub fn crf_suite(seed: u64, count: usize) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..count {
        let crf = random_crf(&mut rng, 5);
        let n = rng.gen_range(1..=6);
        let em = random_emissions(&mut rng, n, crf.num_tags());
        let paths = valid_paths(&crf, n);
        let z = brute_log_partition(&crf, &em);
        worst[0] = worst[0].max((crf.log_partition(em.view()).unwrap() - z).abs());

        let (best, best_score) = brute_viterbi(&crf, &em);
        let (tags, s) = crf.viterbi(em.view()).unwrap();
        let path_err = if tags.tags == best { 0.0 } else { f64::INFINITY };
        worst[1] = worst[1].max((s - best_score).abs()).max(path_err);

        let gold = &paths[rng.gen_range(0..paths.len())];
        let nll = z - brute_score(&crf, &em, gold);
        worst[2] = worst[2].max((crf.nll_loss(em.view(), gold).unwrap() - nll).abs());

        // d nll / d emission[i][t] = p(tag_i = t) - [gold_i = t]
        let mut expected = Array2::<f64>::zeros(em.dim());
        for p in &paths {
            let w = (brute_score(&crf, &em, p) - z).exp();
            for (i, &t) in p.iter().enumerate() {
                expected[[i, t]] += w;
            }
        }
        for (i, &t) in gold.iter().enumerate() {
            expected[[i, t]] -= 1.0;
        }
        let (_, grads) = crf.nll_with_grad(em.view(), gold).unwrap();
        let g = (&grads.emissions - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        worst[3] = worst[3].max(g);
    }
    worst
}

/// A random overlap-free structure over `n` tokens labelled from `roles`.
pub fn random_nonoverlapping(rng: &mut impl Rng, n: usize, roles: &[String]) -> RelationalStructure {
    let mut out = RelationalStructure::default();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.4) {
            let end = (i + rng.gen_range(1..=3)).min(n);
            out.insert(Argument::new(TokenSpan::new(i, end), roles[rng.gen_range(0..roles.len())].clone()));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

/// Encode/decode round trips over `count` random structures per scheme.
/// Returns the number of failures and the number of structures tried.
pub fn bio_suite(seed: u64, count: usize) -> (usize, usize) {
    use rse_core::bio::{decode_tags, encode_tags};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut tried = 0;
    for i in 0..2 * count {
        let roles: Vec<String> = (0..rng.gen_range(1..=4)).map(|r| format!("R{r}")).collect();
        let n = rng.gen_range(1..=30);
        let s = random_nonoverlapping(&mut rng, n, &roles);
        let ok = if i % 2 == 0 {
            let tagset = Arc::new(TagSet::role_typed(&roles));
            let tags = encode_tags(&s, n, &tagset, None).unwrap();
            tags.is_valid() && decode_tags(&tags, None).canonical() == s.canonical()
        } else {
            // binary tags keep one relation and drop the rest
            let rel = &roles[rng.gen_range(0..roles.len())];
            let tagset = Arc::new(TagSet::binary());
            let tags = encode_tags(&s, n, &tagset, Some(rel)).unwrap();
            tags.is_valid() && decode_tags(&tags, Some(rel)).canonical() == s.filtered(rel).canonical()
        };
        failures += usize::from(!ok);
        tried += 1;
    }
    (failures, tried)
}

/// Worst absolute difference between split encoding at `k = 0` / `k = L` and
/// the full relation-primed / condition-primed encodes, over `trials` random
/// encoders with `layers` layers.
pub fn split_endpoint_suite(layers: usize, trials: usize, seed: u64) -> f64 {
    use rse_core::encoder::{EncoderStack, FeatureLayout, Mode, SplitConfig, SubwordVocab};
    use rse_core::priming::{build_input, relation_tail};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = tiny_schema();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.gen_range(1..=8);
        let inst = random_tiny_instance(&mut rng, n);
        let mut words: Vec<String> = inst.passage.tokens.clone();
        words.extend(["is", "part", "of", "Organization", "art", "phys"].map(String::from));
        let vocab = SubwordVocab::build(words.iter().map(String::as_str), &[schema.separator()]);
        let heads = [1, 2][rng.gen_range(0..2)];
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            model_dim: 4 * heads,
            layers,
            heads,
            local_heads: rng.gen_range(0..=heads),
            locality: rng.gen_range(0.0..1.5),
            feedforward_dim: 8,
            dropout: 0.1,
            max_len: 40,
            feature_dim: 3,
        };
        let mut enc = EncoderStack::<f64>::new(config, 2, 3, &mut rng).unwrap();
        if rng.gen_bool(0.5) {
            enc.untie_branch();
        }
        let base = build_input(&inst.passage, &inst.condition, &schema, None).unwrap();
        let rels = schema.relation_labels().to_vec();
        let tails: Vec<Vec<String>> = rels.iter().map(|r| relation_tail(&schema, r).unwrap()).collect();
        let none = FeatureLayout::default();
        let at0 = enc.encode_split(&vocab, &base, &tails, SplitConfig::new(0), none, &[]).unwrap();
        for (rel, out) in rels.iter().zip(&at0) {
            let full = build_input(&inst.passage, &inst.condition, &schema, Some(rel)).unwrap();
            let expected = enc.encode(&vocab, &full, None, Mode::Infer, &mut rng).unwrap();
            worst = worst.max(out.max_abs_diff(&expected));
        }
        let cond_only = enc.encode(&vocab, &base, None, Mode::Infer, &mut rng).unwrap();
        let at_l = enc.encode_split(&vocab, &base, &tails, SplitConfig::new(layers), none, &[]).unwrap();
        for out in &at_l {
            worst = worst.max(out.max_abs_diff(&cond_only));
        }
    }
    worst
}
