//! The tagging model: encoder, a one-hidden-layer MLP and a CRF, with the
//! eight feature/priming variants, training and both inference modes.

mod checkpoint;
mod detector;
mod optim;

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bio::{decode_tags, encode_resolved, Scheme, TagSet};
use crate::crf::CrfLayer;
use crate::encoder::{
    dropout_mask, row_sum, xavier, EncoderCache, EncoderConfig, EncoderParams, EncoderStack,
    FeatureLayout, PieceInput, SplitConfig, SubwordVocab,
};
use crate::priming::{build_input, check_condition, relation_tail, FeatureRequest, PrimedInput};
use crate::rse::{
    ensure_valid, Condition, ConditionKind, Passage, RelationSchema, RelationalStructure,
    RseInstance,
};
use crate::{Error, Result, Scalar};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use detector::{predict_conditions, ConditionDetector};
pub use optim::{schedule_factor, AdamW, Group, GroupSettings};

const CASES: [(bool, bool, bool, bool); 8] = [
    (false, false, false, false),
    (true, false, false, false),
    (false, true, false, false),
    (true, true, false, false),
    (true, false, true, false),
    (false, true, false, true),
    (true, true, false, true),
    (true, true, true, true),
];

/// How condition and relation information reach the tagger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub cond_feature: bool,
    pub cond_priming: bool,
    pub rel_feature: bool,
    pub rel_priming: bool,
    pub decompose_by_relation: bool,
}

impl VariantConfig {
    /// Ablation case 1 to 8.
    pub fn case(id: u8) -> Result<Self> {
        let (cf, cp, rf, rp) = *CASES
            .get(usize::from(id).wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("unknown ablation case {id}; expected 1 to 8")))?;
        Ok(Self {
            cond_feature: cf,
            cond_priming: cp,
            rel_feature: rf,
            rel_priming: rp,
            decompose_by_relation: id >= 5,
        })
    }

    pub fn case_id(&self) -> Option<u8> {
        (1..=8u8).find(|&id| Self::case(id).is_ok_and(|v| v == *self))
    }

    pub fn validate(&self) -> Result<()> {
        if (self.rel_feature || self.rel_priming) && !self.decompose_by_relation {
            return Err(Error::Config(
                "relation features or priming need decompose_by_relation".into(),
            ));
        }
        self.case_id().map(|_| ()).ok_or_else(|| {
            Error::Config(format!("variant {self:?} is not one of the eight ablation cases"))
        })
    }

    pub fn scheme(&self) -> Scheme {
        if self.decompose_by_relation {
            Scheme::Binary
        } else {
            Scheme::RoleTyped
        }
    }
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self::case(7).expect("case 7 exists")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mlp_dim: usize,
    pub crf_masking: bool,
    /// Relation tails share the lower layers with the passage in split mode.
    pub tied_branch: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            mlp_dim: 64,
            crf_masking: true,
            tied_branch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub head_lr: f64,
    pub head_weight_decay: f64,
    pub encoder_lr: f64,
    pub encoder_weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Split layers sampled per relation-primed example during training.
    pub split_choices: Vec<usize>,
    /// Epochs trained at k = 0 before `split_choices` takes effect.
    #[serde(default)]
    pub split_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            batch_size: 6,
            head_lr: 1e-3,
            head_weight_decay: 1e-3,
            encoder_lr: 1e-5,
            encoder_weight_decay: 1e-5,
            warmup_epochs: 5,
            seed: 0,
            split_choices: vec![0],
            split_warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, layers: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !(self.head_lr > 0.0 && self.encoder_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.head_weight_decay >= 0.0 && self.encoder_weight_decay >= 0.0) {
            return fail("weight decays must not be negative".into());
        }
        if self.warmup_epochs > self.epochs {
            return fail(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.split_warmup_epochs > self.epochs {
            return fail(format!(
                "split_warmup_epochs ({}) exceeds epochs ({})",
                self.split_warmup_epochs, self.epochs
            ));
        }
        if self.split_choices.is_empty() {
            return fail("split_choices must not be empty".into());
        }
        for &k in &self.split_choices {
            SplitConfig::new(k).validate(layers)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub examples: usize,
    pub dropped_overlaps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub w: Array2<T>,
    pub b: Array2<T>,
}

impl<T: Scalar> Mlp<T> {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: xavier(input, hidden, rng),
            b: Array2::zeros((1, hidden)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }
}

/// One tagging problem: a prepared encoder input plus conditional features.
/// Decomposed variants produce one per relation label.
#[derive(Clone, Debug, PartialEq)]
pub struct Subtask {
    pub relation: Option<String>,
    pub main: PieceInput,
    pub tail: Option<Vec<usize>>,
    pub request: FeatureRequest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub subtask: Subtask,
    pub gold: Vec<usize>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub encoder: EncoderParams<T>,
    pub mlp: Mlp<T>,
    pub emission_w: Array2<T>,
    pub emission_b: Array2<T>,
    pub transitions: Array2<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Same order as [`Tagger::params_mut`].
    pub fn tensors(&self) -> Vec<&Array2<T>> {
        let mut out: Vec<&Array2<T>> = self.encoder.tensors().into_iter().map(|(_, t)| t).collect();
        out.extend([&self.mlp.w, &self.mlp.b, &self.emission_w, &self.emission_b, &self.transitions]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut out: Vec<&mut Array2<T>> =
            self.encoder.tensors_mut().into_iter().map(|(_, t)| t).collect();
        out.extend([
            &mut self.mlp.w,
            &mut self.mlp.b,
            &mut self.emission_w,
            &mut self.emission_b,
            &mut self.transitions,
        ]);
        out
    }

    fn scale(&mut self, by: T) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * by);
        }
    }
}

struct ForwardCache<T> {
    encoder: EncoderCache<T>,
    reps: Array2<T>,
    pre: Array2<T>,
    mask: Option<Array2<T>>,
    hidden: Array2<T>,
}

/// Tags decoded for one subtask, kept for prediction dumps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskTags {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetailedPrediction {
    pub structure: RelationalStructure,
    pub subtasks: Vec<SubtaskTags>,
}

pub struct Tagger<T> {
    pub encoder: EncoderStack<T>,
    pub mlp: Mlp<T>,
    pub crf: CrfLayer<T>,
    variant: VariantConfig,
    layout: FeatureLayout,
    config: ModelConfig,
    schema: RelationSchema,
    vocab: SubwordVocab,
}

impl<T: Scalar> Clone for Tagger<T> {
    fn clone(&self) -> Self {
        Self {
            encoder: self.encoder.clone(),
            mlp: self.mlp.clone(),
            crf: self.crf.clone(),
            variant: self.variant,
            layout: self.layout,
            config: self.config.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tagger<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tagger")
            .field("variant", &self.variant)
            .field("layout", &self.layout)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Vocabulary covering the corpus, every verbalization and the separator.
pub fn build_vocab(corpus: &[RseInstance], schema: &RelationSchema) -> SubwordVocab {
    let mut words: BTreeSet<&str> = corpus
        .iter()
        .flat_map(|i| i.passage.tokens.iter().map(String::as_str))
        .collect();
    for label in schema.relation_labels() {
        if let Ok(ws) = schema.verbalize_relation(label) {
            words.extend(ws.iter().map(String::as_str));
        }
    }
    for label in schema.condition_types() {
        if let Ok(ws) = schema.verbalize_condition(label) {
            words.extend(ws.iter().map(String::as_str));
        }
    }
    SubwordVocab::build(words, &[schema.separator()])
}

impl<T: Scalar> Tagger<T> {
    /// Randomly initialized model. `span_conditions` says whether conditions
    /// are spans, which adds the span-average feature slot for feature variants.
    pub fn new(
        schema: &RelationSchema,
        variant: VariantConfig,
        config: &ModelConfig,
        vocab: SubwordVocab,
        span_conditions: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        variant.validate()?;
        if config.mlp_dim == 0 {
            return Err(Error::Config("mlp_dim must be positive".into()));
        }
        let mut config = config.clone();
        config.encoder.vocab_size = vocab.len();
        let mut encoder = EncoderStack::new(
            config.encoder.clone(),
            schema.condition_types().len(),
            schema.relation_labels().len(),
            rng,
        )?;
        if !config.tied_branch {
            encoder.untie_branch();
        }
        let layout = FeatureLayout {
            span: variant.cond_feature && span_conditions,
            condition_type: variant.cond_feature,
            relation: variant.rel_feature,
        };
        let width = layout.width(config.encoder.model_dim, config.encoder.feature_dim);
        let mlp = Mlp::new(width, config.mlp_dim, rng);
        let tagset = Arc::new(match variant.scheme() {
            Scheme::RoleTyped => TagSet::role_typed(schema.relation_labels()),
            Scheme::Binary => TagSet::binary(),
        });
        let crf = CrfLayer::new(config.mlp_dim, tagset, config.crf_masking, rng);
        Ok(Self {
            encoder,
            mlp,
            crf,
            variant,
            layout,
            config,
            schema: schema.clone(),
            vocab,
        })
    }

    pub fn variant(&self) -> VariantConfig {
        self.variant
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn tagset(&self) -> &Arc<TagSet> {
        self.crf.tagset()
    }

    pub fn check_schema(&self, schema: &RelationSchema) -> Result<()> {
        let (model, given) = (self.schema.hash(), schema.hash());
        if model == given {
            Ok(())
        } else {
            Err(Error::SchemaMismatch { model, schema: given })
        }
    }

    /// All trainable tensors with their optimizer group.
    pub fn params_mut(&mut self) -> Vec<(Group, &mut Array2<T>)> {
        let mut out: Vec<(Group, &mut Array2<T>)> = self
            .encoder
            .params
            .tensors_mut()
            .into_iter()
            .map(|(enc, t)| (if enc { Group::Encoder } else { Group::Head }, t))
            .collect();
        out.extend(
            [
                &mut self.mlp.w,
                &mut self.mlp.b,
                &mut self.crf.emission_w,
                &mut self.crf.emission_b,
                &mut self.crf.transitions,
            ]
            .map(|t| (Group::Head, t)),
        );
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<T>> {
        let mut out: Vec<&Array2<T>> = self.encoder.params.tensors().into_iter().map(|(_, t)| t).collect();
        out.extend([
            &self.mlp.w,
            &self.mlp.b,
            &self.crf.emission_w,
            &self.crf.emission_b,
            &self.crf.transitions,
        ]);
        out
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            encoder: self.encoder.params.zeros_like(),
            mlp: self.mlp.zeros_like(),
            emission_w: Array2::zeros(self.crf.emission_w.raw_dim()),
            emission_b: Array2::zeros(self.crf.emission_b.raw_dim()),
            transitions: Array2::zeros(self.crf.transitions.raw_dim()),
        }
    }

    fn request(&self, condition: &Condition, relation: Option<&str>) -> Result<FeatureRequest> {
        let lookup = |found: Option<usize>, label: &str| {
            found.ok_or_else(|| Error::UnknownLabel(label.to_string()))
        };
        let mut req = FeatureRequest::default();
        if self.layout.span {
            req.span = condition.span;
        }
        if self.layout.condition_type {
            req.condition_type = Some(lookup(
                self.schema.condition_type_index(&condition.type_label),
                &condition.type_label,
            )?);
        }
        if self.layout.relation {
            if let Some(rel) = relation {
                req.relation = Some(lookup(self.schema.relation_index(rel), rel)?);
            }
        }
        Ok(req)
    }

    fn base_input(&self, passage: &Passage, condition: &Condition) -> Result<PrimedInput> {
        if self.variant.cond_priming {
            build_input(passage, condition, &self.schema, None)
        } else {
            check_condition(passage, condition)?;
            Ok(PrimedInput::passage_only(passage))
        }
    }

    /// The tagging problems for one condition, in relation-label order for
    /// decomposed variants.
    pub fn subtasks(&self, passage: &Passage, condition: &Condition) -> Result<Vec<Subtask>> {
        let main = self.encoder.prepare(&self.vocab, &self.base_input(passage, condition)?)?;
        if !self.variant.decompose_by_relation {
            return Ok(vec![Subtask {
                relation: None,
                main,
                tail: None,
                request: self.request(condition, None)?,
            }]);
        }
        self.schema
            .relation_labels()
            .iter()
            .map(|rel| {
                let tail = if self.variant.rel_priming {
                    let words = relation_tail(&self.schema, rel)?;
                    Some(self.encoder.tail_pieces(&self.vocab, &words))
                } else {
                    None
                };
                Ok(Subtask {
                    relation: Some(rel.clone()),
                    main: main.clone(),
                    tail,
                    request: self.request(condition, Some(rel))?,
                })
            })
            .collect()
    }

    /// Subtasks with gold tags. Overlapping gold spans that one tag sequence
    /// cannot hold are dropped; the count of dropped spans is returned.
    pub fn training_examples(&self, corpus: &[RseInstance]) -> Result<(Vec<TrainingExample>, usize)> {
        let mut out = Vec::new();
        let mut dropped = 0;
        for inst in corpus {
            let n = inst.passage.len();
            for subtask in self.subtasks(&inst.passage, &inst.condition)? {
                let (tags, lost) =
                    encode_resolved(&inst.gold, n, self.crf.tagset(), subtask.relation.as_deref())?;
                dropped += lost.len();
                out.push(TrainingExample {
                    subtask,
                    gold: tags.tags,
                });
            }
        }
        Ok((out, dropped))
    }

    fn forward(
        &self,
        subtask: &Subtask,
        k: usize,
        dropout: Option<f64>,
        rng: &mut ChaCha8Rng,
        keep_cache: bool,
    ) -> Result<(Array2<T>, Option<ForwardCache<T>>)> {
        let (reps, enc_cache) = self.encoder.forward(
            &subtask.main,
            subtask.tail.as_deref(),
            k,
            self.layout,
            &subtask.request,
            dropout,
            rng,
            keep_cache,
        )?;
        let pre = reps.dot(&self.mlp.w) + &self.mlp.b;
        let mut hidden = pre.mapv(|v| v.max(T::zero()));
        let mask = match dropout {
            Some(p) if p > 0.0 => {
                let m = dropout_mask(hidden.nrows(), hidden.ncols(), p, rng);
                hidden *= &m;
                Some(m)
            }
            _ => None,
        };
        let emissions = self.crf.emissions(hidden.view());
        let cache = enc_cache.map(|encoder| ForwardCache {
            encoder,
            reps,
            pre,
            mask,
            hidden,
        });
        Ok((emissions, cache))
    }

    fn emissions_of(&self, reps: ArrayView2<T>) -> Array2<T> {
        let hidden = (reps.dot(&self.mlp.w) + &self.mlp.b).mapv(|v| v.max(T::zero()));
        self.crf.emissions(hidden.view())
    }

    fn backward(&self, cache: &ForwardCache<T>, d_emissions: ArrayView2<T>, grads: &mut Gradients<T>) {
        let mut d_hidden = self.crf.emissions_backward(
            cache.hidden.view(),
            d_emissions,
            &mut grads.emission_w,
            &mut grads.emission_b,
        );
        if let Some(m) = &cache.mask {
            d_hidden *= m;
        }
        let d_pre = ndarray::Zip::from(&d_hidden)
            .and(&cache.pre)
            .map_collect(|&d, &p| if p > T::zero() { d } else { T::zero() });
        grads.mlp.w += &cache.reps.t().dot(&d_pre);
        grads.mlp.b += &row_sum(&d_pre);
        let d_reps = d_pre.dot(&self.mlp.w.t());
        self.encoder.backward(&cache.encoder, d_reps.view(), &mut grads.encoder);
    }

    /// Loss of one example without dropout, at split layer `k`.
    pub fn example_loss(&self, example: &TrainingExample, k: usize) -> Result<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (em, _) = self.forward(&example.subtask, k, None, &mut rng, false)?;
        self.crf.nll_loss(em.view(), &example.gold)
    }

    /// Loss and gradients of one example without dropout.
    pub fn example_loss_and_grad(&self, example: &TrainingExample, k: usize) -> Result<(T, Gradients<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut grads = self.zero_gradients();
        let loss = self.accumulate(example, k, None, &mut rng, &mut grads)?;
        Ok((loss, grads))
    }

    fn accumulate(
        &self,
        example: &TrainingExample,
        k: usize,
        dropout: Option<f64>,
        rng: &mut ChaCha8Rng,
        grads: &mut Gradients<T>,
    ) -> Result<T> {
        let (em, cache) = self.forward(&example.subtask, k, dropout, rng, true)?;
        let (loss, crf_grads) = self.crf.nll_with_grad(em.view(), &example.gold)?;
        grads.transitions += &crf_grads.transitions;
        self.backward(
            &cache.expect("cache requested"),
            crf_grads.emissions.view(),
            grads,
        );
        Ok(loss)
    }

    /// Trains a fresh model; deterministic for a fixed seed.
    pub fn train(
        corpus: &[RseInstance],
        schema: &RelationSchema,
        variant: VariantConfig,
        config: &ModelConfig,
        train: &TrainConfig,
    ) -> Result<(Self, TrainLog)> {
        Self::train_with(corpus, schema, variant, config, train, |_, _| {})
    }

    /// As [`Self::train`], calling `on_epoch(epoch, mean_loss)` after each epoch.
    pub fn train_with(
        corpus: &[RseInstance],
        schema: &RelationSchema,
        variant: VariantConfig,
        config: &ModelConfig,
        train: &TrainConfig,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<(Self, TrainLog)> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        variant.validate()?;
        config.encoder.validate()?;
        train.validate(config.encoder.layers)?;
        for inst in corpus {
            ensure_valid(inst, schema)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let span_conditions = corpus.iter().any(|i| i.condition.kind == ConditionKind::Span);
        let vocab = build_vocab(corpus, schema);
        let mut model = Self::new(schema, variant, config, vocab, span_conditions, &mut rng)?;
        let (examples, dropped) = model.training_examples(corpus)?;

        let steps_per_epoch = examples.len().div_ceil(train.batch_size);
        let total = steps_per_epoch * train.epochs;
        let warmup = steps_per_epoch * train.warmup_epochs;
        let mut opt = AdamW::new(
            GroupSettings {
                lr: train.encoder_lr,
                weight_decay: train.encoder_weight_decay,
            },
            GroupSettings {
                lr: train.head_lr,
                weight_decay: train.head_weight_decay,
            },
        );
        let dropout = Some(config.encoder.dropout);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut log = TrainLog {
            examples: examples.len(),
            dropped_overlaps: dropped,
            ..Default::default()
        };
        let mut step = 0;
        for epoch in 0..train.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(train.batch_size) {
                let mut grads = model.zero_gradients();
                for &i in batch {
                    let ex = &examples[i];
                    let k = match (&ex.subtask.tail, train.split_choices.as_slice()) {
                        (Some(_), _) if epoch < train.split_warmup_epochs => 0,
                        (Some(_), [only]) => *only,
                        (Some(_), choices) => choices[rng.gen_range(0..choices.len())],
                        (None, _) => 0,
                    };
                    epoch_loss += model.accumulate(ex, k, dropout, &mut rng, &mut grads)?.as_f64();
                }
                grads.scale(T::lit(1.0 / batch.len() as f64));
                let factor = schedule_factor(step, warmup, total);
                opt.step(model.params_mut(), &grads.tensors(), factor);
                step += 1;
            }
            let mean = epoch_loss / examples.len() as f64;
            on_epoch(epoch, mean);
            log.epoch_losses.push(mean);
        }
        Ok((model, log))
    }

    /// Prediction after checking that `schema` matches the training schema.
    pub fn predict(
        &self,
        passage: &Passage,
        condition: &Condition,
        schema: &RelationSchema,
    ) -> Result<RelationalStructure> {
        self.check_schema(schema)?;
        Ok(self.predict_detailed(passage, condition, SplitConfig::default())?.structure)
    }

    /// Decodes every subtask and merges by union; relation-primed variants
    /// run through the split encoder at `split`.
    pub fn predict_detailed(
        &self,
        passage: &Passage,
        condition: &Condition,
        split: SplitConfig,
    ) -> Result<DetailedPrediction> {
        split.validate(self.config.encoder.layers)?;
        let mut structure = RelationalStructure::default();
        let mut subtasks = Vec::new();
        let mut emit = |relation: Option<&str>, em: Array2<T>| -> Result<()> {
            let (tags, _) = self.crf.viterbi(em.view())?;
            for arg in decode_tags(&tags, relation).arguments() {
                structure.insert(arg.clone());
            }
            subtasks.push(SubtaskTags {
                relation: relation.map(String::from),
                tags: tags.names().into_iter().map(String::from).collect(),
            });
            Ok(())
        };
        if self.variant.rel_priming {
            let base = self.base_input(passage, condition)?;
            let labels = self.schema.relation_labels();
            let tails = labels
                .iter()
                .map(|r| relation_tail(&self.schema, r))
                .collect::<Result<Vec<_>>>()?;
            let requests = labels
                .iter()
                .map(|r| self.request(condition, Some(r)))
                .collect::<Result<Vec<_>>>()?;
            let reps = self
                .encoder
                .encode_split(&self.vocab, &base, &tails, split, self.layout, &requests)?;
            for (rel, rep) in labels.iter().zip(reps) {
                emit(Some(rel), self.emissions_of(rep.matrix.view()))?;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for sub in self.subtasks(passage, condition)? {
                let (em, _) = self.forward(&sub, 0, None, &mut rng, false)?;
                emit(sub.relation.as_deref(), em)?;
            }
        }
        Ok(DetailedPrediction {
            structure: structure.canonical(),
            subtasks,
        })
    }

    /// Predictions for many instances, in input order.
    pub fn predict_many(&self, instances: &[RseInstance], split: SplitConfig) -> Result<Vec<DetailedPrediction>> {
        instances
            .par_iter()
            .map(|i| self.predict_detailed(&i.passage, &i.condition, split))
            .collect()
    }
}
