//! Small transformer encoder trained from scratch.
//!
//! Tokens are split into word pieces, embedded with learned absolute
//! positions (priming pieces continue the passage's position index), run
//! through pre-normalized transformer blocks and averaged back to one vector
//! per passage token. Optional conditional features are concatenated to each
//! token vector.
//!
//! Split mode shares the first `k` layers' work across relations: the
//! passage with its condition priming is encoded once through layers
//! `0..k`, each relation tail separately through the (possibly untied)
//! branch copy of those layers, and every `(passage, relation)` pair is then
//! fused through layers `k..L`. `k = 0` is full relationship priming and
//! `k = L` is condition priming alone.

mod layer;
mod subword;

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::priming::{FeatureRequest, PrimedInput, SegmentKind};
use crate::rse::TokenSpan;
use crate::{Error, Result, Scalar};

pub use layer::{LayerNorm, TransformerLayer};
pub use subword::{subword_split, SubwordVocab, UNK_PIECE};

pub(crate) use layer::{dropout_mask, row_sum, xavier};
use layer::{uniform, Dropout, LayerCache, NormCache};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Heads whose attention decays with token distance; the rest attend
    /// without a distance term.
    pub local_heads: usize,
    /// Logit penalty per token of distance in the local heads.
    pub locality: f64,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            model_dim: 32,
            layers: 2,
            heads: 8,
            local_heads: 4,
            locality: 1.0,
            feedforward_dim: 64,
            dropout: 0.2,
            max_len: 128,
            feature_dim: 100,
        }
    }
}

impl EncoderConfig {
    /// Per-head distance slopes, local heads first.
    pub fn head_slopes(&self) -> Vec<f64> {
        (0..self.heads)
            .map(|h| if h < self.local_heads { self.locality } else { 0.0 })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive");
        }
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return fail("model_dim must be a positive multiple of heads");
        }
        if self.local_heads > self.heads {
            return fail("local_heads must not exceed heads");
        }
        if !(self.locality >= 0.0 && self.locality.is_finite()) {
            return fail("locality must be finite and non-negative");
        }
        if self.layers == 0 {
            return fail("layers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.feature_dim == 0 || self.feedforward_dim == 0 || self.max_len == 0 {
            return fail("feature_dim, feedforward_dim and max_len must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub k: usize,
}

impl SplitConfig {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.k > layers {
            Err(Error::SplitOutOfRange { k: self.k, layers })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Which feature slots follow the contextual vector in each output row.
/// A slot that is present but has no value in the request is zero-filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub span: bool,
    pub condition_type: bool,
    pub relation: bool,
}

impl FeatureLayout {
    pub fn of(request: &FeatureRequest) -> Self {
        Self {
            span: request.span.is_some(),
            condition_type: request.condition_type.is_some(),
            relation: request.relation.is_some(),
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.span || self.condition_type || self.relation)
    }

    pub fn width(&self, model_dim: usize, feature_dim: usize) -> usize {
        model_dim
            + if self.span { model_dim } else { 0 }
            + if self.condition_type { feature_dim } else { 0 }
            + if self.relation { feature_dim } else { 0 }
    }
}

/// Per passage token representations, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenRepresentations<T> {
    pub matrix: Array2<T>,
}

impl<T: Scalar> TokenRepresentations<T> {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.matrix.dim(), other.matrix.dim());
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub token_embedding: Array2<T>,
    pub position_embedding: Array2<T>,
    /// Rows for the passage, the condition priming segment and relation tails.
    pub segment_embedding: Array2<T>,
    pub layers: Vec<TransformerLayer<T>>,
    /// Untied copy of the layers used by relation tails below the split;
    /// `None` means the branch shares `layers`.
    pub branch_layers: Option<Vec<TransformerLayer<T>>>,
    pub final_norm: LayerNorm<T>,
    pub condition_type_embedding: Array2<T>,
    pub relation_embedding: Array2<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            position_embedding: Array2::zeros(self.position_embedding.raw_dim()),
            segment_embedding: Array2::zeros(self.segment_embedding.raw_dim()),
            layers: self.layers.iter().map(TransformerLayer::zeros_like).collect(),
            branch_layers: self
                .branch_layers
                .as_ref()
                .map(|ls| ls.iter().map(TransformerLayer::zeros_like).collect()),
            final_norm: self.final_norm.zeros_like(),
            condition_type_embedding: Array2::zeros(self.condition_type_embedding.raw_dim()),
            relation_embedding: Array2::zeros(self.relation_embedding.raw_dim()),
        }
    }

    /// Contextual-encoder tensors followed by the two feature tables, in
    /// checkpoint order. The flag marks encoder (as opposed to feature) tensors.
    pub fn tensors(&self) -> Vec<(bool, &Array2<T>)> {
        let mut out = vec![
            (true, &self.token_embedding),
            (true, &self.position_embedding),
            (true, &self.segment_embedding),
        ];
        for l in self.layers.iter().chain(self.branch_layers.iter().flatten()) {
            out.extend(l.tensors().into_iter().map(|t| (true, t)));
        }
        out.extend(self.final_norm.tensors().into_iter().map(|t| (true, t)));
        out.push((false, &self.condition_type_embedding));
        out.push((false, &self.relation_embedding));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(bool, &mut Array2<T>)> {
        let mut out = vec![
            (true, &mut self.token_embedding),
            (true, &mut self.position_embedding),
            (true, &mut self.segment_embedding),
        ];
        for l in self.layers.iter_mut().chain(self.branch_layers.iter_mut().flatten()) {
            out.extend(l.tensors_mut().into_iter().map(|t| (true, t)));
        }
        out.extend(self.final_norm.tensors_mut().into_iter().map(|t| (true, t)));
        out.push((false, &mut self.condition_type_embedding));
        out.push((false, &mut self.relation_embedding));
        out
    }
}

/// Word pieces of a prepared input and the piece range of each passage token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PieceInput {
    pub pieces: Vec<usize>,
    pub words: Vec<Range<usize>>,
    /// Segment id of every piece: passage, condition priming or relation.
    pub segments: Vec<usize>,
}


pub(crate) struct EncoderCache<T> {
    main_pieces: Vec<usize>,
    main_segments: Vec<usize>,
    tail_pieces: Vec<usize>,
    words: Vec<Range<usize>>,
    lower: usize,
    main_drop: Option<Array2<T>>,
    tail_drop: Option<Array2<T>>,
    main_lower: Vec<LayerCache<T>>,
    tail_lower: Vec<LayerCache<T>>,
    upper: Vec<LayerCache<T>>,
    final_norm: NormCache<T>,
    layout: FeatureLayout,
    request: FeatureRequest,
}

pub struct EncoderStack<T> {
    pub config: EncoderConfig,
    pub params: EncoderParams<T>,
    main_lower_passes: AtomicUsize,
}

impl<T: Scalar> Clone for EncoderStack<T> {
    fn clone(&self) -> Self {
        Self::from_params(self.config.clone(), self.params.clone())
    }
}

impl<T: Scalar> std::fmt::Debug for EncoderStack<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderStack")
            .field("config", &self.config)
            .field("tied", &self.params.branch_layers.is_none())
            .finish()
    }
}

impl<T: Scalar> EncoderStack<T> {
    pub fn new(
        config: EncoderConfig,
        condition_types: usize,
        relations: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let params = EncoderParams {
            token_embedding: uniform(config.vocab_size, d, 0.5, rng),
            position_embedding: uniform(config.max_len, d, 0.5, rng),
            segment_embedding: uniform(SEGMENTS, d, 0.5, rng),
            layers: (0..config.layers)
                .map(|_| TransformerLayer::new(d, config.feedforward_dim, rng))
                .collect(),
            branch_layers: None,
            final_norm: LayerNorm::new(d),
            condition_type_embedding: uniform(condition_types.max(1), config.feature_dim, 0.5, rng),
            relation_embedding: uniform(relations.max(1), config.feature_dim, 0.5, rng),
        };
        Ok(Self::from_params(config, params))
    }

    pub fn from_params(config: EncoderConfig, params: EncoderParams<T>) -> Self {
        Self {
            config,
            params,
            main_lower_passes: AtomicUsize::new(0),
        }
    }

    pub fn is_tied(&self) -> bool {
        self.params.branch_layers.is_none()
    }

    /// Gives relation tails their own copy of the layers, starting from the
    /// current weights.
    pub fn untie_branch(&mut self) {
        if self.params.branch_layers.is_none() {
            self.params.branch_layers = Some(self.params.layers.clone());
        }
    }

    fn branch_layers(&self) -> &[TransformerLayer<T>] {
        self.params.branch_layers.as_deref().unwrap_or(&self.params.layers)
    }

    /// Number of passage lower-half passes run by [`Self::encode_split`].
    pub fn main_lower_passes(&self) -> usize {
        self.main_lower_passes.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.main_lower_passes.store(0, Ordering::Relaxed);
    }

    pub fn prepare(&self, vocab: &SubwordVocab, input: &PrimedInput) -> Result<PieceInput> {
        let mut pieces = Vec::with_capacity(input.len() + 4);
        let mut words = Vec::with_capacity(input.passage_len);
        let mut segments = Vec::with_capacity(pieces.capacity());
        for (i, tok) in input.tokens.iter().enumerate() {
            let start = pieces.len();
            pieces.extend(vocab.split(tok));
            if i < input.passage_len {
                words.push(start..pieces.len());
            }
            // a separator belongs to the segment it opens
            let kind = input
                .segments
                .iter()
                .find(|s| s.range.contains(&i) || s.range.start == i + 1)
                .map_or(SegmentKind::Passage, |s| s.kind);
            segments.resize(pieces.len(), segment_id(kind));
        }
        self.check_len(pieces.len())?;
        Ok(PieceInput {
            pieces,
            words,
            segments,
        })
    }

    pub fn tail_pieces(&self, vocab: &SubwordVocab, tail: &[String]) -> Vec<usize> {
        tail.iter().flat_map(|t| vocab.split(t)).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            Err(Error::InputTooLong {
                len,
                max_len: self.config.max_len,
            })
        } else {
            Ok(())
        }
    }

    /// `segments` of `None` marks a relation tail.
    fn embed(&self, pieces: &[usize], offset: usize, segments: Option<&[usize]>) -> Array2<T> {
        let d = self.config.model_dim;
        let mut x = Array2::zeros((pieces.len(), d));
        for (i, &p) in pieces.iter().enumerate() {
            let seg = segments.map_or(RELATION_SEGMENT, |s| s[i]);
            let mut row = x.row_mut(i);
            row.assign(&self.params.token_embedding.row(p));
            row += &self.params.position_embedding.row(offset + i);
            row += &self.params.segment_embedding.row(seg);
        }
        x
    }

    fn run(
        &self,
        layers: &[TransformerLayer<T>],
        mut x: Array2<T>,
        dropout: &mut Option<Dropout<'_, ChaCha8Rng>>,
        caches: Option<&mut Vec<LayerCache<T>>>,
    ) -> Array2<T> {
        let slopes = self.config.head_slopes();
        match caches {
            Some(store) => {
                for l in layers {
                    let (y, c) = l.forward(x.view(), &slopes, dropout.as_mut());
                    store.push(c);
                    x = y;
                }
            }
            None => {
                for l in layers {
                    x = l.forward(x.view(), &slopes, dropout.as_mut()).0;
                }
            }
        }
        x
    }

    /// Final normalization over the passage pieces and word-piece averaging.
    fn pool(&self, x: ArrayView2<T>, words: &[Range<usize>]) -> (Array2<T>, NormCache<T>) {
        let rows = words.last().map_or(0, |r| r.end);
        let (normed, cache) = self.params.final_norm.forward(x.slice(s![..rows, ..]));
        let mut z = Array2::zeros((words.len(), self.config.model_dim));
        for (i, r) in words.iter().enumerate() {
            let len = T::lit(r.len() as f64);
            z.row_mut(i)
                .assign(&(normed.slice(s![r.clone(), ..]).sum_axis(Axis(0)) / len));
        }
        (z, cache)
    }

    fn attach(&self, z: Array2<T>, layout: FeatureLayout, request: &FeatureRequest) -> Array2<T> {
        if layout.is_empty() {
            return z;
        }
        let (n, d) = z.dim();
        let f = self.config.feature_dim;
        let mut parts = vec![z.view().to_owned()];
        if layout.span {
            let mut slot = Array2::zeros((n, d));
            if let Some(span) = request.span {
                let avg = z.slice(s![span.start..span.end, ..]).sum_axis(Axis(0))
                    / T::lit(span.len() as f64);
                slot.rows_mut().into_iter().for_each(|mut r| r.assign(&avg));
            }
            parts.push(slot);
        }
        for (present, id, table) in [
            (layout.condition_type, request.condition_type, &self.params.condition_type_embedding),
            (layout.relation, request.relation, &self.params.relation_embedding),
        ] {
            if present {
                let mut slot = Array2::zeros((n, f));
                if let Some(id) = id {
                    slot.rows_mut().into_iter().for_each(|mut r| r.assign(&table.row(id)));
                }
                parts.push(slot);
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &views).expect("feature slots share the row count")
    }

    /// Full encode of a (possibly primed) input. Train mode applies dropout.
    pub fn encode(
        &self,
        vocab: &SubwordVocab,
        input: &PrimedInput,
        features: Option<&FeatureRequest>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TokenRepresentations<T>> {
        let request = features.copied().unwrap_or_default();
        let layout = FeatureLayout::of(&request);
        let main = self.prepare(vocab, input)?;
        let dropout = (mode == Mode::Train).then_some(self.config.dropout);
        let (matrix, _) = self.forward(&main, None, 0, layout, &request, dropout, rng, false)?;
        Ok(TokenRepresentations { matrix })
    }

    /// Split-mode inference for one passage input and several relation tails
    /// (each a separator plus verbalized relation words). Outputs follow the
    /// order of `relation_tails`. `requests` supplies per-relation features
    /// when `layout` is non-empty.
    pub fn encode_split(
        &self,
        vocab: &SubwordVocab,
        passage_input: &PrimedInput,
        relation_tails: &[Vec<String>],
        split: SplitConfig,
        layout: FeatureLayout,
        requests: &[FeatureRequest],
    ) -> Result<Vec<TokenRepresentations<T>>> {
        split.validate(self.config.layers)?;
        if relation_tails.is_empty() {
            return Err(Error::Config("split encoding needs at least one relation".into()));
        }
        if !layout.is_empty() && requests.len() != relation_tails.len() {
            return Err(Error::Config("one feature request per relation expected".into()));
        }
        let main = self.prepare(vocab, passage_input)?;
        let m = main.pieces.len();
        let tails: Vec<Vec<usize>> = relation_tails
            .iter()
            .map(|t| self.tail_pieces(vocab, t))
            .collect();
        for t in &tails {
            self.check_len(m + t.len())?;
        }
        let k = split.k;
        let mut none = None;
        let main_k = self.run(&self.params.layers[..k], self.embed(&main.pieces, 0, Some(&main.segments)), &mut none, None);
        self.main_lower_passes.fetch_add(1, Ordering::Relaxed);
        tails
            .par_iter()
            .enumerate()
            .map(|(i, tail)| {
                let mut none = None;
                let tail_k = self.run(&self.branch_layers()[..k], self.embed(tail, m, None), &mut none, None);
                let joint = concatenate(Axis(0), &[main_k.view(), tail_k.view()])
                    .expect("rows share model_dim");
                let top = self.run(&self.params.layers[k..], joint, &mut none, None);
                let (z, _) = self.pool(top.view(), &main.words);
                let request = requests.get(i).copied().unwrap_or_default();
                Ok(TokenRepresentations {
                    matrix: self.attach(z, layout, &request),
                })
            })
            .collect()
    }

    /// Forward pass shared by training and inference. With a tail, the main
    /// input and the tail run separately through layers `0..k` and jointly
    /// afterwards; without one, `k` is ignored.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward(
        &self,
        main: &PieceInput,
        tail: Option<&[usize]>,
        k: usize,
        layout: FeatureLayout,
        request: &FeatureRequest,
        dropout: Option<f64>,
        rng: &mut ChaCha8Rng,
        keep_cache: bool,
    ) -> Result<(Array2<T>, Option<EncoderCache<T>>)> {
        SplitConfig::new(k).validate(self.config.layers)?;
        let m = main.pieces.len();
        let tail_pieces = tail.unwrap_or(&[]);
        self.check_len(m + tail_pieces.len())?;
        let lower = if tail.is_some() { k } else { self.config.layers };
        let d = self.config.model_dim;

        let mut x_main = self.embed(&main.pieces, 0, Some(&main.segments));
        let mut x_tail = self.embed(tail_pieces, m, None);
        let (main_drop, tail_drop) = match dropout {
            Some(p) if p > 0.0 => {
                let a = dropout_mask(m, d, p, rng);
                let b = dropout_mask(tail_pieces.len(), d, p, rng);
                x_main *= &a;
                x_tail *= &b;
                (Some(a), Some(b))
            }
            _ => (None, None),
        };
        let mut drop = dropout.filter(|&p| p > 0.0).map(|p| Dropout { p, rng });
        let mut main_lower = Vec::new();
        let mut tail_lower = Vec::new();
        let mut upper = Vec::new();
        let x_main = self.run(
            &self.params.layers[..lower],
            x_main,
            &mut drop,
            keep_cache.then_some(&mut main_lower),
        );
        let joint = if tail.is_some() {
            let x_tail = self.run(
                &self.branch_layers()[..lower],
                x_tail,
                &mut drop,
                keep_cache.then_some(&mut tail_lower),
            );
            concatenate(Axis(0), &[x_main.view(), x_tail.view()]).expect("rows share model_dim")
        } else {
            x_main
        };
        let top = self.run(
            &self.params.layers[lower..],
            joint,
            &mut drop,
            keep_cache.then_some(&mut upper),
        );
        let (z, final_norm) = self.pool(top.view(), &main.words);
        let reps = self.attach(z, layout, request);
        let cache = keep_cache.then(|| EncoderCache {
            main_pieces: main.pieces.clone(),
            main_segments: main.segments.clone(),
            tail_pieces: tail_pieces.to_vec(),
            words: main.words.clone(),
            lower,
            main_drop,
            tail_drop,
            main_lower,
            tail_lower,
            upper,
            final_norm,
            layout,
            request: *request,
        });
        Ok((reps, cache))
    }

    /// Accumulates parameter gradients for `d_reps` (the gradient with
    /// respect to the output of the matching [`Self::forward`]).
    pub(crate) fn backward(&self, cache: &EncoderCache<T>, d_reps: ArrayView2<T>, grads: &mut EncoderParams<T>) {
        let d = self.config.model_dim;
        let f = self.config.feature_dim;
        let heads = self.config.heads;
        let n = cache.words.len();
        let mut d_z = d_reps.slice(s![.., ..d]).to_owned();
        let mut col = d;
        if cache.layout.span {
            if let Some(span) = cache.request.span {
                let total = d_reps.slice(s![.., col..col + d]).sum_axis(Axis(0))
                    / T::lit(span.len() as f64);
                for i in span.start..span.end {
                    let mut row = d_z.row_mut(i);
                    row += &total;
                }
            }
            col += d;
        }
        for (present, id, table) in [
            (cache.layout.condition_type, cache.request.condition_type, &mut grads.condition_type_embedding),
            (cache.layout.relation, cache.request.relation, &mut grads.relation_embedding),
        ] {
            if present {
                if let Some(id) = id {
                    let mut row = table.row_mut(id);
                    row += &d_reps.slice(s![.., col..col + f]).sum_axis(Axis(0));
                }
                col += f;
            }
        }

        let main_rows = cache.main_pieces.len();
        let total_rows = main_rows + cache.tail_pieces.len();
        let passage_rows = cache.words.last().map_or(0, |r| r.end);
        let mut d_normed = Array2::<T>::zeros((passage_rows, d));
        for i in 0..n {
            let r = cache.words[i].clone();
            let share = d_z.row(i).to_owned() / T::lit(r.len() as f64);
            for p in r {
                let mut row = d_normed.row_mut(p);
                row += &share;
            }
        }
        let d_top_rows = self
            .params
            .final_norm
            .backward(&cache.final_norm, d_normed.view(), &mut grads.final_norm);
        let mut dx = Array2::<T>::zeros((total_rows, d));
        dx.slice_mut(s![..passage_rows, ..]).assign(&d_top_rows);

        let upper_layers = &self.params.layers[cache.lower..];
        for (i, c) in cache.upper.iter().enumerate().rev() {
            dx = upper_layers[i].backward(c, dx.view(), heads, &mut grads.layers[cache.lower + i]);
        }
        let mut d_main = dx.slice(s![..main_rows, ..]).to_owned();
        let mut d_tail = dx.slice(s![main_rows.., ..]).to_owned();
        for (i, c) in cache.main_lower.iter().enumerate().rev() {
            d_main = self.params.layers[i].backward(c, d_main.view(), heads, &mut grads.layers[i]);
        }
        if !cache.tail_pieces.is_empty() {
            for (i, c) in cache.tail_lower.iter().enumerate().rev() {
                let g = match grads.branch_layers.as_mut() {
                    Some(b) => &mut b[i],
                    None => &mut grads.layers[i],
                };
                d_tail = self.branch_layers()[i].backward(c, d_tail.view(), heads, g);
            }
        }
        if let Some(m) = &cache.main_drop {
            d_main *= m;
        }
        if let Some(m) = &cache.tail_drop {
            d_tail *= m;
        }
        let main_segments = Some(cache.main_segments.as_slice());
        for (offset, pieces, segments, grad) in [
            (0, &cache.main_pieces, main_segments, &d_main),
            (main_rows, &cache.tail_pieces, None, &d_tail),
        ] {
            for (i, &p) in pieces.iter().enumerate() {
                let g = grad.row(i);
                let mut tok = grads.token_embedding.row_mut(p);
                tok += &g;
                let mut pos = grads.position_embedding.row_mut(offset + i);
                pos += &g;
                let mut seg = grads
                    .segment_embedding
                    .row_mut(segments.map_or(RELATION_SEGMENT, |s| s[i]));
                seg += &g;
            }
        }
    }
}

const SEGMENTS: usize = 3;
const RELATION_SEGMENT: usize = 2;

fn segment_id(kind: SegmentKind) -> usize {
    match kind {
        SegmentKind::Passage => 0,
        SegmentKind::ConditionWords | SegmentKind::ConditionTypeWords => 1,
        SegmentKind::RelationWords => RELATION_SEGMENT,
    }
}

/// Convenience for callers holding a condition span in token units.
pub fn span_request(span: TokenSpan) -> FeatureRequest {
    FeatureRequest {
        span: Some(span),
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::priming::build_input;
    use crate::rse::{Condition, Passage, RelationSchema};

    fn setup(layers: usize) -> (EncoderStack<f64>, SubwordVocab, RelationSchema, Passage, Condition) {
        let schema = RelationSchema::new(
            vec!["Org".into()],
            vec!["Part-Whole".into(), "ART".into(), "GEN-AFF".into(), "PHYS".into()],
            [("Part-Whole".to_string(), vec!["is".into(), "part".into(), "of".into()])].into(),
            [("Org".to_string(), vec!["Organization".into()])].into(),
        )
        .unwrap();
        let passage = Passage::from_words("p", &["the", "Iraqi", "military", "base", "nearby"]);
        let mut words: Vec<&str> = passage.tokens.iter().map(String::as_str).collect();
        words.extend(["is", "part", "of", "Organization", "art", "gen", "aff", "phys"]);
        let vocab = SubwordVocab::build(words, &["[SEP]"]);
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            model_dim: 8,
            layers,
            heads: 2,
            local_heads: 1,
            locality: 1.0,
            feedforward_dim: 16,
            dropout: 0.2,
            max_len: 40,
            feature_dim: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = EncoderStack::new(config, 1, 4, &mut rng).unwrap();
        let cond = Condition::span(TokenSpan::new(2, 3), "Org");
        (enc, vocab, schema, passage, cond)
    }

    #[test]
    fn shape_and_finiteness() {
        let (enc, vocab, _, passage, _) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = enc
            .encode(&vocab, &PrimedInput::passage_only(&passage), None, Mode::Infer, &mut rng)
            .unwrap();
        assert_eq!(out.matrix.dim(), (5, 8));
        assert!(out.is_finite());
    }

    #[test]
    fn priming_changes_passage_rows() {
        let (enc, vocab, schema, passage, cond) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = enc
            .encode(&vocab, &PrimedInput::passage_only(&passage), None, Mode::Infer, &mut rng)
            .unwrap();
        let primed_input = build_input(&passage, &cond, &schema, None).unwrap();
        let primed = enc.encode(&vocab, &primed_input, None, Mode::Infer, &mut rng).unwrap();
        assert_eq!(primed.rows(), plain.rows());
        assert!(primed.max_abs_diff(&plain) > 1e-3);
    }

    #[test]
    fn feature_width() {
        let (enc, vocab, _, passage, _) = setup(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let req = FeatureRequest {
            condition_type: Some(0),
            ..Default::default()
        };
        let out = enc
            .encode(&vocab, &PrimedInput::passage_only(&passage), Some(&req), Mode::Infer, &mut rng)
            .unwrap();
        assert_eq!(out.width(), 8 + 5);
        let req = FeatureRequest {
            span: Some(TokenSpan::new(2, 3)),
            condition_type: Some(0),
            relation: Some(3),
        };
        let out = enc
            .encode(&vocab, &PrimedInput::passage_only(&passage), Some(&req), Mode::Infer, &mut rng)
            .unwrap();
        assert_eq!(out.width(), 8 + 8 + 5 + 5);
        // span slot is the average of the span's contextual rows
        let z_span = out.matrix.slice(s![2, ..8]).to_owned();
        assert_eq!(out.matrix.slice(s![0, 8..16]).to_owned(), z_span);
    }

    #[test]
    fn too_long_input_is_rejected() {
        let (enc, vocab, _, _, _) = setup(1);
        let passage = Passage::new("long", vec!["the".to_string(); 41]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = enc
            .encode(&vocab, &PrimedInput::passage_only(&passage), None, Mode::Infer, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::InputTooLong { len: 41, max_len: 40 }));
    }

    #[test]
    fn inference_is_deterministic_and_training_is_not_identity() {
        let (enc, vocab, schema, passage, cond) = setup(2);
        let input = build_input(&passage, &cond, &schema, Some("ART")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = enc.encode(&vocab, &input, None, Mode::Infer, &mut rng).unwrap();
        let b = enc.encode(&vocab, &input, None, Mode::Infer, &mut rng).unwrap();
        assert_eq!(a, b);
        let t = enc.encode(&vocab, &input, None, Mode::Train, &mut rng).unwrap();
        assert!(t.max_abs_diff(&a) > 0.0);
    }

    #[test]
    fn split_endpoints() {
        for layers in [2, 4] {
            let (enc, vocab, schema, passage, cond) = setup(layers);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let base = build_input(&passage, &cond, &schema, None).unwrap();
            let rels = ["Part-Whole", "ART"];
            let tails: Vec<Vec<String>> = rels
                .iter()
                .map(|r| crate::priming::relation_tail(&schema, r).unwrap())
                .collect();
            let at0 = enc
                .encode_split(&vocab, &base, &tails, SplitConfig::new(0), FeatureLayout::default(), &[])
                .unwrap();
            for (rel, out) in rels.iter().zip(&at0) {
                let full = build_input(&passage, &cond, &schema, Some(rel)).unwrap();
                let expected = enc.encode(&vocab, &full, None, Mode::Infer, &mut rng).unwrap();
                assert!(out.max_abs_diff(&expected) <= 1e-6);
            }
            let at_l = enc
                .encode_split(&vocab, &base, &tails, SplitConfig::new(layers), FeatureLayout::default(), &[])
                .unwrap();
            let cond_only = enc.encode(&vocab, &base, None, Mode::Infer, &mut rng).unwrap();
            for out in &at_l {
                assert!(out.max_abs_diff(&cond_only) <= 1e-6);
            }
        }
    }

    #[test]
    fn split_shares_the_passage_pass() {
        let (enc, vocab, schema, passage, cond) = setup(4);
        let base = build_input(&passage, &cond, &schema, None).unwrap();
        let tails: Vec<Vec<String>> = schema
            .relation_labels()
            .iter()
            .map(|r| crate::priming::relation_tail(&schema, r).unwrap())
            .collect();
        enc.reset_counters();
        let outs = enc
            .encode_split(&vocab, &base, &tails, SplitConfig::new(2), FeatureLayout::default(), &[])
            .unwrap();
        assert_eq!(outs.len(), 4);
        assert_eq!(enc.main_lower_passes(), 1);

        // permuting the relations permutes the outputs
        let mut reversed = tails.clone();
        reversed.reverse();
        let back = enc
            .encode_split(&vocab, &base, &reversed, SplitConfig::new(2), FeatureLayout::default(), &[])
            .unwrap();
        for (a, b) in outs.iter().zip(back.iter().rev()) {
            assert_eq!(a, b);
        }
        assert!(matches!(
            enc.encode_split(&vocab, &base, &tails, SplitConfig::new(5), FeatureLayout::default(), &[]),
            Err(Error::SplitOutOfRange { k: 5, layers: 4 })
        ));
    }
}
