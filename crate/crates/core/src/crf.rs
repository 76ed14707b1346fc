//! Linear-chain CRF over BIO tags with synthetic START/END states.
//!
//! Transition matrix layout is `(K + 2) x (K + 2)` for `K` tags; row/column
//! `K` is START and `K + 1` is END. Disallowed BIO transitions score
//! [`MASKED_SCORE`] regardless of the stored parameter.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::bio::{TagSequence, TagSet};
use crate::{Error, Result, Scalar};

/// Stand-in for negative infinity on masked transitions.
pub const MASKED_SCORE: f64 = -1e4;

#[derive(Clone, Debug)]
pub struct CrfLayer<T> {
    pub emission_w: Array2<T>,
    pub emission_b: Array2<T>,
    pub transitions: Array2<T>,
    allowed: Array2<bool>,
    tagset: Arc<TagSet>,
    masking: bool,
}

/// Gradients of the NLL.
#[derive(Clone, Debug)]
pub struct CrfGrads<T> {
    pub emissions: Array2<T>,
    pub transitions: Array2<T>,
}

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<T>().ln()
}

impl<T: Scalar> CrfLayer<T> {
    pub fn new(in_dim: usize, tagset: Arc<TagSet>, masking: bool, rng: &mut impl Rng) -> Self {
        let k = tagset.len();
        let bound = (1.0 / in_dim as f64).sqrt();
        let emission_w = Array2::from_shape_fn((in_dim, k), |_| T::lit(rng.gen_range(-bound..bound)));
        let mut layer = Self {
            emission_w,
            emission_b: Array2::zeros((1, k)),
            transitions: Array2::zeros((k + 2, k + 2)),
            allowed: Array2::from_elem((k + 2, k + 2), false),
            tagset,
            masking,
        };
        layer.rebuild_mask();
        layer
    }

    fn rebuild_mask(&mut self) {
        let k = self.num_tags();
        let (start, end) = (k, k + 1);
        for to in 0..k {
            self.allowed[[start, to]] = !self.masking || self.tagset.transition_allowed(None, to);
            for from in 0..k {
                self.allowed[[from, to]] =
                    !self.masking || self.tagset.transition_allowed(Some(from), to);
            }
        }
        for from in 0..k {
            self.allowed[[from, end]] = true;
        }
    }

    pub fn tagset(&self) -> &Arc<TagSet> {
        &self.tagset
    }

    pub fn num_tags(&self) -> usize {
        self.tagset.len()
    }

    pub fn masking(&self) -> bool {
        self.masking
    }

    pub fn set_masking(&mut self, masking: bool) {
        self.masking = masking;
        self.rebuild_mask();
    }

    /// Whether `from -> to` is a permitted transition (indices include START/END).
    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[[from, to]]
    }

    pub fn start(&self) -> usize {
        self.num_tags()
    }

    pub fn end(&self) -> usize {
        self.num_tags() + 1
    }

    /// Effective transition score.
    #[inline]
    pub fn score(&self, from: usize, to: usize) -> T {
        if self.allowed[[from, to]] {
            self.transitions[[from, to]]
        } else {
            T::lit(MASKED_SCORE)
        }
    }

    /// Linear projection of per-token hidden vectors to tag scores.
    pub fn emissions(&self, hidden: ArrayView2<T>) -> Array2<T> {
        hidden.dot(&self.emission_w) + &self.emission_b
    }

    fn check(&self, emissions: &ArrayView2<T>) -> Result<usize> {
        let n = emissions.nrows();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        assert_eq!(emissions.ncols(), self.num_tags(), "emission width must equal tag count");
        Ok(n)
    }

    /// Score of one tag path, START and END transitions included.
    pub fn path_score(&self, emissions: ArrayView2<T>, tags: &[usize]) -> T {
        let mut prev = self.start();
        let mut total = T::zero();
        for (i, &t) in tags.iter().enumerate() {
            total += self.score(prev, t) + emissions[[i, t]];
            prev = t;
        }
        total + self.score(prev, self.end())
    }

    fn alphas(&self, e: &ArrayView2<T>) -> Array2<T> {
        let (n, k) = e.dim();
        let mut alpha = Array2::zeros((n, k));
        for j in 0..k {
            alpha[[0, j]] = self.score(self.start(), j) + e[[0, j]];
        }
        for i in 1..n {
            for j in 0..k {
                let prev = alpha.row(i - 1);
                alpha[[i, j]] =
                    log_sum_exp((0..k).map(|q| prev[q] + self.score(q, j))) + e[[i, j]];
            }
        }
        alpha
    }

    fn betas(&self, e: &ArrayView2<T>) -> Array2<T> {
        let (n, k) = e.dim();
        let mut beta = Array2::zeros((n, k));
        for j in 0..k {
            beta[[n - 1, j]] = self.score(j, self.end());
        }
        for i in (0..n - 1).rev() {
            for q in 0..k {
                let next = beta.row(i + 1);
                beta[[i, q]] =
                    log_sum_exp((0..k).map(|j| self.score(q, j) + e[[i + 1, j]] + next[j]));
            }
        }
        beta
    }

    /// Log of the summed exponentiated scores of all tag paths (forward algorithm).
    pub fn log_partition(&self, emissions: ArrayView2<T>) -> Result<T> {
        let n = self.check(&emissions)?;
        let alpha = self.alphas(&emissions);
        let last = alpha.row(n - 1);
        Ok(log_sum_exp(
            (0..self.num_tags()).map(|j| last[j] + self.score(j, self.end())),
        ))
    }

    /// Highest-scoring path. Ties go to the lower tag id at the latest
    /// position where tied paths differ.
    pub fn viterbi(&self, emissions: ArrayView2<T>) -> Result<(TagSequence, T)> {
        let n = self.check(&emissions)?;
        let k = self.num_tags();
        let mut delta = Array2::<T>::zeros((n, k));
        let mut back = Array2::<usize>::zeros((n, k));
        for j in 0..k {
            delta[[0, j]] = self.score(self.start(), j) + emissions[[0, j]];
        }
        for i in 1..n {
            for j in 0..k {
                let mut best = T::neg_infinity();
                let mut arg = 0;
                for q in 0..k {
                    let s = delta[[i - 1, q]] + self.score(q, j);
                    if s > best {
                        best = s;
                        arg = q;
                    }
                }
                delta[[i, j]] = best + emissions[[i, j]];
                back[[i, j]] = arg;
            }
        }
        let mut best = T::neg_infinity();
        let mut last = 0;
        for j in 0..k {
            let s = delta[[n - 1, j]] + self.score(j, self.end());
            if s > best {
                best = s;
                last = j;
            }
        }
        let mut tags = vec![0; n];
        tags[n - 1] = last;
        for i in (1..n).rev() {
            tags[i - 1] = back[[i, tags[i]]];
        }
        Ok((TagSequence::new(tags, Arc::clone(&self.tagset)), best))
    }

    fn check_gold(&self, gold: &[usize], n: usize) -> Result<()> {
        assert_eq!(gold.len(), n, "gold length must equal emission rows");
        let mut prev = self.start();
        for (position, &t) in gold.iter().enumerate() {
            if !self.allowed(prev, t) {
                return Err(Error::InvalidGoldPath { position });
            }
            prev = t;
        }
        Ok(())
    }

    /// `log Z - score(gold)`, i.e. `-log p(gold)`; never negative.
    pub fn nll_loss(&self, emissions: ArrayView2<T>, gold: &[usize]) -> Result<T> {
        let n = self.check(&emissions)?;
        self.check_gold(gold, n)?;
        let z = self.log_partition(emissions.view())?;
        Ok((z - self.path_score(emissions, gold)).max(T::zero()))
    }

    /// NLL together with its gradients via forward-backward marginals.
    pub fn nll_with_grad(&self, emissions: ArrayView2<T>, gold: &[usize]) -> Result<(T, CrfGrads<T>)> {
        let n = self.check(&emissions)?;
        self.check_gold(gold, n)?;
        let k = self.num_tags();
        let alpha = self.alphas(&emissions);
        let beta = self.betas(&emissions);
        let z = log_sum_exp((0..k).map(|j| alpha[[n - 1, j]] + self.score(j, self.end())));

        let mut d_emis = Array2::<T>::zeros((n, k));
        let mut d_trans = Array2::<T>::zeros((k + 2, k + 2));
        for i in 0..n {
            for j in 0..k {
                d_emis[[i, j]] = (alpha[[i, j]] + beta[[i, j]] - z).exp();
            }
        }
        for j in 0..k {
            if self.allowed(self.start(), j) {
                d_trans[[self.start(), j]] += d_emis[[0, j]];
            }
            d_trans[[j, self.end()]] += d_emis[[n - 1, j]];
        }
        for i in 1..n {
            for q in 0..k {
                for j in 0..k {
                    if self.allowed(q, j) {
                        d_trans[[q, j]] += (alpha[[i - 1, q]]
                            + self.score(q, j)
                            + emissions[[i, j]]
                            + beta[[i, j]]
                            - z)
                            .exp();
                    }
                }
            }
        }
        let mut prev = self.start();
        for (i, &t) in gold.iter().enumerate() {
            d_emis[[i, t]] -= T::one();
            d_trans[[prev, t]] -= T::one();
            prev = t;
        }
        d_trans[[prev, self.end()]] -= T::one();

        let loss = (z - self.path_score(emissions, gold)).max(T::zero());
        Ok((
            loss,
            CrfGrads {
                emissions: d_emis,
                transitions: d_trans,
            },
        ))
    }

    /// Backward through [`Self::emissions`]: returns `d hidden` and
    /// accumulates the projection gradients.
    pub fn emissions_backward(
        &self,
        hidden: ArrayView2<T>,
        d_emissions: ArrayView2<T>,
        d_w: &mut Array2<T>,
        d_b: &mut Array2<T>,
    ) -> Array2<T> {
        *d_w += &hidden.t().dot(&d_emissions);
        *d_b += &d_emissions.sum_axis(Axis(0)).insert_axis(Axis(0));
        d_emissions.dot(&self.emission_w.t())
    }
}
