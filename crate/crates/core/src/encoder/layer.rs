//! Pre-normalization transformer block with explicit backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::Scalar;

const LN_EPS: f64 = 1e-5;

pub(crate) fn uniform<T: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::lit(rng.gen_range(-bound..bound)))
}

pub(crate) fn xavier<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<T> {
    uniform(fan_in, fan_out, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// Inverted dropout mask, already scaled by `1 / (1 - p)`.
pub(crate) fn row_sum<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

pub(crate) fn dropout_mask<T: Scalar>(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Array2<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    Array2::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < p { T::zero() } else { keep })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Array2<T>,
    pub bias: Array2<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Array2::ones((1, dim)),
            bias: Array2::zeros((1, dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: Array2::zeros(self.gain.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    pub(crate) fn forward(&self, x: ArrayView2<T>) -> (Array2<T>, NormCache<T>) {
        let d = T::lit(x.ncols() as f64);
        let eps = T::lit(LN_EPS);
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = &x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gain + &self.bias;
        (y, NormCache { xhat, inv_std })
    }

    pub(crate) fn backward(&self, cache: &NormCache<T>, dy: ArrayView2<T>, grads: &mut Self) -> Array2<T> {
        grads.gain += &row_sum(&(&dy * &cache.xhat));
        grads.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * &self.gain;
        let d = T::lit(dy.ncols() as f64);
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let mut dx = dxhat;
        Zip::from(dx.rows_mut())
            .and(cache.xhat.rows())
            .and(&mean_dxhat)
            .and(&mean_dxhat_xhat)
            .and(&cache.inv_std)
            .for_each(|mut row, xh, &m1, &m2, &inv| {
                Zip::from(&mut row).and(&xh).for_each(|g, &xv| {
                    *g = inv * (*g - m1 - xv * m2);
                });
            });
        dx
    }

    pub fn tensors(&self) -> [&Array2<T>; 2] {
        [&self.gain, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<T>; 2] {
        [&mut self.gain, &mut self.bias]
    }
}

/// Self-attention followed by a ReLU feed-forward, each with a residual
/// connection around a pre-normalized input.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer<T> {
    pub norm1: LayerNorm<T>,
    pub wq: Array2<T>,
    pub bq: Array2<T>,
    pub wk: Array2<T>,
    pub bk: Array2<T>,
    pub wv: Array2<T>,
    pub bv: Array2<T>,
    pub wo: Array2<T>,
    pub bo: Array2<T>,
    pub norm2: LayerNorm<T>,
    pub w1: Array2<T>,
    pub b1: Array2<T>,
    pub w2: Array2<T>,
    pub b2: Array2<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache<T> {
    norm1: NormCache<T>,
    h1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    attn: Array2<T>,
    drop_attn: Option<Array2<T>>,
    norm2: NormCache<T>,
    h2: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
    drop_ff: Option<Array2<T>>,
}

/// Dropout configuration for one forward pass.
pub(crate) struct Dropout<'a, R> {
    pub p: f64,
    pub rng: &'a mut R,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn new(dim: usize, ff_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            wq: xavier(dim, dim, rng),
            bq: Array2::zeros((1, dim)),
            wk: xavier(dim, dim, rng),
            bk: Array2::zeros((1, dim)),
            wv: xavier(dim, dim, rng),
            bv: Array2::zeros((1, dim)),
            wo: xavier(dim, dim, rng),
            bo: Array2::zeros((1, dim)),
            norm2: LayerNorm::new(dim),
            w1: xavier(dim, ff_dim, rng),
            b1: Array2::zeros((1, ff_dim)),
            w2: xavier(ff_dim, dim, rng),
            b2: Array2::zeros((1, dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<T>| Array2::zeros(a.raw_dim());
        Self {
            norm1: self.norm1.zeros_like(),
            wq: z(&self.wq),
            bq: z(&self.bq),
            wk: z(&self.wk),
            bk: z(&self.bk),
            wv: z(&self.wv),
            bv: z(&self.bv),
            wo: z(&self.wo),
            bo: z(&self.bo),
            norm2: self.norm2.zeros_like(),
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
        }
    }

    /// One head per entry of `slopes`; head `h` subtracts `slopes[h] * |i - j|`
    /// from its attention logits.
    pub(crate) fn forward<R: Rng>(
        &self,
        x: ArrayView2<T>,
        slopes: &[f64],
        mut dropout: Option<&mut Dropout<'_, R>>,
    ) -> (Array2<T>, LayerCache<T>) {
        let heads = slopes.len();
        let (n, d) = x.dim();
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (h1, norm1) = self.norm1.forward(x);
        let q = h1.dot(&self.wq) + &self.bq;
        let k = h1.dot(&self.wk) + &self.bk;
        let v = h1.dot(&self.wv) + &self.bv;
        let mut concat = Array2::<T>::zeros((n, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t());
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v * scale - T::lit(slopes[h] * i.abs_diff(j) as f64);
                }
                let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut total = T::zero();
                row.mapv_inplace(|v| {
                    let e = (v - max).exp();
                    total += e;
                    e
                });
                row.mapv_inplace(|e| e / total);
            }
            concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let mut attn = concat.dot(&self.wo) + &self.bo;
        let drop_attn = dropout.as_deref_mut().map(|dr| {
            let m = dropout_mask(n, d, dr.p, dr.rng);
            attn *= &m;
            m
        });
        let x2 = &x + &attn;
        let (h2, norm2) = self.norm2.forward(x2.view());
        let pre_act = h2.dot(&self.w1) + &self.b1;
        let act = pre_act.mapv(|v| v.max(T::zero()));
        let mut ff = act.dot(&self.w2) + &self.b2;
        let drop_ff = dropout.as_deref_mut().map(|dr| {
            let m = dropout_mask(n, d, dr.p, dr.rng);
            ff *= &m;
            m
        });
        let y = x2 + ff;
        let cache = LayerCache {
            norm1,
            h1,
            q,
            k,
            v,
            probs,
            attn: concat,
            drop_attn,
            norm2,
            h2,
            pre_act,
            act,
            drop_ff,
        };
        (y, cache)
    }

    pub(crate) fn backward(&self, cache: &LayerCache<T>, dy: ArrayView2<T>, heads: usize, grads: &mut Self) -> Array2<T> {
        let (n, d) = dy.dim();
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());

        // feed-forward branch
        let dff = match &cache.drop_ff {
            Some(m) => &dy * m,
            None => dy.to_owned(),
        };
        grads.w2 += &cache.act.t().dot(&dff);
        grads.b2 += &row_sum(&dff);
        let mut dpre = dff.dot(&self.w2.t());
        Zip::from(&mut dpre).and(&cache.pre_act).for_each(|g, &u| {
            if u <= T::zero() {
                *g = T::zero();
            }
        });
        grads.w1 += &cache.h2.t().dot(&dpre);
        grads.b1 += &row_sum(&dpre);
        let dh2 = dpre.dot(&self.w1.t());
        let dx2 = &dy + &self.norm2.backward(&cache.norm2, dh2.view(), &mut grads.norm2);

        // attention branch
        let da = match &cache.drop_attn {
            Some(m) => &dx2 * m,
            None => dx2.clone(),
        };
        grads.wo += &cache.attn.t().dot(&da);
        grads.bo += &row_sum(&da);
        let dconcat = da.dot(&self.wo.t());
        let mut dq = Array2::<T>::zeros((n, d));
        let mut dk = Array2::<T>::zeros((n, d));
        let mut dv = Array2::<T>::zeros((n, d));
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dconcat.slice(cols);
            let dp = dout.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let mut ds = &dp * p;
            let inner = ds.sum_axis(Axis(1));
            Zip::from(ds.rows_mut())
                .and(p.rows())
                .and(&inner)
                .for_each(|mut row, prow, &c| {
                    Zip::from(&mut row).and(&prow).for_each(|g, &pv| *g = (*g - pv * c) * scale);
                });
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        grads.wq += &cache.h1.t().dot(&dq);
        grads.bq += &row_sum(&dq);
        grads.wk += &cache.h1.t().dot(&dk);
        grads.bk += &row_sum(&dk);
        grads.wv += &cache.h1.t().dot(&dv);
        grads.bv += &row_sum(&dv);
        let dh1 = dq.dot(&self.wq.t()) + dk.dot(&self.wk.t()) + dv.dot(&self.wv.t());
        dx2 + self.norm1.backward(&cache.norm1, dh1.view(), &mut grads.norm1)
    }

    pub fn tensors(&self) -> Vec<&Array2<T>> {
        let mut out: Vec<&Array2<T>> = self.norm1.tensors().into();
        out.extend([&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]);
        out.extend(self.norm2.tensors());
        out.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut out: Vec<&mut Array2<T>> = self.norm1.tensors_mut().into();
        out.extend([
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]);
        out.extend(self.norm2.tensors_mut());
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        out
    }
}
