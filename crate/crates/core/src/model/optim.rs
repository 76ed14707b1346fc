//! Adaptive-moment optimizer with decoupled weight decay and the
//! warm-up-then-linear-decay schedule.

use ndarray::{Array2, Zip};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupSettings {
    pub lr: f64,
    pub weight_decay: f64,
}

/// AdamW: bias-corrected first and second moments; weight decay is applied
/// directly to the parameters, scaled by the scheduled learning rate.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    encoder: GroupSettings,
    head: GroupSettings,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(encoder: GroupSettings, head: GroupSettings) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            encoder,
            head,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must list tensors in the same order
    /// on every call; `scale` multiplies both group learning rates.
    pub fn step(&mut self, params: Vec<(Group, &mut Array2<T>)>, grads: &[&Array2<T>], scale: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (T::lit(self.beta1), T::lit(self.beta2), T::lit(self.eps));
        for (i, ((group, p), g)) in params.into_iter().zip(grads).enumerate() {
            let s = match group {
                Group::Encoder => self.encoder,
                Group::Head => self.head,
            };
            let lr = T::lit(s.lr * scale);
            let decay = T::lit(1.0 - s.lr * scale * s.weight_decay);
            let (c1, c2) = (T::lit(c1), T::lit(c2));
            Zip::from(p)
                .and(*g)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                    *p = *p * decay - lr * update;
                });
        }
    }
}

/// Linear warm-up over `warmup` steps to a factor of 1, then linear decay
/// towards 0 at `total`. `step` counts from 0.
pub fn schedule_factor(step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        (step + 1) as f64 / warmup as f64
    } else if total <= warmup {
        1.0
    } else {
        ((total - step.min(total)) as f64 / (total - warmup) as f64).max(0.0)
    }
}
