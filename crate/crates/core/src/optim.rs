//! AdamW with decoupled weight decay and a warm-up + cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Weight decay touches matrices only; biases, norms, embeddings of rank
    /// below two and scalars are exempt.
    fn decays(t: &Tensor) -> bool {
        t.rank() >= 2
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let param = store.get(id);
            let g = &grads[i];
            if g.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    lhs: param.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let decay = if Self::decays(param) { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut next = param.to_vec();
            for (j, w) in next.iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *w -= lr * (update + decay * *w);
            }
            store.set(id, Tensor::new(param.shape().to_vec(), next)?)?;
        }
        Ok(())
    }
}

/// Linear warm-up to `base_lr`, then cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = Schedule {
            base_lr: 1.0,
            warmup_steps: 4,
            total_steps: 12,
        };
        assert_eq!(s.lr(0), 0.25);
        assert_eq!(s.lr(3), 1.0);
        assert_eq!(s.lr(4), 1.0);
        assert!((s.lr(8) - 0.5).abs() < 1e-12);
        assert!(s.lr(12).abs() < 1e-12);
        for k in 4..12 {
            assert!(s.lr(k + 1) <= s.lr(k));
        }
    }

    #[test]
    fn first_step_moves_by_lr_and_decay_skips_vectors() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full([1, 2], 1.0));
        let b = store.add("b", Tensor::full([2], 1.0));
        let mut opt = AdamW::new(&store, 0.1);
        let g = vec![Tensor::full([1, 2], 3.0), Tensor::full([2], -3.0)];
        opt.step(&mut store, &g, 0.01).unwrap();
        // Bias-corrected first step is sign(g) for Adam.
        let expect_w = 1.0 - 0.01 * (1.0 + 0.1);
        assert!((store.get(w).data()[0] - expect_w).abs() < 1e-9);
        assert!((store.get(b).data()[0] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(&[5.0, -3.0]));
        let mut opt = AdamW::new(&store, 0.0);
        for _ in 0..2000 {
            let g = store.get(x).map(|v| 2.0 * v);
            opt.step(&mut store, &[g], 0.05).unwrap();
        }
        assert!(store.get(x).data().iter().all(|v| v.abs() < 1e-2));
    }
}
