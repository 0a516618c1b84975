//! Classification and audio-visual contrastive losses.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Bounds on the learned temperature.
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 1e3;
const NORM_EPS: f64 = 1e-12;

/// Linear maps into the shared embedding space and the log-temperature.
#[derive(Clone, Debug)]
pub struct ProjectionHeads {
    /// `(D, d_a)`
    pub f_a: ParamId,
    /// `(D, d_v)`
    pub f_v: ParamId,
    /// `tau = exp(rho)`
    pub rho: ParamId,
}

impl ProjectionHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        audio_dim: usize,
        video_dim: usize,
        shared_dim: usize,
        tau_init: f64,
        rng: &mut R,
    ) -> Self {
        let la = 1.0 / (audio_dim as f64).sqrt();
        let lv = 1.0 / (video_dim as f64).sqrt();
        Self {
            f_a: store.add("proj.audio.w", Tensor::uniform([shared_dim, audio_dim], -la, la, rng)),
            f_v: store.add("proj.video.w", Tensor::uniform([shared_dim, video_dim], -lv, lv, rng)),
            rho: store.add("proj.rho", Tensor::scalar(tau_init.ln())),
        }
    }

    pub fn param_count(audio_dim: usize, video_dim: usize, shared_dim: usize) -> usize {
        shared_dim * (audio_dim + video_dim) + 1
    }

    /// Clamps `rho` so that `tau` stays inside `[TAU_MIN, TAU_MAX]`.
    pub fn clamp_temperature(&self, store: &mut ParamStore) {
        let rho = store.get(self.rho).item();
        let clamped = rho.clamp(TAU_MIN.ln(), TAU_MAX.ln());
        if clamped != rho {
            store.set(self.rho, Tensor::scalar(clamped)).expect("scalar shape");
        }
    }

    pub fn tau(&self, store: &ParamStore) -> f64 {
        store.get(self.rho).item().exp()
    }
}

/// Mean of `softplus(q) - y q`, the overflow-safe form of binary cross-entropy.
pub fn bce_with_logits<'t>(q: Var<'t>, labels: &[f64]) -> Result<Var<'t>> {
    let shape = q.shape();
    if q.value().numel() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_with_logits",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
    }
    let y = q.tape().constant(&Tensor::new(shape, labels.to_vec())?);
    q.softplus()?.sub(y.mul(q)?)?.mean()
}

/// Row-wise `x - logsumexp(x)` with a detached max shift.
fn log_softmax_rows<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let value = x.value();
    let (rows, cols) = (value.shape()[0], value.shape()[1]);
    let maxes: Vec<f64> = (0..rows)
        .map(|i| value.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = x.tape().constant(&Tensor::new(vec![rows, 1], maxes)?);
    let shifted = x.sub(m)?;
    let lse = shifted.exp()?.sum_axis(1)?.log()?;
    debug_assert_eq!(shifted.shape(), vec![rows, cols]);
    shifted.sub(column(lse, rows)?)
}

/// `(B,)` → `(B, 1)` via a constant matmul, keeping the op set small.
fn column<'t>(v: Var<'t>, rows: usize) -> Result<Var<'t>> {
    match v.shape().as_slice() {
        [r, 1] if *r == rows => Ok(v),
        [r] if *r == rows => {
            let tape = v.tape();
            // diag(v) · 1 gives a column.
            let eye = tape.constant(&Tensor::eye(rows));
            let ones = tape.constant(&Tensor::ones([rows, 1]));
            eye.mul(v)?.matmul(ones)
        }
        other => Err(Error::InvalidShape {
            shape: other.to_vec(),
            reason: "expected a vector of row statistics".into(),
        }),
    }
}

/// Mean negative log-probability of the diagonal under row-wise softmax.
fn diagonal_nll<'t>(logits: Var<'t>) -> Result<Var<'t>> {
    let b = logits.shape()[0];
    let mask = logits.tape().constant(&Tensor::eye(b));
    log_softmax_rows(logits)?.mul(mask)?.sum()?.scale(-1.0 / b as f64)
}

/// Symmetric in-batch InfoNCE between clip embeddings `z_a (B, d_a)` and
/// `z_v (B, d_v)`; row `i` of each is a positive pair.
pub fn av_infonce<'t>(
    p: &Bound<'t>,
    heads: &ProjectionHeads,
    z_a: Var<'t>,
    z_v: Var<'t>,
) -> Result<Var<'t>> {
    let e_a = z_a.matmul(p[heads.f_a].transpose()?)?.l2_normalize(NORM_EPS)?;
    let e_v = z_v.matmul(p[heads.f_v].transpose()?)?.l2_normalize(NORM_EPS)?;
    let inv_tau = p[heads.rho].neg()?.exp()?;
    infonce_from_embeddings(e_a, e_v, inv_tau)
}

/// Symmetric InfoNCE on already normalized embeddings.
pub fn infonce_from_embeddings<'t>(e_a: Var<'t>, e_v: Var<'t>, inv_tau: Var<'t>) -> Result<Var<'t>> {
    if e_a.shape()[0] != e_v.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "av_infonce",
            lhs: e_a.shape(),
            rhs: e_v.shape(),
        });
    }
    let a2v = e_a.matmul(e_v.transpose()?)?.mul(inv_tau)?;
    let v2a = e_v.matmul(e_a.transpose()?)?.mul(inv_tau)?;
    diagonal_nll(a2v)?.add(diagonal_nll(v2a)?)?.scale(0.5)
}

/// `l_cls + lambda * l_av`.
pub fn total_loss<'t>(l_cls: Var<'t>, l_av: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be non-negative, got {lambda}")));
    }
    l_cls.add(l_av.scale(lambda)?)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub l_cls: f64,
    pub l_av: f64,
    pub l_total: f64,
    pub tau: f64,
}
