//! Conditional low-rank steering.
//!
//! A conditioning vector `c` yields a modulation vector `s = tanh(MLP(c))` and a
//! scalar gate `g = sigmoid(w_g·c + b_g)`. A steered linear map then computes
//!
//! ```text
//! y = W x + g · (alpha / r) · U ((V x) ⊙ s) [+ b]
//! ```
//!
//! in factored form, never materializing `U diag(s) V`. One `(s, g)` pair is
//! broadcast to every token of a layer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `MLP_s` plus gate parameters for one steered generator.
#[derive(Clone, Debug)]
pub struct SteeringHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub cond_dim: usize,
    pub rank: usize,
}

impl SteeringHead {
    /// Hidden width of the two-layer MLP.
    pub fn hidden_dim(cond_dim: usize) -> usize {
        (cond_dim / 2).max(1)
    }

    pub fn param_count(cond_dim: usize, rank: usize) -> usize {
        let h = Self::hidden_dim(cond_dim);
        h * cond_dim + h + rank * h + rank + cond_dim + 1
    }

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cond_dim: usize,
        rank: usize,
        rng: &mut R,
    ) -> Self {
        let h = Self::hidden_dim(cond_dim);
        let lim1 = 1.0 / (cond_dim as f64).sqrt();
        let lim2 = 1.0 / (h as f64).sqrt();
        Self {
            w1: store.add(format!("{prefix}.mlp.w1"), Tensor::uniform([h, cond_dim], -lim1, lim1, rng)),
            b1: store.add(format!("{prefix}.mlp.b1"), Tensor::zeros([h])),
            w2: store.add(format!("{prefix}.mlp.w2"), Tensor::uniform([rank, h], -lim2, lim2, rng)),
            b2: store.add(format!("{prefix}.mlp.b2"), Tensor::zeros([rank])),
            w_g: store.add(format!("{prefix}.gate.w"), Tensor::uniform([cond_dim], -lim1, lim1, rng)),
            b_g: store.add(format!("{prefix}.gate.b"), Tensor::zeros([])),
            cond_dim,
            rank,
        }
    }

    /// Modulation vector `(1, r)` with entries in (-1, 1).
    pub fn modulation<'t>(&self, p: &Bound<'t>, cond: Var<'t>) -> Result<Var<'t>> {
        let hidden = cond
            .matmul(p[self.w1].transpose()?)?
            .add(p[self.b1])?
            .silu()?;
        hidden.matmul(p[self.w2].transpose()?)?.add(p[self.b2])?.tanh()
    }

    /// Scalar gate in (0, 1).
    pub fn gate<'t>(&self, p: &Bound<'t>, cond: Var<'t>) -> Result<Var<'t>> {
        cond.mul(p[self.w_g])?.sum()?.add(p[self.b_g])?.sigmoid()
    }
}

/// How `(s, g)` are produced; the non-default variants exist for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalMode {
    /// `s` from the MLP, `g` from the gate.
    Gated,
    /// `s` from the MLP, `g` fixed at 1.
    Ungated,
    /// `s = 1`, `g = 1`: a static LoRA update.
    Static,
}

/// One modulation/gate pair, `s` of shape `(1, r)` and scalar `g`.
#[derive(Clone, Copy, Debug)]
pub struct Signal<'t> {
    pub s: Var<'t>,
    pub g: Var<'t>,
}

impl<'t> Signal<'t> {
    pub fn rank(&self) -> usize {
        *self.s.shape().last().unwrap()
    }

    /// Constant pair, used for reductions and forced gates.
    pub fn constant(tape: &'t Tape, s: &[f64], g: f64) -> Self {
        let s = Tensor::new(vec![1, s.len()], s.to_vec()).expect("non-empty modulation");
        Self {
            s: tape.constant(&s),
            g: tape.scalar(g),
        }
    }
}

/// Signals for the input-projection generator and the step-size generator of
/// one layer.
#[derive(Clone, Copy, Debug)]
pub struct SteeringSignals<'t> {
    pub input: Signal<'t>,
    pub delta: Signal<'t>,
}

impl<'t> SteeringSignals<'t> {
    /// Same pair with both gates forced to `g`.
    pub fn with_gates(self, g: f64) -> Self {
        let tape = self.input.g.tape();
        Self {
            input: Signal {
                s: self.input.s,
                g: tape.scalar(g),
            },
            delta: Signal {
                s: self.delta.s,
                g: tape.scalar(g),
            },
        }
    }
}

/// Per-layer pair of heads.
#[derive(Clone, Debug)]
pub struct LayerHeads {
    pub input: SteeringHead,
    pub delta: SteeringHead,
}

/// Derives both `(s, g)` pairs from a conditioning row `cond` of shape `(1, d)`.
pub fn derive_signals<'t>(
    p: &Bound<'t>,
    cond: Var<'t>,
    heads: &LayerHeads,
    mode: SignalMode,
) -> Result<SteeringSignals<'t>> {
    let tape = cond.tape();
    let one = |h: &SteeringHead| -> Result<Signal<'t>> {
        match mode {
            SignalMode::Gated => Ok(Signal {
                s: h.modulation(p, cond)?,
                g: h.gate(p, cond)?,
            }),
            SignalMode::Ungated => Ok(Signal {
                s: h.modulation(p, cond)?,
                g: tape.scalar(1.0),
            }),
            SignalMode::Static => Ok(Signal::constant(tape, &vec![1.0; h.rank], 1.0)),
        }
    };
    Ok(SteeringSignals {
        input: one(&heads.input)?,
        delta: one(&heads.delta)?,
    })
}

/// Low-rank factors `U (d_out, r)`, `V (r, d_in)` with scale `alpha / r`.
#[derive(Clone, Debug)]
pub struct LoraFactors {
    pub u: ParamId,
    pub v: ParamId,
    pub alpha: f64,
    pub rank: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl LoraFactors {
    /// `U` starts at zero so the steered map starts at its base map.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::RankMismatch(format!(
                "{prefix}: rank {rank} must lie in 1..={}",
                d_in.min(d_out)
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::Config(format!("{prefix}: alpha must be positive")));
        }
        Ok(Self {
            u: store.add(format!("{prefix}.lora_u"), Tensor::zeros([d_out, rank])),
            v: store.add(format!("{prefix}.lora_v"), Tensor::randn([rank, d_in], 0.02, rng)),
            alpha,
            rank,
            d_in,
            d_out,
        })
    }

    pub fn param_count(&self) -> usize {
        self.rank * (self.d_in + self.d_out)
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn bind<'t>(&self, p: &Bound<'t>, signal: Signal<'t>) -> LowRankCorrection<'t> {
        LowRankCorrection {
            u: p[self.u],
            v: p[self.v],
            scale: self.scale(),
            signal,
        }
    }
}

/// Factors and signal bound on a tape, ready to apply.
#[derive(Clone, Copy, Debug)]
pub struct LowRankCorrection<'t> {
    pub u: Var<'t>,
    pub v: Var<'t>,
    pub scale: f64,
    pub signal: Signal<'t>,
}

/// `y = x Wᵀ + g·scale·((x Vᵀ) ⊙ s) Uᵀ [+ b]` for token rows `x (L, d_in)`.
pub fn steered_projection<'t>(
    x: Var<'t>,
    w: Var<'t>,
    bias: Option<Var<'t>>,
    correction: Option<&LowRankCorrection<'t>>,
) -> Result<Var<'t>> {
    let mut y = x.matmul(w.transpose()?)?;
    if let Some(c) = correction {
        let r = c.v.shape()[0];
        if c.signal.rank() != r || c.u.shape()[1] != r {
            return Err(Error::RankMismatch(format!(
                "modulation length {} vs factor rank {r} (U {:?}, V {:?})",
                c.signal.rank(),
                c.u.shape(),
                c.v.shape()
            )));
        }
        let low = x.matmul(c.v.transpose()?)?.mul(c.signal.s)?;
        let update = low
            .matmul(c.u.transpose()?)?
            .mul(c.signal.g)?
            .scale(c.scale)?;
        y = y.add(update)?;
    }
    match bias {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corr<'t>(tape: &'t Tape, u: &Tensor, v: &Tensor, alpha: f64, s: &[f64], g: f64) -> LowRankCorrection<'t> {
        LowRankCorrection {
            u: tape.constant(u),
            v: tape.constant(v),
            scale: alpha / v.shape()[0] as f64,
            signal: Signal::constant(tape, s, g),
        }
    }

    #[test]
    fn hand_evaluated_instance() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::matrix(&[&[1.0, 0.0]]).unwrap());
        let w = tape.constant(&Tensor::eye(2));
        let u = Tensor::matrix(&[&[1.0], &[0.0]]).unwrap();
        let v = Tensor::matrix(&[&[1.0, 0.0]]).unwrap();
        let c = corr(&tape, &u, &v, 2.0, &[0.5], 1.0);
        let y = steered_projection(x, w, None, Some(&c)).unwrap().value();
        assert_eq!(y.data(), &[2.0, 0.0]);
    }

    #[test]
    fn zero_gate_is_the_base_map_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let x = tape.constant(&Tensor::randn([5, 6], 1.0, &mut rng));
        let w = tape.constant(&Tensor::randn([4, 6], 1.0, &mut rng));
        let b = tape.constant(&Tensor::randn([4], 1.0, &mut rng));
        let u = Tensor::randn([4, 3], 1.0, &mut rng);
        let v = Tensor::randn([3, 6], 1.0, &mut rng);
        let c = corr(&tape, &u, &v, 2.0, &[0.3, -0.2, 0.9], 0.0);
        let steered = steered_projection(x, w, Some(b), Some(&c)).unwrap().value();
        let base = steered_projection(x, w, Some(b), None).unwrap().value();
        assert_eq!(steered, base);
    }

    #[test]
    fn rank_mismatch_is_reported() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::ones([2, 4]));
        let w = tape.constant(&Tensor::ones([3, 4]));
        let c = corr(&tape, &Tensor::ones([3, 2]), &Tensor::ones([2, 4]), 1.0, &[1.0, 1.0, 1.0], 1.0);
        assert!(matches!(
            steered_projection(x, w, None, Some(&c)),
            Err(Error::RankMismatch(_))
        ));
    }

    #[test]
    fn zero_condition_with_zero_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let heads = LayerHeads {
            input: SteeringHead::new(&mut store, "x", 6, 3, &mut rng),
            delta: SteeringHead::new(&mut store, "dt", 6, 2, &mut rng),
        };
        // zero every head weight, then give the gate a bias
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape)).unwrap();
        }
        store.set(heads.input.b_g, Tensor::scalar(0.7)).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let cond = tape.constant(&Tensor::zeros([1, 6]));
        let sig = derive_signals(&p, cond, &heads, SignalMode::Gated).unwrap();
        assert!(sig.input.s.value().data().iter().all(|&v| v == 0.0));
        assert_eq!(sig.input.g.value().item(), crate::tape::sigmoid(0.7));
        assert_eq!(sig.delta.g.value().item(), 0.5);
        assert_eq!(sig.delta.s.shape(), vec![1, 2]);
    }

    #[test]
    fn lora_rank_must_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(LoraFactors::new(&mut store, "a", 4, 2, 3, 1.0, &mut rng).is_err());
        let f = LoraFactors::new(&mut store, "b", 4, 6, 2, 1.0, &mut rng).unwrap();
        assert_eq!(f.param_count(), 2 * (4 + 6));
    }
}
