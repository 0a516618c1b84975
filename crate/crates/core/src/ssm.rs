//! Selective state-space machinery.
//!
//! The state matrix is diagonal per channel: `A (D, N)` with strictly negative
//! entries `-exp(a_log)`. Zero-order hold gives, elementwise,
//!
//! ```text
//! A_bar = exp(Δ A)
//! B_bar = (Δ A)^-1 (exp(Δ A) - 1) · Δ B = expm1(Δ A) / A · B
//! ```
//!
//! and the scan runs `h_t = A_bar_t ⊙ h_{t-1} + B_bar_t x_t`, `y_t = <C_t, h_t>`
//! per channel from a zero state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::steering::{steered_projection, LowRankCorrection};
use crate::tape::{concat, CustomOp, Var};
use crate::tensor::Tensor;

/// Zero-order hold for one diagonal entry. `delta > 0`, `a < 0`.
pub fn zoh_discretize(delta: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::Contract(format!("step size must be positive, got {delta}")));
    }
    if !(a < 0.0) {
        return Err(Error::Contract(format!("state entry must be negative, got {a}")));
    }
    let da = delta * a;
    Ok((da.exp(), da.exp_m1() / a * b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsmConfig {
    pub state_dim: usize,
    pub inner_dim: usize,
    pub dt_rank: usize,
    pub conv_kernel: usize,
}

/// Per-token step sizes `delta (L, D)` and projections `b (L, N)`, `c (L, N)`.
#[derive(Clone, Copy, Debug)]
pub struct SelectiveParams<'t> {
    pub delta: Var<'t>,
    pub b: Var<'t>,
    pub c: Var<'t>,
}

/// Feature-level affine modulation of the generator output, `p ⊙ (1 + γ) + β`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureFilm<'t> {
    pub gamma: Var<'t>,
    pub beta: Var<'t>,
}

/// Optional modifications of one branch's parameter generators.
#[derive(Clone, Copy, Debug, Default)]
pub struct BranchHooks<'t> {
    pub x_proj: Option<LowRankCorrection<'t>>,
    pub dt_proj: Option<LowRankCorrection<'t>>,
    pub film: Option<FeatureFilm<'t>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BlockHooks<'t> {
    pub forward: BranchHooks<'t>,
    pub backward: BranchHooks<'t>,
}

/// Splits the generator output `p = [dt_raw, B, C]` and maps `dt_raw` to
/// positive step sizes `softplus(W_dt dt_raw + b_dt)`.
#[allow(clippy::too_many_arguments)]
pub fn generate_selective_params<'t>(
    x: Var<'t>,
    w_x: Var<'t>,
    w_dt: Var<'t>,
    b_dt: Var<'t>,
    dt_rank: usize,
    state_dim: usize,
    hooks: &BranchHooks<'t>,
) -> Result<SelectiveParams<'t>> {
    let width = w_x.shape()[0];
    if width != dt_rank + 2 * state_dim {
        return Err(Error::ShapeMismatch {
            op: "generate_selective_params",
            lhs: vec![width],
            rhs: vec![dt_rank, state_dim, state_dim],
        });
    }
    let mut p = steered_projection(x, w_x, None, hooks.x_proj.as_ref())?;
    if let Some(film) = hooks.film {
        p = p.mul(film.gamma.add(x.tape().scalar(1.0))?)?.add(film.beta)?;
    }
    let dt_raw = p.slice(1, 0, dt_rank)?;
    let b = p.slice(1, dt_rank, dt_rank + state_dim)?;
    let c = p.slice(1, dt_rank + state_dim, width)?;
    let pre = steered_projection(dt_raw, w_dt, Some(b_dt), hooks.dt_proj.as_ref())?;
    Ok(SelectiveParams {
        delta: pre.softplus()?,
        b,
        c,
    })
}

/// Forward recurrence on raw buffers. Returns `y (L, D)` and every hidden
/// state `h_t (L, D, N)`.
pub fn scan_forward(
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    len: usize,
    channels: usize,
    state: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; len * channels];
    let mut hs = vec![0.0; len * channels * state];
    let mut h = vec![0.0; channels * state];
    for t in 0..len {
        let bt = &b[t * state..(t + 1) * state];
        let ct = &c[t * state..(t + 1) * state];
        for d in 0..channels {
            let dt = delta[t * channels + d];
            let xt = x[t * channels + d];
            let mut acc = 0.0;
            for n in 0..state {
                let ad = a[d * state + n];
                let da = dt * ad;
                let hv = &mut h[d * state + n];
                *hv = da.exp() * *hv + da.exp_m1() / ad * bt[n] * xt;
                acc += ct[n] * *hv;
            }
            y[t * channels + d] = acc;
        }
        hs[t * channels * state..(t + 1) * channels * state].copy_from_slice(&h);
    }
    (y, hs)
}

struct ScanOp {
    len: usize,
    channels: usize,
    state: usize,
    hs: Vec<f64>,
}

impl CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (l, dd, nn) = (self.len, self.channels, self.state);
        let (x, delta, a, b, c) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
        );
        let gy = grad.data();
        let mut gx = vec![0.0; l * dd];
        let mut gdelta = vec![0.0; l * dd];
        let mut ga = vec![0.0; dd * nn];
        let mut gb = vec![0.0; l * nn];
        let mut gc = vec![0.0; l * nn];
        // adjoint of h_t carried backwards in time
        let mut gh = vec![0.0; dd * nn];
        for t in (0..l).rev() {
            let h_t = &self.hs[t * dd * nn..(t + 1) * dd * nn];
            for d in 0..dd {
                let g = gy[t * dd + d];
                let dt = delta[t * dd + d];
                let xt = x[t * dd + d];
                let mut gx_acc = 0.0;
                let mut gdelta_acc = 0.0;
                for n in 0..nn {
                    let i = d * nn + n;
                    gc[t * nn + n] += g * h_t[i];
                    let ghi = gh[i] + g * c[t * nn + n];
                    let ad = a[i];
                    let da = dt * ad;
                    let abar = da.exp();
                    let em1 = da.exp_m1();
                    let coef = em1 / ad;
                    let h_prev = if t > 0 { self.hs[(t - 1) * dd * nn + i] } else { 0.0 };
                    let u = b[t * nn + n] * xt;
                    gdelta_acc += ghi * (ad * abar * h_prev + abar * u);
                    ga[i] += ghi * (dt * abar * h_prev + u * (da * abar - em1) / (ad * ad));
                    gb[t * nn + n] += ghi * coef * xt;
                    gx_acc += ghi * coef * b[t * nn + n];
                    gh[i] = ghi * abar;
                }
                gx[t * dd + d] = gx_acc;
                gdelta[t * dd + d] = gdelta_acc;
            }
        }
        let wrap = |shape: &[usize], v: Vec<f64>| Some(Tensor::new(shape.to_vec(), v).unwrap());
        vec![
            wrap(inputs[0].shape(), gx),
            wrap(inputs[1].shape(), gdelta),
            wrap(inputs[2].shape(), ga),
            wrap(inputs[3].shape(), gb),
            wrap(inputs[4].shape(), gc),
        ]
    }
}

/// Differentiable selective scan of `x (L, D)` under `params` and `a (D, N)`.
pub fn selective_scan<'t>(x: Var<'t>, params: &SelectiveParams<'t>, a: Var<'t>) -> Result<Var<'t>> {
    let xs = x.shape();
    let (ds, bs, cs, as_) = (params.delta.shape(), params.b.shape(), params.c.shape(), a.shape());
    if xs.len() != 2 || as_.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "selective_scan",
            lhs: xs,
            rhs: as_,
        });
    }
    let (l, d, n) = (xs[0], xs[1], as_[1]);
    if ds != [l, d] || bs != [l, n] || cs != [l, n] || as_[0] != d {
        return Err(Error::ShapeMismatch {
            op: "selective_scan",
            lhs: xs,
            rhs: if ds != [l, d] { ds } else if bs != [l, n] { bs } else { cs },
        });
    }
    let (xv, dv, av, bv, cv) = (
        x.value(),
        params.delta.value(),
        a.value(),
        params.b.value(),
        params.c.value(),
    );
    let (y, hs) = scan_forward(xv.data(), dv.data(), av.data(), bv.data(), cv.data(), l, d, n);
    let out = Tensor::new(vec![l, d], y)?;
    x.tape().custom(
        &[x, params.delta, a, params.b, params.c],
        out,
        Box::new(ScanOp {
            len: l,
            channels: d,
            state: n,
            hs,
        }),
    )
}

/// Depthwise causal convolution along tokens: `w (D, K)`, `b (D)`.
pub fn causal_conv<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let wt = w.transpose()?;
    let padded = if k > 1 {
        concat(&[x.tape().constant(&Tensor::zeros([k - 1, d])), x], 0)?
    } else {
        x
    };
    let mut acc = b.broadcast_to(&[l, d])?;
    for j in 0..k {
        let tap = padded.slice(0, j, j + l)?.mul(wt.slice(0, j, j + 1)?)?;
        acc = acc.add(tap)?;
    }
    Ok(acc)
}

/// Parameters of one scan direction.
#[derive(Clone, Debug)]
pub struct BranchParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub x_proj: ParamId,
    pub dt_w: ParamId,
    pub dt_b: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
}

impl BranchParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &SsmConfig, rng: &mut R) -> Self {
        let (d, n, r, k) = (cfg.inner_dim, cfg.state_dim, cfg.dt_rank, cfg.conv_kernel);
        let conv_lim = 1.0 / (k as f64).sqrt();
        let x_lim = 1.0 / (d as f64).sqrt();
        let dt_lim = 1.0 / (r as f64).sqrt();
        // softplus(dt_b) log-uniform in [1e-3, 1e-1]
        let dt_b: Vec<f64> = (0..d)
            .map(|_| {
                let dt: f64 = rng.gen_range((1e-3f64).ln()..(1e-1f64).ln()).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let a_log: Vec<f64> = (0..d).flat_map(|_| (1..=n).map(|i| (i as f64).ln())).collect();
        Self {
            conv_w: store.add(format!("{prefix}.conv.w"), Tensor::uniform([d, k], -conv_lim, conv_lim, rng)),
            conv_b: store.add(format!("{prefix}.conv.b"), Tensor::zeros([d])),
            x_proj: store.add(format!("{prefix}.x_proj.w"), Tensor::uniform([r + 2 * n, d], -x_lim, x_lim, rng)),
            dt_w: store.add(format!("{prefix}.dt_proj.w"), Tensor::uniform([d, r], -dt_lim, dt_lim, rng)),
            dt_b: store.add(format!("{prefix}.dt_proj.b"), Tensor::new(vec![d], dt_b).unwrap()),
            a_log: store.add(format!("{prefix}.a_log"), Tensor::new(vec![d, n], a_log).unwrap()),
            d_skip: store.add(format!("{prefix}.d_skip"), Tensor::ones([d])),
        }
    }

    pub fn param_count(cfg: &SsmConfig) -> usize {
        let (d, n, r, k) = (cfg.inner_dim, cfg.state_dim, cfg.dt_rank, cfg.conv_kernel);
        d * k + d + (r + 2 * n) * d + d * r + d + d * n + d
    }

    /// Materialized `A = -exp(a_log)`.
    pub fn state_matrix<'t>(&self, p: &Bound<'t>) -> Result<Var<'t>> {
        p[self.a_log].exp()?.neg()
    }

    /// conv → SiLU → selective scan (+ skip) → gate by `silu(z)`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        cfg: &SsmConfig,
        x: Var<'t>,
        z: Var<'t>,
        hooks: &BranchHooks<'t>,
    ) -> Result<Var<'t>> {
        let xc = causal_conv(x, p[self.conv_w], p[self.conv_b])?.silu()?;
        let params = generate_selective_params(
            xc,
            p[self.x_proj],
            p[self.dt_w],
            p[self.dt_b],
            cfg.dt_rank,
            cfg.state_dim,
            hooks,
        )?;
        let a = self.state_matrix(p)?;
        let y = selective_scan(xc, &params, a)?.add(xc.mul(p[self.d_skip])?)?;
        y.mul(z.silu()?)
    }
}

/// Pre-norm bidirectional block: `out = x + W_out (y_fwd + flip(y_bwd))`.
#[derive(Clone, Debug)]
pub struct BidirectionalBlock {
    pub cfg: SsmConfig,
    pub model_dim: usize,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub in_proj: ParamId,
    pub out_proj: ParamId,
    pub forward: BranchParams,
    pub backward: BranchParams,
}

impl BidirectionalBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        model_dim: usize,
        cfg: SsmConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.inner_dim;
        let in_lim = 1.0 / (model_dim as f64).sqrt();
        let out_lim = 1.0 / (d as f64).sqrt();
        Self {
            norm_g: store.add(format!("{prefix}.norm.g"), Tensor::ones([model_dim])),
            norm_b: store.add(format!("{prefix}.norm.b"), Tensor::zeros([model_dim])),
            in_proj: store.add(format!("{prefix}.in_proj.w"), Tensor::uniform([2 * d, model_dim], -in_lim, in_lim, rng)),
            out_proj: store.add(format!("{prefix}.out_proj.w"), Tensor::uniform([model_dim, d], -out_lim, out_lim, rng)),
            forward: BranchParams::new(store, &format!("{prefix}.fwd"), &cfg, rng),
            backward: BranchParams::new(store, &format!("{prefix}.bwd"), &cfg, rng),
            cfg,
            model_dim,
        }
    }

    pub fn param_count(model_dim: usize, cfg: &SsmConfig) -> usize {
        2 * model_dim + 2 * cfg.inner_dim * model_dim + model_dim * cfg.inner_dim + 2 * BranchParams::param_count(cfg)
    }

    /// Normalized tokens split into the scan input `x` and gate input `z`.
    pub fn expand<'t>(&self, p: &Bound<'t>, tokens: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let d = self.cfg.inner_dim;
        let h = tokens.layer_norm(p[self.norm_g], p[self.norm_b], 1e-5)?;
        let xz = h.matmul(p[self.in_proj].transpose()?)?;
        Ok((xz.slice(1, 0, d)?, xz.slice(1, d, 2 * d)?))
    }

    /// Backward-direction branch: runs on flipped tokens, output flipped back.
    pub fn backward_branch<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        z: Var<'t>,
        hooks: &BranchHooks<'t>,
    ) -> Result<Var<'t>> {
        self.backward
            .forward(p, &self.cfg, x.flip(0)?, z.flip(0)?, hooks)?
            .flip(0)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, tokens: Var<'t>, hooks: &BlockHooks<'t>) -> Result<Var<'t>> {
        if tokens.shape().len() != 2 || tokens.shape()[1] != self.model_dim {
            return Err(Error::ShapeMismatch {
                op: "bidirectional_block",
                lhs: tokens.shape(),
                rhs: vec![self.model_dim],
            });
        }
        let (x, z) = self.expand(p, tokens)?;
        let yf = self.forward.forward(p, &self.cfg, x, z, &hooks.forward)?;
        let yb = self.backward_branch(p, x, z, &hooks.backward)?;
        let merged = yf.add(yb)?;
        tokens.add(merged.matmul(p[self.out_proj].transpose()?)?)
    }
}
