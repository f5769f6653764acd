//! Proximal steps `argmin_z ⟨s, z⟩ + r(z)` by alternating exact block
//! minimization. With `y` fixed the minimizing `x` is a softmax; with `x`
//! fixed each `y_v` minimizes a one-dimensional quadratic over `[−1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::problem::{PrimalDualPoint, Problem};
use crate::regularizer::{GradientPair, RegularizerConfig};
use crate::solver::theta_bound;

/// Accumulated dual vector `s = (s_x, s_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
}

impl DualState {
    pub fn zeros(p: &Problem) -> Self {
        Self {
            sx: vec![0.0; p.m()],
            sy: vec![0.0; 2 * p.n()],
        }
    }

    /// `self + alpha · g`.
    pub fn plus(&self, alpha: f64, g: &GradientPair) -> Self {
        let mut out = self.clone();
        out.add_scaled(alpha, g);
        out
    }

    pub fn add_scaled(&mut self, alpha: f64, g: &GradientPair) {
        for (s, v) in self.sx.iter_mut().zip(&g.gx) {
            *s += alpha * v;
        }
        for (s, v) in self.sy.iter_mut().zip(&g.gy) {
            *s += alpha * v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sx.iter().chain(&self.sy).all(|v| v.is_finite())
    }
}

impl From<GradientPair> for DualState {
    fn from(g: GradientPair) -> Self {
        Self { sx: g.gx, sy: g.gy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltMinConfig {
    /// Cap on full (x, y) alternations.
    pub max_inner: usize,
    /// Stop once `‖x_k − x_{k−1}‖₁ + ‖y_k − y_{k−1}‖₁` falls below this.
    pub movement_tol: f64,
    /// Lower bound applied to `(A x)_v` in the y-step denominator.
    pub denom_floor: f64,
}

impl Default for AltMinConfig {
    fn default() -> Self {
        Self {
            max_inner: usize::MAX,
            movement_tol: 1e-9,
            denom_floor: 1e-30,
        }
    }
}

impl AltMinConfig {
    /// Eight alternations at most; a handful usually suffices in practice.
    pub fn practical() -> Self {
        Self {
            max_inner: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inner == 0 {
            return Err(OtError::InvalidConfig("max_inner must be at least 1".into()));
        }
        if !(self.movement_tol >= 0.0) {
            return Err(OtError::InvalidConfig("movement_tol must be nonnegative".into()));
        }
        if !(self.denom_floor > 0.0) {
            return Err(OtError::InvalidConfig("denom_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Alternations needed to reach `ε/2` prox accuracy:
/// `⌈24 ln((88 d_max / ε² + 2/ε) Θ)⌉`, at least 1.
pub fn inner_iteration_budget(d_max: f64, n: usize, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(OtError::InvalidConfig(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let theta = theta_bound(d_max, n);
    let arg = (88.0 * d_max / (epsilon * epsilon) + 2.0 / epsilon) * theta;
    let k = (24.0 * arg.ln()).ceil();
    Ok(if k.is_finite() && k >= 1.0 { k as usize } else { 1 })
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(OtError::NonFinite(format!("{what}[{k}] = {}", v[k]))),
        None => Ok(()),
    }
}

/// Exact minimizer over the simplex of `⟨s_x, x⟩ + r(x, y)` for fixed `y`:
/// the softmax of `−(s_x / (scale·w) + A^T(y²) / w)`. One matvec.
pub fn x_step(p: &Problem, cfg: &RegularizerConfig, sx: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_finite("s_x", sx)?;
    check_finite("y", y)?;
    if !(cfg.scale > 0.0) {
        return Err(OtError::InvalidConfig("x-step requires a positive regularizer scale".into()));
    }
    let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
    let mut logits = p.apply_adjoint(&y2)?;
    if sx.len() != logits.len() {
        return Err(OtError::DimensionMismatch {
            what: "s_x",
            expected: logits.len(),
            got: sx.len(),
        });
    }
    let inv_sw = 1.0 / (cfg.scale * cfg.entropy_weight);
    let inv_w = 1.0 / cfg.entropy_weight;
    let mut peak = f64::NEG_INFINITY;
    for (l, &s) in logits.iter_mut().zip(sx) {
        *l = -(s * inv_sw + *l * inv_w);
        peak = peak.max(*l);
    }
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - peak).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
    Ok(logits)
}

/// Exact minimizer over the box of `⟨s_y, y⟩ + r(x, y)` for fixed `x`:
/// `y_v = clip(−s_y,v / (2·scale·(A x)_v), −1, 1)`. One matvec.
pub fn y_step(
    p: &Problem,
    cfg: &RegularizerConfig,
    sy: &[f64],
    x: &[f64],
    denom_floor: f64,
) -> Result<Vec<f64>> {
    check_finite("s_y", sy)?;
    let ax = p.apply_incidence(x)?;
    if sy.len() != ax.len() {
        return Err(OtError::DimensionMismatch {
            what: "s_y",
            expected: ax.len(),
            got: sy.len(),
        });
    }
    Ok(sy
        .iter()
        .zip(&ax)
        .map(|(&s, &a)| {
            let denom = 2.0 * cfg.scale * a.max(denom_floor);
            (-s / denom).clamp(-1.0, 1.0)
        })
        .collect())
}

/// One x-step followed by one y-step.
pub fn alternation(
    p: &Problem,
    cfg: &RegularizerConfig,
    denom_floor: f64,
    s: &DualState,
    z: &PrimalDualPoint,
) -> Result<PrimalDualPoint> {
    let x = x_step(p, cfg, &s.sx, &z.y)?;
    let y = y_step(p, cfg, &s.sy, &x, denom_floor)?;
    Ok(PrimalDualPoint { x, y })
}

#[derive(Debug, Clone)]
pub struct ProxSolve {
    pub z: PrimalDualPoint,
    pub alternations: usize,
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum()
}

/// Approximate `argmin_z ⟨s, z⟩ + r(z)` warm-started at `z_init`.
///
/// Runs at most `amcfg.max_inner` alternations; callers fold the
/// accuracy-driven budget into `max_inner`.
pub fn approx_prox(
    p: &Problem,
    cfg: &RegularizerConfig,
    amcfg: &AltMinConfig,
    s: &DualState,
    z_init: &PrimalDualPoint,
) -> Result<ProxSolve> {
    amcfg.validate()?;
    let mut z = z_init.clone();
    let mut k = 0;
    while k < amcfg.max_inner {
        let next = alternation(p, cfg, amcfg.denom_floor, s, &z)?;
        k += 1;
        let moved = l1_distance(&next.x, &z.x) + l1_distance(&next.y, &z.y);
        z = next;
        if moved < amcfg.movement_tol {
            break;
        }
    }
    Ok(ProxSolve { z, alternations: k })
}
