//! The saddle-point operator and the non-separable box-simplex regularizer
//!
//! ```text
//! r(x, y) = scale · (w · Σ_e x_e log x_e + ⟨x, A^T (y ⊙ y)⟩)
//! ```
//!
//! with entropy weight `w` (10 in the provable setting) and `scale = 2 d_max`.

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::problem::{dot, PrimalDualPoint, Problem};
use crate::prox::DualState;

pub const DEFAULT_ENTROPY_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub entropy_weight: f64,
    pub scale: f64,
}

impl RegularizerConfig {
    /// Regularizer for `p` with `scale = 2 d_max`.
    pub fn for_problem(p: &Problem, entropy_weight: f64) -> Result<Self> {
        let cfg = Self {
            entropy_weight,
            scale: 2.0 * p.d_max(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.entropy_weight > 0.0 && self.entropy_weight.is_finite()) {
            return Err(OtError::InvalidConfig(format!(
                "entropy_weight must be positive, got {}",
                self.entropy_weight
            )));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(OtError::InvalidConfig(format!(
                "regularizer scale must be nonnegative, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// `g(z) = (gx, gy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientPair {
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            gx: self.gx.iter().map(|v| alpha * v).collect(),
            gy: self.gy.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn inner(&self, z: &PrimalDualPoint) -> f64 {
        dot(&self.gx, &z.x) + dot(&self.gy, &z.y)
    }
}

/// `g(x, y) = (d + 2 d_max A^T y, 2 d_max (b − A x))`. Two matvecs.
pub fn gradient_operator(p: &Problem, z: &PrimalDualPoint) -> Result<GradientPair> {
    let scale = 2.0 * p.d_max();
    let mut gx = p.apply_adjoint(&z.y)?;
    for (g, d) in gx.iter_mut().zip(p.cost()) {
        *g = d + scale * *g;
    }
    let mut gy = p.apply_incidence(&z.x)?;
    for (g, b) in gy.iter_mut().zip(p.b()) {
        *g = scale * (b - *g);
    }
    Ok(GradientPair { gx, gy })
}

pub(crate) fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

fn squared(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v * v).collect()
}

/// One matvec for `A^T (y²)`.
pub fn regularizer_value(p: &Problem, cfg: &RegularizerConfig, z: &PrimalDualPoint) -> Result<f64> {
    let at_y2 = p.apply_adjoint(&squared(&z.y))?;
    let entropy: f64 = z.x.iter().map(|&v| xlogx(v)).sum();
    Ok(cfg.scale * (cfg.entropy_weight * entropy + dot(&z.x, &at_y2)))
}

/// Gradient of the regularizer, used by the local (mirror-prox) steps:
/// `∇_x r = scale (w (log x + 1) + A^T y²)`, `∇_y r = 2 scale · y ⊙ A x`.
///
/// `log` is floored at the smallest positive normal so underflowed
/// coordinates stay finite. Two matvecs.
pub fn regularizer_gradient(
    p: &Problem,
    cfg: &RegularizerConfig,
    z: &PrimalDualPoint,
) -> Result<GradientPair> {
    let mut gx = p.apply_adjoint(&squared(&z.y))?;
    for (g, &x) in gx.iter_mut().zip(&z.x) {
        let lx = x.max(f64::MIN_POSITIVE).ln();
        *g = cfg.scale * (cfg.entropy_weight * (lx + 1.0) + *g);
    }
    let mut gy = p.apply_incidence(&z.x)?;
    for (g, &y) in gy.iter_mut().zip(&z.y) {
        *g *= 2.0 * cfg.scale * y;
    }
    Ok(GradientPair { gx, gy })
}

/// Proximal objective `⟨s_x, x⟩ + ⟨s_y, y⟩ + r(x, y)`.
pub fn prox_objective(
    p: &Problem,
    cfg: &RegularizerConfig,
    s: &DualState,
    z: &PrimalDualPoint,
) -> Result<f64> {
    Ok(dot(&s.sx, &z.x) + dot(&s.sy, &z.y) + regularizer_value(p, cfg, z)?)
}

fn average3(a: &PrimalDualPoint, b: &PrimalDualPoint, c: &PrimalDualPoint) -> PrimalDualPoint {
    let mean = |u: &[f64], v: &[f64], w: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(v)
            .zip(w)
            .map(|((a, b), c)| (a + b + c) / 3.0)
            .collect()
    };
    PrimalDualPoint {
        x: mean(&a.x, &b.x, &c.x),
        y: mean(&a.y, &b.y, &c.y),
    }
}

/// `κ (r(a) + r(b) + r(c) − 3 r((a+b+c)/3)) − ⟨g(b) − g(a), b − c⟩`.
///
/// Nonnegative for every triple exactly when `r` is κ-area-convex with
/// respect to `g`; the provable setting (`w = 10`) satisfies this with κ = 3.
pub fn area_convexity_residual(
    p: &Problem,
    cfg: &RegularizerConfig,
    kappa: f64,
    a: &PrimalDualPoint,
    b: &PrimalDualPoint,
    c: &PrimalDualPoint,
) -> Result<f64> {
    for z in [a, b, c] {
        z.validate(p)?;
    }
    let mid = average3(a, b, c);
    let spread = regularizer_value(p, cfg, a)? + regularizer_value(p, cfg, b)?
        + regularizer_value(p, cfg, c)?
        - 3.0 * regularizer_value(p, cfg, &mid)?;
    let ga = gradient_operator(p, a)?;
    let gb = gradient_operator(p, b)?;
    let area: f64 = gb
        .gx
        .iter()
        .zip(&ga.gx)
        .zip(b.x.iter().zip(&c.x))
        .map(|((gb, ga), (bx, cx))| (gb - ga) * (bx - cx))
        .sum::<f64>()
        + gb
            .gy
            .iter()
            .zip(&ga.gy)
            .zip(b.y.iter().zip(&c.y))
            .map(|((gb, ga), (by, cy))| (gb - ga) * (by - cy))
            .sum::<f64>();
    Ok(kappa * spread - area)
}

/// Quadratic form of the block matrix `[[∇²r, −J], [J, ∇²r]]` (with `r` and
/// `J` divided by `2 d_max`) at the vector `(a, b, c, d)`:
///
/// ```text
/// Σ_{v ~ e} 5a_e²/x_e + 4a_e b_v y_v + 2b_v² x_e − 2a_e d_v + 2c_e b_v
///           + 5c_e²/x_e + 4c_e d_v y_v + 2d_v² x_e
/// ```
///
/// summed over incident (vertex, edge) pairs. Requires `x > 0`.
pub fn rsoc_quadratic_form(
    p: &Problem,
    z: &PrimalDualPoint,
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
) -> Result<f64> {
    let n = p.n();
    let m = p.m();
    for (what, len, want) in [
        ("x block", z.x.len(), m),
        ("y block", z.y.len(), 2 * n),
        ("a", a.len(), m),
        ("b", b.len(), 2 * n),
        ("c", c.len(), m),
        ("d", d.len(), 2 * n),
    ] {
        if len != want {
            return Err(OtError::DimensionMismatch {
                what,
                expected: want,
                got: len,
            });
        }
    }
    let term = |e: usize, v: usize| -> f64 {
        let (xe, yv) = (z.x[e], z.y[v]);
        let (ae, ce, bv, dv) = (a[e], c[e], b[v], d[v]);
        5.0 * ae * ae / xe + 4.0 * ae * bv * yv + 2.0 * bv * bv * xe - 2.0 * ae * dv
            + 2.0 * ce * bv
            + 5.0 * ce * ce / xe
            + 4.0 * ce * dv * yv
            + 2.0 * dv * dv * xe
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let e = i * n + j;
            total += term(e, i) + term(e, n + j);
        }
    }
    Ok(total)
}
