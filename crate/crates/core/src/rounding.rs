//! Projection of a near-feasible plan onto the transportation polytope.
//!
//! Rows are scaled down to at most `r`, then columns to at most `c`, and
//! the remaining deficit is filled by the rank-one matrix `e_r e_c^T / E`.
//! The result has exact marginals and moves at most twice the input's ℓ1
//! infeasibility.

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::problem::{col_sums, dot, row_sums, Problem, TransportPlan};

/// Deficits below this are treated as zero and the rank-one fill is skipped.
pub const DEFICIT_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingReport {
    /// `‖r(X̃) − r‖₁ + ‖c(X̃) − c‖₁`.
    pub delta_in: f64,
    /// `‖X̂ − X̃‖₁`.
    pub l1_moved: f64,
    /// `⟨C, X̂ − X̃⟩`.
    pub objective_change: f64,
}

fn scale_factor(target: f64, current: f64) -> f64 {
    // an empty row or column has nothing to scale
    if current <= 0.0 {
        1.0
    } else {
        (target / current).min(1.0)
    }
}

/// Row-capped `X'` and then column-capped `X''`; entrywise `X'' ≤ X' ≤ X̃`.
fn capped_scalings(p: &Problem, x_tilde: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.n();
    let mut x1 = x_tilde.to_vec();
    for (row, (&target, cur)) in x1.chunks_exact_mut(n).zip(p.r().iter().zip(row_sums(n, x_tilde))) {
        let f = scale_factor(target, cur);
        if f < 1.0 {
            row.iter_mut().for_each(|v| *v *= f);
        }
    }
    let col_factors: Vec<f64> = col_sums(n, &x1)
        .iter()
        .zip(p.c())
        .map(|(&cur, &target)| scale_factor(target, cur))
        .collect();
    let mut x2 = x1.clone();
    for row in x2.chunks_exact_mut(n) {
        for (v, f) in row.iter_mut().zip(&col_factors) {
            *v *= f;
        }
    }
    (x1, x2)
}

/// Rounds `x_tilde` (row-major `n × n`, nonnegative, total mass one) onto
/// `{X ≥ 0 : X 1 = r, X^T 1 = c}`.
pub fn round_to_feasible(p: &Problem, x_tilde: &[f64]) -> Result<(TransportPlan, RoundingReport)> {
    let n = p.n();
    if x_tilde.len() != n * n {
        return Err(OtError::DimensionMismatch {
            what: "plan to round",
            expected: n * n,
            got: x_tilde.len(),
        });
    }
    if let Some(k) = x_tilde.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(OtError::RoundingInput(format!(
            "entry ({}, {}) = {} is negative or non-finite",
            k / n,
            k % n,
            x_tilde[k]
        )));
    }
    let mass: f64 = x_tilde.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(OtError::RoundingInput(format!("total mass {mass} is not 1")));
    }

    let rows_in = row_sums(n, x_tilde);
    let cols_in = col_sums(n, x_tilde);
    let delta_in: f64 = rows_in
        .iter()
        .zip(p.r())
        .chain(cols_in.iter().zip(p.c()))
        .map(|(a, b)| (a - b).abs())
        .sum();

    let (_, mut x) = capped_scalings(p, x_tilde);

    // both deficits are nonnegative up to rounding after the two scalings
    let e_r: Vec<f64> = p
        .r()
        .iter()
        .zip(row_sums(n, &x))
        .map(|(t, s)| (t - s).max(0.0))
        .collect();
    let e_c: Vec<f64> = p
        .c()
        .iter()
        .zip(col_sums(n, &x))
        .map(|(t, s)| (t - s).max(0.0))
        .collect();
    let deficit: f64 = e_r.iter().sum();
    if deficit > DEFICIT_FLOOR {
        for (row, er) in x.chunks_exact_mut(n).zip(&e_r) {
            if *er == 0.0 {
                continue;
            }
            for (v, ec) in row.iter_mut().zip(&e_c) {
                *v += er * ec / deficit;
            }
        }
    }

    let l1_moved = x.iter().zip(x_tilde).map(|(a, b)| (a - b).abs()).sum();
    let objective_change = dot(p.cost(), &x) - dot(p.cost(), x_tilde);
    let plan = TransportPlan::from_flat(n, x)?;
    Ok((
        plan,
        RoundingReport {
            delta_in,
            l1_moved,
            objective_change,
        },
    ))
}
