use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::problem::{col_sums, dot, row_sums, Problem, TransportPlan};
use crate::rounding::{round_to_feasible, RoundingReport};
use crate::solver::{ConvergenceTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Inverse temperature: the kernel is `exp(−η C)`.
    pub eta: f64,
    pub max_iter: usize,
    /// Stop once `‖X 1 − r‖₁ + ‖X^T 1 − c‖₁` is at most this.
    pub marginal_tol: f64,
    pub record_time: bool,
}

impl SinkhornConfig {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            max_iter: 10_000,
            marginal_tol: 1e-9,
            record_time: true,
        }
    }

    /// η = 70.
    pub fn theory_like() -> Self {
        Self::new(70.0)
    }

    /// η = 5.
    pub fn practical() -> Self {
        Self::new(5.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OtError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.marginal_tol >= 0.0) {
            return Err(OtError::InvalidConfig("marginal_tol must be nonnegative".into()));
        }
        if self.max_iter == 0 {
            return Err(OtError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    /// Scaled matrix after rounding onto the polytope.
    pub plan: TransportPlan,
    pub objective: f64,
    pub iterations: usize,
    pub matvecs: u64,
    /// ℓ1 marginal violation of the scaled matrix before rounding.
    pub marginal_error: f64,
    pub rounding: RoundingReport,
    pub trace: ConvergenceTrace,
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + vals.iter().map(|v| (v - peak).exp()).sum::<f64>().ln()
}

fn ln_marginal(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Kantorovich lower bound from the row potentials `α = u / η` and their
/// c-transform `β_j = min_i (C_ij − α_i)`.
fn potential_lower_bound(p: &Problem, u: &[f64], eta: f64) -> f64 {
    let n = p.n();
    let alpha: Vec<f64> = u.iter().map(|v| v / eta).collect();
    let mut lb = 0.0;
    for (ri, ai) in p.r().iter().zip(&alpha) {
        if *ri > 0.0 {
            lb += ri * ai;
        }
    }
    for j in 0..n {
        let beta = (0..n)
            .map(|i| p.cost()[i * n + j] - alpha[i])
            .fold(f64::INFINITY, f64::min);
        if p.c()[j] > 0.0 {
            lb += p.c()[j] * beta;
        }
    }
    lb
}

/// Alternately matches row and column marginals of `diag(e^u) exp(−ηC) diag(e^v)`
/// with potentials kept in the log domain. Each half-iteration counts as one
/// matvec.
pub fn sinkhorn(p: &Problem, cfg: &SinkhornConfig) -> Result<SinkhornOutput> {
    cfg.validate()?;
    let n = p.n();
    let start_matvecs = p.matvecs();
    let clock = Instant::now();
    let neg_eta_c: Vec<f64> = p.cost().iter().map(|c| -cfg.eta * c).collect();
    let ln_r = ln_marginal(p.r());
    let ln_c = ln_marginal(p.c());
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut x = vec![0.0; n * n];
    let mut trace = ConvergenceTrace::default();
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        for i in 0..n {
            let row = &neg_eta_c[i * n..(i + 1) * n];
            u[i] = ln_r[i] - log_sum_exp(row.iter().zip(&v).map(|(k, vj)| k + vj));
        }
        p.record_matvecs(1);
        for j in 0..n {
            v[j] = ln_c[j] - log_sum_exp((0..n).map(|i| neg_eta_c[i * n + j] + u[i]));
        }
        p.record_matvecs(1);
        iterations += 1;
        if u.iter().chain(&v).any(|t| t.is_nan() || *t == f64::INFINITY) {
            return Err(OtError::NonFinite(format!(
                "Sinkhorn potentials at iteration {iterations} (eta = {})",
                cfg.eta
            )));
        }

        for i in 0..n {
            for j in 0..n {
                x[i * n + j] = (u[i] + v[j] + neg_eta_c[i * n + j]).exp();
            }
        }
        let rs = row_sums(n, &x);
        let cs = col_sums(n, &x);
        let infeas: f64 = rs
            .iter()
            .zip(p.r())
            .chain(cs.iter().zip(p.c()))
            .map(|(a, b)| (a - b).abs())
            .sum();
        marginal_error = infeas;
        let primal = dot(p.cost(), &x) + 2.0 * p.d_max() * infeas;
        let dual = potential_lower_bound(p, &u, cfg.eta);
        trace.push(TraceRow {
            iter: iterations,
            matvecs: p.matvecs() - start_matvecs,
            primal,
            dual,
            gap: primal - dual,
            elapsed_ms: if cfg.record_time {
                clock.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        if infeas <= cfg.marginal_tol {
            break;
        }
    }

    // column sums are exact after the column update, so the mass is one
    let mass: f64 = x.iter().sum();
    x.iter_mut().for_each(|t| *t /= mass);
    let (plan, rounding) = round_to_feasible(p, &x)?;
    let objective = p.transport_objective(&plan)?;
    Ok(SinkhornOutput {
        plan,
        objective,
        iterations,
        matvecs: p.matvecs() - start_matvecs,
        marginal_error,
        rounding,
        trace,
    })
}
