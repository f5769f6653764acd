//! ε-approximate optimal transport between discrete distributions on `n`
//! points, solved by dual extrapolation over a bilinear ℓ1-penalized saddle
//! point with a non-entropic (area-convex) regularizer, then rounded onto the
//! transportation polytope.
//!
//! Also contains a log-domain Sinkhorn baseline and an exact
//! transportation-simplex oracle for small instances.

// `!(v > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod baselines;
pub mod error;
pub mod io;
pub mod problem;
pub mod prox;
pub mod regularizer;
pub mod rounding;
pub mod solver;

pub use audit::{run_audit, AuditConfig, AuditReport};
pub use baselines::{exact_oracle, sinkhorn, OracleResult, SinkhornConfig, SinkhornOutput, ORACLE_MAX_N};
pub use error::{OtError, Result};
pub use problem::{Certificate, PrimalDualPoint, Problem, TransportPlan};
pub use prox::{approx_prox, inner_iteration_budget, AltMinConfig, DualState, ProxSolve};
pub use regularizer::{gradient_operator, GradientPair, RegularizerConfig, DEFAULT_ENTROPY_WEIGHT};
pub use rounding::{round_to_feasible, RoundingReport};
pub use solver::{
    solve, solve_dual_extrapolation, solve_mirror_prox, theta_bound, ConvergenceTrace,
    ExtragradientRun, IterateKind, Preset, Solution, SolverConfig, TraceRow, Variant,
};
