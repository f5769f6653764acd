//! Extragradient outer loops for the box-simplex saddle point
//!
//! ```text
//! min_{x ∈ Δ^m} max_{y ∈ [−1,1]^{2n}}  d^T x + 2 d_max (y^T A x − b^T y)
//! ```
//!
//! Dual extrapolation keeps an accumulated dual state `s` and takes both
//! proximal steps from the regularizer's minimizer. Mirror prox takes both
//! steps locally from the current iterate. Either way each outer iteration
//! costs two approximate proximal solves and two operator evaluations; the
//! run stops once a checked iterate certifies a duality gap of at most `ε`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::problem::{Certificate, PrimalDualPoint, Problem, TransportPlan};
use crate::prox::{approx_prox, inner_iteration_budget, AltMinConfig, DualState};
use crate::regularizer::{
    gradient_operator, regularizer_gradient, RegularizerConfig, DEFAULT_ENTROPY_WEIGHT,
};
use crate::rounding::{round_to_feasible, RoundingReport};

/// `Θ = 20 d_max ln n + 4 d_max`.
pub fn theta_bound(d_max: f64, n: usize) -> f64 {
    20.0 * d_max * (n.max(1) as f64).ln() + 4.0 * d_max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DualExtrapolation,
    MirrorProx,
}

/// Step size and entropy presets.
///
/// | preset       | entropy weight | step multiplier |
/// |--------------|----------------|-----------------|
/// | `Provable`   | 10             | 1               |
/// | `Reasonable` | 4              | d_max / 3       |
/// | `Optimized`  | 3              | d_max           |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Provable,
    Reasonable,
    Optimized,
}

impl Preset {
    pub fn entropy_weight(self) -> f64 {
        match self {
            Preset::Provable => DEFAULT_ENTROPY_WEIGHT,
            Preset::Reasonable => 4.0,
            Preset::Optimized => 3.0,
        }
    }

    pub fn step_scale(self, d_max: f64) -> f64 {
        match self {
            Preset::Provable => 1.0,
            Preset::Reasonable => d_max / 3.0,
            Preset::Optimized => d_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub step_scale: f64,
    pub entropy_weight: f64,
    /// `None` resolves to `⌈12 Θ / ε⌉ + 1`.
    pub max_outer: Option<usize>,
    pub gap_check_every: usize,
    pub variant: Variant,
    /// `max_inner` is further capped by [`inner_iteration_budget`].
    pub altmin: AltMinConfig,
    /// When false, trace rows carry `elapsed_ms = 0` so output is reproducible.
    pub record_time: bool,
}

impl SolverConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            kappa: 3.0,
            step_scale: 1.0,
            entropy_weight: DEFAULT_ENTROPY_WEIGHT,
            max_outer: None,
            gap_check_every: 10,
            variant: Variant::DualExtrapolation,
            altmin: AltMinConfig::default(),
            record_time: true,
        }
    }

    pub fn from_preset(preset: Preset, epsilon: f64, d_max: f64) -> Self {
        Self {
            step_scale: preset.step_scale(d_max),
            entropy_weight: preset.entropy_weight(),
            ..Self::new(epsilon)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.epsilon) {
            return Err(OtError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !positive(self.kappa) {
            return Err(OtError::InvalidConfig(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !positive(self.step_scale) {
            return Err(OtError::InvalidConfig(format!(
                "step_scale must be positive, got {}",
                self.step_scale
            )));
        }
        if self.max_outer == Some(0) {
            return Err(OtError::InvalidConfig("max_outer must be at least 1".into()));
        }
        if self.gap_check_every == 0 {
            return Err(OtError::InvalidConfig("gap_check_every must be at least 1".into()));
        }
        self.altmin.validate()
    }

    pub fn resolved_max_outer(&self, p: &Problem) -> usize {
        self.max_outer.unwrap_or_else(|| {
            let t = (12.0 * theta_bound(p.d_max(), p.n()) / self.epsilon).ceil();
            if t.is_finite() {
                t as usize + 1
            } else {
                usize::MAX
            }
        })
    }

    /// Alternation cap actually used per proximal step.
    pub fn resolved_altmin(&self, p: &Problem) -> Result<AltMinConfig> {
        let budget = inner_iteration_budget(p.d_max(), p.n(), self.epsilon)?;
        Ok(AltMinConfig {
            max_inner: self.altmin.max_inner.min(budget),
            ..self.altmin
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub matvecs: u64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterateKind {
    /// A checked half-iterate `w_t`.
    Last,
    /// Running mean of all `w_t`.
    Averaged,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub z: PrimalDualPoint,
    pub plan: TransportPlan,
    pub objective: f64,
    pub gap: f64,
    pub certificate: Certificate,
    pub iterate: IterateKind,
    pub outer_iterations: usize,
    pub matvecs: u64,
    pub rounding: RoundingReport,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    /// Set for solvers without a convergence proof.
    pub experimental: bool,
}

/// Incremental arithmetic mean of primal-dual points.
#[derive(Debug, Clone)]
pub struct RunningAverage {
    count: usize,
    mean: PrimalDualPoint,
}

impl RunningAverage {
    pub fn new(first: &PrimalDualPoint) -> Self {
        Self {
            count: 1,
            mean: first.clone(),
        }
    }

    pub fn push(&mut self, z: &PrimalDualPoint) {
        self.count += 1;
        let w = 1.0 / self.count as f64;
        for (m, v) in self.mean.x.iter_mut().zip(&z.x) {
            *m += w * (v - *m);
        }
        for (m, v) in self.mean.y.iter_mut().zip(&z.y) {
            *m += w * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Current mean with the primal block renormalized onto the simplex.
    pub fn current(&self) -> PrimalDualPoint {
        let mut out = self.mean.clone();
        let total: f64 = out.x.iter().sum();
        out.x.iter_mut().for_each(|v| *v /= total);
        for v in out.y.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        out
    }
}

/// Mean of a nonempty sequence of iterates.
pub fn averaged_iterate(history: &[PrimalDualPoint]) -> Result<PrimalDualPoint> {
    let (first, rest) = history
        .split_first()
        .ok_or_else(|| OtError::InvalidConfig("cannot average an empty history".into()))?;
    let mut avg = RunningAverage::new(first);
    for z in rest {
        avg.push(z);
    }
    Ok(avg.current())
}

/// True once `w` certifies `primal(x) ≤ dual(y) + ε`.
///
/// The dual side is the closed-form lower bound with a minimum over edges;
/// the loop continues while the gap exceeds `ε`.
pub fn termination_check(p: &Problem, w: &PrimalDualPoint, epsilon: f64) -> Result<bool> {
    let cert = p.certificate(w)?;
    Ok(cert.primal <= cert.dual + epsilon)
}

/// Stepwise driver for one extragradient run.
#[derive(Debug)]
pub struct ExtragradientRun<'a> {
    p: &'a Problem,
    reg: RegularizerConfig,
    altmin: AltMinConfig,
    step: f64,
    variant: Variant,
    s: DualState,
    z: PrimalDualPoint,
    w: PrimalDualPoint,
    average: Option<RunningAverage>,
    t: usize,
    alternations: usize,
}

impl<'a> ExtragradientRun<'a> {
    pub fn new(p: &'a Problem, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if !(p.d_max() > 0.0) {
            return Err(OtError::InvalidConfig(
                "extragradient run needs a nonzero cost matrix".into(),
            ));
        }
        let reg = RegularizerConfig::for_problem(p, cfg.entropy_weight)?;
        let center = p.center();
        Ok(Self {
            p,
            reg,
            altmin: cfg.resolved_altmin(p)?,
            step: cfg.step_scale / cfg.kappa,
            variant: cfg.variant,
            s: DualState::zeros(p),
            z: center.clone(),
            w: center,
            average: None,
            t: 0,
            alternations: 0,
        })
    }

    pub fn regularizer(&self) -> &RegularizerConfig {
        &self.reg
    }

    pub fn altmin(&self) -> &AltMinConfig {
        &self.altmin
    }

    /// Outer iterations completed.
    pub fn iterations(&self) -> usize {
        self.t
    }

    /// Total alternations spent in proximal solves.
    pub fn alternations(&self) -> usize {
        self.alternations
    }

    pub fn dual_state(&self) -> &DualState {
        &self.s
    }

    /// `z_t` of the latest iteration.
    pub fn z(&self) -> &PrimalDualPoint {
        &self.z
    }

    /// `w_t` of the latest iteration.
    pub fn w(&self) -> &PrimalDualPoint {
        &self.w
    }

    pub fn averaged(&self) -> Option<PrimalDualPoint> {
        self.average.as_ref().map(RunningAverage::current)
    }

    fn prox(&mut self, s: &DualState, warm: &PrimalDualPoint) -> Result<PrimalDualPoint> {
        let out = approx_prox(self.p, &self.reg, &self.altmin, s, warm)?;
        self.alternations += out.alternations;
        Ok(out.z)
    }

    /// Runs one outer iteration and returns the new half-iterate `w_t`.
    pub fn step(&mut self) -> Result<&PrimalDualPoint> {
        match self.variant {
            Variant::DualExtrapolation => self.step_dual_extrapolation()?,
            Variant::MirrorProx => self.step_mirror_prox()?,
        }
        self.t += 1;
        match &mut self.average {
            Some(avg) => avg.push(&self.w),
            None => self.average = Some(RunningAverage::new(&self.w)),
        }
        Ok(&self.w)
    }

    fn step_dual_extrapolation(&mut self) -> Result<()> {
        let s = self.s.clone();
        let warm = self.w.clone();
        let z = self.prox(&s, &warm)?;
        let gz = gradient_operator(self.p, &z)?;
        let w = self.prox(&s.plus(self.step, &gz), &z)?;
        let gw = gradient_operator(self.p, &w)?;
        self.s.add_scaled(0.5 * self.step, &gw);
        if !self.s.is_finite() {
            return Err(OtError::NonFinite(format!(
                "dual state after outer iteration {}",
                self.t + 1
            )));
        }
        self.z = z;
        self.w = w;
        Ok(())
    }

    fn step_mirror_prox(&mut self) -> Result<()> {
        // prox centered at z_t: argmin ⟨step·g − ∇r(z_t), u⟩ + r(u)
        let anchor = regularizer_gradient(self.p, &self.reg, &self.z)?.scaled(-1.0);
        let anchor = DualState::from(anchor);
        let z = self.z.clone();
        let gz = gradient_operator(self.p, &z)?;
        let sw = anchor.plus(self.step, &gz);
        if !sw.is_finite() {
            return Err(OtError::NonFinite(format!("mirror-prox step at iteration {}", self.t + 1)));
        }
        let w = self.prox(&sw, &z)?;
        let gw = gradient_operator(self.p, &w)?;
        let z_next = self.prox(&anchor.plus(self.step, &gw), &w)?;
        self.z = z_next;
        self.w = w;
        Ok(())
    }
}

fn finish(
    p: &Problem,
    z: PrimalDualPoint,
    certificate: Certificate,
    iterate: IterateKind,
) -> Result<(TransportPlan, RoundingReport, f64, PrimalDualPoint, Certificate, IterateKind)> {
    let (plan, rounding) = round_to_feasible(p, &z.x)?;
    let objective = p.transport_objective(&plan)?;
    Ok((plan, rounding, objective, z, certificate, iterate))
}

fn degenerate_solution(p: &Problem, variant: Variant) -> Solution {
    let plan = p.product_plan();
    let z = PrimalDualPoint::new(plan.as_slice().to_vec(), vec![0.0; 2 * p.n()]);
    Solution {
        z,
        plan,
        objective: 0.0,
        gap: 0.0,
        certificate: Certificate {
            primal: 0.0,
            dual: 0.0,
            gap: 0.0,
        },
        iterate: IterateKind::Last,
        outer_iterations: 0,
        matvecs: 0,
        rounding: RoundingReport {
            delta_in: 0.0,
            l1_moved: 0.0,
            objective_change: 0.0,
        },
        trace: ConvergenceTrace::default(),
        converged: true,
        experimental: variant == Variant::MirrorProx,
    }
}

/// Runs the configured variant until the gap certificate reaches `ε` or
/// `max_outer` iterations pass. Every check certifies both the latest
/// half-iterate and the running average; the best certificate seen is rounded.
pub fn solve(p: &Problem, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if p.d_max() == 0.0 {
        // every feasible plan is optimal
        return Ok(degenerate_solution(p, cfg.variant));
    }
    let start_matvecs = p.matvecs();
    let clock = Instant::now();
    let elapsed = |clock: &Instant| {
        if cfg.record_time {
            clock.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let max_outer = cfg.resolved_max_outer(p);
    let mut run = ExtragradientRun::new(p, cfg)?;
    let mut trace = ConvergenceTrace::default();
    let mut best: Option<(PrimalDualPoint, Certificate, IterateKind)> = None;
    let offer = |best: &mut Option<(PrimalDualPoint, Certificate, IterateKind)>,
                 z: PrimalDualPoint,
                 cert: Certificate,
                 kind: IterateKind| {
        if best.as_ref().is_none_or(|(_, b, _)| cert.gap < b.gap) {
            *best = Some((z, cert, kind));
        }
    };

    while run.iterations() < max_outer {
        run.step()?;
        let t = run.iterations();
        if t % cfg.gap_check_every != 0 && t != max_outer {
            continue;
        }
        // the rate guarantee is for the average, so both candidates are checked
        let averaged = run.averaged().expect("at least one outer iteration");
        let cert_w = p.certificate(run.w())?;
        let cert_avg = p.certificate(&averaged)?;
        if !cert_w.gap.is_finite() || !cert_avg.gap.is_finite() {
            return Err(OtError::NonFinite(format!("duality gap at outer iteration {t}")));
        }
        offer(&mut best, run.w().clone(), cert_w, IterateKind::Last);
        offer(&mut best, averaged, cert_avg, IterateKind::Averaged);
        let b = best.as_ref().map(|(_, c, _)| *c).expect("just offered");
        trace.push(TraceRow {
            iter: t,
            matvecs: p.matvecs() - start_matvecs,
            primal: b.primal,
            dual: b.dual,
            gap: b.gap,
            elapsed_ms: elapsed(&clock),
        });
        if b.gap <= cfg.epsilon {
            break;
        }
    }

    let (best_z, best_cert, best_kind) = best.expect("the final iteration is always checked");
    let (plan, rounding, objective, z, certificate, iterate) = finish(p, best_z, best_cert, best_kind)?;
    let solution = Solution {
        z,
        plan,
        objective,
        gap: certificate.gap,
        certificate,
        iterate,
        outer_iterations: run.iterations(),
        matvecs: p.matvecs() - start_matvecs,
        rounding,
        trace,
        converged: certificate.gap <= cfg.epsilon,
        experimental: cfg.variant == Variant::MirrorProx,
    };
    if solution.converged {
        Ok(solution)
    } else {
        Err(OtError::MaxOuterExceeded {
            best: Box::new(solution),
        })
    }
}

pub fn solve_dual_extrapolation(p: &Problem, cfg: &SolverConfig) -> Result<Solution> {
    solve(p, &cfg.clone().with_variant(Variant::DualExtrapolation))
}

/// Local-step variant; converges well in practice but carries no proof for
/// this regularizer, so solutions are flagged `experimental`.
pub fn solve_mirror_prox(p: &Problem, cfg: &SolverConfig) -> Result<Solution> {
    solve(p, &cfg.clone().with_variant(Variant::MirrorProx))
}
