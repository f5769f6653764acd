//! Randomized probes of the area-convexity inequality and of the block
//! quadratic form behind it. The probes report the worst residual seen; a
//! negative value beyond rounding is a counterexample.

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::io::InstanceRng;
use crate::problem::{PrimalDualPoint, Problem};
use crate::regularizer::{area_convexity_residual, rsoc_quadratic_form, RegularizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub n: usize,
    pub kappa: f64,
    pub entropy_weight: f64,
    pub samples: usize,
    pub seed: u64,
}

impl AuditConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            kappa: 3.0,
            entropy_weight: 10.0,
            samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n: usize,
    pub samples: usize,
    /// Smallest `κ·spread − area` over the sampled triples.
    pub min_area_residual: f64,
    /// Smallest value of the quadratic form over the sampled probes.
    pub min_quadratic_form: f64,
}

impl AuditReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_area_residual >= -tol && self.min_quadratic_form >= -tol
    }
}

fn random_simplex(rng: &mut InstanceRng, m: usize) -> Vec<f64> {
    // a random power sharpens some samples towards the faces
    let sharp = 1.0 + 4.0 * rng.uniform();
    let mut x: Vec<f64> = (0..m).map(|_| rng.exponential().powf(sharp)).collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        x.fill(1.0 / m as f64);
    }
    x
}

fn random_box(rng: &mut InstanceRng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| match rng.uniform() {
            u if u < 0.1 => -1.0,
            u if u < 0.2 => 1.0,
            _ => 2.0 * rng.uniform() - 1.0,
        })
        .collect()
}

fn random_point(rng: &mut InstanceRng, p: &Problem) -> PrimalDualPoint {
    PrimalDualPoint::new(random_simplex(rng, p.m()), random_box(rng, 2 * p.n()))
}

/// Convex combination `(1 − t) a + t b`, which stays in the domain.
fn towards(a: &PrimalDualPoint, b: &PrimalDualPoint, t: f64) -> PrimalDualPoint {
    let mix = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(s, w)| (1.0 - t) * s + t * w).collect();
    PrimalDualPoint::new(mix(&a.x, &b.x), mix(&a.y, &b.y))
}

fn random_problem(rng: &mut InstanceRng, n: usize) -> Result<Problem> {
    let cost: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
    let r = rng.dirichlet(n);
    let c = rng.dirichlet(n);
    Problem::new(&cost, &r, &c)
}

fn gaussian(rng: &mut InstanceRng) -> f64 {
    let u = 1.0 - rng.uniform();
    let v = rng.uniform();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Samples `samples` triples (half independent, half clustered around a
/// random point at a random scale) and `samples` quadratic-form probes, each
/// on a freshly drawn instance of size `n`.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.n == 0 || cfg.samples == 0 {
        return Err(OtError::InvalidConfig("audit needs n ≥ 1 and samples ≥ 1".into()));
    }
    if !(cfg.kappa > 0.0) {
        return Err(OtError::InvalidConfig(format!("kappa must be positive, got {}", cfg.kappa)));
    }
    let mut rng = InstanceRng::new(cfg.seed);
    let mut min_area = f64::INFINITY;
    let mut min_form = f64::INFINITY;
    for k in 0..cfg.samples {
        let p = random_problem(&mut rng, cfg.n)?;
        let reg = RegularizerConfig::for_problem(&p, cfg.entropy_weight)?;
        let a = random_point(&mut rng, &p);
        let (b, c) = if k % 2 == 0 {
            (random_point(&mut rng, &p), random_point(&mut rng, &p))
        } else {
            let scale = 10f64.powf(-4.0 * rng.uniform());
            let b = towards(&a, &random_point(&mut rng, &p), scale);
            let c = towards(&a, &random_point(&mut rng, &p), scale);
            (b, c)
        };
        min_area = min_area.min(area_convexity_residual(&p, &reg, cfg.kappa, &a, &b, &c)?);

        let mut z = random_point(&mut rng, &p);
        // the form divides by x, so keep the probe point interior
        z.x.iter_mut().for_each(|v| *v = v.max(1e-12));
        let total: f64 = z.x.iter().sum();
        z.x.iter_mut().for_each(|v| *v /= total);
        let m = p.m();
        let n2 = 2 * p.n();
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| gaussian(&mut rng)).collect() };
        let (qa, qb, qc, qd) = (draw(m), draw(n2), draw(m), draw(n2));
        min_form = min_form.min(rsoc_quadratic_form(&p, &z, &qa, &qb, &qc, &qd)?);
    }
    Ok(AuditReport {
        n: cfg.n,
        samples: cfg.samples,
        min_area_residual: min_area,
        min_quadratic_form: min_form,
    })
}
