//! Optimal transport instances on the complete bipartite graph K_{n,n}.
//!
//! The cost matrix `C` is stored row-major as the edge vector `d` of length
//! `m = n²`, edge `(i, j)` at index `i * n + j`. The edge-incidence operator
//! `A` (rows are the `2n` vertices, columns the `m` edges) is never formed:
//! `A x` is the concatenation of the row sums and column sums of `x` viewed
//! as an `n × n` matrix, and `A^T y` at edge `(i, j)` is `y_i + y_{n+j}`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};

/// Simplex sums are accepted within this distance of one.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct Problem {
    n: usize,
    d: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    b: Vec<f64>,
    d_max: f64,
    matvecs: AtomicU64,
}

impl Clone for Problem {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            d: self.d.clone(),
            r: self.r.clone(),
            c: self.c.clone(),
            b: self.b.clone(),
            d_max: self.d_max,
            matvecs: AtomicU64::new(self.matvecs()),
        }
    }
}

fn normalize_marginal(name: &'static str, v: &[f64]) -> Result<Vec<f64>> {
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(OtError::InvalidMarginal {
            name,
            reason: format!("non-finite entry at {k}"),
        });
    }
    if let Some(k) = v.iter().position(|&x| x < 0.0) {
        return Err(OtError::InvalidMarginal {
            name,
            reason: format!("negative entry {} at {k}", v[k]),
        });
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(OtError::InvalidMarginal {
            name,
            reason: "zero total mass".into(),
        });
    }
    Ok(v.iter().map(|x| x / total).collect())
}

impl Problem {
    /// Builds an instance from a row-major `n × n` cost matrix and marginals.
    ///
    /// Marginals are divided by their sums, so inputs only need to be
    /// nonnegative with positive total mass.
    pub fn new(cost: &[f64], r: &[f64], c: &[f64]) -> Result<Self> {
        let n = r.len();
        if c.len() != n {
            return Err(OtError::DimensionMismatch {
                what: "column marginal",
                expected: n,
                got: c.len(),
            });
        }
        if n == 0 {
            return Err(OtError::InvalidMarginal {
                name: "r",
                reason: "empty marginal".into(),
            });
        }
        if cost.len() != n * n {
            return Err(OtError::DimensionMismatch {
                what: "cost matrix",
                expected: n * n,
                got: cost.len(),
            });
        }
        let mut d_max = 0.0f64;
        for (k, &v) in cost.iter().enumerate() {
            if !v.is_finite() {
                return Err(OtError::NonFinite(format!(
                    "cost entry ({}, {})",
                    k / n,
                    k % n
                )));
            }
            if v < 0.0 {
                return Err(OtError::NegativeCost {
                    row: k / n,
                    col: k % n,
                    value: v,
                });
            }
            d_max = d_max.max(v);
        }
        let r = normalize_marginal("r", r)?;
        let c = normalize_marginal("c", c)?;
        let mut b = Vec::with_capacity(2 * n);
        b.extend_from_slice(&r);
        b.extend_from_slice(&c);
        Ok(Self {
            n,
            d: cost.to_vec(),
            r,
            c,
            b,
            d_max,
            matvecs: AtomicU64::new(0),
        })
    }

    /// Same as [`Problem::new`] with the cost given as rows.
    pub fn from_rows(cost: &[Vec<f64>], r: &[f64], c: &[f64]) -> Result<Self> {
        let n = r.len();
        if cost.len() != n || cost.iter().any(|row| row.len() != n) {
            return Err(OtError::DimensionMismatch {
                what: "cost matrix rows",
                expected: n,
                got: cost.len(),
            });
        }
        let flat: Vec<f64> = cost.iter().flatten().copied().collect();
        Self::new(&flat, r, c)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of edges, `n²`.
    pub fn m(&self) -> usize {
        self.n * self.n
    }

    pub fn cost(&self) -> &[f64] {
        &self.d
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Matrix-vector products with `A` or `A^T` performed so far.
    pub fn matvecs(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    /// Charges `k` matvec-equivalents to this instance's counter.
    pub fn record_matvecs(&self, k: u64) {
        self.matvecs.fetch_add(k, Ordering::Relaxed);
    }

    pub fn reset_matvecs(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
    }

    fn check_len(&self, what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(OtError::DimensionMismatch {
                what,
                expected,
                got,
            });
        }
        Ok(())
    }

    /// Writes `A x` (row sums then column sums) into `out`. One matvec.
    pub fn apply_incidence_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        self.check_len("edge vector", self.m(), x.len())?;
        self.check_len("vertex vector", 2 * n, out.len())?;
        out.fill(0.0);
        let (rows, cols) = out.split_at_mut(n);
        for (i, row) in x.chunks_exact(n).enumerate() {
            let mut acc = 0.0;
            for (j, &v) in row.iter().enumerate() {
                acc += v;
                cols[j] += v;
            }
            rows[i] = acc;
        }
        self.record_matvecs(1);
        Ok(())
    }

    pub fn apply_incidence(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.n];
        self.apply_incidence_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes `A^T y` into `out`: entry `(i, j)` is `y_i + y_{n+j}`. One matvec.
    pub fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        self.check_len("vertex vector", 2 * n, y.len())?;
        self.check_len("edge vector", self.m(), out.len())?;
        let (yr, yc) = y.split_at(n);
        for (row, &yi) in out.chunks_exact_mut(n).zip(yr) {
            for (o, &yj) in row.iter_mut().zip(yc) {
                *o = yi + yj;
            }
        }
        self.record_matvecs(1);
        Ok(())
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m()];
        self.apply_adjoint_into(y, &mut out)?;
        Ok(out)
    }

    /// `‖A x − b‖₁` given a precomputed `A x`.
    pub fn infeasibility_from(&self, ax: &[f64]) -> f64 {
        ax.iter().zip(&self.b).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Penalized objective `d^T x + 2 d_max ‖A x − b‖₁`.
    pub fn primal_value(&self, x: &[f64]) -> Result<f64> {
        let ax = self.apply_incidence(x)?;
        Ok(dot(&self.d, x) + 2.0 * self.d_max * self.infeasibility_from(&ax))
    }

    /// Box-dual lower bound, the inner minimum over the simplex in closed form:
    /// `−2 d_max b^T y + min_e [d + 2 d_max A^T y]_e`.
    pub fn dual_value(&self, y: &[f64]) -> Result<f64> {
        let aty = self.apply_adjoint(y)?;
        Ok(self.dual_value_from(y, &aty))
    }

    pub(crate) fn dual_value_from(&self, y: &[f64], aty: &[f64]) -> f64 {
        let scale = 2.0 * self.d_max;
        let inner = self
            .d
            .iter()
            .zip(aty)
            .map(|(d, a)| d + scale * a)
            .fold(f64::INFINITY, f64::min);
        inner - scale * dot(&self.b, y)
    }

    /// `primal_value(x) − dual_value(y)`; two matvecs.
    pub fn duality_gap(&self, z: &PrimalDualPoint) -> Result<f64> {
        Ok(self.primal_value(&z.x)? - self.dual_value(&z.y)?)
    }

    /// Primal value, dual value, and gap in one pass.
    pub fn certificate(&self, z: &PrimalDualPoint) -> Result<Certificate> {
        let primal = self.primal_value(&z.x)?;
        let dual = self.dual_value(&z.y)?;
        Ok(Certificate {
            primal,
            dual,
            gap: primal - dual,
        })
    }

    /// `⟨C, X⟩`.
    pub fn transport_objective(&self, plan: &TransportPlan) -> Result<f64> {
        self.check_len("transport plan side", self.n, plan.n())?;
        Ok(dot(&self.d, plan.as_slice()))
    }

    /// Uniform primal point paired with the zero dual point.
    pub fn center(&self) -> PrimalDualPoint {
        let m = self.m();
        PrimalDualPoint {
            x: vec![1.0 / m as f64; m],
            y: vec![0.0; 2 * self.n],
        }
    }

    /// The independent coupling `r c^T`.
    pub fn product_plan(&self) -> TransportPlan {
        let n = self.n;
        let mut data = Vec::with_capacity(n * n);
        for &ri in &self.r {
            data.extend(self.c.iter().map(|&cj| ri * cj));
        }
        TransportPlan { n, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// `x` on the `m`-simplex paired with `y` in the `[−1, 1]^{2n}` box.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    /// Checks shapes, simplex membership of `x` and the box constraint on `y`.
    pub fn validate(&self, p: &Problem) -> Result<()> {
        p.check_len("primal block", p.m(), self.x.len())?;
        p.check_len("dual block", 2 * p.n(), self.y.len())?;
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite("primal-dual point".into()));
        }
        if self.x.iter().any(|&v| v < 0.0) {
            return Err(OtError::InvalidConfig("primal block has a negative entry".into()));
        }
        let total: f64 = self.x.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OtError::InvalidConfig(format!(
                "primal block sums to {total}, not 1"
            )));
        }
        if self.y.iter().any(|v| v.abs() > 1.0) {
            return Err(OtError::InvalidConfig("dual block leaves [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Nonnegative `n × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    data: Vec<f64>,
}

impl TransportPlan {
    pub fn from_flat(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(OtError::DimensionMismatch {
                what: "transport plan",
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        row_sums(self.n, &self.data)
    }

    pub fn col_sums(&self) -> Vec<f64> {
        col_sums(self.n, &self.data)
    }

    /// Largest per-coordinate marginal violation against `p`.
    pub fn max_marginal_error(&self, p: &Problem) -> f64 {
        self.row_sums()
            .iter()
            .zip(p.r())
            .chain(self.col_sums().iter().zip(p.c()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn row_sums(n: usize, x: &[f64]) -> Vec<f64> {
    x.chunks_exact(n).map(|row| row.iter().sum()).collect()
}

pub(crate) fn col_sums(n: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for row in x.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap2() -> Problem {
        Problem::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0.5, 0.5], &[0.5, 0.5]).unwrap()
    }

    /// Dense `2n × m` incidence matrix built entry by entry.
    fn dense_incidence(n: usize) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                a[i][i * n + j] = 1.0;
                a[n + j][i * n + j] = 1.0;
            }
        }
        a
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn build_vectorizes_row_major() {
        let p = swap2();
        assert_eq!(p.cost(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(p.d_max(), 1.0);
        assert_eq!(p.b(), &[0.5; 4]);
    }

    #[test]
    fn rejects_negative_cost() {
        let err = Problem::from_rows(&[vec![0.0, -0.1], vec![1.0, 0.0]], &[0.5, 0.5], &[0.5, 0.5])
            .unwrap_err();
        assert!(matches!(err, OtError::NegativeCost { row: 0, col: 1, .. }));
        assert!(err.to_string().contains("negative cost"));
    }

    #[test]
    fn rejects_bad_marginals() {
        let c = [0.0; 4];
        assert!(Problem::new(&c, &[0.0, 0.0], &[0.5, 0.5]).is_err());
        assert!(Problem::new(&c, &[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn renormalizes_marginals() {
        let p = Problem::new(&[0.0; 4], &[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(p.r(), &[0.5, 0.5]);
        assert_eq!(p.c(), &[0.25, 0.75]);
    }

    #[test]
    fn uniform_three_by_three_matches_figure_pattern() {
        let p = Problem::new(&[1.0; 9], &[1.0; 3], &[1.0; 3]).unwrap();
        for &v in p.b() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let ax = p.apply_incidence(&[1.0 / 9.0; 9]).unwrap();
        for v in ax {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_edge_hits_one_row_and_one_column() {
        let p = Problem::new(&[1.0; 9], &[1.0; 3], &[1.0; 3]).unwrap();
        let mut x = vec![0.0; 9];
        x[0] = 1.0;
        assert_eq!(p.apply_incidence(&x).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn incidence_and_adjoint_match_dense_matrix() {
        let mut seed = 11;
        for n in 1..6 {
            let p = Problem::new(&vec![1.0; n * n], &vec![1.0; n], &vec![1.0; n]).unwrap();
            let a = dense_incidence(n);
            let x: Vec<f64> = (0..n * n).map(|_| lcg(&mut seed)).collect();
            let y: Vec<f64> = (0..2 * n).map(|_| 2.0 * lcg(&mut seed) - 1.0).collect();
            let ax = p.apply_incidence(&x).unwrap();
            let aty = p.apply_adjoint(&y).unwrap();
            for v in 0..2 * n {
                let expect: f64 = (0..n * n).map(|e| a[v][e] * x[e]).sum();
                assert!((ax[v] - expect).abs() < 1e-14);
            }
            for e in 0..n * n {
                let expect: f64 = (0..2 * n).map(|v| a[v][e] * y[v]).sum();
                assert!((aty[e] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_of_ones_is_two() {
        let p = Problem::new(&[1.0; 16], &[1.0; 4], &[1.0; 4]).unwrap();
        assert!(p.apply_adjoint(&[1.0; 8]).unwrap().iter().all(|&v| v == 2.0));
        assert!(p.apply_adjoint(&[0.0; 8]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = swap2();
        assert!(p.apply_incidence(&[0.25; 3]).is_err());
        assert!(p.apply_adjoint(&[0.0; 3]).is_err());
    }

    #[test]
    fn each_application_counts_one_matvec() {
        let p = swap2();
        p.apply_incidence(&[0.25; 4]).unwrap();
        p.apply_adjoint(&[0.0; 4]).unwrap();
        assert_eq!(p.matvecs(), 2);
        p.duality_gap(&p.center()).unwrap();
        assert_eq!(p.matvecs(), 4);
    }

    #[test]
    fn single_edge_values() {
        let p = Problem::new(&[5.0], &[1.0], &[1.0]).unwrap();
        assert_eq!(p.primal_value(&[1.0]).unwrap(), 5.0);
        for y in [[0.3, -0.7], [1.0, 1.0], [-1.0, 0.2]] {
            assert!((p.dual_value(&y).unwrap() - 5.0).abs() < 1e-14);
            let z = PrimalDualPoint::new(vec![1.0], y.to_vec());
            assert!(p.duality_gap(&z).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn feasible_primal_has_no_penalty() {
        let p = swap2();
        let x = [0.5, 0.0, 0.0, 0.5];
        assert_eq!(p.primal_value(&x).unwrap(), 0.0);
        let x = [0.0, 0.5, 0.5, 0.0];
        assert_eq!(p.primal_value(&x).unwrap(), 1.0);
    }

    #[test]
    fn uniform_point_gap_on_swap_instance() {
        let p = swap2();
        let z = p.center();
        let cert = p.certificate(&z).unwrap();
        assert!((cert.primal - 0.5).abs() < 1e-15);
        assert_eq!(cert.dual, 0.0);
        assert!((cert.gap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dual_at_zero_is_min_cost() {
        let p = Problem::new(&[3.0, 2.0, 7.0, 4.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(p.dual_value(&[0.0; 4]).unwrap(), 2.0);
    }

    #[test]
    fn values_match_direct_reevaluation() {
        let mut seed = 3;
        let n = 4;
        let cost: Vec<f64> = (0..n * n).map(|_| lcg(&mut seed)).collect();
        let r: Vec<f64> = (0..n).map(|_| lcg(&mut seed) + 0.1).collect();
        let c: Vec<f64> = (0..n).map(|_| lcg(&mut seed) + 0.1).collect();
        let p = Problem::new(&cost, &r, &c).unwrap();
        for _ in 0..20 {
            let mut x: Vec<f64> = (0..n * n).map(|_| lcg(&mut seed)).collect();
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            let y: Vec<f64> = (0..2 * n).map(|_| 2.0 * lcg(&mut seed) - 1.0).collect();

            // primal from the unvectorized matrix
            let mut lin = 0.0;
            let mut pen = 0.0;
            for i in 0..n {
                let mut rs = 0.0;
                for j in 0..n {
                    lin += cost[i * n + j] * x[i * n + j];
                    rs += x[i * n + j];
                }
                pen += (rs - p.r()[i]).abs();
            }
            for j in 0..n {
                let cs: f64 = (0..n).map(|i| x[i * n + j]).sum();
                pen += (cs - p.c()[j]).abs();
            }
            let primal = lin + 2.0 * p.d_max() * pen;
            assert!((p.primal_value(&x).unwrap() - primal).abs() < 1e-12);

            // dual by enumerating simplex vertices
            let by = p.b().iter().zip(&y).map(|(b, y)| b * y).sum::<f64>();
            let mut best = f64::INFINITY;
            for i in 0..n {
                for j in 0..n {
                    let yau = y[i] + y[n + j];
                    best = best.min(cost[i * n + j] + 2.0 * p.d_max() * (yau - by));
                }
            }
            assert!((p.dual_value(&y).unwrap() - best).abs() < 1e-12);

            let plan = TransportPlan::from_flat(n, x.clone()).unwrap();
            let direct: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| cost[i * n + j] * plan.get(i, j))
                .sum();
            assert!((p.transport_objective(&plan).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_objective_simple_cases() {
        let p = Problem::new(&[0.0; 9], &[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(p.transport_objective(&p.product_plan()).unwrap(), 0.0);

        let cost = [2.0, 9.0, 9.0, 9.0, 4.0, 9.0, 9.0, 9.0, 6.0];
        let r = [0.2, 0.3, 0.5];
        let p = Problem::new(&cost, &r, &r).unwrap();
        let mut diag = vec![0.0; 9];
        for i in 0..3 {
            diag[i * 3 + i] = p.r()[i];
        }
        let plan = TransportPlan::from_flat(3, diag).unwrap();
        let expect = 2.0 * 0.2 + 4.0 * 0.3 + 6.0 * 0.5;
        assert!((p.transport_objective(&plan).unwrap() - expect).abs() < 1e-15);

        let wrong = TransportPlan::from_flat(2, vec![0.25; 4]).unwrap();
        assert!(p.transport_objective(&wrong).is_err());
    }
}
