use std::collections::VecDeque;

use crate::error::{OtError, Result};
use crate::problem::{Problem, TransportPlan};

pub const ORACLE_MAX_N: usize = 16;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub optimum: f64,
    pub plan: TransportPlan,
    /// Basic cells `(row, col)` of the optimal basic feasible solution.
    pub basis: Vec<(usize, usize)>,
    pub pivots: usize,
}

struct Tableau<'a> {
    n: usize,
    cost: &'a [f64],
    basic: Vec<bool>,
    value: Vec<f64>,
}

impl Tableau<'_> {
    /// Northwest-corner start. Ties move down a row first, which leaves a
    /// zero-valued basic cell and keeps exactly `2n − 1` basic cells.
    fn northwest(p: &Problem) -> Tableau<'_> {
        let n = p.n();
        let mut supply = p.r().to_vec();
        let mut demand = p.c().to_vec();
        let mut basic = vec![false; n * n];
        let mut value = vec![0.0; n * n];
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]).max(0.0);
            basic[i * n + j] = true;
            value[i * n + j] = q;
            let row_done = supply[i] <= demand[j];
            supply[i] -= q;
            demand[j] -= q;
            if i == n - 1 && j == n - 1 {
                break;
            }
            if (row_done && i < n - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Tableau {
            n,
            cost: p.cost(),
            basic,
            value,
        }
    }

    /// Tree adjacency over `2n` nodes: rows `0..n`, columns `n..2n`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let n = self.n;
        let mut adj = vec![Vec::new(); 2 * n];
        for (e, _) in self.basic.iter().enumerate().filter(|(_, b)| **b) {
            let (i, j) = (e / n, e % n);
            adj[i].push((n + j, e));
            adj[n + j].push((i, e));
        }
        adj
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = C_ij` on basic cells.
    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> Vec<f64> {
        let n = self.n;
        let mut pot = vec![f64::NAN; 2 * n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0]);
        while let Some(a) = queue.pop_front() {
            for &(b, e) in &adj[a] {
                if pot[b].is_nan() {
                    pot[b] = self.cost[e] - pot[a];
                    queue.push_back(b);
                }
            }
        }
        pot
    }

    /// Cells on the tree path from row node `from` to column node `to`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; 2 * self.n];
        let mut seen = vec![false; 2 * self.n];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(a) = queue.pop_front() {
            if a == to {
                break;
            }
            for &(b, e) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    parent[b] = Some((a, e));
                    queue.push_back(b);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = to;
        while node != from {
            let (prev, e) = parent[node].expect("basis is a spanning tree");
            cells.push(e);
            node = prev;
        }
        // ordered from the column end back to the row end
        cells
    }
}

/// Exact optimal transport for `n ≤ 16` by the transportation simplex
/// method with Bland's rule for both the entering and the leaving cell.
pub fn exact_oracle(p: &Problem) -> Result<OracleResult> {
    let n = p.n();
    if n > ORACLE_MAX_N {
        return Err(OtError::OracleTooLarge {
            n,
            max: ORACLE_MAX_N,
        });
    }
    let tol = 1e-12 * (1.0 + p.d_max());
    let max_pivots = 10 * n.pow(4) + 1000;
    let mut tab = Tableau::northwest(p);
    let mut pivots = 0;
    loop {
        let adj = tab.adjacency();
        let pot = tab.potentials(&adj);
        let entering = (0..n * n).find(|&e| {
            !tab.basic[e] && tab.cost[e] - pot[e / n] - pot[n + e % n] < -tol
        });
        let Some(enter) = entering else { break };
        if pivots == max_pivots {
            return Err(OtError::PivotLimit(max_pivots));
        }
        pivots += 1;

        let path = tab.tree_path(&adj, enter / n, n + enter % n);
        // path[0] touches the entering column and gives up mass; signs alternate
        let donors: Vec<usize> = path.iter().copied().step_by(2).collect();
        let receivers: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();
        let theta = donors
            .iter()
            .map(|&e| tab.value[e])
            .fold(f64::INFINITY, f64::min);
        let leave = donors
            .iter()
            .copied()
            .filter(|&e| tab.value[e] <= theta + 1e-15)
            .min()
            .expect("cycle has a donor cell");
        for &e in &donors {
            tab.value[e] = (tab.value[e] - theta).max(0.0);
        }
        for &e in &receivers {
            tab.value[e] += theta;
        }
        tab.value[leave] = 0.0;
        tab.basic[leave] = false;
        tab.basic[enter] = true;
        tab.value[enter] = theta;
    }

    let basis = (0..n * n)
        .filter(|&e| tab.basic[e])
        .map(|e| (e / n, e % n))
        .collect();
    let plan = TransportPlan::from_flat(n, tab.value)?;
    let optimum = p.transport_objective(&plan)?;
    Ok(OracleResult {
        optimum,
        plan,
        basis,
        pivots,
    })
}
