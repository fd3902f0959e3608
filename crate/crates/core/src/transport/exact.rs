//! Exact transportation solver: primal network simplex on the bipartite
//! transportation graph, dense representation, Bland's rule for both the
//! entering and the leaving cell.

use std::collections::VecDeque;

use ndarray::Array2;

use super::check_marginals;
use crate::error::{Error, Result};

pub const DEFAULT_SIZE_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPlan {
    pub plan: Array2<f64>,
    pub cost: f64,
    /// Dual potentials with `u_i + v_j <= C_ij`, equality on the basis.
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
    pub pivots: usize,
}

pub fn exact_ot(x: &[f64], y: &[f64], cost: &Array2<f64>) -> Result<ExactPlan> {
    exact_ot_with_limit(x, y, cost, DEFAULT_SIZE_LIMIT)
}

pub fn exact_ot_with_limit(x: &[f64], y: &[f64], cost: &Array2<f64>, size_limit: usize) -> Result<ExactPlan> {
    let (m, n) = (x.len(), y.len());
    if m == 0 || n == 0 {
        return Err(Error::invalid("empty marginals"));
    }
    if m > size_limit || n > size_limit {
        return Err(Error::invalid(format!(
            "problem {m} x {n} exceeds the exact solver limit {size_limit}"
        )));
    }
    if cost.dim() != (m, n) {
        return Err(Error::invalid(format!(
            "cost is {:?}, marginals are {m} x {n}",
            cost.dim()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cost has non-finite entries"));
    }
    check_marginals(x, y, 1e-9)?;
    let mut solver = Simplex::new(x, y, cost);
    solver.run()?;
    Ok(solver.finish())
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a Array2<f64>,
    flow: Array2<f64>,
    basic: Array2<bool>,
    u: Vec<f64>,
    v: Vec<f64>,
    pivots: usize,
    rc_tol: f64,
}

impl<'a> Simplex<'a> {
    fn new(x: &[f64], y: &[f64], cost: &'a Array2<f64>) -> Self {
        let (m, n) = (x.len(), y.len());
        let mut flow = Array2::zeros((m, n));
        let mut basic = Array2::from_elem((m, n), false);
        // northwest corner: exactly m + n - 1 basic cells
        let mut supply = x.to_vec();
        let mut demand = y.to_vec();
        // absorb the (tiny) imbalance into the last demand
        let imbalance: f64 = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
        demand[n - 1] += imbalance;
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]).max(0.0);
            flow[[i, j]] = q;
            basic[[i, j]] = true;
            supply[i] -= q;
            demand[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        let scale = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        Simplex {
            m,
            n,
            cost,
            flow,
            basic,
            u: vec![0.0; m],
            v: vec![0.0; n],
            pivots: 0,
            rc_tol: 1e-12 * (1.0 + scale),
        }
    }

    /// Neighbours of each node in the basis tree; rows are `0..m`, columns `m..m+n`.
    fn tree(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for i in 0..self.m {
            for j in 0..self.n {
                if self.basic[[i, j]] {
                    adj[i].push(self.m + j);
                    adj[self.m + j].push(i);
                }
            }
        }
        adj
    }

    fn update_potentials(&mut self, adj: &[Vec<usize>]) {
        let m = self.m;
        let mut seen = vec![false; m + self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                if node < m {
                    let j = next - m;
                    self.v[j] = self.cost[[node, j]] - self.u[node];
                } else {
                    let j = node - m;
                    self.u[next] = self.cost[[next, j]] - self.v[j];
                }
                queue.push_back(next);
            }
        }
    }

    /// Tree path from row node `i` to column node `m + j`, as a node list.
    fn path(&self, adj: &[Vec<usize>], i: usize, j: usize) -> Vec<usize> {
        let target = self.m + j;
        let mut parent = vec![usize::MAX; self.m + self.n];
        let mut queue = VecDeque::from([i]);
        parent[i] = i;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut path = vec![target];
        let mut cur = target;
        while cur != i {
            cur = parent[cur];
            path.push(cur);
        }
        path.reverse();
        path
    }

    fn run(&mut self) -> Result<()> {
        let max_pivots = 50 * (self.m + self.n) * (self.m + self.n) + 1000;
        loop {
            let adj = self.tree();
            self.update_potentials(&adj);
            // Bland: first improving cell in row-major order
            let mut entering = None;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if !self.basic[[i, j]] && self.cost[[i, j]] - self.u[i] - self.v[j] < -self.rc_tol {
                        entering = Some((i, j));
                        break 'scan;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok(());
            };
            if self.pivots >= max_pivots {
                return Err(Error::NonConvergence {
                    iterations: self.pivots,
                    residual: f64::NAN,
                });
            }
            // cycle: entering cell (+), then path from column ej back to row ei
            let nodes = self.path(&adj, ei, ej);
            // nodes = [ei, c1, r1, ..., m+ej]; cells along it alternate -,+,-...
            // when walked from the column end back to ei.
            let mut cells: Vec<(usize, usize)> = Vec::with_capacity(nodes.len());
            for w in nodes.windows(2) {
                let (a, b) = (w[0], w[1]);
                let cell = if a < self.m { (a, b - self.m) } else { (b, a - self.m) };
                cells.push(cell);
            }
            cells.reverse();
            // cells[0] touches column ej: gets '-', then alternate
            let mut leaving: Option<(usize, usize)> = None;
            let mut theta = f64::INFINITY;
            for (idx, &(i, j)) in cells.iter().enumerate() {
                if idx % 2 == 0 {
                    let f = self.flow[[i, j]];
                    let better = match leaving {
                        None => true,
                        Some(l) => f < theta || (f == theta && (i, j) < l),
                    };
                    if better {
                        theta = f;
                        leaving = Some((i, j));
                    }
                }
            }
            let leaving = leaving.expect("cycle has a decreasing cell");
            let theta = theta.max(0.0);
            self.flow[[ei, ej]] += theta;
            for (idx, &(i, j)) in cells.iter().enumerate() {
                if idx % 2 == 0 {
                    self.flow[[i, j]] = (self.flow[[i, j]] - theta).max(0.0);
                } else {
                    self.flow[[i, j]] += theta;
                }
            }
            self.flow[leaving] = 0.0;
            self.basic[leaving] = false;
            self.basic[[ei, ej]] = true;
            self.pivots += 1;
        }
    }

    fn finish(self) -> ExactPlan {
        let mut cost = 0.0;
        for i in 0..self.m {
            for j in 0..self.n {
                cost += self.flow[[i, j]] * self.cost[[i, j]];
            }
        }
        ExactPlan {
            plan: self.flow,
            cost,
            row_potential: self.u,
            col_potential: self.v,
            pivots: self.pivots,
        }
    }
}
