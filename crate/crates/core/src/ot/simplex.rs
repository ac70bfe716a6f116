//! Exact small-instance Kantorovich solver.
//!
//! Transportation simplex on the bipartite flow network, initialized with
//! the north-west-corner rule and pivoted with Bland's rule so degenerate
//! instances cannot cycle. Intended as the oracle for tests and for the
//! ≤64-point exact transfer path, not as a production-scale solver.

use crate::error::{Error, Result};
use crate::ot::{validate_distribution, CostMatrix, TransportPlan};

/// Largest instance side the exact solver accepts.
pub const EXACT_SOLVER_LIMIT: usize = 64;

const MAX_PIVOTS: usize = 200_000;

/// Solve the discrete Kantorovich problem exactly.
///
/// Weights must be probability vectors; marginal errors of the returned plan
/// are at the level of float rounding (≤ 1e-12 for well-balanced inputs).
pub fn exact_ot_small(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (n, m) = (cost.rows(), cost.cols());
    if n > EXACT_SOLVER_LIMIT || m > EXACT_SOLVER_LIMIT {
        return Err(Error::ExactSolverLimit {
            rows: n,
            cols: m,
            limit: EXACT_SOLVER_LIMIT,
        });
    }
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "weights {}/{} vs cost {}x{}",
            a.len(),
            b.len(),
            n,
            m
        )));
    }
    validate_distribution(a, "source")?;
    validate_distribution(b, "target")?;

    // Rebalance the target side exactly onto the source mass; reduced-cost
    // optimality of the final basis does not depend on the marginals, so the
    // optimal tree found for the scaled instance is optimal for the original.
    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    let scale = sum_a / sum_b;
    let bs: Vec<f64> = b.iter().map(|w| w * scale).collect();

    let mut state = Basis::north_west(a, &bs);
    let tol = 1e-11 * (1.0 + cost.max_entry());
    let mut pivots = 0usize;
    loop {
        let (u, v) = state.potentials(cost);
        // Bland: first improving cell in row-major order.
        let mut entering = None;
        'scan: for i in 0..n {
            for j in 0..m {
                if !state.in_basis[i * m + j] && cost.entry(i, j) - u[i] - v[j] < -tol {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::Numerical(format!(
                "simplex exceeded {MAX_PIVOTS} pivots"
            )));
        }
        state.pivot(ei, ej);
    }

    // Re-derive flows on the optimal tree by leaf elimination: exact up to
    // float associativity, independent of accumulated pivot arithmetic.
    let coupling = state.tree_flows(a, &bs);
    Ok(TransportPlan::from_parts(coupling, n, m, a, b, pivots))
}

/// Simplex basis: a spanning tree on row-nodes `0..n` and column-nodes
/// `n..n+m`, stored as the set of basic cells plus their flows.
struct Basis {
    n: usize,
    m: usize,
    in_basis: Vec<bool>,
    flow: Vec<f64>,
    cells: Vec<(usize, usize)>,
}

impl Basis {
    /// North-west-corner initialization. Advancing exactly one index per
    /// step yields n + m - 1 basic cells forming a staircase tree, with
    /// zero-flow cells on ties.
    fn north_west(a: &[f64], b: &[f64]) -> Basis {
        let (n, m) = (a.len(), b.len());
        let mut ar = a.to_vec();
        let mut br = b.to_vec();
        let mut in_basis = vec![false; n * m];
        let mut flow = vec![0.0; n * m];
        let mut cells = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ar[i].min(br[j]);
            in_basis[i * m + j] = true;
            flow[i * m + j] = x.max(0.0);
            cells.push((i, j));
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i < n - 1 && (ar[i] <= br[j] || j == m - 1) {
                br[j] -= ar[i];
                ar[i] = 0.0;
                i += 1;
            } else {
                ar[i] -= br[j];
                br[j] = 0.0;
                j += 1;
            }
        }
        debug_assert_eq!(cells.len(), n + m - 1);
        Basis {
            n,
            m,
            in_basis,
            flow,
            cells,
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (t, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.n + j, t));
            adj[self.n + j].push((i, t));
        }
        adj
    }

    /// Dual potentials: u[0] = 0, u_i + v_j = c_ij on basic cells.
    fn potentials(&self, cost: &CostMatrix) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(other, t) in &adj[node] {
                let (i, j) = self.cells[t];
                if other >= self.n {
                    if v[other - self.n].is_nan() {
                        v[other - self.n] = cost.entry(i, j) - u[i];
                        stack.push(other);
                    }
                } else if u[other].is_nan() {
                    u[other] = cost.entry(i, j) - v[j];
                    stack.push(other);
                }
            }
        }
        (u, v)
    }

    /// Bring cell (ei, ej) into the basis, pushing flow around the unique
    /// tree cycle and dropping the binding leaving cell.
    fn pivot(&mut self, ei: usize, ej: usize) {
        let adj = self.adjacency();
        // Tree path from row-node ei to column-node n + ej.
        let total = self.n + self.m;
        let mut parent = vec![usize::MAX; total];
        let mut parent_cell = vec![usize::MAX; total];
        let mut visited = vec![false; total];
        visited[ei] = true;
        let mut queue = std::collections::VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == self.n + ej {
                break;
            }
            for &(other, t) in &adj[node] {
                if !visited[other] {
                    visited[other] = true;
                    parent[other] = node;
                    parent_cell[other] = t;
                    queue.push_back(other);
                }
            }
        }
        // Path cells from the column end back to the row end; walked from the
        // entering cell they alternate -, +, -, ...
        let mut path = Vec::new();
        let mut node = self.n + ej;
        while node != ei {
            path.push(parent_cell[node]);
            node = parent[node];
        }
        // path[0] is incident to the entering column, so it takes sign -1;
        // signs alternate from there around the cycle.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (pos, &t) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = self.flow[cell_index(self.cells[t], self.m)];
                let replace = match leaving {
                    None => true,
                    // Lowest cell index breaks ties, keeping Bland's rule
                    // deterministic on degenerate pivots.
                    Some(l) => f < theta || (f == theta && self.cells[t] < self.cells[l]),
                };
                if replace {
                    theta = f;
                    leaving = Some(t);
                }
            }
        }
        let leaving = leaving.expect("cycle always has a leaving cell");
        let theta = theta.max(0.0);
        // Apply the flow change.
        for (pos, &t) in path.iter().enumerate() {
            let idx = cell_index(self.cells[t], self.m);
            if pos % 2 == 0 {
                self.flow[idx] = (self.flow[idx] - theta).max(0.0);
            } else {
                self.flow[idx] += theta;
            }
        }
        let (li, lj) = self.cells[leaving];
        self.in_basis[li * self.m + lj] = false;
        self.flow[li * self.m + lj] = 0.0;
        self.cells[leaving] = (ei, ej);
        self.in_basis[ei * self.m + ej] = true;
        self.flow[ei * self.m + ej] = theta;
    }

    /// Unique flows on the basis tree satisfying the marginals, by leaf
    /// elimination. Tiny negative values from degeneracy are clamped to 0.
    fn tree_flows(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let total = self.n + self.m;
        let mut residual: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
        let adj = self.adjacency();
        let mut degree: Vec<usize> = adj.iter().map(|v| v.len()).collect();
        let mut used = vec![false; self.cells.len()];
        let mut out = vec![0.0; self.n * self.m];
        let mut leaves: Vec<usize> = (0..total).filter(|&p| degree[p] == 1).collect();
        let mut processed = 0;
        while let Some(p) = leaves.pop() {
            let Some(&(other, t)) = adj[p].iter().find(|&&(_, t)| !used[t]) else {
                continue;
            };
            used[t] = true;
            processed += 1;
            let (i, j) = self.cells[t];
            out[i * self.m + j] = residual[p].max(0.0);
            residual[other] -= residual[p];
            residual[p] = 0.0;
            degree[p] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push(other);
            }
        }
        debug_assert_eq!(processed, self.cells.len());
        out
    }
}

fn cell_index((i, j): (usize, usize), m: usize) -> usize {
    i * m + j
}
