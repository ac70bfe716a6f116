//! Discrete Kantorovich solvers: entropic (Sinkhorn) and exact
//! (transportation simplex) on small instances, plus the cost-matrix and
//! plan-cost plumbing shared by both.

mod simplex;
mod sinkhorn;

pub use simplex::{exact_ot_small, EXACT_SOLVER_LIMIT};
pub use sinkhorn::{sinkhorn, LOG_DOMAIN_EPSILON};

use crate::error::{Error, Result};
use crate::features::WeightedPointCloud;

/// Ground cost between support points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    SquaredEuclidean,
    Euclidean,
}

/// Dense pairwise cost matrix between two clouds.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    entries: Vec<f64>,
    rows: usize,
    cols: usize,
    kind: CostKind,
}

impl CostMatrix {
    /// Wrap raw entries, validating finiteness and nonnegativity.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>, kind: CostKind) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "cost matrix {}x{} with {} entries",
                rows,
                cols,
                entries.len()
            )));
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CostMatrix {
            entries,
            rows,
            cols,
            kind,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }
}

/// Pairwise costs between two clouds of equal dimension.
pub fn cost_matrix(a: &WeightedPointCloud, b: &WeightedPointCloud, kind: CostKind) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cloud dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (n, m) = (a.len(), b.len());
    let mut entries = Vec::with_capacity(n * m);
    for i in 0..n {
        let p = a.point(i);
        for j in 0..m {
            let q = b.point(j);
            let sq: f64 = p
                .iter()
                .zip(q)
                .map(|(x, y)| {
                    let d = x - y;
                    d * d
                })
                .sum();
            entries.push(match kind {
                CostKind::SquaredEuclidean => sq,
                CostKind::Euclidean => sq.sqrt(),
            });
        }
    }
    CostMatrix::from_entries(n, m, entries, kind)
}

/// Coupling between two discrete distributions along with feasibility
/// diagnostics.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    coupling: Vec<f64>,
    rows: usize,
    cols: usize,
    /// L1 distance between the row sums and the source weights.
    pub row_marginal_error: f64,
    /// L1 distance between the column sums and the target weights.
    pub col_marginal_error: f64,
    /// Scaling iterations (Sinkhorn) or simplex pivots (exact).
    pub iterations_used: usize,
}

impl TransportPlan {
    pub(crate) fn from_parts(
        coupling: Vec<f64>,
        rows: usize,
        cols: usize,
        a: &[f64],
        b: &[f64],
        iterations_used: usize,
    ) -> Self {
        let (row_err, col_err) = marginal_errors(&coupling, rows, cols, a, b);
        TransportPlan {
            coupling,
            rows,
            cols,
            row_marginal_error: row_err,
            col_marginal_error: col_err,
            iterations_used,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coupling[i * self.cols..(i + 1) * self.cols]
    }

    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    pub fn max_marginal_error(&self) -> f64 {
        self.row_marginal_error.max(self.col_marginal_error)
    }
}

fn marginal_errors(coupling: &[f64], rows: usize, cols: usize, a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut row_err = 0.0;
    for i in 0..rows {
        let sum: f64 = coupling[i * cols..(i + 1) * cols].iter().sum();
        row_err += (sum - a[i]).abs();
    }
    let mut col_err = 0.0;
    for j in 0..cols {
        let mut sum = 0.0;
        for i in 0..rows {
            sum += coupling[i * cols + j];
        }
        col_err += (sum - b[j]).abs();
    }
    (row_err, col_err)
}

/// Expected cost of a plan: sum of coupling times cost, entrywise.
pub fn plan_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.rows() != cost.rows() || plan.cols() != cost.cols() {
        return Err(Error::DimensionMismatch(format!(
            "plan {}x{} vs cost {}x{}",
            plan.rows(),
            plan.cols(),
            cost.rows(),
            cost.cols()
        )));
    }
    Ok(plan
        .coupling
        .iter()
        .zip(cost.entries())
        .map(|(p, c)| p * c)
        .sum())
}

/// Check that `w` is a probability vector: nonnegative entries summing to 1.
pub(crate) fn validate_distribution(w: &[f64], what: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} weights empty")));
    }
    let mut total = 0.0;
    for &x in w {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{what} weight {x} must be nonnegative"
            )));
        }
        total += x;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "{what} weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}
