//! Runtime checks of the consensus-preservation conditions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::RecordedMatrix;
use crate::error::Result;
use crate::topology::CommGraph;

/// Row-sum tolerance used when verifying assembled matrices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub row_stochastic: bool,
    pub max_row_sum_deviation: f64,
    pub nonnegative: bool,
    pub min_entry: f64,
    pub graph_compatible: bool,
    /// First `(i, k)` with a nonzero weight outside `N_i ∪ {i}`.
    pub first_incompatible: Option<(usize, usize)>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.row_stochastic && self.nonnegative && self.graph_compatible
    }
}

/// Verifies nonnegativity, graph compatibility and unit row sums.
///
/// A matrix whose shape does not match the graph is reported as failing
/// every check.
pub fn check_admissibility(a: &DMatrix<f64>, graph: &CommGraph) -> AdmissibilityReport {
    let n = graph.num_agents();
    if a.nrows() != n || a.ncols() != n {
        return AdmissibilityReport {
            row_stochastic: false,
            max_row_sum_deviation: f64::INFINITY,
            nonnegative: false,
            min_entry: f64::NAN,
            graph_compatible: false,
            first_incompatible: None,
        };
    }
    let mut max_dev = 0.0f64;
    let mut min_entry = f64::INFINITY;
    let mut nonnegative = true;
    let mut first_incompatible = None;
    for i in 0..n {
        let mut sum = 0.0;
        for k in 0..n {
            let v = a[(i, k)];
            sum += v;
            // NaN compares false everywhere, so test the positive form
            if !(v >= 0.0) {
                nonnegative = false;
            }
            min_entry = min_entry.min(v);
            if v != 0.0 && !graph.is_member(i, k) && first_incompatible.is_none() {
                first_incompatible = Some((i, k));
            }
        }
        let dev = (sum - 1.0).abs();
        max_dev = if dev.is_nan() { f64::INFINITY } else { max_dev.max(dev) };
    }
    AdmissibilityReport {
        row_stochastic: max_dev <= ROW_SUM_TOLERANCE,
        max_row_sum_deviation: max_dev,
        nonnegative,
        min_entry,
        graph_compatible: first_incompatible.is_none(),
        first_incompatible,
    }
}

/// `xi = x_next - A x` for stacked agent states, with its Frobenius norm.
pub fn measured_perturbation<S: AsRef<[f64]>>(x_next: &[S], a: &DMatrix<f64>, x: &[S]) -> (Vec<Vec<f64>>, f64) {
    let n = x.len();
    assert_eq!(x_next.len(), n, "stacked states must have matching agent counts");
    assert!(a.nrows() == n && a.ncols() == n, "mixing matrix must be N x N");
    let dim = x.first().map(|s| s.as_ref().len()).unwrap_or(0);
    let mut xi = Vec::with_capacity(n);
    let mut sq = 0.0;
    for i in 0..n {
        let mut row: Vec<f64> = x_next[i].as_ref().to_vec();
        assert_eq!(row.len(), dim, "state dimensions must match");
        for k in 0..n {
            let w = a[(i, k)];
            if w != 0.0 {
                for (r, v) in row.iter_mut().zip(x[k].as_ref()) {
                    *r -= w * v;
                }
            }
        }
        sq += row.iter().map(|v| v * v).sum::<f64>();
        xi.push(row);
    }
    (xi, sq.sqrt())
}

/// True iff the mean of the last `window` entries is strictly below the mean
/// of the `window` entries before them.
pub fn contraction_check(trace: &[f64], window: usize) -> bool {
    if window == 0 || trace.len() < 2 * window {
        return false;
    }
    let len = trace.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&trace[len - window..]) < mean(&trace[len - 2 * window..len - window])
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

/// Mixing matrices of one run together with the graph they were built on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixLog {
    pub num_agents: usize,
    pub graph_edges: Vec<(usize, usize)>,
    pub matrices: Vec<RecordedMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub checked: usize,
    pub violations: usize,
    pub max_row_sum_deviation: f64,
    /// `from_iteration` of the first failing matrix.
    pub first_violation: Option<usize>,
}

impl ReplaySummary {
    pub fn admissible(&self) -> bool {
        self.violations == 0
    }
}

/// Re-runs the admissibility check over every matrix of a log.
pub fn replay_matrix_log(log: &MatrixLog) -> Result<ReplaySummary> {
    let graph = CommGraph::from_edges(log.num_agents, &log.graph_edges)?;
    let mut summary = ReplaySummary {
        checked: 0,
        violations: 0,
        max_row_sum_deviation: 0.0,
        first_violation: None,
    };
    for m in &log.matrices {
        let report = check_admissibility(&m.to_matrix(), &graph);
        summary.checked += 1;
        summary.max_row_sum_deviation = summary.max_row_sum_deviation.max(report.max_row_sum_deviation);
        if !report.passed() {
            summary.violations += 1;
            summary.first_violation.get_or_insert(m.from_iteration);
        }
    }
    Ok(summary)
}
