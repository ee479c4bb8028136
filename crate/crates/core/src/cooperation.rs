//! Neighbor descriptors, weight projection and consensus fusion.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::history::AgentHistory;
use crate::topology::CommGraph;

/// Three scalars a neighbor publishes about its recent trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborDescriptor {
    pub avg_fitness: f64,
    pub avg_divergence: f64,
    pub avg_state_delta: f64,
}

impl NeighborDescriptor {
    /// Scalars per descriptor on the wire.
    pub const WIRE_SCALARS: usize = 3;
}

/// Window means over the most recent `min(window, len)` records.
pub fn build_descriptor(history: &AgentHistory, window: usize) -> Result<NeighborDescriptor> {
    if history.is_empty() {
        return Err(contract("descriptor requested from an empty history"));
    }
    if window == 0 {
        return Err(contract("descriptor window must be positive"));
    }
    let recent = history.recent(window);
    let n = recent.len() as f64;
    let mean = |f: fn(&crate::history::HistoryRecord) -> f64| recent.iter().map(f).sum::<f64>() / n;
    Ok(NeighborDescriptor {
        avg_fitness: mean(|r| r.best_fitness),
        avg_divergence: mean(|r| r.divergence),
        avg_state_delta: mean(|r| r.state_delta),
    })
}

/// One row of the mixing matrix: weights over `N_i ∪ {i}`, sorted by agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooperationWeights {
    owner: usize,
    entries: Vec<(usize, f64)>,
}

impl CooperationWeights {
    /// Uniform row over the closed neighborhood.
    pub fn uniform(graph: &CommGraph, owner: usize) -> Self {
        let members = graph.closed_neighborhood(owner);
        let w = 1.0 / members.len() as f64;
        Self {
            owner,
            entries: members.into_iter().map(|k| (k, w)).collect(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, agent: usize) -> f64 {
        self.entries
            .binary_search_by_key(&agent, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn to_map(&self) -> BTreeMap<usize, f64> {
        self.entries.iter().copied().collect()
    }
}

/// Projects raw candidate weights onto the feasible rows.
///
/// Keys outside `N_i ∪ {i}` are dropped, missing members count as zero,
/// negative or non-finite values are clamped to zero, and the rest is
/// normalized. An all-zero row falls back to uniform.
pub fn project_weights(raw: &BTreeMap<usize, f64>, graph: &CommGraph, owner: usize) -> CooperationWeights {
    let members = graph.closed_neighborhood(owner);
    let clamped: Vec<f64> = members
        .iter()
        .map(|k| match raw.get(k) {
            Some(v) if v.is_finite() && *v > 0.0 => *v,
            _ => 0.0,
        })
        .collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return CooperationWeights::uniform(graph, owner);
    }
    CooperationWeights {
        owner,
        entries: members.into_iter().zip(clamped.into_iter().map(|v| v / total)).collect(),
    }
}

/// `sum_k a_ik x_k` over the row's members.
pub fn fuse_states<S: AsRef<[f64]>>(weights: &CooperationWeights, states: &[S]) -> Result<Vec<f64>> {
    let dim = states
        .get(weights.owner)
        .map(|s| s.as_ref().len())
        .ok_or_else(|| contract(format!("missing state of agent {}", weights.owner)))?;
    let mut out = vec![0.0; dim];
    for &(k, a) in &weights.entries {
        let x = states
            .get(k)
            .ok_or_else(|| contract(format!("missing state of agent {k}")))?
            .as_ref();
        if x.len() != dim {
            return Err(contract("states have mismatched dimensions"));
        }
        for (o, v) in out.iter_mut().zip(x) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Dense `N x N` matrix with row `i` taken from agent `i`'s weights.
pub fn assemble_mixing_matrix(all_weights: &[CooperationWeights], graph: &CommGraph) -> Result<DMatrix<f64>> {
    let n = graph.num_agents();
    if all_weights.len() != n {
        return Err(contract(format!("expected {n} weight rows, got {}", all_weights.len())));
    }
    let mut a = DMatrix::zeros(n, n);
    for (i, row) in all_weights.iter().enumerate() {
        if row.owner != i {
            return Err(contract(format!("row {i} belongs to agent {}", row.owner)));
        }
        for &(k, w) in &row.entries {
            if k >= n {
                return Err(contract(format!("row {i} references agent {k}")));
            }
            a[(i, k)] = w;
        }
    }
    Ok(a)
}
