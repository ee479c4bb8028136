//! Advisory layer proposing internal coefficients `(d, c)` and raw
//! cooperation weights from trajectory windows.
//!
//! Two providers exist: a deterministic heuristic that follows the rules
//! spelled out in the prompt templates, and an HTTP-backed language model
//! that falls back to the heuristic whenever a query or its parse fails.

pub mod llm;
pub mod prompt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use llm::{LlmClient, LlmEndpoint, LlmProvider};
pub use prompt::{build_act_prompt, build_coop_prompt, parse_act_response, parse_coop_response, ParseFailure};

pub const D_RANGE: (f64, f64) = (0.5, 1.0);
pub const C_RANGE: (f64, f64) = (1.0, 1.8);
pub const DEFAULT_D: f64 = 0.7;
pub const DEFAULT_C: f64 = 1.3;
/// Trajectory entries in an act request.
pub const ACT_WINDOW: usize = 19;
/// Window of the cooperation statistics.
pub const COOP_WINDOW: usize = 10;
/// Self weight added before projection.
pub const SELF_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub fitness: f64,
    pub disagreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActRequest {
    pub iteration: usize,
    pub current_d: f64,
    pub current_c: f64,
    /// Oldest first, at most [`ACT_WINDOW`] entries.
    pub trajectory: Vec<TrajectoryPoint>,
    /// 25th and 75th percentile of the agent's own disagreement history.
    pub disagreement_quartiles: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActGuidance {
    pub d: f64,
    pub c: f64,
}

impl ActGuidance {
    pub fn clamped(d: f64, c: f64) -> Self {
        Self {
            d: d.clamp(D_RANGE.0, D_RANGE.1),
            c: c.clamp(C_RANGE.0, C_RANGE.1),
        }
    }

    pub fn in_range(&self) -> bool {
        (D_RANGE.0..=D_RANGE.1).contains(&self.d) && (C_RANGE.0..=C_RANGE.1).contains(&self.c)
    }
}

impl Default for ActGuidance {
    fn default() -> Self {
        Self { d: DEFAULT_D, c: DEFAULT_C }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborStats {
    pub avg_fitness: f64,
    pub avg_disagreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopRequest {
    pub owner: usize,
    pub neighbor_ids: Vec<usize>,
    /// Aligned with `neighbor_ids`.
    pub stats: Vec<NeighborStats>,
    /// The owner's own window statistics.
    pub own: NeighborStats,
}

/// Raw, unprojected cooperation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopGuidance {
    /// Aligned with the request's `neighbor_ids`.
    pub neighbor_weights: Vec<f64>,
    pub self_weight: f64,
}

impl CoopGuidance {
    /// Keyed by agent index, ready for projection.
    pub fn to_raw_map(&self, req: &CoopRequest) -> BTreeMap<usize, f64> {
        let mut m: BTreeMap<usize, f64> = req
            .neighbor_ids
            .iter()
            .copied()
            .zip(self.neighbor_weights.iter().copied())
            .collect();
        m.insert(req.owner, self.self_weight);
        m
    }
}

/// Tuning knobs of the heuristic act rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActHeuristicParams {
    /// Relative improvement over the window below which fitness counts as stalled.
    pub stall_eps: f64,
    pub d_step: f64,
    pub c_step: f64,
    /// Fraction of the gap to the defaults closed on the else branch.
    pub decay: f64,
}

impl Default for ActHeuristicParams {
    fn default() -> Self {
        Self {
            stall_eps: 1e-3,
            d_step: 0.05,
            c_step: 0.1,
            decay: 0.1,
        }
    }
}

/// Stalled fitness with low disagreement raises `c`; stalled fitness with
/// high disagreement raises `d`; otherwise both relax toward the defaults.
pub fn heuristic_advise_act(req: &ActRequest, params: &ActHeuristicParams) -> ActGuidance {
    let d = sanitize(req.current_d, DEFAULT_D);
    let c = sanitize(req.current_c, DEFAULT_C);
    let (Some(first), Some(last)) = (req.trajectory.first(), req.trajectory.last()) else {
        return ActGuidance::clamped(d, c);
    };
    let improvement = (first.fitness - last.fitness) / first.fitness.abs().max(1e-12);
    let mean_g = req.trajectory.iter().map(|p| p.disagreement).sum::<f64>() / req.trajectory.len() as f64;
    let (theta_low, theta_high) = req.disagreement_quartiles;
    let stalled = !(improvement >= params.stall_eps);
    if stalled && mean_g < theta_low {
        ActGuidance::clamped(d, (c + params.c_step).min(C_RANGE.1))
    } else if stalled && mean_g > theta_high {
        ActGuidance::clamped((d + params.d_step).min(D_RANGE.1), c)
    } else {
        ActGuidance::clamped(
            d + params.decay * (DEFAULT_D - d),
            c + params.decay * (DEFAULT_C - c),
        )
    }
}

fn sanitize(v: f64, fallback: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        fallback
    }
}

/// Average ranks (0-based, lower value first); ties share their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

const BEST_WEIGHT: f64 = 0.4;
const WORST_WEIGHT: f64 = 0.15;

/// Rank-based neighbor weighting: fitness rank counts twice, disagreement
/// rank once. The best score maps to 0.4 and the worst to 0.15 (the centers
/// of the two bands), linearly in between; a single neighbor or a full tie
/// gets 0.4.
pub fn heuristic_advise_coop(req: &CoopRequest) -> CoopGuidance {
    let fit: Vec<f64> = req.stats.iter().map(|s| nan_last(s.avg_fitness)).collect();
    let dis: Vec<f64> = req.stats.iter().map(|s| nan_last(s.avg_disagreement)).collect();
    let rf = ranks(&fit);
    let rd = ranks(&dis);
    let scores: Vec<f64> = rf.iter().zip(&rd).map(|(f, d)| 2.0 * f + d).collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let neighbor_weights = scores
        .iter()
        .map(|s| if hi > lo { BEST_WEIGHT - (BEST_WEIGHT - WORST_WEIGHT) * (s - lo) / (hi - lo) } else { 0.4 })
        .collect();
    CoopGuidance {
        neighbor_weights,
        self_weight: SELF_WEIGHT,
    }
}

fn nan_last(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Call and failure counters, for variant-gating checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceCounters {
    pub act_calls: usize,
    pub coop_calls: usize,
    /// Queries answered by the heuristic because the model failed.
    pub fallbacks: usize,
}

pub trait GuidanceProvider: Send {
    fn advise_act(&mut self, req: &ActRequest) -> ActGuidance;
    fn advise_coop(&mut self, req: &CoopRequest) -> CoopGuidance;
    fn counters(&self) -> GuidanceCounters;
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicProvider {
    pub params: ActHeuristicParams,
    counters: GuidanceCounters,
}

impl HeuristicProvider {
    pub fn new(params: ActHeuristicParams) -> Self {
        Self {
            params,
            counters: GuidanceCounters::default(),
        }
    }
}

impl GuidanceProvider for HeuristicProvider {
    fn advise_act(&mut self, req: &ActRequest) -> ActGuidance {
        self.counters.act_calls += 1;
        heuristic_advise_act(req, &self.params)
    }

    fn advise_coop(&mut self, req: &CoopRequest) -> CoopGuidance {
        self.counters.coop_calls += 1;
        heuristic_advise_coop(req)
    }

    fn counters(&self) -> GuidanceCounters {
        self.counters
    }
}

/// 25th and 75th percentiles (nearest-rank on the sorted sample).
pub fn quartiles(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    (at(0.25), at(0.75))
}
