//! Round loop: local swarm steps, guidance refresh, weighted fusion,
//! histories and metrics.
//!
//! Every round has two phases. In phase 1 each agent measures its particle
//! divergence, picks the active coefficient and steps its swarm, then
//! publishes a representative state. Phase 2 is the barrier: guidance is
//! refreshed when the scheduler gates fire, every agent fuses the published
//! states of its closed neighborhood, and the fused state is injected back
//! into its swarm.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{check_admissibility, measured_perturbation, MatrixLog};
use crate::cooperation::{
    assemble_mixing_matrix, build_descriptor, fuse_states, project_weights, CooperationWeights, NeighborDescriptor,
};
use crate::error::{config, Error, Result};
use crate::guidance::llm::{LlmEndpoint, LlmProvider};
use crate::guidance::{
    quartiles, ActGuidance, ActHeuristicParams, ActRequest, CoopRequest, GuidanceCounters, GuidanceProvider,
    HeuristicProvider, NeighborStats, TrajectoryPoint, ACT_WINDOW, COOP_WINDOW, DEFAULT_C, DEFAULT_D,
};
use crate::history::{AgentHistory, HistoryRecord, DEFAULT_HISTORY_CAPACITY};
use crate::objectives::{DistributedProblem, LocalView};
use crate::scheduler::{calibrate_horizon, gate_ext, gate_int, stage, PcgConfig};
use crate::swarm::{spread, AgentSwarm, Coefficients, SwarmParams};
use crate::topology::{validate, CommGraph, GraphSpec};

/// Which learning mechanisms are switched on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Fixed coefficients, uniform weights.
    Baseline,
    ActOnly,
    CoopOnly,
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::CoopOnly, Variant::ActOnly, Variant::Full];

    pub fn uses_act(self) -> bool {
        matches!(self, Variant::ActOnly | Variant::Full)
    }

    pub fn uses_coop(self) -> bool {
        matches!(self, Variant::CoopOnly | Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::ActOnly => "act-only",
            Variant::CoopOnly => "coop-only",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" => Ok(Variant::Baseline),
            "act" | "act-only" | "actonly" => Ok(Variant::ActOnly),
            "coop" | "coop-only" | "cooponly" => Ok(Variant::CoopOnly),
            "full" => Ok(Variant::Full),
            other => Err(config(format!(
                "unknown variant `{other}` (expected baseline, act, coop or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[default]
    Heuristic,
    Llm,
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "heuristic" => Ok(ProviderKind::Heuristic),
            "llm" => Ok(ProviderKind::Llm),
            other => Err(config(format!("unknown provider `{other}` (expected heuristic or llm)"))),
        }
    }
}

/// Late-stage behaviour once `t >= T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stabilization {
    /// Clamp the active coefficient to at most 1.
    pub clamp_active: bool,
    /// Per-iteration factor applied to the personal-best pull, so the local
    /// search adjustment around the fused state fades out. 1 disables it.
    pub cognitive_decay: f64,
    /// Per-iteration factor applied to the (clamped) active coefficient.
    pub inertia_decay: f64,
    /// Carry the whole population along with the fused state.
    pub recenter: bool,
}

impl Default for Stabilization {
    fn default() -> Self {
        Self {
            clamp_active: true,
            cognitive_decay: 0.95,
            inertia_decay: 0.95,
            recenter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub max_iterations: usize,
    pub convergence_threshold: f64,
    pub num_runs: usize,
    pub master_seed: u64,
    pub log_every: usize,
    pub provider: ProviderKind,
    pub llm: LlmEndpoint,
    pub act_heuristic: ActHeuristicParams,
    pub pcg: PcgConfig,
    /// Replace `pcg.horizon` by a probe-based estimate before the run.
    pub calibrate_horizon: bool,
    pub probe_length: usize,
    pub swarm: SwarmParams,
    pub stabilization: Stabilization,
    pub graph: GraphSpec,
    pub history_capacity: usize,
    /// Window of the descriptor and pairwise-disagreement averages.
    pub descriptor_window: usize,
    /// Run phase 1 on the rayon pool. Results are identical to serial mode.
    pub parallel: bool,
    /// Keep every distinct mixing matrix in the report.
    pub record_matrices: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            max_iterations: 5000,
            convergence_threshold: 1e-7,
            num_runs: 25,
            master_seed: 0,
            log_every: 1,
            provider: ProviderKind::Heuristic,
            llm: LlmEndpoint::default(),
            act_heuristic: ActHeuristicParams::default(),
            pcg: PcgConfig::default(),
            calibrate_horizon: false,
            probe_length: 200,
            swarm: SwarmParams::default(),
            stabilization: Stabilization::default(),
            graph: GraphSpec::default(),
            history_capacity: DEFAULT_HISTORY_CAPACITY,
            descriptor_window: COOP_WINDOW,
            parallel: false,
            record_matrices: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(config("max_iterations must be positive"));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(config("convergence_threshold must be positive"));
        }
        if self.num_runs == 0 {
            return Err(config("num_runs must be positive"));
        }
        if self.log_every == 0 {
            return Err(config("log_every must be positive"));
        }
        if self.history_capacity < ACT_WINDOW.max(self.descriptor_window) {
            return Err(config(format!(
                "history_capacity must be at least {}",
                ACT_WINDOW.max(self.descriptor_window)
            )));
        }
        if self.descriptor_window == 0 {
            return Err(config("descriptor_window must be positive"));
        }
        if self.calibrate_horizon && self.probe_length < 10 {
            return Err(config("probe_length must be at least 10"));
        }
        let s = &self.stabilization;
        if !(s.cognitive_decay > 0.0 && s.cognitive_decay <= 1.0) {
            return Err(config("stabilization.cognitive_decay must lie in (0, 1]"));
        }
        if !(s.inertia_decay > 0.0 && s.inertia_decay <= 1.0) {
            return Err(config("stabilization.inertia_decay must lie in (0, 1]"));
        }
        self.pcg.validate()?;
        self.swarm.validate()
    }

    /// Seed of the `run`-th repetition.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.master_seed.wrapping_add(run as u64)
    }

    /// Provider named by the config. Baseline never queries it.
    pub fn make_provider(&self) -> Box<dyn GuidanceProvider> {
        match self.provider {
            ProviderKind::Heuristic => Box::new(HeuristicProvider::new(self.act_heuristic)),
            ProviderKind::Llm => Box::new(LlmProvider::new(self.llm.clone().with_env_overrides(), self.act_heuristic)),
        }
    }
}

/// `(1/N) sum_i |x_i - mean|^2`.
pub fn disagreement<S: AsRef<[f64]>>(states: &[S]) -> f64 {
    spread(states.iter().map(AsRef::as_ref)).1
}

/// Mean distance from `own` to each neighbor state; 0 without neighbors.
pub fn local_disagreement<S: AsRef<[f64]>>(own: &[f64], neighbor_states: &[S]) -> f64 {
    if neighbor_states.is_empty() {
        return 0.0;
    }
    neighbor_states.iter().map(|s| distance(own, s.as_ref())).sum::<f64>() / neighbor_states.len() as f64
}

/// Adds one round of traffic: a state vector plus the descriptor triple on
/// every directed edge. Guidance queries are agent-local and free.
pub fn accrue_comm_cost(counter: u64, graph: &CommGraph, dim: usize) -> u64 {
    counter + (graph.num_directed_edges() * (dim + NeighborDescriptor::WIRE_SCALARS)) as u64
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_state<S: AsRef<[f64]>>(states: &[S]) -> Vec<f64> {
    spread(states.iter().map(AsRef::as_ref)).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Global objective at the mean state. Offline metric only.
    pub global_fitness: f64,
    pub disagreement: f64,
    pub comm_cost: u64,
    pub stage: u8,
    pub gate_int: bool,
    pub gate_ext: bool,
    /// `|x(t) - A(t) x(t-1)|`; 0 on the initial row.
    pub perturbation: f64,
}

/// A mixing matrix and the first iteration it was used at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedMatrix {
    pub from_iteration: usize,
    pub rows: Vec<Vec<f64>>,
}

impl RecordedMatrix {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        DMatrix::from_fn(n, n, |i, k| self.rows[i].get(k).copied().unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub master_seed: u64,
    pub horizon: usize,
    pub trace: Vec<TraceRow>,
    pub final_states: Vec<Vec<f64>>,
    pub final_mean_state: Vec<f64>,
    /// Global objective at the mean state.
    pub final_fitness: f64,
    /// Mean of each agent's local objective at its own state.
    pub mean_local_fitness: f64,
    /// Smallest global objective over the individual agent states.
    pub best_agent_fitness: f64,
    pub converged_at: Option<usize>,
    pub total_comm_cost: u64,
    pub guidance: GuidanceCounters,
    pub int_refreshes: usize,
    pub ext_refreshes: usize,
    pub matrices_checked: usize,
    pub admissibility_violations: usize,
    pub fault: Option<String>,
    pub wall_clock_secs: f64,
    pub graph_edges: Vec<(usize, usize)>,
    pub num_agents: usize,
    pub matrices: Vec<RecordedMatrix>,
}

impl RunReport {
    pub fn disagreement_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.disagreement).collect()
    }

    /// Perturbation norms of every round (the initial row is skipped).
    pub fn perturbation_trace(&self) -> Vec<f64> {
        self.trace.iter().skip(1).map(|r| r.perturbation).collect()
    }

    pub fn matrix_log(&self) -> MatrixLog {
        MatrixLog {
            num_agents: self.num_agents,
            graph_edges: self.graph_edges.clone(),
            matrices: self.matrices.clone(),
        }
    }

    pub fn last_iteration(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iteration)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            variant: self.variant,
            master_seed: self.master_seed,
            horizon: self.horizon,
            iterations: self.last_iteration(),
            converged_at: self.converged_at,
            final_fitness: self.final_fitness,
            mean_local_fitness: self.mean_local_fitness,
            best_agent_fitness: self.best_agent_fitness,
            final_disagreement: self.trace.last().map_or(0.0, |r| r.disagreement),
            total_comm_cost: self.total_comm_cost,
            act_calls: self.guidance.act_calls,
            coop_calls: self.guidance.coop_calls,
            fallbacks: self.guidance.fallbacks,
            admissibility_violations: self.admissibility_violations,
            fault: self.fault.clone(),
            wall_clock_secs: self.wall_clock_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub master_seed: u64,
    pub horizon: usize,
    pub iterations: usize,
    pub converged_at: Option<usize>,
    pub final_fitness: f64,
    pub mean_local_fitness: f64,
    pub best_agent_fitness: f64,
    pub final_disagreement: f64,
    pub total_comm_cost: u64,
    pub act_calls: usize,
    pub coop_calls: usize,
    pub fallbacks: usize,
    pub admissibility_violations: usize,
    pub fault: Option<String>,
    pub wall_clock_secs: f64,
}

pub const CSV_HEADER: &str = "iteration,global_fitness_mean_state,disagreement,comm_cost,stage,gate_int,gate_ext";

/// Trace rows whose iteration is a multiple of `log_every`, plus the last.
pub fn write_trace_csv(report: &RunReport, log_every: usize, mut out: impl Write) -> std::io::Result<()> {
    let every = log_every.max(1);
    writeln!(out, "{CSV_HEADER}")?;
    let last = report.trace.len().saturating_sub(1);
    for (idx, r) in report.trace.iter().enumerate() {
        if r.iteration % every == 0 || idx == last {
            writeln!(
                out,
                "{},{:e},{:e},{},{},{},{}",
                r.iteration,
                r.global_fitness,
                r.disagreement,
                r.comm_cost,
                r.stage,
                u8::from(r.gate_int),
                u8::from(r.gate_ext)
            )?;
        }
    }
    Ok(())
}

/// Mutable state of one run between rounds.
pub struct Simulation<'a, P: DistributedProblem + ?Sized> {
    cfg: &'a RunConfig,
    problem: &'a P,
    graph: CommGraph,
    pcg: PcgConfig,
    swarms: Vec<AgentSwarm>,
    histories: Vec<AgentHistory>,
    /// `pair_history[i][j]`: recent distances to the j-th neighbor of i.
    pair_history: Vec<Vec<VecDeque<f64>>>,
    states: Vec<Vec<f64>>,
    weights: Vec<CooperationWeights>,
    guidance: Vec<ActGuidance>,
    comm_cost: u64,
    int_refreshes: usize,
    ext_refreshes: usize,
    matrices_checked: usize,
    admissibility_violations: usize,
    matrices: Vec<RecordedMatrix>,
    last_recorded: Option<DMatrix<f64>>,
}

/// What one round produced, for the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    pub disagreement: f64,
    pub perturbation: f64,
    pub gate_int: bool,
    pub gate_ext: bool,
}

impl<'a, P: DistributedProblem + ?Sized> Simulation<'a, P> {
    /// Validates the config, builds the graph, seeds every swarm and records
    /// the warm-up history entry.
    pub fn new(cfg: &'a RunConfig, problem: &'a P, horizon: usize) -> Result<Self> {
        cfg.validate()?;
        let n = problem.num_agents();
        if n == 0 {
            return Err(config("problem has no agents"));
        }
        let graph = cfg.graph.build(n)?;
        if let Some(v) = validate(&graph).violation {
            return Err(config(format!("communication graph: {v}")));
        }
        let pcg = PcgConfig { horizon, ..cfg.pcg };
        pcg.validate()?;
        let thresholds = cfg.swarm.thresholds(problem.dim())?;
        let coeffs = Coefficients::from_guidance(DEFAULT_D, DEFAULT_C);
        let swarms = (0..n)
            .map(|i| {
                AgentSwarm::new(i, &cfg.swarm, coeffs, thresholds, &LocalView::new(problem, i), cfg.master_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let states: Vec<Vec<f64>> = swarms.iter().map(|s| s.representative_state().to_vec()).collect();
        let weights = (0..n).map(|i| CooperationWeights::uniform(&graph, i)).collect();
        let pair_history = (0..n)
            .map(|i| graph.neighbors(i).iter().map(|_| VecDeque::new()).collect())
            .collect();
        let mut sim = Self {
            cfg,
            problem,
            graph,
            pcg,
            histories: (0..n).map(|_| AgentHistory::new(cfg.history_capacity)).collect(),
            pair_history,
            states,
            weights,
            guidance: vec![ActGuidance { d: DEFAULT_D, c: DEFAULT_C }; n],
            swarms,
            comm_cost: 0,
            int_refreshes: 0,
            ext_refreshes: 0,
            matrices_checked: 0,
            admissibility_violations: 0,
            matrices: Vec::new(),
            last_recorded: None,
        };
        let published = sim.states.clone();
        let values: Vec<f64> = sim.swarms.iter().map(AgentSwarm::representative_value).collect();
        let divergences: Vec<f64> = sim.swarms.iter().map(AgentSwarm::divergence).collect();
        sim.record_history(0, &published, &values, &divergences, &vec![0.0; n])?;
        Ok(sim)
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn swarms(&self) -> &[AgentSwarm] {
        &self.swarms
    }

    pub fn weights(&self) -> &[CooperationWeights] {
        &self.weights
    }

    pub fn coefficients(&self, agent: usize) -> ActGuidance {
        self.guidance[agent]
    }

    pub fn histories(&self) -> &[AgentHistory] {
        &self.histories
    }

    pub fn comm_cost(&self) -> u64 {
        self.comm_cost
    }

    pub fn horizon(&self) -> usize {
        self.pcg.horizon
    }

    fn record_history(
        &mut self,
        t: usize,
        published: &[Vec<f64>],
        values: &[f64],
        divergences: &[f64],
        deltas: &[f64],
    ) -> Result<()> {
        let window = self.cfg.descriptor_window;
        for i in 0..published.len() {
            let neighbors = self.graph.neighbors(i);
            let dists: Vec<f64> = neighbors.iter().map(|&k| distance(&published[i], &published[k])).collect();
            for (q, d) in self.pair_history[i].iter_mut().zip(&dists) {
                if q.len() == window {
                    q.pop_front();
                }
                q.push_back(*d);
            }
            let local = if dists.is_empty() { 0.0 } else { dists.iter().sum::<f64>() / dists.len() as f64 };
            self.histories[i].push(HistoryRecord {
                iteration: t,
                best_fitness: values[i],
                divergence: divergences[i],
                state_delta: deltas[i],
                local_disagreement: local,
            })?;
        }
        Ok(())
    }

    fn act_request(&self, agent: usize, t: usize) -> ActRequest {
        let h = &self.histories[agent];
        let all: Vec<f64> = h.iter().map(|r| r.local_disagreement).collect();
        ActRequest {
            iteration: t,
            current_d: self.guidance[agent].d,
            current_c: self.guidance[agent].c,
            trajectory: h
                .recent(ACT_WINDOW)
                .into_iter()
                .map(|r| TrajectoryPoint {
                    iteration: r.iteration,
                    fitness: r.best_fitness,
                    disagreement: r.local_disagreement,
                })
                .collect(),
            disagreement_quartiles: quartiles(&all),
        }
    }

    fn coop_request(&self, agent: usize, descriptors: &[NeighborDescriptor]) -> CoopRequest {
        let mean = |q: &VecDeque<f64>| if q.is_empty() { 0.0 } else { q.iter().sum::<f64>() / q.len() as f64 };
        let neighbors = self.graph.neighbors(agent);
        let stats = neighbors
            .iter()
            .zip(&self.pair_history[agent])
            .map(|(&k, q)| NeighborStats {
                avg_fitness: descriptors[k].avg_fitness,
                avg_disagreement: mean(q),
            })
            .collect();
        let own_window = self.histories[agent].recent(self.cfg.descriptor_window);
        let own_dis = own_window.iter().map(|r| r.local_disagreement).sum::<f64>() / own_window.len().max(1) as f64;
        CoopRequest {
            owner: agent,
            neighbor_ids: neighbors.to_vec(),
            stats,
            own: NeighborStats {
                avg_fitness: descriptors[agent].avg_fitness,
                avg_disagreement: own_dis,
            },
        }
    }

    /// One synchronous round at iteration `t >= 1`.
    pub fn step_round(&mut self, t: usize, provider: &mut dyn GuidanceProvider) -> Result<RoundOutcome> {
        let late = t >= self.pcg.horizon;
        let stab = self.cfg.stabilization;
        let elapsed = if late { (t - self.pcg.horizon + 1).min(i32::MAX as usize) as i32 } else { 0 };
        let cognitive = self.cfg.swarm.cognitive * stab.cognitive_decay.powi(elapsed);
        let inertia_scale = stab.inertia_decay.powi(elapsed);
        let problem = self.problem;

        // phase 1: local search, one agent per swarm
        let step = |s: &mut AgentSwarm| -> Result<f64> {
            let div = s.divergence();
            let mut w = s.select_coefficient(div);
            if late && stab.clamp_active {
                w = w.min(1.0);
            }
            w *= inertia_scale;
            s.cognitive = cognitive;
            s.step_particles(w, &LocalView::new(problem, s.agent_id))?;
            Ok(div)
        };
        let divergences: Vec<f64> = if self.cfg.parallel {
            self.swarms.par_iter_mut().map(step).collect::<Result<_>>()
        } else {
            self.swarms.iter_mut().map(step).collect::<Result<_>>()
        }
        .map_err(|e| with_iteration(e, t))?;
        let published: Vec<Vec<f64>> = self.swarms.iter().map(|s| s.representative_state().to_vec()).collect();
        let values: Vec<f64> = self.swarms.iter().map(AgentSwarm::representative_value).collect();
        let descriptors = self
            .histories
            .iter()
            .map(|h| build_descriptor(h, self.cfg.descriptor_window))
            .collect::<Result<Vec<_>>>()?;
        self.comm_cost = accrue_comm_cost(self.comm_cost, &self.graph, problem.dim());

        // phase 2: barrier, guidance, fusion
        let variant = self.cfg.variant;
        let gi = gate_int(t, &self.pcg);
        let ge = gate_ext(t, &self.pcg);
        if gi && variant.uses_act() {
            self.int_refreshes += 1;
            for i in 0..self.swarms.len() {
                let g = provider.advise_act(&self.act_request(i, t));
                let g = ActGuidance::clamped(g.d, g.c);
                self.guidance[i] = g;
                self.swarms[i].coefficients = Coefficients::from_guidance(g.d, g.c);
            }
        }
        if ge && variant.uses_coop() {
            self.ext_refreshes += 1;
            for i in 0..self.swarms.len() {
                let req = self.coop_request(i, &descriptors);
                let raw = provider.advise_coop(&req).to_raw_map(&req);
                self.weights[i] = project_weights(&raw, &self.graph, i);
            }
        }
        let a = assemble_mixing_matrix(&self.weights, &self.graph)?;
        self.matrices_checked += 1;
        if !check_admissibility(&a, &self.graph).passed() {
            self.admissibility_violations += 1;
        }
        debug_assert!(check_admissibility(&a, &self.graph).passed());
        if self.cfg.record_matrices && self.last_recorded.as_ref() != Some(&a) {
            self.matrices.push(RecordedMatrix {
                from_iteration: t,
                rows: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            });
            self.last_recorded = Some(a.clone());
        }
        let fused = self
            .weights
            .iter()
            .map(|w| fuse_states(w, &published))
            .collect::<Result<Vec<_>>>()?;
        let (_, xi) = measured_perturbation(&fused, &a, &self.states);
        let recenter = late && stab.recenter;
        for (i, s) in self.swarms.iter_mut().enumerate() {
            let view = LocalView::new(problem, i);
            if recenter {
                let shift: Vec<f64> = fused[i].iter().zip(&published[i]).map(|(f, p)| f - p).collect();
                s.translate(&shift, &view);
            }
            s.inject_fused_state(&fused[i], &view);
        }
        let deltas: Vec<f64> = fused.iter().zip(&self.states).map(|(a, b)| distance(a, b)).collect();
        self.states = fused;
        self.record_history(t, &published, &values, &divergences, &deltas)?;
        Ok(RoundOutcome {
            disagreement: disagreement(&self.states),
            perturbation: xi,
            gate_int: gi,
            gate_ext: ge,
        })
    }

    fn row(&self, t: usize, out: Option<RoundOutcome>) -> TraceRow {
        let mean = mean_state(&self.states);
        TraceRow {
            iteration: t,
            global_fitness: self.problem.eval_global(&mean),
            disagreement: out.map_or_else(|| disagreement(&self.states), |o| o.disagreement),
            comm_cost: self.comm_cost,
            stage: stage(t, &self.pcg),
            gate_int: out.is_some_and(|o| o.gate_int),
            gate_ext: out.is_some_and(|o| o.gate_ext),
            perturbation: out.map_or(0.0, |o| o.perturbation),
        }
    }

    fn into_report(self, trace: Vec<TraceRow>, converged_at: Option<usize>, fault: Option<String>, provider: &dyn GuidanceProvider, started: Instant) -> RunReport {
        let mean = mean_state(&self.states);
        let n = self.states.len();
        let mean_local = (0..n).map(|i| self.problem.eval_local(i, &self.states[i])).sum::<f64>() / n as f64;
        let best_agent = self
            .states
            .iter()
            .map(|s| self.problem.eval_global(s))
            .fold(f64::INFINITY, f64::min);
        RunReport {
            variant: self.cfg.variant,
            master_seed: self.cfg.master_seed,
            horizon: self.pcg.horizon,
            final_fitness: self.problem.eval_global(&mean),
            mean_local_fitness: mean_local,
            best_agent_fitness: best_agent,
            final_mean_state: mean,
            final_states: self.states,
            converged_at,
            total_comm_cost: self.comm_cost,
            guidance: provider.counters(),
            int_refreshes: self.int_refreshes,
            ext_refreshes: self.ext_refreshes,
            matrices_checked: self.matrices_checked,
            admissibility_violations: self.admissibility_violations,
            fault,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            graph_edges: self.graph.edges(),
            num_agents: n,
            matrices: self.matrices,
            trace,
        }
    }
}

fn with_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::NumericalFault { agent, what, .. } => Error::NumericalFault { agent, iteration, what },
        other => other,
    }
}

/// Runs the configured variant with the provider named in `cfg`.
pub fn run<P: DistributedProblem + ?Sized>(cfg: &RunConfig, problem: &P) -> Result<RunReport> {
    let mut provider = cfg.make_provider();
    run_with_provider(cfg, problem, provider.as_mut())
}

/// Horizon used by a run: the configured one, or a probe estimate.
pub fn resolve_horizon<P: DistributedProblem + ?Sized>(cfg: &RunConfig, problem: &P) -> Result<usize> {
    if cfg.calibrate_horizon {
        probe_horizon(cfg, problem)
    } else {
        Ok(cfg.pcg.horizon)
    }
}

/// Short Baseline run whose disagreement trace calibrates `T`.
pub fn probe_horizon<P: DistributedProblem + ?Sized>(cfg: &RunConfig, problem: &P) -> Result<usize> {
    let probe_cfg = RunConfig {
        variant: Variant::Baseline,
        max_iterations: cfg.probe_length.max(1),
        calibrate_horizon: false,
        record_matrices: false,
        // the probe must not enter the late stage
        pcg: PcgConfig {
            horizon: cfg.probe_length.max(cfg.pcg.horizon) + 1,
            ..cfg.pcg
        },
        ..cfg.clone()
    };
    let mut provider = HeuristicProvider::new(cfg.act_heuristic);
    let mut sim = Simulation::new(&probe_cfg, problem, probe_cfg.pcg.horizon)?;
    let mut trace = vec![disagreement(sim.states())];
    for t in 1..=probe_cfg.max_iterations {
        trace.push(sim.step_round(t, &mut provider)?.disagreement);
    }
    Ok(calibrate_horizon(&trace, cfg.convergence_threshold, cfg.pcg.horizon))
}

/// Runs until disagreement drops below the threshold or the budget is spent.
/// A numerical fault ends the run early and is reported in `fault`.
pub fn run_with_provider<P: DistributedProblem + ?Sized>(
    cfg: &RunConfig,
    problem: &P,
    provider: &mut dyn GuidanceProvider,
) -> Result<RunReport> {
    let started = Instant::now();
    let horizon = resolve_horizon(cfg, problem)?;
    let mut sim = Simulation::new(cfg, problem, horizon)?;
    let mut trace = vec![sim.row(0, None)];
    let mut converged_at = (trace[0].disagreement < cfg.convergence_threshold).then_some(0);
    let mut fault = None;
    if converged_at.is_none() {
        for t in 1..=cfg.max_iterations {
            match sim.step_round(t, provider) {
                Ok(out) => {
                    trace.push(sim.row(t, Some(out)));
                    if out.disagreement < cfg.convergence_threshold {
                        converged_at = Some(t);
                        break;
                    }
                }
                Err(e @ Error::NumericalFault { .. }) => {
                    fault = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(sim.into_report(trace, converged_at, fault, provider, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_spec, BenchmarkSpec, Family};

    #[test]
    fn disagreement_examples() {
        assert_eq!(disagreement(&vec![vec![1.0, 2.0]; 4]), 0.0);
        assert_eq!(disagreement(&[vec![0.0], vec![2.0]]), 1.0);
        let d = disagreement(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]]);
        assert!((d - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn local_disagreement_examples() {
        let own = [1.0, 1.0];
        assert_eq!(local_disagreement(&own, &[own, own]), 0.0);
        assert_eq!(local_disagreement(&[0.0], &[[3.0]]), 3.0);
        assert_eq!(local_disagreement(&[0.0], &[[1.0], [-3.0]]), 2.0);
    }

    #[test]
    fn comm_cost_examples() {
        let ring = CommGraph::ring(4).unwrap();
        assert_eq!(accrue_comm_cost(0, &ring, 5), 64);
        assert_eq!(accrue_comm_cost(64, &ring, 5), 128);
        let single = CommGraph::complete(1).unwrap();
        assert_eq!(accrue_comm_cost(0, &single, 10), 0);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("coop".parse::<Variant>().unwrap(), Variant::CoopOnly);
        assert_eq!("Act_Only".parse::<Variant>().unwrap(), Variant::ActOnly);
        assert!("both".parse::<Variant>().is_err());
    }

    fn small_cfg(variant: Variant) -> RunConfig {
        RunConfig {
            variant,
            max_iterations: 120,
            pcg: PcgConfig { horizon: 60, ..PcgConfig::default() },
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_agent_converges_immediately() {
        let spec = BenchmarkSpec::new(Family::Sphere, vec![vec![1.0; 3]], 10.0, None).unwrap();
        let cfg = RunConfig { graph: GraphSpec::Complete, ..small_cfg(Variant::Full) };
        let r = run(&cfg, &spec).unwrap();
        assert_eq!(r.converged_at, Some(0));
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.total_comm_cost, 0);
    }

    #[test]
    fn variant_gating_counts() {
        let spec = make_spec(Family::Rastrigin, 6, 4, 1.0, 5.0, 3).unwrap();
        for v in Variant::ALL {
            let r = run(&small_cfg(v), &spec).unwrap();
            assert_eq!(r.guidance.act_calls > 0, v.uses_act(), "{v}");
            assert_eq!(r.guidance.coop_calls > 0, v.uses_coop(), "{v}");
            assert!(r.int_refreshes <= 2);
        }
        let full = run(&small_cfg(Variant::Full), &spec).unwrap();
        assert_eq!(full.int_refreshes, 2);
        assert_eq!(full.guidance.act_calls, 2 * 6);
    }

    #[test]
    fn baseline_keeps_uniform_weights_and_defaults() {
        let spec = make_spec(Family::Sphere, 5, 3, 2.0, 10.0, 1).unwrap();
        let cfg = small_cfg(Variant::Baseline);
        let mut sim = Simulation::new(&cfg, &spec, 60).unwrap();
        let mut p = HeuristicProvider::default();
        for t in 1..=40 {
            sim.step_round(t, &mut p).unwrap();
        }
        for i in 0..5 {
            assert_eq!(sim.weights()[i], CooperationWeights::uniform(sim.graph(), i));
            assert_eq!(sim.coefficients(i), ActGuidance { d: 0.7, c: 1.3 });
        }
    }

    #[test]
    fn weights_hold_between_refreshes() {
        let spec = make_spec(Family::Ackley, 6, 3, 2.0, 10.0, 2).unwrap();
        let cfg = small_cfg(Variant::CoopOnly);
        let mut sim = Simulation::new(&cfg, &spec, 60).unwrap();
        let mut p = HeuristicProvider::default();
        let mut prev = sim.weights().to_vec();
        for t in 1..=30 {
            let out = sim.step_round(t, &mut p).unwrap();
            if !out.gate_ext {
                assert_eq!(sim.weights(), prev.as_slice(), "t={t}");
            }
            prev = sim.weights().to_vec();
        }
    }

    #[test]
    fn published_states_replaced_by_fused() {
        let spec = make_spec(Family::Sphere, 4, 2, 2.0, 10.0, 5).unwrap();
        let cfg = small_cfg(Variant::Full);
        let mut sim = Simulation::new(&cfg, &spec, 60).unwrap();
        let mut p = HeuristicProvider::default();
        sim.step_round(1, &mut p).unwrap();
        for (i, s) in sim.swarms.iter().enumerate() {
            assert_eq!(s.local_attractor, sim.states()[i]);
        }
    }

    #[test]
    fn trace_invariants() {
        let spec = make_spec(Family::Griewank, 6, 4, 2.0, 20.0, 4).unwrap();
        let r = run(&small_cfg(Variant::Full), &spec).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1].comm_cost >= w[0].comm_cost));
        assert!(r.trace.windows(2).all(|w| w[1].stage >= w[0].stage));
        assert_eq!(r.admissibility_violations, 0);
        assert_eq!(r.matrices_checked, r.last_iteration());
    }

    #[test]
    fn csv_rows_follow_log_every() {
        let spec = make_spec(Family::Sphere, 4, 2, 2.0, 10.0, 5).unwrap();
        let cfg = RunConfig { max_iterations: 23, ..small_cfg(Variant::Baseline) };
        let r = run(&cfg, &spec).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&r, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let iters: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(iters, ["0", "5", "10", "15", "20", "23"]);
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = make_spec(Family::Rastrigin, 6, 4, 1.0, 5.0, 8).unwrap();
        let serial = run(&small_cfg(Variant::Full), &spec).unwrap();
        let par = run(&RunConfig { parallel: true, ..small_cfg(Variant::Full) }, &spec).unwrap();
        assert_eq!(serial.trace, par.trace);
        assert_eq!(serial.final_states, par.final_states);
    }

    #[test]
    fn invalid_config_rejected() {
        let spec = make_spec(Family::Sphere, 4, 2, 2.0, 10.0, 5).unwrap();
        let cfg = RunConfig { max_iterations: 0, ..RunConfig::default() };
        assert!(matches!(run(&cfg, &spec), Err(Error::Config(_))));
        let cfg = RunConfig { convergence_threshold: 0.0, ..RunConfig::default() };
        assert!(matches!(run(&cfg, &spec), Err(Error::Config(_))));
    }
}
