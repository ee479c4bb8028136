//! Per-agent adaptive particle swarm.
//!
//! The active velocity coefficient is picked from `(w1, w0, w2)` by the
//! dispersion of the population around its centroid, then multiplies an
//! element-wise random modulation of the previous velocity:
//!
//! ```text
//! v <- w * (delta ⊙ v) + c_p * r1 ⊙ (pbest - x) + c_a * r2 ⊙ (attractor - x)
//! x <- clamp(x + v)
//! ```
//!
//! The two attraction terms stand in for the base optimizer that supplies
//! `delta`; without them the population never moves toward anything.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::objectives::LocalObjective;

/// Seed salt separating particle streams from other consumers of the master seed.
const SWARM_SEED_SALT: u64 = 0x5157_4152_4d00_0001;

/// Internal coefficient set `(w1, w0, w2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Used when the population is widely spread (`div > d2`).
    pub contract: f64,
    /// Used in the closed middle band `d1 <= div <= d2`.
    pub neutral: f64,
    /// Used when the population has collapsed (`div < d1`).
    pub expand: f64,
}

impl Coefficients {
    pub const NEUTRAL: f64 = 1.0;

    /// Maps guidance output `(d, c)` onto the set: `w1 = d`, `w0 = 1`, `w2 = c`.
    pub fn from_guidance(d: f64, c: f64) -> Self {
        Self {
            contract: d,
            neutral: Self::NEUTRAL,
            expand: c,
        }
    }
}

/// Divergence thresholds, `low < high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    low: f64,
    high: f64,
}

impl Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low >= 0.0 && low < high) {
            return Err(config(format!("divergence thresholds need 0 <= d1 < d2, got ({low}, {high})")));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

/// Swarm settings shared by all agents of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmParams {
    pub population: usize,
    /// Attraction toward the particle's own best, `c_p`.
    pub cognitive: f64,
    /// Attraction toward the agent attractor (last fused state), `c_a`.
    pub social: f64,
    /// Modulation `delta` is uniform on `[modulation_low, modulation_high]`.
    pub modulation_low: f64,
    pub modulation_high: f64,
    /// Initial velocities are uniform in `±fraction * box width / 2`.
    pub init_velocity_fraction: f64,
    /// `d1`; defaults to `0.1 * D` when absent.
    pub divergence_low: Option<f64>,
    /// `d2`; defaults to `10 * d1` when absent.
    pub divergence_high: Option<f64>,
    /// Teleport the worst particle onto each fused state.
    pub replace_worst_on_fusion: bool,
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            population: 10,
            cognitive: 0.8,
            social: 0.8,
            modulation_low: -0.5,
            modulation_high: 1.5,
            init_velocity_fraction: 0.1,
            divergence_low: None,
            divergence_high: None,
            replace_worst_on_fusion: true,
        }
    }
}

impl SwarmParams {
    pub fn thresholds(&self, dim: usize) -> Result<Thresholds> {
        let low = self.divergence_low.unwrap_or(0.1 * dim as f64);
        let high = self.divergence_high.unwrap_or(10.0 * low);
        Thresholds::new(low, high)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(config("swarm.population must be at least 1"));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.cognitive) || !finite_nonneg(self.social) {
            return Err(config("swarm attraction coefficients must be finite and nonnegative"));
        }
        if !(self.modulation_low.is_finite() && self.modulation_high.is_finite())
            || self.modulation_low > self.modulation_high
        {
            return Err(config("swarm modulation range must be finite with low <= high"));
        }
        if !finite_nonneg(self.init_velocity_fraction) {
            return Err(config("swarm.init_velocity_fraction must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Objective value at `position`, as last evaluated.
    pub value: f64,
    pub best_position: Vec<f64>,
    pub best_value: f64,
}

impl Particle {
    fn at_rest(position: Vec<f64>, value: f64) -> Self {
        Self {
            velocity: vec![0.0; position.len()],
            best_position: position.clone(),
            best_value: value,
            position,
            value,
        }
    }
}

/// Summary of one swarm step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Agent best value so far.
    pub best_value: f64,
    /// Mean Euclidean displacement of the particles.
    pub mean_displacement: f64,
}

/// Centroid and mean squared deviation of a point set.
pub fn spread<'a, I>(points: I) -> (Vec<f64>, f64)
where
    I: IntoIterator<Item = &'a [f64]>,
    I::IntoIter: Clone,
{
    let iter = points.into_iter();
    let mut count = 0usize;
    let mut centroid: Vec<f64> = Vec::new();
    for p in iter.clone() {
        if centroid.is_empty() {
            centroid = vec![0.0; p.len()];
        }
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v;
        }
        count += 1;
    }
    assert!(count > 0, "spread of an empty point set");
    for c in &mut centroid {
        *c /= count as f64;
    }
    let msd = iter
        .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / count as f64;
    (centroid, msd)
}

/// One agent's particle population and adaptive coefficient set.
#[derive(Debug, Clone)]
pub struct AgentSwarm {
    pub agent_id: usize,
    pub particles: Vec<Particle>,
    pub coefficients: Coefficients,
    pub thresholds: Thresholds,
    /// Agent-level state received from the last fusion.
    pub local_attractor: Vec<f64>,
    pub local_best_position: Vec<f64>,
    pub local_best_value: f64,
    pub cognitive: f64,
    pub social: f64,
    modulation: (f64, f64),
    replace_worst: bool,
    rng: ChaCha8Rng,
}

impl AgentSwarm {
    /// Uniform initialization inside the objective's box, with a per-agent
    /// random stream derived from `(master_seed, agent_id)`.
    pub fn new(
        agent_id: usize,
        params: &SwarmParams,
        coefficients: Coefficients,
        thresholds: Thresholds,
        objective: &impl LocalObjective,
        master_seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ SWARM_SEED_SALT);
        rng.set_stream(agent_id as u64);
        let bounds = objective.bounds();
        let dim = objective.dim();
        let particles: Vec<Particle> = (0..params.population)
            .map(|_| {
                let position: Vec<f64> = (0..dim)
                    .map(|j| sample_uniform(&mut rng, bounds.lower[j], bounds.upper[j]))
                    .collect();
                let velocity: Vec<f64> = (0..dim)
                    .map(|j| {
                        let half = 0.5 * params.init_velocity_fraction * bounds.width(j);
                        sample_uniform(&mut rng, -half, half)
                    })
                    .collect();
                let value = objective.eval(&position);
                Particle {
                    best_position: position.clone(),
                    best_value: value,
                    position,
                    velocity,
                    value,
                }
            })
            .collect();
        Self::from_particles(agent_id, particles, coefficients, thresholds, params, rng)
    }

    /// Builds a swarm around given particles (tests, replays).
    pub fn from_particles(
        agent_id: usize,
        particles: Vec<Particle>,
        coefficients: Coefficients,
        thresholds: Thresholds,
        params: &SwarmParams,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(config("a swarm needs at least one particle"));
        }
        let best = argmin(particles.iter().map(|p| p.best_value));
        let local_best_position = particles[best].best_position.clone();
        let local_best_value = particles[best].best_value;
        let rep = argmin(particles.iter().map(|p| p.value));
        let local_attractor = particles[rep].position.clone();
        Ok(Self {
            agent_id,
            particles,
            coefficients,
            thresholds,
            local_attractor,
            local_best_position,
            local_best_value,
            cognitive: params.cognitive,
            social: params.social,
            modulation: (params.modulation_low, params.modulation_high),
            replace_worst: params.replace_worst_on_fusion,
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.particles[0].position.len()
    }

    /// Mean particle position.
    pub fn centroid(&self) -> Vec<f64> {
        spread(self.particles.iter().map(|p| p.position.as_slice())).0
    }

    /// Mean squared distance of the particles from their centroid.
    pub fn divergence(&self) -> f64 {
        spread(self.particles.iter().map(|p| p.position.as_slice())).1
    }

    /// Regime-gated coefficient: `w2` below `d1`, `w1` above `d2`, `w0` on
    /// the closed band in between.
    pub fn select_coefficient(&self, div: f64) -> f64 {
        if div < self.thresholds.low {
            self.coefficients.expand
        } else if div > self.thresholds.high {
            self.coefficients.contract
        } else {
            self.coefficients.neutral
        }
    }

    /// Advances every particle once and updates personal and agent bests.
    pub fn step_particles(&mut self, active_coeff: f64, objective: &impl LocalObjective) -> Result<StepStats> {
        let dim = self.dim();
        let bounds = objective.bounds();
        let (mod_lo, mod_hi) = self.modulation;
        let mut displacement = 0.0;
        for p in &mut self.particles {
            let mut moved = 0.0;
            for j in 0..dim {
                let delta = sample_uniform(&mut self.rng, mod_lo, mod_hi);
                let r1: f64 = self.rng.random();
                let r2: f64 = self.rng.random();
                let x = p.position[j];
                let mut v = active_coeff * (delta * p.velocity[j])
                    + self.cognitive * r1 * (p.best_position[j] - x)
                    + self.social * r2 * (self.local_attractor[j] - x);
                let mut nx = x + v;
                if nx < bounds.lower[j] {
                    nx = bounds.lower[j];
                    v = 0.0;
                } else if nx > bounds.upper[j] {
                    nx = bounds.upper[j];
                    v = 0.0;
                }
                if !v.is_finite() || !nx.is_finite() {
                    return Err(Error::NumericalFault {
                        agent: self.agent_id,
                        iteration: 0,
                        what: if v.is_finite() { "position" } else { "velocity" },
                    });
                }
                moved += (nx - x) * (nx - x);
                p.velocity[j] = v;
                p.position[j] = nx;
            }
            displacement += moved.sqrt();
            p.value = objective.eval(&p.position);
            if p.value < p.best_value {
                p.best_value = p.value;
                p.best_position.clone_from(&p.position);
            }
            if p.value < self.local_best_value {
                self.local_best_value = p.value;
                self.local_best_position.clone_from(&p.position);
            }
        }
        Ok(StepStats {
            best_value: self.local_best_value,
            mean_displacement: displacement / self.particles.len() as f64,
        })
    }

    fn representative_index(&self) -> usize {
        argmin(self.particles.iter().map(|p| p.value))
    }

    /// Position of the best currently evaluated particle; ties go to the
    /// lowest index.
    pub fn representative_state(&self) -> &[f64] {
        &self.particles[self.representative_index()].position
    }

    /// Objective value at [`representative_state`](Self::representative_state).
    pub fn representative_value(&self) -> f64 {
        self.particles[self.representative_index()].value
    }

    /// Moves every particle by `shift` (clamped to the box) and re-evaluates
    /// it. Personal bests are kept.
    pub fn translate(&mut self, shift: &[f64], objective: &impl LocalObjective) {
        let bounds = objective.bounds();
        for p in &mut self.particles {
            for (j, x) in p.position.iter_mut().enumerate() {
                *x = (*x + shift[j]).clamp(bounds.lower[j], bounds.upper[j]);
            }
            p.value = objective.eval(&p.position);
            if p.value < p.best_value {
                p.best_value = p.value;
                p.best_position.clone_from(&p.position);
            }
            if p.value < self.local_best_value {
                self.local_best_value = p.value;
                self.local_best_position.clone_from(&p.position);
            }
        }
    }

    /// Hands the fused consensus state back to the population: it becomes
    /// the attractor and, if enabled, replaces the worst particle.
    pub fn inject_fused_state(&mut self, fused: &[f64], objective: &impl LocalObjective) {
        self.local_attractor.clear();
        self.local_attractor.extend_from_slice(fused);
        if !self.replace_worst {
            return;
        }
        let worst = argmax(self.particles.iter().map(|p| p.value));
        let value = objective.eval(fused);
        self.particles[worst] = Particle::at_rest(fused.to_vec(), value);
        if value < self.local_best_value {
            self.local_best_value = value;
            self.local_best_position = fused.to_vec();
        }
    }
}

fn sample_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// First index of the minimum (NaN sorts last).
fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_v || (i == 0 && v.is_nan()) {
            best = i;
            best_v = v;
        }
    }
    best
}

/// First index of the maximum; NaN counts as worst.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut worst = 0;
    let mut worst_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v.is_nan() {
            return i;
        }
        if v > worst_v {
            worst = i;
            worst_v = v;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{BenchmarkSpec, Family, LocalView};

    fn sphere(dim: usize) -> BenchmarkSpec {
        BenchmarkSpec::new(Family::Sphere, vec![vec![0.0; dim]], 100.0, None).unwrap()
    }

    fn swarm_at(points: &[Vec<f64>], params: &SwarmParams) -> AgentSwarm {
        let spec = sphere(points[0].len());
        let view = LocalView::new(&spec, 0);
        let particles = points
            .iter()
            .map(|p| Particle::at_rest(p.clone(), view.eval(p)))
            .collect();
        AgentSwarm::from_particles(
            0,
            particles,
            Coefficients::from_guidance(0.7, 1.3),
            Thresholds::new(1.0, 4.0).unwrap(),
            params,
            ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
    }

    #[test]
    fn centroid_examples() {
        let p = SwarmParams::default();
        assert_eq!(swarm_at(&vec![vec![2.5, -1.0]; 3], &p).centroid(), vec![2.5, -1.0]);
        assert_eq!(swarm_at(&[vec![0.0, 0.0], vec![2.0, 2.0]], &p).centroid(), vec![1.0, 1.0]);
        let c = swarm_at(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]], &p).centroid();
        assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn divergence_examples() {
        let p = SwarmParams::default();
        assert_eq!(swarm_at(&vec![vec![4.0, 4.0]; 5], &p).divergence(), 0.0);
        assert_eq!(swarm_at(&[vec![-1.0], vec![1.0]], &p).divergence(), 1.0);
        let d = swarm_at(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]], &p).divergence();
        assert!((d - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn coefficient_regimes() {
        let s = swarm_at(&[vec![0.0]], &SwarmParams::default());
        assert_eq!(s.select_coefficient(0.5), 1.3);
        assert_eq!(s.select_coefficient(1.0), 1.0);
        assert_eq!(s.select_coefficient(4.0), 1.0);
        assert_eq!(s.select_coefficient(10.0), 0.7);
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(Thresholds::new(2.0, 2.0).is_err());
        assert!(Thresholds::new(3.0, 1.0).is_err());
    }

    #[test]
    fn annihilating_coefficient_stops_particles() {
        let params = SwarmParams {
            cognitive: 0.0,
            social: 0.0,
            ..SwarmParams::default()
        };
        let spec = sphere(3);
        let view = LocalView::new(&spec, 0);
        let mut s = AgentSwarm::new(0, &params, Coefficients::from_guidance(0.7, 1.3), params.thresholds(3).unwrap(), &view, 4).unwrap();
        let before: Vec<_> = s.particles.iter().map(|p| p.position.clone()).collect();
        s.step_particles(0.0, &view).unwrap();
        for (p, b) in s.particles.iter().zip(&before) {
            assert!(p.velocity.iter().all(|v| *v == 0.0));
            assert_eq!(&p.position, b);
        }
    }

    #[test]
    fn identity_modulation_keeps_velocity() {
        let params = SwarmParams {
            cognitive: 0.0,
            social: 0.0,
            modulation_low: 1.0,
            modulation_high: 1.0,
            ..SwarmParams::default()
        };
        let spec = sphere(2);
        let view = LocalView::new(&spec, 0);
        let mut s = swarm_at(&[vec![0.0, 0.0], vec![5.0, 5.0]], &params);
        s.particles[0].velocity = vec![1.0, -2.0];
        s.particles[1].velocity = vec![0.5, 0.25];
        let before = s.particles.clone();
        s.step_particles(1.0, &view).unwrap();
        for (p, b) in s.particles.iter().zip(&before) {
            assert_eq!(p.velocity, b.velocity);
            let expect: Vec<f64> = b.position.iter().zip(&b.velocity).map(|(x, v)| x + v).collect();
            assert_eq!(p.position, expect);
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let params = SwarmParams::default();
        let spec = sphere(4);
        let view = LocalView::new(&spec, 0);
        let make = || {
            let mut s = AgentSwarm::new(3, &params, Coefficients::from_guidance(0.7, 1.3), params.thresholds(4).unwrap(), &view, 99).unwrap();
            for _ in 0..20 {
                let w = s.select_coefficient(s.divergence());
                s.step_particles(w, &view).unwrap();
            }
            s.particles
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn representative_is_argmin_with_low_index_ties() {
        let p = SwarmParams::default();
        let single = swarm_at(&[vec![3.0]], &p);
        assert_eq!(single.representative_state(), &[3.0]);
        // values 5 and 3 on a 1-D sphere: sqrt(5), sqrt(3)
        let two = swarm_at(&[vec![5f64.sqrt()], vec![3f64.sqrt()]], &p);
        assert_eq!(two.representative_state(), &[3f64.sqrt()]);
        let tie = swarm_at(&[vec![2.0], vec![-2.0]], &p);
        assert_eq!(tie.representative_state(), &[2.0]);
    }

    #[test]
    fn injection_replaces_worst_and_sets_attractor() {
        let spec = sphere(2);
        let view = LocalView::new(&spec, 0);
        let mut s = swarm_at(&[vec![1.0, 0.0], vec![4.0, 4.0], vec![0.5, 0.5]], &SwarmParams::default());
        let best = s.representative_state().to_vec();
        s.inject_fused_state(&best, &view);
        assert_eq!(s.local_attractor, best);
        assert_eq!(s.particles[1].position, best);
        assert_eq!(s.particles[1].velocity, vec![0.0, 0.0]);

        let fused = vec![-3.0, 1.0];
        s.inject_fused_state(&fused, &view);
        assert_eq!(s.local_attractor, fused);
        let injected = s.particles.iter().find(|p| p.position == fused).unwrap();
        assert_eq!(injected.best_value, view.eval(&fused));
    }

    #[test]
    fn positions_stay_in_bounds_and_bests_monotone() {
        let params = SwarmParams::default();
        let spec = BenchmarkSpec::new(Family::Rastrigin, vec![vec![90.0; 5]], 100.0, None).unwrap();
        let view = LocalView::new(&spec, 0);
        let mut s = AgentSwarm::new(0, &params, Coefficients::from_guidance(0.5, 1.8), params.thresholds(5).unwrap(), &view, 12).unwrap();
        let mut bests: Vec<f64> = s.particles.iter().map(|p| p.best_value).collect();
        let mut agent_best = s.local_best_value;
        for _ in 0..300 {
            let w = s.select_coefficient(s.divergence());
            let stats = s.step_particles(w, &view).unwrap();
            assert!(stats.best_value <= agent_best);
            agent_best = stats.best_value;
            for (p, b) in s.particles.iter().zip(bests.iter_mut()) {
                assert!(spec.bounds.contains(&p.position));
                assert!(p.best_value <= *b);
                assert!(p.best_value <= p.value);
                *b = p.best_value;
            }
        }
    }

    #[test]
    fn contracting_coefficient_shrinks_velocity() {
        let params = SwarmParams {
            cognitive: 0.0,
            social: 0.0,
            population: 20,
            ..SwarmParams::default()
        };
        let spec = BenchmarkSpec::new(Family::Sphere, vec![vec![0.0; 3]], 1e12, None).unwrap();
        let view = LocalView::new(&spec, 0);
        let mut s = AgentSwarm::new(0, &params, Coefficients::from_guidance(0.7, 1.3), params.thresholds(3).unwrap(), &view, 5).unwrap();
        let mean_speed = |s: &AgentSwarm| {
            s.particles
                .iter()
                .map(|p| p.velocity.iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                / s.particles.len() as f64
        };
        let mut speeds = vec![mean_speed(&s)];
        for _ in 0..300 {
            s.step_particles(0.9, &view).unwrap();
            speeds.push(mean_speed(&s));
        }
        // E[|0.9 * delta|^2] = 0.81 * 7/12 < 1, so the decay is geometric
        let early: f64 = speeds[..30].iter().sum();
        let late: f64 = speeds[270..].iter().sum();
        assert!(late < 1e-6 * early, "late {late} early {early}");
        let trend = speeds.windows(30).step_by(30).map(|w| w.iter().sum::<f64>()).collect::<Vec<_>>();
        assert!(trend.windows(2).all(|w| w[1] < w[0]));
    }
}
