//! Cooperative multi-target localization from RSS measurements.
//!
//! Sensor `i` at a known position `y_i` measures
//! `phi_it = P0 - 10 n_p log10(|p_t - y_i| / d0) + noise` for every target
//! `t`, and its local objective is the squared mismatch between those
//! readings and the path-loss model evaluated at a candidate placement.
//! The decision vector concatenates the candidate target positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::objectives::{Bounds, DistributedProblem};

/// Attempts at drawing a non-degenerate sensor/target layout.
const MAX_LAYOUT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WsnParams {
    pub num_sensors: usize,
    pub num_targets: usize,
    /// Reference RSS at `d0`.
    pub p0: f64,
    pub d0: f64,
    pub path_loss_exponent: f64,
    pub noise_sigma: f64,
    /// Deployment volume `[0, x] x [0, y] x [0, z]`.
    pub area: [f64; 3],
}

impl Default for WsnParams {
    fn default() -> Self {
        Self {
            num_sensors: 8,
            num_targets: 1,
            p0: -40.0,
            d0: 1.0,
            path_loss_exponent: 3.0,
            noise_sigma: 0.0,
            area: [50.0, 50.0, 20.0],
        }
    }
}

impl WsnParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_sensors == 0 || self.num_targets == 0 {
            return Err(config("wsn.num_sensors and wsn.num_targets must be positive"));
        }
        if !(self.d0 > 0.0) || !(self.path_loss_exponent > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(config("wsn needs d0 > 0, path_loss_exponent > 0 and noise_sigma >= 0"));
        }
        if self.area.iter().any(|a| !(*a > 0.0)) {
            return Err(config("wsn.area extents must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsnScenario {
    pub sensor_positions: Vec<[f64; 3]>,
    pub true_targets: Vec<[f64; 3]>,
    pub p0: f64,
    pub d0: f64,
    pub path_loss_exponent: f64,
    pub noise_sigma: f64,
    pub area: [f64; 3],
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl WsnScenario {
    pub fn new(
        sensor_positions: Vec<[f64; 3]>,
        true_targets: Vec<[f64; 3]>,
        p0: f64,
        d0: f64,
        path_loss_exponent: f64,
        noise_sigma: f64,
        area: [f64; 3],
    ) -> Result<Self> {
        if sensor_positions.is_empty() || true_targets.is_empty() {
            return Err(config("WSN scenario needs at least one sensor and one target"));
        }
        if !(d0 > 0.0) || !(path_loss_exponent > 0.0) || !(noise_sigma >= 0.0) {
            return Err(config("WSN scenario needs d0 > 0, n_p > 0 and noise >= 0"));
        }
        if area.iter().any(|a| !(*a > 0.0)) {
            return Err(config("WSN area extents must be positive"));
        }
        Ok(Self {
            sensor_positions,
            true_targets,
            p0,
            d0,
            path_loss_exponent,
            noise_sigma,
            area,
        })
    }

    /// Sensors on a jittered grid (two layers once there are four or more),
    /// targets uniform in the interior of the area.
    pub fn generate(params: &WsnParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = params.num_sensors;
        let layers = if n >= 4 { 2 } else { 1 };
        let per_layer = n.div_ceil(layers);
        let gx = (per_layer as f64).sqrt().ceil() as usize;
        let gy = per_layer.div_ceil(gx);
        let [ax, ay, az] = params.area;
        let min_sep = params.d0 / 100.0;
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            let mut sensors = Vec::with_capacity(n);
            'fill: for l in 0..layers {
                for cy in 0..gy {
                    for cx in 0..gx {
                        if sensors.len() == n {
                            break 'fill;
                        }
                        let jitter = |rng: &mut ChaCha8Rng, cell: usize, count: usize, extent: f64| {
                            let w = extent / count as f64;
                            w * (cell as f64 + rng.random_range(0.25..0.75))
                        };
                        sensors.push([
                            jitter(&mut rng, cx, gx, ax),
                            jitter(&mut rng, cy, gy, ay),
                            jitter(&mut rng, l, layers, az),
                        ]);
                    }
                }
            }
            let targets: Vec<[f64; 3]> = (0..params.num_targets)
                .map(|_| {
                    [
                        rng.random_range(0.1 * ax..0.9 * ax),
                        rng.random_range(0.1 * ay..0.9 * ay),
                        rng.random_range(0.1 * az..0.9 * az),
                    ]
                })
                .collect();
            let degenerate = sensors
                .iter()
                .any(|s| targets.iter().any(|t| dist(s, t) <= min_sep));
            if !degenerate {
                return Self::new(
                    sensors,
                    targets,
                    params.p0,
                    params.d0,
                    params.path_loss_exponent,
                    params.noise_sigma,
                    params.area,
                );
            }
        }
        Err(config("could not draw a non-degenerate WSN layout"))
    }

    pub fn num_sensors(&self) -> usize {
        self.sensor_positions.len()
    }

    pub fn num_targets(&self) -> usize {
        self.true_targets.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.true_targets.len()
    }

    /// Path-loss model reading at distance `d`, with `d` floored at `d0/100`.
    pub fn model_rss(&self, d: f64) -> f64 {
        let d = d.max(self.d0 / 100.0);
        self.p0 - 10.0 * self.path_loss_exponent * (d / self.d0).log10()
    }

    /// Concatenated true target positions.
    pub fn truth_encoding(&self) -> Vec<f64> {
        self.true_targets.iter().flatten().copied().collect()
    }

    pub fn bounds(&self) -> Bounds {
        let k = self.num_targets();
        Bounds {
            lower: vec![0.0; 3 * k],
            upper: (0..k).flat_map(|_| self.area).collect(),
        }
    }
}

/// RSS matrix `phi[i][t]`, noise drawn from `seed`.
pub fn gen_measurements(scn: &WsnScenario, seed: u64) -> Result<Vec<Vec<f64>>> {
    let min_sep = scn.d0 / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scn.noise_sigma.max(0.0))
        .map_err(|e| config(format!("invalid noise level: {e}")))?;
    let mut phi = Vec::with_capacity(scn.num_sensors());
    for y in &scn.sensor_positions {
        let mut row = Vec::with_capacity(scn.num_targets());
        for p in &scn.true_targets {
            let d = dist(y, p);
            if d <= min_sep {
                return Err(contract("a target coincides with a sensor"));
            }
            let clean = scn.model_rss(d);
            row.push(if scn.noise_sigma > 0.0 { clean + noise.sample(&mut rng) } else { clean });
        }
        phi.push(row);
    }
    Ok(phi)
}

/// Sum over targets of squared RSS residuals seen by `sensor`.
pub fn local_objective(scn: &WsnScenario, phi: &[Vec<f64>], sensor: usize, x: &[f64]) -> f64 {
    let y = &scn.sensor_positions[sensor];
    x.chunks_exact(3)
        .zip(&phi[sensor])
        .map(|(p, m)| {
            let r = m - scn.model_rss(dist(p, y));
            r * r
        })
        .sum()
}

/// `Err = F(mean state)`.
pub fn system_error<S: AsRef<[f64]>>(scn: &WsnScenario, phi: &[Vec<f64>], agent_states: &[S]) -> f64 {
    let n = agent_states.len();
    let dim = scn.dim();
    let mut mean = vec![0.0; dim];
    for s in agent_states {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v / n as f64;
        }
    }
    let sensors = scn.num_sensors();
    (0..sensors).map(|i| local_objective(scn, phi, i, &mean)).sum::<f64>() / sensors as f64
}

/// Scenario plus measurements, one agent per sensor.
#[derive(Debug, Clone)]
pub struct WsnProblem {
    pub scenario: WsnScenario,
    pub measurements: Vec<Vec<f64>>,
    bounds: Bounds,
}

impl WsnProblem {
    pub fn new(scenario: WsnScenario, measurements: Vec<Vec<f64>>) -> Result<Self> {
        if measurements.len() != scenario.num_sensors()
            || measurements.iter().any(|r| r.len() != scenario.num_targets())
        {
            return Err(contract("measurement matrix must be sensors x targets"));
        }
        let bounds = scenario.bounds();
        Ok(Self {
            scenario,
            measurements,
            bounds,
        })
    }

    pub fn generate(params: &WsnParams, seed: u64) -> Result<Self> {
        let scenario = WsnScenario::generate(params, seed)?;
        let phi = gen_measurements(&scenario, seed.wrapping_add(1))?;
        Self::new(scenario, phi)
    }

    /// Localization error of a set of agent states.
    pub fn error<S: AsRef<[f64]>>(&self, states: &[S]) -> f64 {
        system_error(&self.scenario, &self.measurements, states)
    }
}

impl DistributedProblem for WsnProblem {
    fn num_agents(&self) -> usize {
        self.scenario.num_sensors()
    }

    fn dim(&self) -> usize {
        self.scenario.dim()
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn eval_local(&self, agent: usize, x: &[f64]) -> f64 {
        local_objective(&self.scenario, &self.measurements, agent, x)
    }
}
