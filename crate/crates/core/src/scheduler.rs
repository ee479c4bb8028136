//! Phased guidance scheduling: refresh gates, stage index and horizon
//! calibration.
//!
//! All refresh points are ceilings of products with the horizon `T`. The
//! products are computed in floating point, so `ceil` snaps values within
//! `1e-9` of an integer onto that integer (`0.1 * 100 * 3` must be 30).

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcgConfig {
    /// Characteristic horizon `T`.
    pub horizon: usize,
    /// Cooperation refresh interval as a fraction of `T`.
    pub rho_ext: f64,
    /// First internal refresh point as a fraction of `T`.
    pub rho_1: f64,
    /// Second internal refresh point as a fraction of `T`.
    pub rho_2: f64,
    /// Stage transition points as fractions of `T`.
    pub alphas: [f64; 3],
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            rho_ext: 0.1,
            rho_1: 0.2,
            rho_2: 0.6,
            alphas: [0.2, 0.5, 0.9],
        }
    }
}

pub const DEFAULT_HORIZON: usize = 500;

impl PcgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(config("pcg.horizon must be positive"));
        }
        if !(self.rho_ext > 0.0 && self.rho_ext.is_finite()) {
            return Err(config("pcg.rho_ext must be positive"));
        }
        if !(0.0 < self.rho_1 && self.rho_1 < self.rho_2 && self.rho_2 < 1.0) {
            return Err(config("pcg requires 0 < rho_1 < rho_2 < 1"));
        }
        let [a1, a2, a3] = self.alphas;
        if !(0.0 < a1 && a1 < a2 && a2 < a3 && a3 <= 1.0) {
            return Err(config("pcg requires 0 < alpha_1 < alpha_2 < alpha_3 <= 1"));
        }
        Ok(())
    }

    /// `ceil(rho_ext * T)`, the nominal cooperation refresh period.
    pub fn ext_period(&self) -> usize {
        snap_ceil(self.rho_ext * self.horizon as f64).max(1)
    }

    /// Internal refresh points, deduplicated and restricted to `t < T`.
    pub fn int_points(&self) -> Vec<usize> {
        let t = self.horizon as f64;
        let mut pts = vec![snap_ceil(self.rho_1 * t), snap_ceil(self.rho_2 * t)];
        pts.dedup();
        pts.retain(|&p| p < self.horizon);
        pts
    }

    /// Stage transition iterations `tau_m = ceil(alpha_m * T)`.
    pub fn breakpoints(&self) -> [usize; 3] {
        let t = self.horizon as f64;
        self.alphas.map(|a| snap_ceil(a * t))
    }
}

fn snap_ceil(v: f64) -> usize {
    let r = v.round();
    let snapped = if (v - r).abs() <= 1e-9 * v.abs().max(1.0) { r } else { v.ceil() };
    snapped.max(0.0) as usize
}

/// Cooperation refresh gate: `t` is some `ceil(m * rho_ext * T)`, `m >= 1`.
pub fn gate_ext(t: usize, cfg: &PcgConfig) -> bool {
    if t == 0 {
        return false;
    }
    let period = cfg.rho_ext * cfg.horizon as f64;
    // ceil(m p) = t requires m in ((t - 1) / p, t / p]
    let centre = (t as f64 / period).floor() as i64;
    (centre - 1..=centre + 1)
        .filter(|&m| m >= 1)
        .any(|m| snap_ceil(m as f64 * period) == t)
}

/// Internal refresh gate: fires at the two refresh points and never at or
/// after `T`.
pub fn gate_int(t: usize, cfg: &PcgConfig) -> bool {
    t < cfg.horizon && cfg.int_points().contains(&t)
}

/// Stage index in `1..=4`.
pub fn stage(t: usize, cfg: &PcgConfig) -> u8 {
    let [t1, t2, t3] = cfg.breakpoints();
    if t < t1 {
        1
    } else if t < t2 {
        2
    } else if t < t3 {
        3
    } else {
        4
    }
}

/// Estimates `T` from a probe disagreement trace.
///
/// Fits `ln(disagreement)` against the iteration over the second half of the
/// trace and extrapolates where it crosses `threshold`. The result is clamped
/// to `[trace length, 10 * default_t]`; traces shorter than 10 entries or
/// without decay return `default_t`.
pub fn calibrate_horizon(probe_trace: &[f64], threshold: f64, default_t: usize) -> usize {
    let len = probe_trace.len();
    if len < 10 || !(threshold > 0.0) {
        return default_t;
    }
    let upper = (10 * default_t).max(len);
    let floor = f64::MIN_POSITIVE;
    if probe_trace[len - 1] < threshold {
        return len;
    }
    let start = len / 2;
    let pts: Vec<(f64, f64)> = (start..len)
        .map(|t| (t as f64, probe_trace[t].max(floor).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    if !slope.is_finite() || slope >= 0.0 {
        return default_t;
    }
    let intercept = my - slope * mx;
    let crossing = (threshold.ln() - intercept) / slope;
    if !crossing.is_finite() {
        return default_t;
    }
    (crossing.round().max(0.0) as usize).clamp(len, upper)
}
