//! Distributed black-box benchmark suite.
//!
//! Every agent `i` owns a shifted copy `f_i(x) = g(x - o_i)` of a base
//! function `g` with `g(0) = 0` and `g >= 0`. The global objective is the
//! plain mean of the locals and is only used for offline reporting.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn symmetric(half_width: f64, dim: usize) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }
}

/// A problem split into per-agent local objectives.
pub trait DistributedProblem: Sync {
    fn num_agents(&self) -> usize;
    fn dim(&self) -> usize;
    fn bounds(&self) -> &Bounds;
    /// Local objective of `agent`. Callers guarantee `x.len() == dim()`.
    fn eval_local(&self, agent: usize, x: &[f64]) -> f64;

    /// Mean of the local objectives. Offline evaluation only.
    fn eval_global(&self, x: &[f64]) -> f64 {
        let n = self.num_agents();
        (0..n).map(|i| self.eval_local(i, x)).sum::<f64>() / n as f64
    }
}

/// What an agent is allowed to see of the problem: its own objective.
pub trait LocalObjective {
    fn dim(&self) -> usize;
    fn bounds(&self) -> &Bounds;
    fn eval(&self, x: &[f64]) -> f64;
}

/// Restricts a [`DistributedProblem`] to a single agent.
pub struct LocalView<'a, P: ?Sized> {
    problem: &'a P,
    agent: usize,
}

impl<'a, P: DistributedProblem + ?Sized> LocalView<'a, P> {
    pub fn new(problem: &'a P, agent: usize) -> Self {
        Self { problem, agent }
    }
}

impl<P: DistributedProblem + ?Sized> LocalObjective for LocalView<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn bounds(&self) -> &Bounds {
        self.problem.bounds()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.problem.eval_local(self.agent, x)
    }
}

/// Base function families F1..F10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Sphere,
    Elliptic,
    Schwefel12,
    Rosenbrock,
    Rastrigin,
    Ackley,
    Griewank,
    RotatedRastrigin,
    RotatedElliptic,
    ShiftedRosenbrock,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Sphere,
        Family::Elliptic,
        Family::Schwefel12,
        Family::Rosenbrock,
        Family::Rastrigin,
        Family::Ackley,
        Family::Griewank,
        Family::RotatedRastrigin,
        Family::RotatedElliptic,
        Family::ShiftedRosenbrock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Sphere => "sphere",
            Family::Elliptic => "elliptic",
            Family::Schwefel12 => "schwefel12",
            Family::Rosenbrock => "rosenbrock",
            Family::Rastrigin => "rastrigin",
            Family::Ackley => "ackley",
            Family::Griewank => "griewank",
            Family::RotatedRastrigin => "rotated-rastrigin",
            Family::RotatedElliptic => "rotated-elliptic",
            Family::ShiftedRosenbrock => "shifted-rosenbrock",
        }
    }

    /// Suite label, `F1`..`F10`.
    pub fn label(self) -> String {
        let idx = Family::ALL.iter().position(|f| *f == self).unwrap_or(0);
        format!("F{}", idx + 1)
    }

    pub fn is_rotated(self) -> bool {
        matches!(self, Family::RotatedRastrigin | Family::RotatedElliptic)
    }

    /// Plain Rosenbrock keeps the optimum at the origin; everything else gets
    /// a random base shift.
    fn has_base_shift(self) -> bool {
        !matches!(self, Family::Rosenbrock)
    }

    /// Evaluates the unshifted base function at `z`.
    pub fn base(self, z: &[f64]) -> f64 {
        match self {
            Family::Sphere => z.iter().map(|v| v * v).sum(),
            Family::Elliptic | Family::RotatedElliptic => elliptic(z),
            Family::Schwefel12 => {
                let mut acc = 0.0;
                let mut total = 0.0;
                for v in z {
                    acc += v;
                    total += acc * acc;
                }
                total
            }
            Family::Rosenbrock | Family::ShiftedRosenbrock => rosenbrock(z),
            Family::Rastrigin | Family::RotatedRastrigin => z
                .iter()
                .map(|v| v * v - 10.0 * (2.0 * PI * v).cos() + 10.0)
                .sum(),
            Family::Ackley => {
                let d = z.len() as f64;
                let sq = z.iter().map(|v| v * v).sum::<f64>() / d;
                let cs = z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
                // exact cancellation at the origin can leave -4e-16
                (-20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E).max(0.0)
            }
            Family::Griewank => {
                let sum = z.iter().map(|v| v * v).sum::<f64>() / 4000.0;
                let prod: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v / ((j + 1) as f64).sqrt()).cos())
                    .product();
                (1.0 + sum - prod).max(0.0)
            }
        }
    }
}

fn elliptic(z: &[f64]) -> f64 {
    let d = z.len();
    if d == 1 {
        return z[0] * z[0];
    }
    z.iter()
        .enumerate()
        .map(|(j, v)| 1e6f64.powf(j as f64 / (d - 1) as f64) * v * v)
        .sum()
}

fn rosenbrock(z: &[f64]) -> f64 {
    if z.len() == 1 {
        return z[0] * z[0];
    }
    // optimum of the classic form sits at y = 1, so evaluate at y = z + 1
    z.windows(2)
        .map(|w| {
            let (a, b) = (w[0] + 1.0, w[1] + 1.0);
            100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
        })
        .sum()
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Family::ALL
            .iter()
            .copied()
            .enumerate()
            .find(|(i, f)| f.name() == key || format!("f{}", i + 1) == key)
            .map(|(_, f)| f)
            .ok_or_else(|| config(format!("unknown benchmark family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heterogeneity {
    Homogeneous,
    Heterogeneous,
}

/// One benchmark instance distributed over `num_agents` agents.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub family: Family,
    pub dim: usize,
    pub shifts: Vec<Vec<f64>>,
    pub heterogeneity: Heterogeneity,
    pub bounds: Bounds,
    pub rotation: Option<DMatrix<f64>>,
}

impl BenchmarkSpec {
    /// Builds a spec from explicit shifts; used directly by tests and by
    /// [`make_suite`].
    pub fn new(family: Family, shifts: Vec<Vec<f64>>, bound: f64, rotation: Option<DMatrix<f64>>) -> Result<Self> {
        let dim = shifts.first().map(Vec::len).unwrap_or(0);
        if shifts.is_empty() || dim == 0 {
            return Err(config("benchmark needs at least one agent and one dimension"));
        }
        if !(bound > 0.0) {
            return Err(config(format!("box half-width must be positive, got {bound}")));
        }
        if shifts.iter().any(|s| s.len() != dim) {
            return Err(config("all shift vectors must share one dimension"));
        }
        if shifts.iter().flatten().any(|v| !v.is_finite() || v.abs() > bound) {
            return Err(config("shift vectors must be finite and inside the box"));
        }
        if let Some(r) = &rotation {
            if r.nrows() != dim || r.ncols() != dim {
                return Err(config("rotation matrix must be dim x dim"));
            }
        }
        let heterogeneity = if shifts.windows(2).all(|w| w[0] == w[1]) {
            Heterogeneity::Homogeneous
        } else {
            Heterogeneity::Heterogeneous
        };
        Ok(Self {
            family,
            dim,
            shifts,
            heterogeneity,
            bounds: Bounds::symmetric(bound, dim),
            rotation,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.shifts.len()
    }

    /// Mean of the agent shifts; the global minimizer for the sphere family.
    pub fn mean_shift(&self) -> Vec<f64> {
        let n = self.shifts.len() as f64;
        let mut m = vec![0.0; self.dim];
        for s in &self.shifts {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b / n;
            }
        }
        m
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(contract(format!("point has dimension {}, expected {}", x.len(), self.dim)));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(contract("point contains NaN"));
        }
        Ok(())
    }

    /// `f_i(x) = g(x - o_i)` with input validation.
    pub fn eval_local_checked(&self, agent: usize, x: &[f64]) -> Result<f64> {
        if agent >= self.num_agents() {
            return Err(contract(format!("agent {agent} out of range")));
        }
        self.check_point(x)?;
        Ok(self.eval_local(agent, x))
    }

    pub fn eval_global_checked(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.eval_global(x))
    }
}

impl DistributedProblem for BenchmarkSpec {
    fn num_agents(&self) -> usize {
        self.shifts.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn eval_local(&self, agent: usize, x: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(&self.shifts[agent]).map(|(a, b)| a - b).collect();
        match &self.rotation {
            Some(r) => {
                let rz = r * DVector::from_vec(z);
                self.family.base(rz.as_slice())
            }
            None => self.family.base(&z),
        }
    }
}

/// Default half-width of the search box.
pub const DEFAULT_BOUND: f64 = 100.0;
/// Default heterogeneous shift half-width.
pub const DEFAULT_HETERO_SIGMA: f64 = 5.0;

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_rotation(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// The ten-function suite. Shifts are `o_i = o* + eta_i` with `eta_i`
/// componentwise uniform in `[-hetero_sigma, hetero_sigma]`.
pub fn make_suite(num_agents: usize, dim: usize, hetero_sigma: f64, seed: u64) -> Result<Vec<BenchmarkSpec>> {
    make_suite_with_bound(num_agents, dim, hetero_sigma, DEFAULT_BOUND, seed)
}

pub fn make_suite_with_bound(
    num_agents: usize,
    dim: usize,
    hetero_sigma: f64,
    bound: f64,
    seed: u64,
) -> Result<Vec<BenchmarkSpec>> {
    Family::ALL
        .iter()
        .map(|&f| make_spec(f, num_agents, dim, hetero_sigma, bound, seed))
        .collect()
}

/// One suite member. Each family draws from its own stream of `seed`, so a
/// family's instance does not depend on which other families are enabled.
pub fn make_spec(
    family: Family,
    num_agents: usize,
    dim: usize,
    hetero_sigma: f64,
    bound: f64,
    seed: u64,
) -> Result<BenchmarkSpec> {
    if num_agents == 0 || dim == 0 {
        return Err(config("suite needs at least one agent and one dimension"));
    }
    if !(hetero_sigma >= 0.0) || hetero_sigma >= bound {
        return Err(config(format!("heterogeneous shift width {hetero_sigma} must lie in [0, bound)")));
    }
    let stream = Family::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);

    let base_range = (0.4 * bound).min(bound - hetero_sigma);
    let base: Vec<f64> = (0..dim)
        .map(|_| {
            if family.has_base_shift() {
                rng.random_range(-base_range..=base_range)
            } else {
                0.0
            }
        })
        .collect();
    let shifts = (0..num_agents)
        .map(|_| {
            base.iter()
                .map(|b| {
                    if hetero_sigma > 0.0 {
                        (b + rng.random_range(-hetero_sigma..=hetero_sigma)).clamp(-bound, bound)
                    } else {
                        *b
                    }
                })
                .collect()
        })
        .collect();
    let rotation = family.is_rotated().then(|| random_rotation(dim, &mut rng));
    BenchmarkSpec::new(family, shifts, bound, rotation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(shifts: Vec<Vec<f64>>) -> BenchmarkSpec {
        BenchmarkSpec::new(Family::Sphere, shifts, 100.0, None).unwrap()
    }

    #[test]
    fn sphere_minimum_and_ones() {
        let s = sphere(vec![vec![0.0; 7]]);
        assert_eq!(s.eval_local_checked(0, &[0.0; 7]).unwrap(), 0.0);
        assert_eq!(s.eval_local_checked(0, &[1.0; 7]).unwrap(), 7.0);
    }

    #[test]
    fn rastrigin_minimum_at_shift() {
        let shift = vec![1.5, -2.0, 0.25];
        let s = BenchmarkSpec::new(Family::Rastrigin, vec![shift.clone()], 100.0, None).unwrap();
        assert!(s.eval_local_checked(0, &shift).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_agent_sphere_global() {
        let s = sphere(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]);
        assert_eq!(s.eval_global_checked(&[0.0; 3]).unwrap(), 1.0);
        assert_eq!(s.heterogeneity, Heterogeneity::Heterogeneous);
    }

    #[test]
    fn homogeneous_global_equals_local() {
        let spec = make_spec(Family::Ackley, 4, 5, 0.0, 100.0, 3).unwrap();
        assert_eq!(spec.heterogeneity, Heterogeneity::Homogeneous);
        let x = [3.0, -1.0, 2.0, 0.5, 8.0];
        assert_eq!(spec.eval_global(&x), spec.eval_local(0, &x));
    }

    #[test]
    fn sphere_global_minimizer_is_mean_shift() {
        let spec = make_spec(Family::Sphere, 6, 4, 5.0, 100.0, 11).unwrap();
        let m = spec.mean_shift();
        // central finite differences of the global objective at the mean
        let h = 1e-5;
        let grad: Vec<f64> = (0..4)
            .map(|j| {
                let mut a = m.clone();
                let mut b = m.clone();
                a[j] += h;
                b[j] -= h;
                (spec.eval_global(&a) - spec.eval_global(&b)) / (2.0 * h)
            })
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn dimension_mismatch_and_nan_rejected() {
        let s = sphere(vec![vec![0.0; 3]]);
        assert!(s.eval_local_checked(0, &[0.0; 2]).is_err());
        assert!(s.eval_local_checked(0, &[0.0, f64::NAN, 0.0]).is_err());
        assert!(s.eval_local_checked(1, &[0.0; 3]).is_err());
    }

    #[test]
    fn suite_shape_and_determinism() {
        let a = make_suite(20, 100, 5.0, 9).unwrap();
        let b = make_suite(20, 100, 5.0, 9).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.num_agents(), 20);
            assert_eq!(x.dim, 100);
            assert_eq!(x.shifts, y.shifts);
            assert!(x.shifts.iter().all(|s| x.bounds.contains(s)));
        }
    }

    #[test]
    fn zero_sigma_suite_is_homogeneous() {
        for spec in make_suite(5, 3, 0.0, 1).unwrap() {
            assert_eq!(spec.heterogeneity, Heterogeneity::Homogeneous);
        }
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_rotation(6, &mut rng);
        let eye = &q.transpose() * &q;
        assert!((eye - DMatrix::identity(6, 6)).abs().max() < 1e-12);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("F5".parse::<Family>().unwrap(), Family::Rastrigin);
        assert_eq!("rotated-elliptic".parse::<Family>().unwrap(), Family::RotatedElliptic);
        assert!("nope".parse::<Family>().is_err());
    }

    proptest! {
        #[test]
        fn base_functions_nonnegative_with_zero_at_origin(
            z in proptest::collection::vec(-50.0f64..50.0, 1..12)
        ) {
            for f in Family::ALL {
                prop_assert!(f.base(&vec![0.0; z.len()]).abs() < 1e-12, "{} at origin", f);
                prop_assert!(f.base(&z) >= 0.0, "{} negative", f);
            }
        }

        #[test]
        fn global_is_mean_of_locals(seed: u64, x in proptest::collection::vec(-90.0f64..90.0, 5)) {
            for spec in make_suite(4, 5, 5.0, seed).unwrap() {
                let mean = (0..4).map(|i| spec.eval_local(i, &x)).sum::<f64>() / 4.0;
                let g = spec.eval_global(&x);
                prop_assert!((g - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            }
        }
    }
}
