//! Benchmark objectives, the noisy observation oracle and brute-force
//! ground truth for the minimizers.

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::gp::Domain;
use crate::minimizer::{Grid, MinimizerDistribution};
use crate::scalar::Scalar;

/// Benchmark objective functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// `(1 − e^{−x²}) cos(3πx)` on `[−1.5, 1.5]`: two global and two
    /// shallow local minima.
    Toy1d,
    /// Hosaki function on `[0, 5] × [0, 6]`.
    Hosaki,
    /// Six-hump camel function on `[−2, 2] × [−1, 1]`: two global minima.
    Camel6,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Toy1d, Objective::Hosaki, Objective::Camel6];

    pub fn name(self) -> &'static str {
        match self {
            Self::Toy1d => "toy1d",
            Self::Hosaki => "hosaki",
            Self::Camel6 => "camel6",
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            Self::Toy1d => 1,
            Self::Hosaki | Self::Camel6 => 2,
        }
    }

    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            Self::Toy1d => vec![(-1.5, 1.5)],
            Self::Hosaki => vec![(0.0, 5.0), (0.0, 6.0)],
            Self::Camel6 => vec![(-2.0, 2.0), (-1.0, 1.0)],
        }
    }

    pub fn domain<T: Scalar>(self) -> Domain<T> {
        Domain::new(self.bounds().into_iter().map(|(lo, hi)| (T::lit(lo), T::lit(hi))).collect())
            .expect("objective bounds are valid")
    }

    /// Grid shape used by the reference experiments.
    pub fn default_grid_shape(self) -> Vec<usize> {
        match self {
            Self::Toy1d => vec![121],
            Self::Hosaki | Self::Camel6 => vec![15, 15],
        }
    }

    /// Evaluates without the domain check.
    pub fn value<T: Scalar>(self, x: &[T]) -> T {
        match self {
            Self::Toy1d => {
                let x = x[0];
                (T::one() - (-x * x).exp()) * (T::lit(3.0) * T::PI() * x).cos()
            }
            Self::Hosaki => {
                let (a, b) = (x[0], x[1]);
                let poly = T::one() - T::lit(8.0) * a + T::lit(7.0) * a * a - T::lit(7.0 / 3.0) * a.powi(3)
                    + T::lit(0.25) * a.powi(4);
                poly * b * b * (-b).exp()
            }
            Self::Camel6 => {
                let (a, b) = (x[0], x[1]);
                let a2 = a * a;
                let b2 = b * b;
                (T::lit(4.0) - T::lit(2.1) * a2 + a2 * a2 / T::lit(3.0)) * a2
                    + a * b
                    + (T::lit(-4.0) + T::lit(4.0) * b2) * b2
            }
        }
    }

    pub fn evaluate<T: Scalar>(self, x: &[T]) -> Result<T> {
        self.domain::<T>().check(x)?;
        Ok(self.value(x))
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| usage(format!("unknown objective '{s}' (expected toy1d, hosaki or camel6)")))
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Objective observed through i.i.d. additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyOracle {
    pub objective: Objective,
    pub noise_std: f64,
}

impl NoisyOracle {
    pub fn new(objective: Objective, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(usage(format!("noise_std must be finite and >= 0, got {noise_std}")));
        }
        Ok(Self { objective, noise_std })
    }

    /// One noisy observation. Always consumes exactly one normal draw.
    pub fn query<T: Scalar, R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<T> {
        let f = self.objective.evaluate(x)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(f + T::lit(self.noise_std * z))
    }
}

/// A refined local minimum of an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMinimum {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Reference minimizers of an objective, continuous and grid-restricted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub global_minimizers: Vec<Vec<f64>>,
    pub global_minimum: f64,
    /// Every refined strict local minimum, global ones included, by value.
    pub local_minima: Vec<LocalMinimum>,
    pub grid_minimizers: Vec<usize>,
    pub grid_minimum: f64,
    /// Uniform over `grid_minimizers`.
    pub reference_distribution: MinimizerDistribution<f64>,
}

/// Points per axis of the brute-force lattice (at least 10⁵ points overall).
fn fine_lattice_shape(dim: usize) -> Vec<usize> {
    match dim {
        1 => vec![100_001],
        _ => vec![317; dim],
    }
}

/// Compass search clamped to the domain, from `start` with initial `step`.
fn refine(obj: Objective, start: &[f64], step: f64) -> LocalMinimum {
    let bounds = obj.bounds();
    let mut x = start.to_vec();
    let mut fx = obj.value(&x);
    let mut h = step;
    while h > 1e-13 {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + dir * h).clamp(bounds[d].0, bounds[d].1);
                let fy = obj.value(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    LocalMinimum { point: x, value: fx }
}

/// Strict local minima of the fine lattice, refined and deduplicated,
/// sorted by value.
pub fn continuous_minima(obj: Objective) -> Vec<LocalMinimum> {
    let lattice = Grid::<f64>::lattice(obj.domain(), &fine_lattice_shape(obj.dimension())).expect("lattice");
    let values: Vec<f64> = lattice.points().iter().map(|x| obj.value(x)).collect();
    let shape = lattice.shape().to_vec();
    let step = lattice.steps().into_iter().fold(0.0, f64::max);

    let mut found: Vec<LocalMinimum> = Vec::new();
    for i in 0..lattice.len() {
        let idx = lattice.multi_index(i);
        let is_min = neighbors(&idx, &shape).all(|j| values[i] < values[j]);
        if !is_min {
            continue;
        }
        let m = refine(obj, lattice.point(i), step);
        let duplicate = found.iter().any(|f| {
            f.point.iter().zip(&m.point).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < 1e-6
        });
        if !duplicate {
            found.push(m);
        }
    }
    found.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.point.partial_cmp(&b.point).unwrap()));
    found
}

/// Flat indices of the lattice neighbours (8-connected in 2D).
fn neighbors<'a>(idx: &'a [usize], shape: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    let dim = idx.len();
    let total = 3usize.pow(dim as u32);
    (0..total).filter_map(move |code| {
        let mut c = code;
        let mut flat = 0usize;
        let mut all_zero = true;
        for d in 0..dim {
            let off = (c % 3) as isize - 1;
            c /= 3;
            if off != 0 {
                all_zero = false;
            }
            let k = idx[d] as isize + off;
            if k < 0 || k >= shape[d] as isize {
                return None;
            }
            flat = flat * shape[d] + k as usize;
        }
        (!all_zero).then_some(flat)
    })
}

/// Brute-force minimizers of `obj` and its restriction to `grid`.
pub fn ground_truth(obj: Objective, grid: &Grid<f64>) -> Result<GroundTruth> {
    if grid.domain().bounds() != obj.domain::<f64>().bounds() {
        return Err(usage(format!("grid does not cover the {obj} domain")));
    }
    let local_minima = continuous_minima(obj);
    let global_minimum = local_minima.first().map(|m| m.value).unwrap_or(f64::NAN);
    let tol = 1e-9 + 1e-8 * global_minimum.abs();
    let global_minimizers = local_minima
        .iter()
        .filter(|m| m.value <= global_minimum + tol)
        .map(|m| m.point.clone())
        .collect();

    let grid_values: Vec<f64> = grid.points().iter().map(|x| obj.value(x)).collect();
    let grid_minimum = grid_values.iter().copied().fold(f64::INFINITY, f64::min);
    let grid_tol = 1e-9 + 1e-6 * grid_minimum.abs();
    let grid_minimizers: Vec<usize> = (0..grid.len())
        .filter(|&i| grid_values[i] <= grid_minimum + grid_tol)
        .collect();
    let reference_distribution = MinimizerDistribution::uniform_over(grid.len(), &grid_minimizers)?;
    Ok(GroundTruth {
        global_minimizers,
        global_minimum,
        local_minima,
        grid_minimizers,
        grid_minimum,
        reference_distribution,
    })
}
