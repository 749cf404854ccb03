//! Distribution of the minimizer location over a finite grid.
//!
//! The tractable proxy scores every grid point by the posterior probability
//! that it lies below the incumbent, `Φ((μ(x̂*) − μ(x)) / sd)` with `sd` the
//! standard deviation of `f(x̂*) − f(x)`, and normalizes the scores. A
//! Monte-Carlo alternative histograms the argmin of joint posterior samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::gp::{Domain, PosteriorSampler, PosteriorSnapshot};
use crate::linalg::dot;
use crate::scalar::{normal_cdf, Scalar};

/// Variance sums below this are treated as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Rectangular lattice over a domain box, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Grid<T: Scalar> {
    domain: Domain<T>,
    shape: Vec<usize>,
    points: Vec<Vec<T>>,
}

impl<T: Scalar> Grid<T> {
    /// Evenly spaced lattice including both ends of every interval; an axis
    /// with a single node sits at the interval midpoint.
    pub fn lattice(domain: Domain<T>, shape: &[usize]) -> Result<Self> {
        if shape.len() != domain.dim() {
            return Err(usage(format!(
                "grid shape has {} axes, domain has {}",
                shape.len(),
                domain.dim()
            )));
        }
        if shape.iter().any(|&c| c == 0) {
            return Err(usage(format!("grid shape {shape:?} has an empty axis")));
        }
        let axes: Vec<Vec<T>> = shape
            .iter()
            .zip(domain.bounds())
            .map(|(&count, &(lo, hi))| {
                if count == 1 {
                    return vec![(lo + hi) / T::lit(2.0)];
                }
                let step = (hi - lo) / T::lit((count - 1) as f64);
                (0..count)
                    .map(|k| if k + 1 == count { hi } else { lo + step * T::lit(k as f64) })
                    .collect()
            })
            .collect();
        let total: usize = shape.iter().product();
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let idx = unravel(flat, shape);
            points.push(idx.iter().zip(&axes).map(|(&k, axis)| axis[k]).collect());
        }
        Ok(Self {
            domain,
            shape: shape.to_vec(),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &[T] {
        &self.points[index]
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    /// Spacing along each axis (zero for single-node axes).
    pub fn steps(&self) -> Vec<T> {
        self.shape
            .iter()
            .zip(self.domain.bounds())
            .map(|(&c, &(lo, hi))| if c > 1 { (hi - lo) / T::lit((c - 1) as f64) } else { T::zero() })
            .collect()
    }

    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        unravel(index, &self.shape)
    }

    /// Lattice distance in cells: max over axes of the index difference.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        self.multi_index(a)
            .into_iter()
            .zip(self.multi_index(b))
            .map(|(i, j)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    /// Indices at cell distance at most one, including `index` itself.
    pub fn neighborhood(&self, index: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.cell_distance(index, j) <= 1).collect()
    }

    /// Grid index closest to `x` in Euclidean distance (smallest on ties).
    pub fn nearest_index(&self, x: &[T]) -> usize {
        let mut best = (0, T::infinity());
        for (i, p) in self.points.iter().enumerate() {
            let d: T = p.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &count) in idx.iter_mut().zip(shape).rev() {
        *slot = flat % count;
        flat /= count;
    }
    idx
}

/// Normalized probability vector over grid indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MinimizerDistribution<T: Scalar> {
    probabilities: Vec<T>,
}

impl<T: Scalar> MinimizerDistribution<T> {
    fn sum_tolerance(n: usize) -> T {
        T::lit(1e-12).max(T::epsilon() * T::lit(16.0 * n as f64))
    }

    /// Validates an already normalized vector.
    pub fn new(probabilities: Vec<T>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(usage("empty minimizer distribution"));
        }
        if probabilities.iter().any(|p| !(*p >= T::zero()) || !p.is_finite()) {
            return Err(usage("minimizer probabilities must be finite and non-negative"));
        }
        let total: T = probabilities.iter().copied().sum();
        if (total - T::one()).abs() > Self::sum_tolerance(probabilities.len()) {
            return Err(usage(format!("minimizer probabilities sum to {total}, not 1")));
        }
        Ok(Self { probabilities })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(usage("weights must be finite and non-negative"));
        }
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(usage("weights sum to zero"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Uniform over `support` out of `len` indices.
    pub fn uniform_over(len: usize, support: &[usize]) -> Result<Self> {
        if support.is_empty() || support.iter().any(|&i| i >= len) {
            return Err(usage(format!("invalid support {support:?} for {len} points")));
        }
        let mut w = vec![T::zero(); len];
        for &i in support {
            w[i] = T::one();
        }
        Self::from_weights(w)
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Indices ordered by decreasing mass (ties by index).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probabilities[b]
                .partial_cmp(&self.probabilities[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    /// Total-variation distance `½ Σ |pᵢ − qᵢ|`.
    pub fn total_variation(&self, other: &Self) -> Result<T> {
        if self.len() != other.len() {
            return Err(usage("distributions live on different grids"));
        }
        let s: T = self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        Ok(s / T::lit(2.0))
    }
}

/// Current estimate of the minimizer: grid argmin of the posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Incumbent<T: Scalar> {
    pub index: usize,
    pub point: Vec<T>,
    pub value: T,
}

/// Whether the proxy keeps the posterior covariance between `f(x)` and the
/// incumbent or treats them as independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    WithCovariance,
    #[default]
    Independent,
}

impl std::str::FromStr for CovMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_covariance" | "with-covariance" => Ok(Self::WithCovariance),
            "independent" => Ok(Self::Independent),
            other => Err(usage(format!("unknown covariance mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CovMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::WithCovariance => "with_covariance",
            Self::Independent => "independent",
        })
    }
}

/// Index of the smallest value, first one on ties.
pub(crate) fn argmin<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Posterior means, marginal variances and whitened cross-covariances on a grid.
pub(crate) struct GridMoments<T: Scalar> {
    pub means: Vec<T>,
    pub variances: Vec<T>,
    whitened: Vec<Vec<T>>,
    points: Vec<Vec<T>>,
}

impl<T: Scalar> GridMoments<T> {
    pub fn new(post: &PosteriorSnapshot<T>, grid: &Grid<T>) -> Result<Self> {
        if grid.is_empty() {
            return Err(usage("empty grid"));
        }
        if grid.domain().dim() != post.dataset().domain().dim() {
            return Err(usage("grid and posterior have different dimensions"));
        }
        let sf = post.hyperparameters().signal_variance;
        let (means, whitened): (Vec<T>, Vec<Vec<T>>) =
            grid.points().iter().map(|x| post.mean_and_whitened(x)).unzip();
        let variances = whitened.iter().map(|v| (sf - dot(v, v)).max(T::zero())).collect();
        Ok(Self {
            means,
            variances,
            whitened,
            points: grid.points().to_vec(),
        })
    }

    /// Posterior covariance of every grid point with grid point `j`.
    pub fn covariance_column(&self, post: &PosteriorSnapshot<T>, j: usize) -> Vec<T> {
        let hp = post.hyperparameters();
        (0..self.points.len())
            .map(|i| {
                let prior = if i == j {
                    hp.signal_variance
                } else {
                    crate::gp::sq_exp(&self.points[i], &self.points[j], hp)
                };
                prior - dot(&self.whitened[i], &self.whitened[j])
            })
            .collect()
    }
}

/// Argmin of the posterior mean over the grid, smallest index on ties.
pub fn incumbent<T: Scalar>(post: &PosteriorSnapshot<T>, grid: &Grid<T>) -> Result<Incumbent<T>> {
    if grid.is_empty() {
        return Err(usage("empty grid"));
    }
    let means = grid
        .points()
        .iter()
        .map(|x| post.predict(x).map(|(m, _)| m))
        .collect::<Result<Vec<T>>>()?;
    let index = argmin(&means);
    Ok(Incumbent {
        index,
        point: grid.point(index).to_vec(),
        value: means[index],
    })
}

/// Unnormalized proxy scores from posterior moments.
///
/// `cov_with_incumbent` is `Some` in with-covariance mode. Variance sums
/// below `-tolerance` are reported as errors; sums under
/// [`DEGENERATE_VARIANCE`] fall back first to the independent sum and then
/// to the step limit (1 below, ½ level, 0 above the incumbent mean).
pub fn proxy_scores<T: Scalar>(
    means: &[T],
    variances: &[T],
    cov_with_incumbent: Option<&[T]>,
    incumbent: usize,
    tolerance: T,
) -> Result<Vec<T>> {
    let degenerate = T::lit(DEGENERATE_VARIANCE);
    let half = T::lit(0.5);
    let mu_star = means[incumbent];
    let var_star = variances[incumbent];
    let mut scores = Vec::with_capacity(means.len());
    for (i, (&mu, &var)) in means.iter().zip(variances).enumerate() {
        if i == incumbent {
            scores.push(half);
            continue;
        }
        let independent = var_star + var;
        let mut d2 = match cov_with_incumbent {
            Some(cov) => independent - T::lit(2.0) * cov[i],
            None => independent,
        };
        if d2 < -tolerance {
            return Err(Error::NegativeVariance {
                index: i,
                value: d2.as_f64(),
            });
        }
        if d2 < degenerate {
            d2 = independent;
        }
        let score = if d2 < degenerate {
            if mu < mu_star {
                T::one()
            } else if mu == mu_star {
                half
            } else {
                T::zero()
            }
        } else {
            normal_cdf((mu_star - mu) / d2.sqrt())
        };
        scores.push(score);
    }
    Ok(scores)
}

pub(crate) fn variance_tolerance<T: Scalar>(post: &PosteriorSnapshot<T>) -> T {
    T::lit(1e-8) * post.hyperparameters().signal_variance
}

/// Pre-normalization proxy scores on the grid.
pub fn unnormalized_proxy<T: Scalar>(
    post: &PosteriorSnapshot<T>,
    grid: &Grid<T>,
    inc: &Incumbent<T>,
    cov_mode: CovMode,
) -> Result<Vec<T>> {
    if inc.index >= grid.len() {
        return Err(usage("incumbent index outside the grid"));
    }
    let moments = GridMoments::new(post, grid)?;
    let cov = match cov_mode {
        CovMode::WithCovariance => Some(moments.covariance_column(post, inc.index)),
        CovMode::Independent => None,
    };
    proxy_scores(
        &moments.means,
        &moments.variances,
        cov.as_deref(),
        inc.index,
        variance_tolerance(post),
    )
}

/// Normalized proxy for the minimizer posterior.
pub fn proxy_distribution<T: Scalar>(
    post: &PosteriorSnapshot<T>,
    grid: &Grid<T>,
    inc: &Incumbent<T>,
    cov_mode: CovMode,
) -> Result<MinimizerDistribution<T>> {
    MinimizerDistribution::from_weights(unnormalized_proxy(post, grid, inc, cov_mode)?)
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy<T: Scalar>(dist: &MinimizerDistribution<T>) -> T {
    entropy_of_weights(dist.probabilities())
}

/// Entropy of the normalization of non-negative weights.
pub(crate) fn entropy_of_weights<T: Scalar>(weights: &[T]) -> T {
    let total: T = weights.iter().copied().sum();
    let mut h = T::zero();
    for &w in weights {
        if w > T::zero() {
            let p = w / total;
            h -= p * p.ln();
        }
    }
    h.max(T::zero())
}

/// `KL(p ‖ q)` in nats over the support of `p`; `+∞` if `q` vanishes there.
pub fn kl_divergence<T: Scalar>(p: &MinimizerDistribution<T>, q: &MinimizerDistribution<T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(usage(format!(
            "KL between distributions over {} and {} points",
            p.len(),
            q.len()
        )));
    }
    let mut kl = T::zero();
    for (&pi, &qi) in p.probabilities().iter().zip(q.probabilities()) {
        if pi > T::zero() {
            if !(qi > T::zero()) {
                return Ok(T::infinity());
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// Histogram of grid argmins over `count` joint posterior samples.
pub fn sampled_minimizer_distribution<T: Scalar, R: Rng + ?Sized>(
    post: &PosteriorSnapshot<T>,
    grid: &Grid<T>,
    count: usize,
    rng: &mut R,
) -> Result<MinimizerDistribution<T>> {
    Ok(MinimizerDistribution::from_weights(
        sampled_argmin_counts(post, grid, count, rng)?
            .into_iter()
            .map(|c| T::lit(c as f64))
            .collect(),
    )?)
}

/// Raw argmin counts behind [`sampled_minimizer_distribution`].
pub fn sampled_argmin_counts<T: Scalar, R: Rng + ?Sized>(
    post: &PosteriorSnapshot<T>,
    grid: &Grid<T>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(usage("sampled minimizer distribution needs count >= 1"));
    }
    if grid.is_empty() {
        return Err(usage("empty grid"));
    }
    let sampler = PosteriorSampler::new(post, grid.points())?;
    let mut counts = vec![0u64; grid.len()];
    let mut z = vec![T::zero(); grid.len()];
    let mut f = vec![T::zero(); grid.len()];
    for _ in 0..count {
        sampler.draw_into(rng, &mut z, &mut f);
        counts[argmin(&f)] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{build_posterior, Dataset, Hyperparameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_grid(n: usize) -> Grid<f64> {
        Grid::lattice(Domain::new(vec![(0.0, 1.0)]).unwrap(), &[n]).unwrap()
    }

    fn dist(p: &[f64]) -> MinimizerDistribution<f64> {
        MinimizerDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn lattice_is_row_major() {
        let g = Grid::lattice(Domain::new(vec![(0.0, 1.0), (10.0, 12.0)]).unwrap(), &[2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.point(0), &[0.0, 10.0]);
        assert_eq!(g.point(1), &[0.0, 11.0]);
        assert_eq!(g.point(2), &[0.0, 12.0]);
        assert_eq!(g.point(3), &[1.0, 10.0]);
        assert_eq!(g.multi_index(5), vec![1, 2]);
        assert_eq!(g.cell_distance(0, 4), 1);
        assert_eq!(g.cell_distance(0, 5), 2);
        assert_eq!(g.neighborhood(0), vec![0, 1, 3, 4]);
        assert_eq!(g.nearest_index(&[0.9, 11.4]), 4);
        assert!(Grid::lattice(Domain::new(vec![(0.0, 1.0)]).unwrap(), &[0]).is_err());
        assert!(Grid::lattice(Domain::new(vec![(0.0, 1.0)]).unwrap(), &[2, 2]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let uniform = MinimizerDistribution::<f64>::uniform_over(225, &(0..225).collect::<Vec<_>>()).unwrap();
        assert!((entropy(&uniform) - 225f64.ln()).abs() < 1e-12);
        assert!((entropy(&uniform) - 5.4161).abs() < 1e-4);
        let point = MinimizerDistribution::<f64>::uniform_over(10, &[3]).unwrap();
        assert_eq!(entropy(&point), 0.0);
        let two = MinimizerDistribution::<f64>::uniform_over(10, &[2, 7]).unwrap();
        assert!((entropy(&two) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let n = 17;
        let delta = MinimizerDistribution::<f64>::uniform_over(n, &[4]).unwrap();
        let uni = MinimizerDistribution::<f64>::uniform_over(n, &(0..n).collect::<Vec<_>>()).unwrap();
        assert!((kl_divergence(&delta, &uni).unwrap() - (n as f64).ln()).abs() < 1e-12);
        // 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
        let kl = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.25, 0.75])).unwrap();
        assert!((kl - 0.143_841_036_225_890_2).abs() < 1e-12);
        assert!((kl - 0.14384).abs() < 1e-5);
        assert_eq!(kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap(), f64::INFINITY);
        assert!(kl_divergence(&dist(&[1.0]), &dist(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(MinimizerDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(MinimizerDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(MinimizerDistribution::<f64>::from_weights(vec![0.0, 0.0]).is_err());
        assert_eq!(dist(&[0.1, 0.6, 0.3]).ranked(), vec![1, 2, 0]);
    }

    #[test]
    fn prior_gives_uniform_proxy_and_index_zero_incumbent() {
        let grid = line_grid(9);
        let data = Dataset::new(grid.domain().clone());
        let post = build_posterior(&data, &Hyperparameters::new(0.2, 1.0, 0.01, 0.3).unwrap()).unwrap();
        let inc = incumbent(&post, &grid).unwrap();
        assert_eq!(inc.index, 0);
        for mode in [CovMode::Independent, CovMode::WithCovariance] {
            let raw = unnormalized_proxy(&post, &grid, &inc, mode).unwrap();
            assert!(raw.iter().all(|&s| (s - 0.5).abs() < 1e-15));
            let d = proxy_distribution(&post, &grid, &inc, mode).unwrap();
            assert!((entropy(&d) - 9f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn low_observation_becomes_incumbent() {
        let grid = line_grid(11);
        let data = Dataset::from_observations(grid.domain().clone(), vec![vec![0.7]], vec![-2.0]).unwrap();
        let post = build_posterior(&data, &Hyperparameters::new(0.1, 1.0, 0.0, 0.0).unwrap()).unwrap();
        let inc = incumbent(&post, &grid).unwrap();
        assert_eq!(inc.index, 7);
        assert!((inc.value + 2.0).abs() < 1e-8);
        let raw = unnormalized_proxy(&post, &grid, &inc, CovMode::Independent).unwrap();
        assert_eq!(raw[7], 0.5);
    }

    #[test]
    fn step_convention_when_degenerate() {
        let means = [0.0, -1.0, 0.0, 1.0];
        let vars = [0.0; 4];
        let s = proxy_scores(&means, &vars, None, 0, 1e-8).unwrap();
        assert_eq!(s, vec![0.5, 1.0, 0.5, 0.0]);
        // covariance that would make the difference variance negative
        let cov = [0.0, 1.0, 0.0, 0.0];
        let vars = [0.5, 0.5, 0.5, 0.5];
        assert!(matches!(
            proxy_scores(&means, &vars, Some(&cov), 0, 1e-8),
            Err(Error::NegativeVariance { index: 1, .. })
        ));
        // fully correlated pair falls back to the independent sum
        let cov = [0.5, 0.5, 0.0, 0.0];
        let s = proxy_scores(&[0.0, 0.3, 0.0, 0.0], &vars, Some(&cov), 0, 1e-8).unwrap();
        assert!((s[1] - normal_cdf(-0.3_f64)).abs() < 1e-15);
    }

    #[test]
    fn pinned_posterior_gives_point_mass_samples() {
        let grid = line_grid(11);
        let xs: Vec<Vec<f64>> = grid.points().to_vec();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] - 0.3).powi(2)).collect();
        let data = Dataset::from_observations(grid.domain().clone(), xs, ys).unwrap();
        let post = build_posterior(&data, &Hyperparameters::new(0.3, 1.0, 0.0, 0.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sampled_minimizer_distribution(&post, &grid, 2000, &mut rng).unwrap();
        assert_eq!(d.probabilities()[3], 1.0);
        assert!(sampled_minimizer_distribution(&post, &grid, 0, &mut rng).is_err());
    }
}
