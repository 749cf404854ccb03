//! Acquisition criteria over a finite candidate grid.
//!
//! The minimizer-entropy criteria score a candidate by the entropy of the
//! proxy minimizer distribution after a hypothetical observation there.
//! Adding one observation at `c` with effective noise `σ²` updates the grid
//! posterior by a rank-one correction that does not depend on the observed
//! value:
//!
//! ```text
//! μ'(x)    = μ(x) + Σ(x, c) (y − μ(c)) / s²
//! Σ'(x, z) = Σ(x, z) − Σ(x, c) Σ(z, c) / s²,   s² = Σ(c, c) + σ²
//! ```
//!
//! so [`Lookahead`] factors the current posterior once per acquisition and
//! each hypothetical `y` costs `O(G)` per grid point.

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::gp::{build_posterior, Dataset, Hyperparameters, PosteriorSnapshot};
use crate::linalg::Matrix;
use crate::minimizer::{
    argmin, entropy_of_weights, incumbent, proxy_scores, variance_tolerance, CovMode, Grid, GridMoments,
};
use crate::rng::stream_rng;
use crate::scalar::{normal_cdf, normal_pdf, Scalar};

/// Below this posterior standard deviation the closed forms use their limits.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "mme")]
    Mme,
    #[serde(rename = "fast_mme")]
    FastMme,
    #[serde(rename = "mei")]
    Mei,
    #[serde(rename = "pi", alias = "kushner_pi")]
    KushnerPi,
    /// Posterior-variance maximization, standing in for the active
    /// response-surface baseline.
    #[serde(rename = "variance")]
    Variance,
}

impl Criterion {
    pub fn direction(self) -> Direction {
        match self {
            Self::Mme | Self::FastMme => Direction::Minimize,
            Self::Mei | Self::KushnerPi | Self::Variance => Direction::Maximize,
        }
    }

    /// Initial random samples used when none are configured.
    pub fn default_n_init(self) -> usize {
        match self {
            Self::Mme | Self::FastMme => 2,
            _ => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mme => "mme",
            Self::FastMme => "fast_mme",
            Self::Mei => "mei",
            Self::KushnerPi => "pi",
            Self::Variance => "variance",
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mme" => Ok(Self::Mme),
            "fast_mme" | "fast-mme" => Ok(Self::FastMme),
            "mei" => Ok(Self::Mei),
            "pi" | "kushner_pi" => Ok(Self::KushnerPi),
            "variance" => Ok(Self::Variance),
            other => Err(usage(format!("unknown criterion '{other}'"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AcquisitionConfig<T: Scalar> {
    pub criterion: Criterion,
    /// Hypothetical observations averaged per candidate by [`Criterion::Mme`].
    pub mc_samples: usize,
    /// Improvement margin for MEI and PI.
    pub epsilon: T,
    pub cov_mode: CovMode,
}

impl<T: Scalar> Default for AcquisitionConfig<T> {
    fn default() -> Self {
        Self {
            criterion: Criterion::Mme,
            mc_samples: 30,
            epsilon: T::zero(),
            cov_mode: CovMode::Independent,
        }
    }
}

impl<T: Scalar> AcquisitionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.criterion == Criterion::Mme && self.mc_samples == 0 {
            return Err(usage("mme needs mc_samples >= 1"));
        }
        if !(self.epsilon >= T::zero()) || !self.epsilon.is_finite() {
            return Err(usage(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Index of the best score, smallest index on ties.
pub fn select_next<T: Scalar>(scores: &[T], direction: Direction) -> Result<usize> {
    if scores.is_empty() {
        return Err(usage("no candidate scores"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(usage(format!("non-finite score {} at candidate {i}", scores[i])));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        let better = match direction {
            Direction::Minimize => s < scores[best],
            Direction::Maximize => s > scores[best],
        };
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Expected improvement below `f_star − ε` of a `N(μ, σ²)` value.
pub fn expected_improvement<T: Scalar>(mu: T, sigma: T, f_star: T, epsilon: T) -> T {
    let gap = f_star - epsilon - mu;
    if sigma < T::lit(DEGENERATE_STD) {
        return gap.max(T::zero());
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(T::zero())
}

/// Probability that a `N(μ, σ²)` value lies below `f_star − ε`.
pub fn probability_of_improvement<T: Scalar>(mu: T, sigma: T, f_star: T, epsilon: T) -> T {
    let gap = f_star - epsilon - mu;
    if sigma < T::lit(DEGENERATE_STD) {
        return if gap > T::zero() {
            T::one()
        } else if gap == T::zero() {
            T::lit(0.5)
        } else {
            T::zero()
        };
    }
    normal_cdf(gap / sigma)
}

pub fn mei_score<T: Scalar>(post: &PosteriorSnapshot<T>, candidate: &[T], incumbent_value: T, epsilon: T) -> Result<T> {
    let (mu, var) = post.predict(candidate)?;
    Ok(expected_improvement(mu, var.sqrt(), incumbent_value, epsilon))
}

pub fn pi_score<T: Scalar>(post: &PosteriorSnapshot<T>, candidate: &[T], incumbent_value: T, epsilon: T) -> Result<T> {
    let (mu, var) = post.predict(candidate)?;
    Ok(probability_of_improvement(mu, var.sqrt(), incumbent_value, epsilon))
}

/// Latent posterior variance at the candidate.
pub fn variance_score<T: Scalar>(post: &PosteriorSnapshot<T>, candidate: &[T]) -> Result<T> {
    Ok(post.predict(candidate)?.1)
}

/// Posterior over a grid prepared for one-step lookahead.
pub struct Lookahead<'a, T: Scalar> {
    post: &'a PosteriorSnapshot<T>,
    grid: &'a Grid<T>,
    means: Vec<T>,
    cov: Matrix<T>,
    cov_mode: CovMode,
    tolerance: T,
}

/// A candidate's predictive moments and covariance with every grid point.
struct CandidateColumn<T> {
    mean: T,
    variance: T,
    column: Vec<T>,
}

impl<'a, T: Scalar> Lookahead<'a, T> {
    pub fn new(post: &'a PosteriorSnapshot<T>, grid: &'a Grid<T>, cov_mode: CovMode) -> Result<Self> {
        let moments = GridMoments::new(post, grid)?;
        let g = grid.len();
        let mut cov = Matrix::zeros(g, g);
        for j in 0..g {
            let col = moments.covariance_column(post, j);
            for (i, v) in col.into_iter().enumerate() {
                cov[(i, j)] = v;
            }
        }
        for i in 0..g {
            cov[(i, i)] = moments.variances[i];
        }
        Ok(Self {
            post,
            grid,
            means: moments.means,
            cov,
            cov_mode,
            tolerance: variance_tolerance(post),
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        self.grid
    }

    /// Posterior mean over the grid.
    pub fn means(&self) -> &[T] {
        &self.means
    }

    fn grid_column(&self, j: usize) -> CandidateColumn<T> {
        CandidateColumn {
            mean: self.means[j],
            variance: self.cov[(j, j)],
            column: (0..self.grid.len()).map(|i| self.cov[(i, j)]).collect(),
        }
    }

    fn point_column(&self, candidate: &[T]) -> Result<CandidateColumn<T>> {
        if candidate.len() != self.grid.domain().dim() {
            return Err(usage("candidate dimension does not match the grid"));
        }
        let (mean, wc) = self.post.mean_and_whitened(candidate);
        let hp = self.post.hyperparameters();
        let variance = (hp.signal_variance - crate::linalg::dot(&wc, &wc)).max(T::zero());
        let column = self
            .grid
            .points()
            .iter()
            .map(|x| {
                let (_, wx) = self.post.mean_and_whitened(x);
                crate::gp::sq_exp(x, candidate, hp) - crate::linalg::dot(&wx, &wc)
            })
            .collect();
        Ok(CandidateColumn { mean, variance, column })
    }

    fn column_for(&self, candidate: &[T]) -> Result<CandidateColumn<T>> {
        match self.grid.points().iter().position(|p| p.as_slice() == candidate) {
            Some(j) => Ok(self.grid_column(j)),
            None => self.point_column(candidate),
        }
    }

    /// Proxy entropy after observing the candidate with innovation
    /// `y − μ(c)`, using the rank-one update with `s2 = Σ(c, c) + σ²`.
    fn entropy_after(&self, cand: &CandidateColumn<T>, s2: T, innovation: T, scratch: &mut Scratch<T>) -> Result<T> {
        let g = self.grid.len();
        let gain = innovation / s2;
        for i in 0..g {
            let c = cand.column[i];
            scratch.means[i] = self.means[i] + c * gain;
            scratch.variances[i] = (self.cov[(i, i)] - c * c / s2).max(T::zero());
        }
        let inc = argmin(&scratch.means);
        let cov_inc = match self.cov_mode {
            CovMode::WithCovariance => {
                let ci = cand.column[inc];
                for i in 0..g {
                    scratch.cov_inc[i] = self.cov[(i, inc)] - cand.column[i] * ci / s2;
                }
                Some(scratch.cov_inc.as_slice())
            }
            CovMode::Independent => None,
        };
        let scores = proxy_scores(&scratch.means, &scratch.variances, cov_inc, inc, self.tolerance)?;
        Ok(entropy_of_weights(&scores))
    }

    fn update_variance(&self, cand: &CandidateColumn<T>) -> T {
        cand.variance + self.post.effective_noise()
    }

    /// Expected proxy entropy after observing the candidate, averaged over
    /// `mc_samples` draws from its predictive distribution.
    pub fn mme_score<R: Rng + ?Sized>(&self, candidate: &[T], mc_samples: usize, rng: &mut R) -> Result<T> {
        if mc_samples == 0 {
            return Err(usage("mme needs mc_samples >= 1"));
        }
        let cand = self.column_for(candidate)?;
        let s2 = self.update_variance(&cand);
        let predictive_sd = (cand.variance + self.post.hyperparameters().noise_variance).sqrt();
        let mut scratch = Scratch::new(self.grid.len());
        let mut total = T::zero();
        for _ in 0..mc_samples {
            let z: f64 = rng.sample(StandardNormal);
            let innovation = predictive_sd * T::lit(z);
            total += self.entropy_after(&cand, s2, innovation, &mut scratch)?;
        }
        Ok(total / T::lit(mc_samples as f64))
    }

    /// Proxy entropy after observing the candidate at exactly its current
    /// predictive mean: means stay put, variances contract.
    pub fn fast_mme_score(&self, candidate: &[T]) -> Result<T> {
        let cand = self.column_for(candidate)?;
        let s2 = self.update_variance(&cand);
        self.entropy_after(&cand, s2, T::zero(), &mut Scratch::new(self.grid.len()))
    }

    /// Entropy for a specific hypothetical observation `y` at the candidate.
    pub fn entropy_given_observation(&self, candidate: &[T], y: T) -> Result<T> {
        let cand = self.column_for(candidate)?;
        let s2 = self.update_variance(&cand);
        self.entropy_after(&cand, s2, y - cand.mean, &mut Scratch::new(self.grid.len()))
    }

    /// Predictive mean and variance (latent plus noise) of a new observation.
    pub fn predictive(&self, candidate: &[T]) -> Result<(T, T)> {
        let cand = self.column_for(candidate)?;
        Ok((cand.mean, cand.variance + self.post.hyperparameters().noise_variance))
    }
}

struct Scratch<T> {
    means: Vec<T>,
    variances: Vec<T>,
    cov_inc: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(g: usize) -> Self {
        Self {
            means: vec![T::zero(); g],
            variances: vec![T::zero(); g],
            cov_inc: vec![T::zero(); g],
        }
    }
}

/// Expected minimizer entropy after observing `candidate`, with the
/// hyperparameters held fixed.
pub fn mme_score<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    hp: &Hyperparameters<T>,
    candidate: &[T],
    grid: &Grid<T>,
    cfg: &AcquisitionConfig<T>,
    rng: &mut R,
) -> Result<T> {
    if cfg.mc_samples == 0 {
        return Err(usage("mme needs mc_samples >= 1"));
    }
    let post = build_posterior(data, hp)?;
    Lookahead::new(&post, grid, cfg.cov_mode)?.mme_score(candidate, cfg.mc_samples, rng)
}

/// Deterministic variant of [`mme_score`] that keeps the posterior mean fixed.
pub fn fast_mme_score<T: Scalar>(
    data: &Dataset<T>,
    hp: &Hyperparameters<T>,
    candidate: &[T],
    grid: &Grid<T>,
    cfg: &AcquisitionConfig<T>,
) -> Result<T> {
    let post = build_posterior(data, hp)?;
    Lookahead::new(&post, grid, cfg.cov_mode)?.fast_mme_score(candidate)
}

/// Scores every grid point under `cfg.criterion`. Randomized criteria use a
/// generator per candidate derived from `(seed, candidate index)`, so the
/// result does not depend on evaluation order.
pub fn score_grid<T: Scalar>(
    post: &PosteriorSnapshot<T>,
    grid: &Grid<T>,
    cfg: &AcquisitionConfig<T>,
    seed: u64,
) -> Result<Vec<T>> {
    cfg.validate()?;
    match cfg.criterion {
        Criterion::Mme | Criterion::FastMme => {
            let look = Lookahead::new(post, grid, cfg.cov_mode)?;
            (0..grid.len())
                .into_par_iter()
                .map(|j| {
                    let x = grid.point(j);
                    if cfg.criterion == Criterion::Mme {
                        let mut rng = stream_rng(seed, &[j as u64]);
                        look.mme_score(x, cfg.mc_samples, &mut rng)
                    } else {
                        look.fast_mme_score(x)
                    }
                })
                .collect()
        }
        Criterion::Mei | Criterion::KushnerPi => {
            let f_star = incumbent(post, grid)?.value;
            grid.points()
                .iter()
                .map(|x| match cfg.criterion {
                    Criterion::Mei => mei_score(post, x, f_star, cfg.epsilon),
                    _ => pi_score(post, x, f_star, cfg.epsilon),
                })
                .collect()
        }
        Criterion::Variance => grid.points().iter().map(|x| variance_score(post, x)).collect(),
    }
}
