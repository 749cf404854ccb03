//! Gaussian-process regression with an isotropic squared-exponential kernel
//! and a constant mean: exact posterior, evidence and its gradient,
//! evidence-maximizing hyperparameter fits, and joint posterior sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::linalg::{dot, semidefinite_factor, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Diagonal jitter relative to the signal variance, first try and ceiling.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Domain<T: Scalar> {
    bounds: Vec<(T, T)>,
}

impl<T: Scalar> Domain<T> {
    pub fn new(bounds: Vec<(T, T)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(usage("domain needs at least one dimension"));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(usage(format!("domain dimension {d}: invalid interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Length of the box diagonal.
    pub fn diagonal(&self) -> T {
        self.bounds.iter().map(|&(lo, hi)| (hi - lo) * (hi - lo)).sum::<T>().sqrt()
    }

    pub(crate) fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(usage(format!("point has dimension {}, domain has {}", x.len(), self.dim())));
        }
        if !self.contains(x) {
            return Err(usage(format!("point {x:?} lies outside the domain {:?}", self.bounds)));
        }
        Ok(())
    }
}

/// GP prior: squared-exponential kernel amplitude and lengthscale, Gaussian
/// observation noise, and a constant mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Hyperparameters<T: Scalar> {
    pub lengthscale: T,
    pub signal_variance: T,
    pub noise_variance: T,
    pub mean_const: T,
}

impl<T: Scalar> Hyperparameters<T> {
    pub fn new(lengthscale: T, signal_variance: T, noise_variance: T, mean_const: T) -> Result<Self> {
        let hp = Self {
            lengthscale,
            signal_variance,
            noise_variance,
            mean_const,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.lengthscale, self.signal_variance, self.noise_variance, self.mean_const]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(usage(format!("non-finite hyperparameters {self:?}")));
        }
        if !(self.lengthscale > T::zero() && self.signal_variance > T::zero() && self.noise_variance >= T::zero()) {
            return Err(usage(format!(
                "hyperparameters need lengthscale > 0, signal variance > 0, noise variance >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Prior used before two observations are available: lengthscale at 20%
    /// of the domain diagonal, unit signal variance, noise variance 0.01 and
    /// the observation mean (zero when empty) as the constant.
    pub fn defaults_for(data: &Dataset<T>) -> Self {
        let n = data.len();
        let mean_const = if n == 0 {
            T::zero()
        } else {
            data.observations().iter().copied().sum::<T>() / T::lit(n as f64)
        };
        Self {
            lengthscale: T::lit(0.2) * data.domain().diagonal(),
            signal_variance: T::one(),
            noise_variance: T::lit(0.01),
            mean_const,
        }
    }

    pub fn to_f64_array(&self) -> [f64; 4] {
        [
            self.lengthscale.as_f64(),
            self.signal_variance.as_f64(),
            self.noise_variance.as_f64(),
            self.mean_const.as_f64(),
        ]
    }

    fn jitter_start(&self) -> T {
        T::lit(JITTER_START) * self.signal_variance
    }

    fn jitter_max(&self) -> T {
        T::lit(JITTER_MAX) * self.signal_variance
    }

    fn factorization_error(&self, n: usize, jitter: T) -> Error {
        let [lengthscale, signal_variance, noise_variance, _] = self.to_f64_array();
        Error::Factorization {
            n,
            lengthscale,
            signal_variance,
            noise_variance,
            jitter: jitter.as_f64(),
        }
    }
}

/// Observation history: points inside the domain and their noisy values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar> {
    domain: Domain<T>,
    points: Vec<Vec<T>>,
    observations: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(domain: Domain<T>) -> Self {
        Self {
            domain,
            points: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn from_observations(domain: Domain<T>, points: Vec<Vec<T>>, observations: Vec<T>) -> Result<Self> {
        if points.len() != observations.len() {
            return Err(usage(format!(
                "{} points but {} observations",
                points.len(),
                observations.len()
            )));
        }
        let mut data = Self::new(domain);
        for (x, y) in points.into_iter().zip(observations) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<T>, y: T) -> Result<()> {
        self.domain.check(&x)?;
        if !y.is_finite() {
            return Err(usage(format!("non-finite observation {y} at {x:?}")));
        }
        self.points.push(x);
        self.observations.push(y);
        Ok(())
    }

    /// Copy of this dataset with one more observation.
    pub fn with_observation(&self, x: Vec<T>, y: T) -> Result<Self> {
        let mut next = self.clone();
        next.push(x, y)?;
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn observations(&self) -> &[T] {
        &self.observations
    }
}

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

#[inline]
pub(crate) fn sq_exp<T: Scalar>(a: &[T], b: &[T], hp: &Hyperparameters<T>) -> T {
    let l2 = hp.lengthscale * hp.lengthscale;
    hp.signal_variance * (-sq_dist(a, b) / (T::lit(2.0) * l2)).exp()
}

/// `σ_f² · exp(−‖a − b‖² / (2ℓ²))`.
pub fn kernel_eval<T: Scalar>(a: &[T], b: &[T], hp: &Hyperparameters<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(usage(format!("kernel arguments have dimensions {} and {}", a.len(), b.len())));
    }
    Ok(sq_exp(a, b, hp))
}

pub fn kernel_matrix<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>], hp: &Hyperparameters<T>) -> Matrix<T> {
    Matrix::from_fn(a.len(), b.len(), |i, j| sq_exp(&a[i], &b[j], hp))
}

fn gram<T: Scalar>(points: &[Vec<T>], hp: &Hyperparameters<T>) -> Matrix<T> {
    let n = points.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hp.signal_variance;
        for j in 0..i {
            let v = sq_exp(&points[i], &points[j], hp);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `K + (σ² + jitter)I`, escalating the jitter on failure.
fn factor_system<T: Scalar>(data: &Dataset<T>, hp: &Hyperparameters<T>) -> Result<(Matrix<T>, Cholesky<T>, T)> {
    let k = gram(data.points(), hp);
    let mut system = k.clone();
    system.add_diagonal(hp.noise_variance);
    let (chol, jitter) = Cholesky::factor_with_jitter(&system, hp.jitter_start(), hp.jitter_max())
        .map_err(|last| hp.factorization_error(data.len(), last))?;
    Ok((k, chol, jitter))
}

/// Fitted GP state. Immutable once built.
#[derive(Debug, Clone)]
pub struct PosteriorSnapshot<T: Scalar> {
    dataset: Dataset<T>,
    hp: Hyperparameters<T>,
    chol: Cholesky<T>,
    weights: Vec<T>,
    jitter: T,
}

/// Exact GP posterior for `data` under fixed hyperparameters.
pub fn build_posterior<T: Scalar>(data: &Dataset<T>, hp: &Hyperparameters<T>) -> Result<PosteriorSnapshot<T>> {
    hp.validate()?;
    let (_, chol, jitter) = factor_system(data, hp)?;
    let resid: Vec<T> = data.observations().iter().map(|&y| y - hp.mean_const).collect();
    let weights = chol.solve(&resid);
    Ok(PosteriorSnapshot {
        dataset: data.clone(),
        hp: *hp,
        chol,
        weights,
        jitter,
    })
}

impl<T: Scalar> PosteriorSnapshot<T> {
    pub fn dataset(&self) -> &Dataset<T> {
        &self.dataset
    }

    pub fn hyperparameters(&self) -> &Hyperparameters<T> {
        &self.hp
    }

    /// Lower factor of `K + (σ² + jitter)I`.
    pub fn chol_factor(&self) -> &Matrix<T> {
        self.chol.factor_matrix()
    }

    /// `(K + σ²I)⁻¹ (y − m)`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Noise variance actually on the factorized diagonal.
    pub fn effective_noise(&self) -> T {
        self.hp.noise_variance + self.jitter
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        let d = self.dataset.domain().dim();
        if x.len() != d {
            return Err(usage(format!("query point has dimension {}, model has {d}", x.len())));
        }
        Ok(())
    }

    /// Cross-covariances `k(X, x)` with the training inputs.
    fn cross(&self, x: &[T]) -> Vec<T> {
        self.dataset.points().iter().map(|p| sq_exp(p, x, &self.hp)).collect()
    }

    /// Posterior mean and whitened cross-covariance `L⁻¹ k(X, x)`.
    pub(crate) fn mean_and_whitened(&self, x: &[T]) -> (T, Vec<T>) {
        let mut k = self.cross(x);
        let mean = self.hp.mean_const + dot(&k, &self.weights);
        self.chol.solve_lower_in_place(&mut k);
        (mean, k)
    }

    /// Posterior mean and latent variance at a single point.
    pub fn predict(&self, x: &[T]) -> Result<(T, T)> {
        self.check_dim(x)?;
        let (mean, v) = self.mean_and_whitened(x);
        let var = (self.hp.signal_variance - dot(&v, &v)).max(T::zero());
        Ok((mean, var))
    }

    /// Joint posterior mean and covariance of the latent function at `query`.
    pub fn predict_joint(&self, query: &[Vec<T>]) -> Result<(Vec<T>, Matrix<T>)> {
        if query.is_empty() {
            return Err(usage("predict_joint needs at least one query point"));
        }
        for x in query {
            self.check_dim(x)?;
        }
        let (means, whitened): (Vec<T>, Vec<Vec<T>>) = query.iter().map(|x| self.mean_and_whitened(x)).unzip();
        let q = query.len();
        let mut cov = Matrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let prior = if i == j {
                    self.hp.signal_variance
                } else {
                    sq_exp(&query[i], &query[j], &self.hp)
                };
                let v = prior - dot(&whitened[i], &whitened[j]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
            cov[(i, i)] = cov[(i, i)].max(T::zero());
        }
        Ok((means, cov))
    }
}

/// Log marginal likelihood `log N(y; m·1, K + σ²I)` and its gradient with
/// respect to `[log ℓ, log σ_f², log σ², m]`.
pub fn log_evidence<T: Scalar>(data: &Dataset<T>, hp: &Hyperparameters<T>) -> Result<(T, [T; 4])> {
    hp.validate()?;
    let n = data.len();
    if n == 0 {
        return Ok((T::zero(), [T::zero(); 4]));
    }
    let (k, chol, _) = factor_system(data, hp)?;
    let resid: Vec<T> = data.observations().iter().map(|&y| y - hp.mean_const).collect();
    let alpha = chol.solve(&resid);
    let half = T::lit(0.5);
    let value = -half * dot(&resid, &alpha)
        - half * chol.log_det()
        - half * T::lit(n as f64) * (T::lit(2.0) * T::PI()).ln();

    // ∂/∂θ = ½ tr((ααᵀ − A⁻¹) ∂A/∂θ)
    let inv = chol.inverse();
    let l2 = hp.lengthscale * hp.lengthscale;
    let points = data.points();
    let (mut g_len, mut g_sig, mut g_noise) = (T::zero(), T::zero(), T::zero());
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - inv[(i, j)];
            let kij = k[(i, j)];
            g_sig += w * kij;
            if i != j {
                g_len += w * kij * sq_dist(&points[i], &points[j]) / l2;
            } else {
                g_noise += w;
            }
        }
    }
    let g_mean = alpha.iter().copied().sum::<T>();
    Ok((value, [half * g_len, half * g_sig, half * hp.noise_variance * g_noise, g_mean]))
}

/// Box constraints for evidence maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HyperBounds<T: Scalar> {
    pub lengthscale: (T, T),
    pub signal_variance: (T, T),
    pub noise_variance: (T, T),
    pub mean_const: (T, T),
}

impl<T: Scalar> HyperBounds<T> {
    /// Bounds scaled to the data: lengthscale in `[1e-3, 1e3]` domain
    /// diagonals, signal variance in `[1e-3, 1e3]` output variances, noise
    /// variance in `[1e-6, 1e3]` output variances and the constant mean
    /// within one output range of the observed values. Flat observations
    /// (variance below 1e-8) use unit output variance instead.
    pub fn from_data(data: &Dataset<T>) -> Self {
        let ys = data.observations();
        let n = T::lit(ys.len().max(1) as f64);
        let mean = ys.iter().copied().sum::<T>() / n;
        let var = ys.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>() / n;
        let scale = if var < T::lit(1e-8) { T::one() } else { var };
        let (lo, hi) = ys
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(a, b), &y| (a.min(y), b.max(y)));
        let (lo, hi) = if ys.is_empty() { (T::zero(), T::zero()) } else { (lo, hi) };
        let range = (hi - lo).max(scale.sqrt());
        let diag = data.domain().diagonal();
        Self {
            lengthscale: (T::lit(1e-3) * diag, T::lit(1e3) * diag),
            signal_variance: (T::lit(1e-3) * scale, T::lit(1e3) * scale),
            noise_variance: (T::lit(1e-6) * scale, T::lit(1e3) * scale),
            mean_const: (lo - range, hi + range),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.lengthscale, self.signal_variance, self.noise_variance];
        for (lo, hi) in positive.iter().chain(std::iter::once(&self.mean_const)) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(usage(format!("invalid hyperparameter bounds {self:?}")));
            }
        }
        if positive.iter().any(|(lo, _)| *lo <= T::zero()) {
            return Err(usage("log-space hyperparameter bounds must be positive"));
        }
        Ok(())
    }

    fn log_box(&self) -> [(T, T); 3] {
        [
            (self.lengthscale.0.ln(), self.lengthscale.1.ln()),
            (self.signal_variance.0.ln(), self.signal_variance.1.ln()),
            (self.noise_variance.0.ln(), self.noise_variance.1.ln()),
        ]
    }

    pub fn contains(&self, hp: &Hyperparameters<T>) -> bool {
        let inside = |v: T, (lo, hi): (T, T)| v >= lo && v <= hi;
        inside(hp.lengthscale, self.lengthscale)
            && inside(hp.signal_variance, self.signal_variance)
            && inside(hp.noise_variance, self.noise_variance)
            && inside(hp.mean_const, self.mean_const)
    }

    pub fn clamp(&self, hp: &Hyperparameters<T>) -> Hyperparameters<T> {
        let c = |v: T, (lo, hi): (T, T)| v.max(lo).min(hi);
        Hyperparameters {
            lengthscale: c(hp.lengthscale, self.lengthscale),
            signal_variance: c(hp.signal_variance, self.signal_variance),
            noise_variance: c(hp.noise_variance, self.noise_variance),
            mean_const: c(hp.mean_const, self.mean_const),
        }
    }
}

/// Gradient-ascent settings for the evidence optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub max_iters: usize,
    /// Stop once a step improves the evidence by less than this (absolute).
    pub tolerance: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tolerance: 1e-9,
        }
    }
}

/// Outcome of [`fit_hyperparameters`].
#[derive(Debug, Clone)]
pub struct EvidenceFit<T: Scalar> {
    pub hyperparameters: Hyperparameters<T>,
    pub log_evidence: T,
    /// Initialization of every restart, in the order tried.
    pub starts: Vec<Hyperparameters<T>>,
}

/// Maximizes the log evidence from `restarts` random initializations.
pub fn fit_hyperparameters<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    restarts: usize,
    bounds: &HyperBounds<T>,
    rng: &mut R,
) -> Result<EvidenceFit<T>> {
    fit_hyperparameters_from(data, restarts, bounds, None, AscentOptions::default(), rng)
}

/// As [`fit_hyperparameters`], additionally ascending from `warm_start`
/// (clamped into `bounds`) before the random restarts.
pub fn fit_hyperparameters_from<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    restarts: usize,
    bounds: &HyperBounds<T>,
    warm_start: Option<&Hyperparameters<T>>,
    options: AscentOptions,
    rng: &mut R,
) -> Result<EvidenceFit<T>> {
    if data.len() < 2 {
        return Err(usage(format!("hyperparameter fitting needs n >= 2, got {}", data.len())));
    }
    if restarts == 0 {
        return Err(usage("hyperparameter fitting needs at least one restart"));
    }
    bounds.validate()?;

    let mut starts = Vec::with_capacity(restarts + 1);
    if let Some(w) = warm_start {
        starts.push(bounds.clamp(w));
    }
    let log_box = bounds.log_box();
    // Random starts come from the middle of the log box.
    for _ in 0..restarts {
        let mut draw = |(lo, hi): (T, T), inner: f64| {
            let width = hi - lo;
            let lo_in = lo + width * T::lit(inner);
            let hi_in = hi - width * T::lit(inner);
            let u: f64 = rng.gen();
            (lo_in + (hi_in - lo_in) * T::lit(u)).exp()
        };
        let lengthscale = draw(log_box[0], 0.3);
        let signal_variance = draw(log_box[1], 0.3);
        let noise_variance = draw(log_box[2], 0.2);
        let u: f64 = rng.gen();
        let (mlo, mhi) = bounds.mean_const;
        let mean_const = mlo + (mhi - mlo) * T::lit(u);
        starts.push(Hyperparameters {
            lengthscale,
            signal_variance,
            noise_variance,
            mean_const,
        });
    }

    let mut best: Option<(Hyperparameters<T>, T)> = None;
    for start in &starts {
        if let Some((hp, value)) = ascend(data, bounds, start, options) {
            if best.as_ref().map_or(true, |(_, b)| value > *b) {
                best = Some((hp, value));
            }
        }
    }
    match best {
        Some((hyperparameters, log_evidence)) => Ok(EvidenceFit {
            hyperparameters,
            log_evidence,
            starts,
        }),
        None => Err(Error::FitFailed {
            restarts: starts.len(),
            best_partial: None,
        }),
    }
}

/// Constant mean maximizing the evidence for fixed kernel and noise:
/// `1ᵀA⁻¹y / 1ᵀA⁻¹1`, clamped into bounds.
fn profiled_mean<T: Scalar>(data: &Dataset<T>, hp: &Hyperparameters<T>, bounds: &HyperBounds<T>) -> Option<T> {
    let (_, chol, _) = factor_system(data, hp).ok()?;
    let ones = vec![T::one(); data.len()];
    let a1 = chol.solve(&ones);
    let num = dot(&a1, data.observations());
    let den = a1.iter().copied().sum::<T>();
    if !(den > T::zero()) || !num.is_finite() {
        return None;
    }
    Some((num / den).max(bounds.mean_const.0).min(bounds.mean_const.1))
}

struct Evaluated<T: Scalar> {
    theta: [T; 3],
    hp: Hyperparameters<T>,
    value: T,
    grad: [T; 3],
}

fn evaluate_log_params<T: Scalar>(data: &Dataset<T>, bounds: &HyperBounds<T>, theta: [T; 3]) -> Option<Evaluated<T>> {
    let mut hp = Hyperparameters {
        lengthscale: theta[0].exp(),
        signal_variance: theta[1].exp(),
        noise_variance: theta[2].exp(),
        mean_const: T::zero(),
    };
    hp.mean_const = profiled_mean(data, &hp, bounds)?;
    let (value, g) = log_evidence(data, &hp).ok()?;
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Evaluated {
        theta,
        hp,
        value,
        grad: [g[0], g[1], g[2]],
    })
}

/// Projected gradient ascent with backtracking over the log parameters;
/// the constant mean is kept at its conditional optimum.
fn ascend<T: Scalar>(
    data: &Dataset<T>,
    bounds: &HyperBounds<T>,
    start: &Hyperparameters<T>,
    options: AscentOptions,
) -> Option<(Hyperparameters<T>, T)> {
    let log_box = bounds.log_box();
    let project = |theta: [T; 3]| -> [T; 3] {
        let mut out = theta;
        for (v, &(lo, hi)) in out.iter_mut().zip(&log_box) {
            *v = v.max(lo).min(hi);
        }
        out
    };
    let start = bounds.clamp(start);
    let theta0 = project([start.lengthscale.ln(), start.signal_variance.ln(), start.noise_variance.ln()]);
    let mut cur = evaluate_log_params(data, bounds, theta0)?;
    let tol = T::lit(options.tolerance);
    let armijo = T::lit(1e-4);
    let mut step = T::one();

    for _ in 0..options.max_iters {
        // Drop components pushing against an active bound.
        let mut dir = cur.grad;
        for (k, d) in dir.iter_mut().enumerate() {
            let (lo, hi) = log_box[k];
            if (cur.theta[k] <= lo && *d < T::zero()) || (cur.theta[k] >= hi && *d > T::zero()) {
                *d = T::zero();
            }
        }
        let gnorm = dir.iter().map(|d| d.abs()).fold(T::zero(), T::max);
        if gnorm <= T::lit(1e-10) {
            break;
        }
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..50 {
            // Cap the largest log-parameter move at one unit per step.
            let scale = trial_step / gnorm.max(T::one());
            let mut theta = cur.theta;
            for k in 0..3 {
                theta[k] += scale * dir[k];
            }
            let theta = project(theta);
            let ascent: T = (0..3).map(|k| cur.grad[k] * (theta[k] - cur.theta[k])).sum();
            if let Some(next) = evaluate_log_params(data, bounds, theta) {
                if next.value >= cur.value + armijo * ascent {
                    accepted = Some(next);
                    break;
                }
            }
            trial_step *= T::lit(0.5);
            if trial_step < T::lit(1e-12) {
                break;
            }
        }
        let Some(next) = accepted else { break };
        let gain = next.value - cur.value;
        cur = next;
        step = (trial_step * T::lit(2.0)).min(T::lit(8.0));
        if gain < tol {
            break;
        }
    }
    Some((cur.hp, cur.value))
}

/// Draws joint posterior samples over a fixed set of points.
///
/// The covariance is factorized as positive semidefinite: directions whose
/// conditional variance is below jitter level are treated as pinned.
#[derive(Debug, Clone)]
pub struct PosteriorSampler<T: Scalar> {
    mean: Vec<T>,
    factor: Matrix<T>,
}

impl<T: Scalar> PosteriorSampler<T> {
    pub fn new(post: &PosteriorSnapshot<T>, points: &[Vec<T>]) -> Result<Self> {
        let (mean, cov) = post.predict_joint(points)?;
        let hp = post.hyperparameters();
        let pivot_tol = T::lit(10.0) * hp.jitter_start();
        let negative_tol = T::lit(1e-8) * hp.signal_variance;
        let mut jitter = T::zero();
        loop {
            let mut shifted = cov.clone();
            shifted.add_diagonal(jitter);
            if let Some(factor) = semidefinite_factor(&shifted, pivot_tol, negative_tol) {
                return Ok(Self { mean, factor });
            }
            jitter = if jitter == T::zero() { hp.jitter_start() } else { jitter * T::lit(10.0) };
            if jitter > hp.jitter_max() * T::lit(1.000_001) {
                return Err(hp.factorization_error(post.dataset().len(), jitter));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Writes one joint sample into `out`, reusing `z` as scratch.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [T], out: &mut [T]) {
        for v in z.iter_mut() {
            let s: f64 = rng.sample(StandardNormal);
            *v = T::lit(s);
        }
        for i in 0..self.mean.len() {
            out[i] = self.mean[i] + dot(&self.factor.row(i)[..=i], &z[..=i]);
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut z = vec![T::zero(); self.len()];
        let mut out = vec![T::zero(); self.len()];
        self.draw_into(rng, &mut z, &mut out);
        out
    }
}

/// `count` joint posterior samples of the latent function over `grid`.
pub fn sample_functions<T: Scalar, R: Rng + ?Sized>(
    post: &PosteriorSnapshot<T>,
    grid: &[Vec<T>],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    if count == 0 {
        return Err(usage("sample_functions needs count >= 1"));
    }
    let sampler = PosteriorSampler::new(post, grid)?;
    Ok((0..count).map(|_| sampler.draw(rng)).collect())
}
