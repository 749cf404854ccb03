//! Reference implementations used as test oracles. Nothing here calls into
//! the crate's linear algebra.
#![allow(dead_code)]

use mme_core::gp::{log_evidence, Dataset, Domain, Hyperparameters};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn se_kernel(a: &[f64], b: &[f64], hp: &Hyperparameters<f64>) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    hp.signal_variance * (-d2 / (2.0 * hp.lengthscale * hp.lengthscale)).exp()
}

pub fn gram(a: &[Vec<f64>], b: &[Vec<f64>], hp: &Hyperparameters<f64>) -> Mat {
    a.iter()
        .map(|x| b.iter().map(|y| se_kernel(x, y, hp)).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p != 0.0, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn mat_vec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Plain lower Cholesky; `None` if not positive definite.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let p = a[i][i] - s;
                if p <= 0.0 {
                    return None;
                }
                l[i][i] = p.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Posterior mean and covariance from an explicit inverse of
/// `K + noise·I`.
pub fn direct_predict(
    points: &[Vec<f64>],
    y: &[f64],
    hp: &Hyperparameters<f64>,
    noise: f64,
    query: &[Vec<f64>],
) -> (Vec<f64>, Mat) {
    let q = query.len();
    if points.is_empty() {
        return (vec![hp.mean_const; q], gram(query, query, hp));
    }
    let mut k = gram(points, points, hp);
    for (i, row) in k.iter_mut().enumerate() {
        row[i] += noise;
    }
    let kinv = invert(&k);
    let ks = gram(query, points, hp);
    let resid: Vec<f64> = y.iter().map(|v| v - hp.mean_const).collect();
    let alpha = mat_vec(&kinv, &resid);
    let mean = ks
        .iter()
        .map(|r| hp.mean_const + r.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let kss = gram(query, query, hp);
    let cov = (0..q)
        .map(|i| {
            let ai = mat_vec(&kinv, &ks[i]);
            (0..q)
                .map(|j| kss[i][j] - ks[j].iter().zip(&ai).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        })
        .collect();
    (mean, cov)
}

pub fn unit_box(d: usize) -> Domain<f64> {
    Domain::new(vec![(0.0, 1.0); d]).unwrap()
}

pub fn random_hp(rng: &mut impl Rng) -> Hyperparameters<f64> {
    let l = 10f64.powf(rng.gen_range(-1.0..0.3));
    let s = 10f64.powf(rng.gen_range(-1.0..1.0));
    let n = s * 10f64.powf(rng.gen_range(-4.0..-1.0));
    let m = rng.gen_range(-1.0..1.0);
    Hyperparameters::new(l, s, n, m).unwrap()
}

pub fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Dataset with smooth but arbitrary responses.
pub fn random_dataset(rng: &mut impl Rng, n: usize, d: usize) -> Dataset<f64> {
    let points = random_points(rng, n, d);
    let phase: f64 = rng.gen_range(0.0..6.0);
    let y = points
        .iter()
        .map(|p| {
            let s: f64 = p.iter().enumerate().map(|(k, v)| (k as f64 + 1.0) * v).sum();
            (3.0 * s + phase).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Dataset::from_observations(unit_box(d), points, y).unwrap()
}

/// Exact draw from a GP prior with the given hyperparameters plus noise.
pub fn gp_draw(rng: &mut impl Rng, points: &[Vec<f64>], hp: &Hyperparameters<f64>) -> Vec<f64> {
    let mut k = gram(points, points, hp);
    for (i, row) in k.iter_mut().enumerate() {
        row[i] += 1e-10 * hp.signal_variance;
    }
    let l = cholesky(&k).expect("prior covariance");
    let z: Vec<f64> = (0..points.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise_sd = hp.noise_variance.sqrt();
    (0..points.len())
        .map(|i| {
            hp.mean_const
                + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>()
                + noise_sd * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Central differences of the log evidence in
/// `[log ℓ, log σ_f², log σ_n², m]`.
pub fn fd_gradient(data: &Dataset<f64>, hp: &Hyperparameters<f64>, step: f64) -> [f64; 4] {
    let base = [
        hp.lengthscale.ln(),
        hp.signal_variance.ln(),
        hp.noise_variance.ln(),
        hp.mean_const,
    ];
    let eval = |theta: [f64; 4]| {
        let h = Hyperparameters::new(theta[0].exp(), theta[1].exp(), theta[2].exp(), theta[3]).unwrap();
        log_evidence(data, &h).unwrap().0
    };
    let mut g = [0.0; 4];
    for k in 0..4 {
        let mut up = base;
        let mut dn = base;
        up[k] += step;
        dn[k] -= step;
        g[k] = (eval(up) - eval(dn)) / (2.0 * step);
    }
    g
}

/// Relative error with a floor on the scale so that a vanishing derivative
/// is compared absolutely at 1e-6.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Nodes and weights of `n`-point Gauss-Hermite quadrature for the
/// weight `e^{-x²}`, by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function: Taylor series below 2.5, continued
/// fraction above.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        // erf series
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x2 / k;
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // Lentz continued fraction
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for k in 1..200 {
            let a = k as f64 / 2.0;
            d = x + a * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + a / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}

/// Proxy entropy from explicit moments, independent of the crate's proxy.
pub fn proxy_entropy_oracle(means: &[f64], cov: &Mat, with_cov: bool) -> f64 {
    let scores = proxy_scores_oracle(means, cov, with_cov);
    let total: f64 = scores.iter().sum();
    -scores
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|s| {
            let p = s / total;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn proxy_scores_oracle(means: &[f64], cov: &Mat, with_cov: bool) -> Vec<f64> {
    let star = (0..means.len())
        .fold(0, |b, i| if means[i] < means[b] { i } else { b });
    (0..means.len())
        .map(|i| {
            if i == star {
                return 0.5;
            }
            let indep = cov[star][star].max(0.0) + cov[i][i].max(0.0);
            let mut d2 = if with_cov { indep - 2.0 * cov[i][star] } else { indep };
            if d2 < 1e-12 {
                d2 = indep;
            }
            if d2 < 1e-12 {
                return if means[i] < means[star] {
                    1.0
                } else if means[i] == means[star] {
                    0.5
                } else {
                    0.0
                };
            }
            normal_cdf((means[star] - means[i]) / d2.sqrt())
        })
        .collect()
}
