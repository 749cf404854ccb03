use anyhow::{bail, Result};
use mme_core::gp::{build_posterior, log_evidence, Dataset, Domain, Hyperparameters};
use mme_core::minimizer::{incumbent, sampled_argmin_counts, unnormalized_proxy, CovMode, Grid};
use mme_core::rng::stream_rng;
use rand::Rng;

type Mat = Vec<Vec<f64>>;

fn se(a: &[f64], b: &[f64], hp: &Hyperparameters<f64>) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    hp.signal_variance * (-0.5 * d2 / (hp.lengthscale * hp.lengthscale)).exp()
}

/// Gauss-Jordan with partial pivoting.
fn invert(mut a: Mat) -> Mat {
    let n = a.len();
    let mut inv: Mat = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

fn random_case(rng: &mut impl Rng, n: usize, d: usize) -> (Dataset<f64>, Hyperparameters<f64>) {
    let domain = Domain::new(vec![(0.0, 1.0); d]).unwrap();
    let points: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let y = points
        .iter()
        .map(|p| (4.0 * p.iter().sum::<f64>()).sin() + 0.1 * rng.gen_range(-1.0..1.0))
        .collect();
    let s = 10f64.powf(rng.gen_range(-1.0..1.0));
    let hp = Hyperparameters::new(
        10f64.powf(rng.gen_range(-1.0..0.3)),
        s,
        s * 10f64.powf(rng.gen_range(-4.0..-1.0)),
        rng.gen_range(-1.0..1.0),
    )
    .unwrap();
    (Dataset::from_observations(domain, points, y).unwrap(), hp)
}

fn inverse_suite(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, &[1]);
    let mut worst = 0f64;
    for _ in 0..30 {
        let d = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=25);
        let (data, hp) = random_case(&mut rng, n, d);
        let query: Vec<Vec<f64>> = (0..10).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let post = build_posterior(&data, &hp)?;
        let noise = post.effective_noise();
        let x = data.points();
        let a: Mat = (0..n)
            .map(|i| (0..n).map(|j| se(&x[i], &x[j], &hp) + if i == j { noise } else { 0.0 }).collect())
            .collect();
        let ainv = invert(a);
        let r: Vec<f64> = data.observations().iter().map(|y| y - hp.mean_const).collect();
        let kq: Mat = query.iter().map(|q| x.iter().map(|p| se(q, p, &hp)).collect()).collect();
        let w: Mat = kq.iter().map(|k| (0..n).map(|j| (0..n).map(|i| k[i] * ainv[i][j]).sum()).collect()).collect();
        let (mean, cov) = post.predict_joint(&query)?;
        for a in 0..query.len() {
            let m = hp.mean_const + w[a].iter().zip(&r).map(|(u, v)| u * v).sum::<f64>();
            worst = worst.max((m - mean[a]).abs());
            for b in 0..query.len() {
                let c = se(&query[a], &query[b], &hp) - w[a].iter().zip(&kq[b]).map(|(u, v)| u * v).sum::<f64>();
                let c = if a == b { c.max(0.0) } else { c };
                worst = worst.max((c - cov[(a, b)]).abs());
            }
        }
    }
    Ok(worst)
}

fn gradient_suite(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, &[2]);
    let mut worst = 0f64;
    let h = 1e-5;
    for _ in 0..20 {
        let d = rng.gen_range(1..=2);
        let n = rng.gen_range(2..=20);
        let (data, hp) = random_case(&mut rng, n, d);
        let (_, grad) = log_evidence(&data, &hp)?;
        let theta = [hp.lengthscale.ln(), hp.signal_variance.ln(), hp.noise_variance.ln(), hp.mean_const];
        let at = |t: [f64; 4]| -> Result<f64> {
            let p = Hyperparameters::new(t[0].exp(), t[1].exp(), t[2].exp(), t[3])?;
            Ok(log_evidence(&data, &p)?.0)
        };
        for k in 0..4 {
            let (mut up, mut down) = (theta, theta);
            up[k] += h;
            down[k] -= h;
            let fd = (at(up)? - at(down)?) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn bound_suite(seed: u64) -> Result<usize> {
    let mut rng = stream_rng(seed, &[3]);
    let samples = 20_000usize;
    let mut violations = 0;
    for t in 0..6 {
        let (d, shape) = if t % 2 == 0 { (1, vec![25]) } else { (2, vec![5, 5]) };
        let n = rng.gen_range(2..=6);
        let (data, hp) = random_case(&mut rng, n, d);
        let grid = Grid::lattice(data.domain().clone(), &shape)?;
        let post = build_posterior(&data, &hp)?;
        let inc = incumbent(&post, &grid)?;
        let scores = unnormalized_proxy(&post, &grid, &inc, CovMode::WithCovariance)?;
        let counts = sampled_argmin_counts(&post, &grid, samples, &mut stream_rng(seed, &[4, t]))?;
        for i in (0..grid.len()).filter(|&i| i != inc.index) {
            let p = counts[i] as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            if p > scores[i] + 3.0 * se {
                violations += 1;
            }
        }
    }
    Ok(violations)
}

pub fn run(seed: u64) -> Result<()> {
    let mut failed = Vec::new();
    let inv = inverse_suite(seed)?;
    report("inverse", inv <= 1e-8, format!("max abs error {inv:.3e} (gate 1e-8)"), &mut failed);
    let grad = gradient_suite(seed)?;
    report("gradient", grad <= 1e-4, format!("max relative error {grad:.3e} (gate 1e-4)"), &mut failed);
    let bound = bound_suite(seed)?;
    report("bound", bound == 0, format!("{bound} frequencies above score + 3 SE"), &mut failed);
    if !failed.is_empty() {
        bail!("selfcheck failed: {}", failed.join(", "));
    }
    Ok(())
}

fn report(name: &'static str, ok: bool, detail: String, failed: &mut Vec<&'static str>) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        failed.push(name);
    }
}
