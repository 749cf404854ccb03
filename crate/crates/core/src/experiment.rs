//! Sequential optimization runs on the benchmark objectives, repetition
//! with per-iteration medians, and deterministic on-disk outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{score_grid, select_next, AcquisitionConfig, Criterion};
use crate::error::{usage, Error, Result};
use crate::gp::{build_posterior, fit_hyperparameters_from, AscentOptions, Dataset, HyperBounds, Hyperparameters};
use crate::minimizer::{entropy, incumbent, kl_divergence, proxy_distribution, Grid, MinimizerDistribution};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::testbed::{ground_truth, GroundTruth, NoisyOracle, Objective};

/// Everything needed to reproduce a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: Objective,
    /// Per-axis grid counts; the objective's reference grid when absent.
    pub grid_shape: Option<Vec<usize>>,
    pub noise_std: f64,
    pub acquisition: AcquisitionConfig<f64>,
    /// Uniform-random initial samples; criterion default when absent.
    pub n_init: Option<usize>,
    pub n_iter: usize,
    /// Acquisitions between evidence refits.
    pub refit_every: usize,
    pub fit_restarts: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Store wall-clock milliseconds in the records. Off by default so
    /// that outputs are byte-reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Toy1d,
            grid_shape: None,
            noise_std: 0.1,
            acquisition: AcquisitionConfig::default(),
            n_init: None,
            n_iter: 50,
            refit_every: 1,
            fit_restarts: 5,
            repetitions: 20,
            base_seed: 1,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn new(objective: Objective, criterion: Criterion) -> Self {
        Self {
            objective,
            acquisition: AcquisitionConfig {
                criterion,
                ..AcquisitionConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn grid_shape(&self) -> Vec<usize> {
        self.grid_shape
            .clone()
            .unwrap_or_else(|| self.objective.default_grid_shape())
    }

    pub fn n_init(&self) -> usize {
        self.n_init
            .unwrap_or_else(|| self.acquisition.criterion.default_n_init())
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::lattice(self.objective.domain(), &self.grid_shape())
    }

    /// Seed of repetition `run`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        let shape = self.grid_shape();
        if shape.len() != self.objective.dimension() || shape.iter().any(|&c| c == 0) {
            return Err(usage(format!(
                "grid shape {shape:?} does not fit the {}-dimensional {} objective",
                self.objective.dimension(),
                self.objective
            )));
        }
        if self.n_iter == 0 {
            return Err(usage("n_iter must be >= 1"));
        }
        if self.repetitions == 0 {
            return Err(usage("repetitions must be >= 1"));
        }
        if self.refit_every == 0 {
            return Err(usage("refit_every must be >= 1"));
        }
        if self.fit_restarts == 0 {
            return Err(usage("fit_restarts must be >= 1"));
        }
        NoisyOracle::new(self.objective, self.noise_std)?;
        Ok(())
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One acquisition of a run. Metrics describe the posterior after the new
/// observation, under the hyperparameters refit on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based acquisition index.
    pub iteration: usize,
    pub dataset_size: usize,
    pub grid_index: usize,
    pub point: Vec<f64>,
    pub observation: f64,
    pub incumbent_index: usize,
    pub incumbent_point: Vec<f64>,
    /// Posterior mean at the incumbent.
    pub estimated_minimum: f64,
    /// Proxy minimizer entropy, nats.
    pub entropy: f64,
    /// KL from the reference minimizer measure to the proxy, nats; `null`
    /// in JSON when infinite.
    #[serde(with = "finite_or_null")]
    pub kl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    pub hyperparameters: Hyperparameters<f64>,
}

/// Records of one run and the final proxy distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub final_proxy: MinimizerDistribution<f64>,
    /// Posterior mean over the grid at the end of the run.
    pub final_means: Vec<f64>,
    /// Every observation of the run, initial design included.
    pub dataset: Dataset<f64>,
}

fn fit_or_default(
    data: &Dataset<f64>,
    previous: Option<&Hyperparameters<f64>>,
    restarts: usize,
    rng: &mut impl Rng,
) -> Result<Hyperparameters<f64>> {
    if data.len() < 2 {
        return Ok(Hyperparameters::defaults_for(data));
    }
    let bounds = HyperBounds::from_data(data);
    let fit = fit_hyperparameters_from(data, restarts, &bounds, previous, AscentOptions::default(), rng)?;
    Ok(fit.hyperparameters)
}

/// Runs one sequential optimization: `n_init` uniform-random grid points,
/// then `n_iter` acquisitions under the configured criterion.
pub fn run_single(cfg: &ExperimentConfig, seed: u64) -> Result<RunTrace> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let truth = ground_truth(cfg.objective, &grid)?;
    run_single_with(cfg, seed, &grid, &truth)
}

fn run_single_with(cfg: &ExperimentConfig, seed: u64, grid: &Grid<f64>, truth: &GroundTruth) -> Result<RunTrace> {
    let oracle = NoisyOracle::new(cfg.objective, cfg.noise_std)?;
    let mut noise_rng = stream_rng(seed, &[stream::NOISE]);
    let mut data = Dataset::new(grid.domain().clone());

    let n_init = cfg.n_init();
    let mut init_rng = stream_rng(seed, &[stream::INIT]);
    let init: Vec<usize> = if n_init <= grid.len() {
        sample_indices(&mut init_rng, grid.len(), n_init).into_vec()
    } else {
        (0..n_init).map(|_| init_rng.gen_range(0..grid.len())).collect()
    };
    for j in init {
        let x = grid.point(j).to_vec();
        let y = oracle.query(&x, &mut noise_rng)?;
        data.push(x, y)?;
    }

    let mut fitted = data.len() >= 2;
    let mut hp = fit_or_default(&data, None, cfg.fit_restarts, &mut stream_rng(seed, &[stream::FIT, 0]))?;
    let mut post = build_posterior(&data, &hp)?;
    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.n_iter);
    let mut last_proxy = None;

    for k in 1..=cfg.n_iter {
        let step = (|| -> Result<(IterationRecord, MinimizerDistribution<f64>)> {
            let started = Instant::now();
            let acq_seed = derive_seed(seed, &[stream::ACQUISITION, k as u64]);
            let scores = score_grid(&post, grid, &cfg.acquisition, acq_seed)?;
            let j = select_next(&scores, cfg.acquisition.criterion.direction())?;
            let x = grid.point(j).to_vec();
            let y = oracle.query(&x, &mut noise_rng)?;
            data.push(x.clone(), y)?;

            if data.len() >= 2 && (!fitted || k % cfg.refit_every == 0) {
                let mut fit_rng = stream_rng(seed, &[stream::FIT, k as u64]);
                let warm = fitted.then_some(hp);
                hp = fit_or_default(&data, warm.as_ref(), cfg.fit_restarts, &mut fit_rng)?;
                fitted = true;
            } else if !fitted {
                hp = Hyperparameters::defaults_for(&data);
            }
            post = build_posterior(&data, &hp)?;

            let inc = incumbent(&post, grid)?;
            let proxy = proxy_distribution(&post, grid, &inc, cfg.acquisition.cov_mode)?;
            let record = IterationRecord {
                iteration: k,
                dataset_size: data.len(),
                grid_index: j,
                point: x,
                observation: y,
                incumbent_index: inc.index,
                incumbent_point: inc.point.clone(),
                estimated_minimum: inc.value,
                entropy: entropy(&proxy),
                kl: kl_divergence(&truth.reference_distribution, &proxy)?,
                wall_ms: cfg
                    .record_timing
                    .then(|| started.elapsed().as_secs_f64() * 1e3),
                hyperparameters: hp,
            };
            Ok((record, proxy))
        })();
        match step {
            Ok((record, proxy)) => {
                records.push(record);
                last_proxy = Some(proxy);
            }
            Err(source) => {
                return Err(Error::RunFailed {
                    iteration: k,
                    partial: records,
                    source: Box::new(source),
                })
            }
        }
    }

    let final_means = grid
        .points()
        .iter()
        .map(|x| post.predict(x).map(|(m, _)| m))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RunTrace {
        seed,
        records,
        final_proxy: last_proxy.expect("n_iter >= 1"),
        final_means,
        dataset: data,
    })
}

/// Medians across runs at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMedians {
    pub iteration: usize,
    pub median_entropy: f64,
    #[serde(with = "finite_or_null")]
    pub median_kl: f64,
    pub median_fmin: f64,
}

/// Whether a true grid minimizer was located by the final proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub grid_minimizer: usize,
    /// Proxy mode within one cell carrying at least twice the uniform mass.
    pub mode: Option<usize>,
    /// Lowest posterior mean within one cell of that mode.
    pub estimated_minimum: Option<f64>,
}

impl Recovery {
    pub fn recovered(&self) -> bool {
        self.mode.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    /// Local maxima of the final proxy above twice the uniform level, by mass.
    pub final_modes: Vec<usize>,
    pub final_estimated_minimum: f64,
    pub recoveries: Vec<Recovery>,
}

impl RunSummary {
    pub fn recovered_all(&self) -> bool {
        self.recoveries.iter().all(Recovery::recovered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailureInfo {
    pub run: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub objective: Objective,
    pub criterion: Criterion,
    pub grid_minimum: f64,
    pub grid_minimizers: Vec<usize>,
    pub completed: usize,
    pub failures: Vec<RunFailureInfo>,
    pub iterations: Vec<IterationMedians>,
    pub runs: Vec<RunSummary>,
    /// Runs whose final proxy recovered every true grid minimizer.
    pub all_recovered_count: usize,
}

/// Output of [`run_batch`]: the per-run traces alongside their summary.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub traces: Vec<(usize, RunTrace)>,
    pub summary: BatchSummary,
}

/// Median with the mean-of-middle convention for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a == b {
            a
        } else {
            a / 2.0 + b / 2.0
        }
    }
}

/// Local maxima of a grid distribution with mass at least twice uniform,
/// sorted by decreasing mass.
pub fn proxy_modes(grid: &Grid<f64>, dist: &MinimizerDistribution<f64>) -> Vec<usize> {
    let p = dist.probabilities();
    let floor = 2.0 / grid.len() as f64;
    let mut modes: Vec<usize> = (0..grid.len())
        .filter(|&i| p[i] >= floor && grid.neighborhood(i).into_iter().all(|j| p[j] <= p[i]))
        .collect();
    modes.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    modes
}

fn summarize_run(run: usize, trace: &RunTrace, grid: &Grid<f64>, truth: &GroundTruth) -> RunSummary {
    let modes = proxy_modes(grid, &trace.final_proxy);
    let p = trace.final_proxy.probabilities();
    let recoveries = truth
        .grid_minimizers
        .iter()
        .map(|&m| {
            let mode = modes
                .iter()
                .copied()
                .filter(|&j| grid.cell_distance(j, m) <= 1)
                .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)));
            Recovery {
                grid_minimizer: m,
                mode,
                estimated_minimum: mode.map(|j| {
                    grid.neighborhood(j)
                        .into_iter()
                        .map(|i| trace.final_means[i])
                        .fold(f64::INFINITY, f64::min)
                }),
            }
        })
        .collect();
    RunSummary {
        run,
        seed: trace.seed,
        final_modes: modes,
        final_estimated_minimum: trace.records.last().map_or(f64::NAN, |r| r.estimated_minimum),
        recoveries,
    }
}

/// Aggregates completed runs (given in run order) into a summary.
pub fn summarize(
    cfg: &ExperimentConfig,
    grid: &Grid<f64>,
    truth: &GroundTruth,
    traces: &[(usize, RunTrace)],
    failures: Vec<RunFailureInfo>,
) -> BatchSummary {
    let iterations = (0..cfg.n_iter)
        .map(|k| {
            let column = |f: fn(&IterationRecord) -> f64| -> Vec<f64> {
                traces.iter().filter_map(|(_, t)| t.records.get(k).map(f)).collect()
            };
            IterationMedians {
                iteration: k + 1,
                median_entropy: median(&column(|r| r.entropy)),
                median_kl: median(&column(|r| r.kl)),
                median_fmin: median(&column(|r| r.estimated_minimum)),
            }
        })
        .collect();
    let runs: Vec<RunSummary> = traces
        .iter()
        .map(|(run, t)| summarize_run(*run, t, grid, truth))
        .collect();
    BatchSummary {
        objective: cfg.objective,
        criterion: cfg.acquisition.criterion,
        grid_minimum: truth.grid_minimum,
        grid_minimizers: truth.grid_minimizers.clone(),
        completed: traces.len(),
        failures,
        iterations,
        all_recovered_count: runs.iter().filter(|r| r.recovered_all()).count(),
        runs,
    }
}

/// Runs `cfg.repetitions` independent repetitions in parallel (seed of run
/// `r` is `base_seed + r`) and aggregates them.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<BatchOutcome> {
    run_batch_with(cfg, true)
}

/// As [`run_batch`], optionally on the calling thread only.
pub fn run_batch_with(cfg: &ExperimentConfig, parallel: bool) -> Result<BatchOutcome> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let truth = ground_truth(cfg.objective, &grid)?;
    let one = |run: usize| (run, run_single_with(cfg, cfg.run_seed(run), &grid, &truth));
    let results: Vec<(usize, Result<RunTrace>)> = if parallel {
        (0..cfg.repetitions).into_par_iter().map(one).collect()
    } else {
        (0..cfg.repetitions).map(one).collect()
    };
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (run, res) in results {
        match res {
            Ok(t) => traces.push((run, t)),
            Err(e) => failures.push(RunFailureInfo {
                run,
                seed: cfg.run_seed(run),
                message: e.to_string(),
            }),
        }
    }
    let summary = summarize(cfg, &grid, &truth, &traces, failures);
    Ok(BatchOutcome { traces, summary })
}

/// Header of the batch CSV.
pub const BATCH_CSV_HEADER: &str = "iteration,median_entropy,median_kl,median_fmin";

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub runs: Vec<PathBuf>,
    pub batch_csv: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    grid_shape: Vec<usize>,
    n_init: usize,
    seeds: Vec<u64>,
    completed: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

pub fn records_to_jsonl(records: &[IterationRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<IterationRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn csv_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".to_owned()
    } else if v > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

pub fn batch_csv(summary: &BatchSummary) -> String {
    let mut out = String::from(BATCH_CSV_HEADER);
    out.push('\n');
    for m in &summary.iterations {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.iteration,
            csv_float(m.median_entropy),
            csv_float(m.median_kl),
            csv_float(m.median_fmin)
        ));
    }
    out
}

/// Writes `run_NNN.jsonl` per run, `batch.csv`, `summary.json` and
/// `manifest.json` into `dir`, creating it if needed.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &BatchOutcome, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut runs = Vec::with_capacity(outcome.traces.len());
    for (run, trace) in &outcome.traces {
        let path = dir.join(format!("run_{run:03}.jsonl"));
        write_file(&path, records_to_jsonl(&trace.records)?.as_bytes())?;
        runs.push(path);
    }
    let batch_csv_path = dir.join("batch.csv");
    write_file(&batch_csv_path, batch_csv(&outcome.summary).as_bytes())?;

    let summary = dir.join("summary.json");
    write_file(&summary, serde_json::to_string_pretty(&outcome.summary)?.as_bytes())?;

    let manifest = dir.join("manifest.json");
    let m = Manifest {
        config: cfg,
        grid_shape: cfg.grid_shape(),
        n_init: cfg.n_init(),
        seeds: (0..cfg.repetitions).map(|r| cfg.run_seed(r)).collect(),
        completed: outcome.summary.completed,
    };
    write_file(&manifest, serde_json::to_string_pretty(&m)?.as_bytes())?;
    Ok(OutputPaths {
        runs,
        batch_csv: batch_csv_path,
        summary,
        manifest,
    })
}
