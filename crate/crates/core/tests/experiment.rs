use std::fs;

use mme_core::acquisition::Criterion;
use mme_core::experiment::{
    batch_csv, median, records_from_jsonl, records_to_jsonl, run_batch, run_batch_with, run_single, summarize,
    write_outputs, ExperimentConfig, BATCH_CSV_HEADER,
};
use mme_core::testbed::{ground_truth, Objective};

fn small(criterion: Criterion) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Objective::Toy1d, criterion);
    cfg.grid_shape = Some(vec![41]);
    cfg.n_iter = 10;
    cfg.repetitions = 3;
    cfg.fit_restarts = 2;
    cfg.acquisition.mc_samples = 5;
    cfg
}

#[test]
fn every_criterion_honours_the_loop_contract() {
    for criterion in [Criterion::Mme, Criterion::FastMme, Criterion::Mei, Criterion::KushnerPi, Criterion::Variance] {
        let cfg = small(criterion);
        let trace = run_single(&cfg, 5).unwrap();
        assert_eq!(trace.records.len(), 10, "{criterion}");
        let log_n = 41f64.ln();
        for (k, r) in trace.records.iter().enumerate() {
            assert_eq!(r.iteration, k + 1);
            assert_eq!(r.dataset_size, cfg.n_init() + k + 1);
            assert!(r.entropy >= 0.0 && r.entropy <= log_n + 1e-12);
            assert!(r.wall_ms.is_none());
        }
        assert_eq!(trace.dataset.len(), cfg.n_init() + 10);
    }
}

#[test]
fn runs_are_reproducible_byte_for_byte() {
    let cfg = small(Criterion::Mme);
    let a = records_to_jsonl(&run_single(&cfg, 9).unwrap().records).unwrap();
    let b = records_to_jsonl(&run_single(&cfg, 9).unwrap().records).unwrap();
    assert_eq!(a, b);
    let c = records_to_jsonl(&run_single(&cfg, 10).unwrap().records).unwrap();
    assert_ne!(a, c);
}

#[test]
fn noiseless_mme_finds_both_toy_minimizers() {
    let mut cfg = ExperimentConfig::new(Objective::Toy1d, Criterion::Mme);
    cfg.noise_std = 0.0;
    cfg.n_iter = 40;
    let grid = cfg.grid().unwrap();
    let truth = ground_truth(cfg.objective, &grid).unwrap();
    let trace = run_single(&cfg, 2).unwrap();
    let top = trace.final_proxy.ranked();
    let step = grid.steps()[0] * (1.0 + 1e-9);
    for m in &truth.global_minimizers {
        assert!(
            top[..2].iter().any(|&j| (grid.point(j)[0] - m[0]).abs() <= step),
            "top-2 {:?} miss {m:?}",
            &top[..2]
        );
    }
}

#[test]
fn timing_is_opt_in() {
    let mut cfg = small(Criterion::Variance);
    cfg.record_timing = true;
    let trace = run_single(&cfg, 1).unwrap();
    assert!(trace.records.iter().all(|r| r.wall_ms.is_some()));
}

#[test]
fn single_run_medians_are_the_run_itself() {
    let mut cfg = small(Criterion::Mei);
    cfg.repetitions = 1;
    let out = run_batch(&cfg).unwrap();
    let records = &out.traces[0].1.records;
    for (m, r) in out.summary.iterations.iter().zip(records) {
        assert_eq!(m.median_entropy, r.entropy);
        assert_eq!(m.median_fmin, r.estimated_minimum);
        assert!(m.median_kl == r.kl || (m.median_kl.is_infinite() && r.kl.is_infinite()));
    }
}

#[test]
fn three_run_medians_are_middle_order_statistics() {
    assert_eq!(median(&[0.7, -2.0, 0.1]), 0.1);
    let cfg = small(Criterion::FastMme);
    let out = run_batch(&cfg).unwrap();
    for (k, m) in out.summary.iterations.iter().enumerate() {
        let mut e: Vec<f64> = out.traces.iter().map(|(_, t)| t.records[k].entropy).collect();
        e.sort_by(f64::total_cmp);
        assert_eq!(m.median_entropy, e[1]);
        let mut f: Vec<f64> = out.traces.iter().map(|(_, t)| t.records[k].estimated_minimum).collect();
        f.sort_by(f64::total_cmp);
        assert_eq!(m.median_fmin, f[1]);
    }
}

#[test]
fn medians_ignore_run_order_and_scheduling() {
    let cfg = small(Criterion::Mme);
    let parallel = run_batch_with(&cfg, true).unwrap();
    let serial = run_batch_with(&cfg, false).unwrap();
    assert_eq!(parallel.summary, serial.summary);

    let grid = cfg.grid().unwrap();
    let truth = ground_truth(cfg.objective, &grid).unwrap();
    let mut reversed = serial.traces.clone();
    reversed.reverse();
    let flipped = summarize(&cfg, &grid, &truth, &reversed, Vec::new());
    assert_eq!(flipped.iterations, serial.summary.iterations);
    assert_eq!(flipped.all_recovered_count, serial.summary.all_recovered_count);
}

#[test]
fn outputs_round_trip_and_are_deterministic() {
    let cfg = small(Criterion::Mme);
    let out = run_batch(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&cfg, &out, dir.path()).unwrap();
    assert_eq!(paths.runs.len(), 3);

    let text = fs::read_to_string(&paths.runs[0]).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert_eq!(records_from_jsonl(&text).unwrap(), out.traces[0].1.records);

    let csv = fs::read_to_string(&paths.batch_csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), BATCH_CSV_HEADER);
    assert_eq!(BATCH_CSV_HEADER, "iteration,median_entropy,median_kl,median_fmin");
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv, batch_csv(&out.summary));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&paths.manifest).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2, 3]));
    let back: ExperimentConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(back, cfg);

    let again = tempfile::tempdir().unwrap();
    write_outputs(&cfg, &run_batch(&cfg).unwrap(), again.path()).unwrap();
    for name in ["run_000.jsonl", "run_001.jsonl", "run_002.jsonl", "batch.csv", "summary.json", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unwritable_destination_reports_the_path() {
    let cfg = small(Criterion::Variance);
    let mut one = cfg.clone();
    one.repetitions = 1;
    let out = run_batch(&one).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    let err = write_outputs(&one, &out, &file.path().join("sub")).unwrap_err();
    assert!(err.to_string().contains(&file.path().display().to_string()), "{err}");
}
