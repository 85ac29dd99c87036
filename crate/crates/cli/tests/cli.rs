use std::path::Path;
use std::process::Command;

use ccnn::ccnn::Model;
use ccnn::checkpoint;
use ccnn::ckconv::{build_relative_coords, ConvBackend};
use ccnn::Tensor;
use ccnn_cli::bench::{bench_conv, growth_ratios, write_bench, BenchRow};
use ccnn_cli::export::export_kernels;
use ccnn_cli::train::{read_metrics, METRICS_FILE, SUMMARY_FILE};
use ccnn_cli::{run_eval, run_train, CliError, EvalOverride, ExperimentConfig, Representation, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A waveform run small enough for a unit-test budget.
fn tiny(sets: &[&str]) -> ExperimentConfig {
    let base = ["length=32", "n_train=64", "n_val=32", "n_test=32", "hidden=8", "kernel_hidden=8", "batch_size=16", "epochs=2", "w0=20.0"];
    let all: Vec<String> = base.iter().chain(sets).map(|s| s.to_string()).collect();
    ExperimentConfig::load(None, &all).unwrap()
}

fn probe(model: &Model<f32>) -> Tensor<f32> {
    let x = Tensor::<f32>::randn(&[4, 1, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
    model.predict(&x, None, ConvBackend::Direct).unwrap()
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&["epochs=0", "seed=3"]);
    let rec = run_train(&cfg, dir.path()).unwrap();
    assert_eq!((rec.best_epoch, rec.epochs.len()), (0, 0));
    let (saved, _) = checkpoint::load::<f32>(&dir.path().join("checkpoint")).unwrap();
    let fresh = Model::<f32>::new(cfg.model(cfg.classes), cfg.seed).unwrap();
    assert_eq!(probe(&saved), probe(&fresh));
}

#[test]
fn eval_at_training_resolution_reproduces_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_train(&tiny(&[]), dir.path()).unwrap();
    assert_eq!(run_eval(dir.path(), EvalOverride::default()).unwrap(), rec.test);
    let other = run_eval(
        dir.path(),
        EvalOverride {
            length: Some(48),
            ..Default::default()
        },
    )
    .unwrap();
    assert!((0.0..=1.0).contains(&other.accuracy) && other.loss.is_finite());
}

#[test]
fn overrides_must_fit_the_task() {
    let dir = tempfile::tempdir().unwrap();
    run_train(&tiny(&["epochs=0"]), dir.path()).unwrap();
    let ov = EvalOverride {
        representation: Some(Representation::Points),
        ..Default::default()
    };
    assert!(matches!(run_eval(dir.path(), ov), Err(CliError::Config(_))));
    let bad_len = EvalOverride {
        length: Some(1),
        ..Default::default()
    };
    assert!(matches!(run_eval(dir.path(), bad_len), Err(CliError::Config(_))));
}

#[test]
fn training_reduces_loss_and_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_train(&tiny(&["epochs=4", "learning_rate=0.02"]), dir.path()).unwrap();
    assert_eq!(rec.status, "ok");
    assert!(rec.epochs[3].train_loss < rec.epochs[0].train_loss, "{:?}", rec.epochs);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), 4);
}

#[test]
fn metrics_round_trip_at_nine_digits() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_train(&tiny(&[]), dir.path()).unwrap();
    let path = dir.path().join(METRICS_FILE);
    let back = read_metrics(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut rewritten = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
    for (r, orig) in back.iter().zip(&rec.epochs) {
        assert_eq!(r.epoch, orig.epoch);
        for (a, b) in [(r.lr, orig.lr), (r.train_loss, orig.train_loss), (r.val_acc, orig.val_acc)] {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300), "{a} vs {b}");
        }
        rewritten += &format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    assert_eq!(rewritten, text);
}

#[test]
fn single_thread_runs_are_bitwise_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny(&["dropout=0.1"]);
    run_train(&cfg, a.path()).unwrap();
    run_train(&cfg, b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn sharded_batches_train() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_train(&tiny(&["threads=3"]), dir.path()).unwrap();
    assert!(rec.epochs.iter().all(|e| e.train_loss.is_finite()));
    assert!(rec.test.loss.is_finite());
}

#[test]
fn shapes_train_on_both_representations() {
    for repr in ["voxels", "points"] {
        let dir = tempfile::tempdir().unwrap();
        let sets: Vec<String> = [
            "task=shapes",
            &format!("representation={repr}"),
            "points=64",
            "grid_n=8",
            "voxel_budget=64",
            "n_train=12",
            "n_val=6",
            "n_test=6",
            "hidden=4",
            "kernel_hidden=8",
            "blocks=1",
            "epochs=1",
            "batch_size=6",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let cfg = ExperimentConfig::load(None, &sets).unwrap();
        assert_eq!(cfg.task, Task::Shapes);
        let rec = run_train(&cfg, dir.path()).unwrap();
        assert!(rec.test.loss.is_finite(), "{repr}");
        let other = if repr == "voxels" { Representation::Points } else { Representation::Voxels };
        let m = run_eval(
            dir.path(),
            EvalOverride {
                representation: Some(other),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.loss.is_finite());
    }
}

#[test]
fn divergence_aborts_with_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_train(&tiny(&["learning_rate=1e30", "epochs=3"]), dir.path()).unwrap_err();
    assert!(matches!(err, CliError::Numerical { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["status"], "aborted");
    assert!(summary["abort_step"].as_u64().unwrap() >= 1);
}

#[test]
fn export_shapes_and_interleaving() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&["epochs=0"]);
    run_train(&cfg, dir.path()).unwrap();
    let layers = cfg.blocks + 1;
    let out = dir.path().join("k");
    let files = export_kernels(dir.path(), None, 9, &out).unwrap();
    assert_eq!(files.len(), layers);
    let rows = |p: &Path| -> Vec<csv::StringRecord> { csv::Reader::from_path(p).unwrap().records().map(|r| r.unwrap()).collect() };
    let total: usize = files.iter().map(|f| rows(f).len()).sum();
    // depthwise kernels: one per input channel, so the stem has a single one
    assert_eq!(total, (1 + cfg.blocks * cfg.hidden) * 9);

    // 17 samples of [−1, 1] contain the 9 coarse ones at even positions
    let fine = export_kernels(dir.path(), Some(1), 17, &dir.path().join("f")).unwrap();
    let (coarse, fine) = (rows(&files[1]), rows(&fine[0]));
    for ch in 0..cfg.hidden {
        for i in 0..9 {
            let (a, b) = (&coarse[ch * 9 + i], &fine[ch * 17 + 2 * i]);
            assert_eq!(a.get(2), b.get(2));
            let (va, vb): (f64, f64) = (a[3].parse().unwrap(), b[3].parse().unwrap());
            assert!((va - vb).abs() <= 1e-6 * va.abs().max(1e-6), "{va} vs {vb}");
        }
    }

    assert!(matches!(export_kernels(dir.path(), Some(layers), 9, &out), Err(CliError::Config(_))));
}

#[test]
fn single_sample_export_is_the_kernel_center() {
    let dir = tempfile::tempdir().unwrap();
    run_train(&tiny(&["epochs=0"]), dir.path()).unwrap();
    let files = export_kernels(dir.path(), Some(0), 1, &dir.path().join("k")).unwrap();
    let (model, _) = checkpoint::load::<f32>(&dir.path().join("checkpoint")).unwrap();
    let center = build_relative_coords::<f32>(&[1], false).unwrap().coords;
    assert_eq!(center.data(), &[0.0]);
    let k = model.conv_layers()[0].net.eval(&center).unwrap();
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&files[0]).unwrap().records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let v: f32 = rows[0][3].parse().unwrap();
    assert_eq!(format!("{v:.8e}"), format!("{:.8e}", k.get(&[0, 0])));
}

#[test]
fn bench_table_round_trips() {
    let rows = bench_conv(&[64, 128], 2, 1).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.median_ms > 0.0 && r.p90_ms >= r.median_ms));
    assert_eq!(growth_ratios(&rows, ConvBackend::Fft).len(), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    write_bench(&rows, &path).unwrap();
    let back: Vec<BenchRow> = csv::Reader::from_path(&path).unwrap().deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(back, rows);
    assert!(bench_conv(&[], 2, 1).is_err());
}

fn ccnn(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ccnn")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = ccnn(&["train", "--set", "colour=red"], dir.path());
    assert_eq!(bad.status.code(), Some(2), "{}", String::from_utf8_lossy(&bad.stderr));
    let missing = ccnn(&["train", "--config", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let diverge = ccnn(
        &["train", "--set", "length=16", "--set", "n_train=16", "--set", "hidden=4", "--set", "learning_rate=1e30", "--set", "epochs=2"],
        dir.path(),
    );
    assert_eq!(diverge.status.code(), Some(3));
}

#[test]
fn binary_train_eval_export() {
    let dir = tempfile::tempdir().unwrap();
    let sets = ["length=32", "n_train=32", "n_val=16", "n_test=16", "hidden=4", "kernel_hidden=8", "epochs=1", "batch_size=16"];
    let mut args = vec!["train", "--seed", "2", "--threads", "1", "--out", "run"];
    for s in &sets {
        args.extend(["--set", s]);
    }
    assert!(ccnn(&args, dir.path()).status.success());
    let eval = ccnn(&["eval", "run", "--length", "64"], dir.path());
    assert!(eval.status.success());
    let m: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(m["accuracy"].as_f64().is_some());
    let ex = ccnn(&["export-kernels", "run", "--layer", "0", "--resolution", "5", "--out", "k"], dir.path());
    assert!(ex.status.success());
    assert!(dir.path().join("k/kernels_0.csv").exists());
    let gc = ccnn(&["gradcheck", "--instances", "2", "--only", "matmul"], dir.path());
    assert!(gc.status.success(), "{}", String::from_utf8_lossy(&gc.stdout));
}
