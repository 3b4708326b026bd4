//! End-to-end tests of the command-line interface: flag handling, exit
//! codes, and the files each subcommand writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ebdoa::dataset::{GenConfig, generate_dataset};
use ebdoa::dcnn::{DeconvSpec, ModelConfig, build_model, save_model};
use ebdoa::{GridSpec, build_grid};

fn ebdoa_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ebdoa"))
}

fn run(args: &[&str]) -> Output {
    ebdoa_cmd().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small dataset written through the library, for commands whose own
/// behavior is under test rather than generation.
fn write_dataset(path: &Path, count: usize, seed: u64) {
    let cfg = GenConfig {
        count,
        sources_min: 1,
        sources_max: 1,
        frame_len: 500,
        image_order: 2,
        master_seed: seed,
        ..GenConfig::default()
    };
    generate_dataset(&cfg, path).expect("dataset generation");
}

/// A deliberately small full-grid model saved through the library.
fn write_tiny_model(path: &Path) {
    let config = ModelConfig {
        order: 4,
        fc_widths: vec![625, 32, 1800],
        reshape: (4, 15, 30),
        deconv: vec![
            DeconvSpec {
                in_channels: 4,
                out_channels: 4,
                kernel: (4, 4),
                stride: (2, 2),
                padding: (1, 1),
                output_padding: (0, 0),
            },
            DeconvSpec {
                in_channels: 4,
                out_channels: 1,
                kernel: (4, 4),
                stride: (2, 2),
                padding: (1, 1),
                output_padding: (0, 0),
            },
        ],
        grid: GridSpec::default(),
        final_bias: -2.0,
    };
    let model = build_model(&config, 3).expect("model builds");
    save_model(&model, path).expect("model saves");
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["eval", "--help"])), 0);
}

#[test]
fn usage_problems_exit_one() {
    // No subcommand.
    assert_eq!(code(&run(&[])), 1);
    // Unknown flag.
    assert_eq!(code(&run(&["gen", "--no-such-flag", "x", "--out", "y"])), 1);
    // Missing required flag.
    assert_eq!(code(&run(&["gen"])), 1);
    // Bad enum value.
    assert_eq!(code(&run(&["eval", "--method", "svm", "--data", "d"])), 1);
}

#[test]
fn missing_and_corrupt_data_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ds");
    let out = run(&["eval", "--method", "eb-mvdr", "--data", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));

    let garbage = dir.path().join("garbage.ds");
    std::fs::write(&garbage, b"definitely not a dataset").unwrap();
    let out = run(&["eval", "--method", "eb-mvdr", "--data", garbage.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("garbage.ds"), "stderr names the file: {}", stderr(&out));

    let model = dir.path().join("bad.model");
    std::fs::write(&model, b"EBDOA-MODEL 999\nend\n").unwrap();
    let ds = dir.path().join("ok.ds");
    write_dataset(&ds, 1, 4);
    let out = run(&[
        "infer",
        "--model",
        model.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--heatmap",
        dir.path().join("h.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn truncated_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("full.ds");
    write_dataset(&ds, 2, 9);
    let bytes = std::fs::read(&ds).unwrap();
    let cut = dir.path().join("cut.ds");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["eval", "--method", "eb-music", "--data", cut.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn gen_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    std::fs::write(&cfg, "count = 3\nframe_len = 500\nimage_order = 2\nsources_max = 1\n").unwrap();
    let a = dir.path().join("a.ds");
    let b = dir.path().join("b.ds");
    for out in [&a, &b] {
        let r = run(&[
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest = std::fs::read_to_string(dir.path().join("a.ds.manifest")).unwrap();
    assert!(manifest.contains("records: 3"));
    assert!(manifest.contains("master-seed: 7"));

    let c = dir.path().join("c.ds");
    let r = run(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "8",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn gen_config_problems_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("x.ds");

    // Unknown key: the file itself is malformed.
    let bad_key = dir.path().join("bad_key.toml");
    std::fs::write(&bad_key, "no_such_key = 1\n").unwrap();
    let r = run(&["gen", "--config", bad_key.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&r), 2, "stderr: {}", stderr(&r));

    // Parsable file with an impossible value: a usage error.
    let bad_value = dir.path().join("bad_value.toml");
    std::fs::write(&bad_value, "sources_min = 0\n").unwrap();
    let r = run(&["gen", "--config", bad_value.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&r), 1, "stderr: {}", stderr(&r));
}

#[test]
fn eval_writes_the_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 3, 11);
    let report = dir.path().join("report.kv");
    let out = run(&[
        "eval",
        "--method",
        "eb-mvdr",
        "--data",
        ds.to_str().unwrap(),
        "--by-t60",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("method: eb-mvdr"));
    assert!(text.contains("R_rec"));
    let kv = std::fs::read_to_string(&report).unwrap();
    assert!(kv.starts_with("method=eb-mvdr\nrecords=3\n"));
    assert!(kv.contains("overall.r_rec="));
}

#[test]
fn eval_dcnn_without_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 1, 13);
    let out = run(&["eval", "--method", "dcnn", "--data", ds.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--model"), "stderr: {}", stderr(&out));
}

#[test]
fn infer_writes_both_heatmap_formats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 2, 17);
    let model = dir.path().join("m.model");
    write_tiny_model(&model);

    let csv = dir.path().join("h.csv");
    let out = run(&[
        "infer",
        "--model",
        model.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--index",
        "1",
        "--heatmap",
        csv.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().all(|r| r.split(',').count() == 120));

    let pgm = dir.path().join("h.pgm");
    let out = run(&[
        "infer",
        "--model",
        model.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--heatmap",
        pgm.to_str().unwrap(),
        "--format",
        "pgm",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n120 60\n255\n"));
    assert_eq!(bytes.len(), "P5\n120 60\n255\n".len() + 7200);
}

#[test]
fn infer_index_out_of_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 1, 19);
    let model = dir.path().join("m.model");
    write_tiny_model(&model);
    let out = run(&[
        "infer",
        "--model",
        model.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--index",
        "5",
        "--heatmap",
        dir.path().join("h.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("out of range"), "stderr: {}", stderr(&out));
}

#[test]
fn baseline_sps_writes_a_heatmap_for_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 1, 23);
    for (method, name) in [("eb-mvdr", "mvdr.csv"), ("eb-music", "music.csv")] {
        let path = dir.path().join(name);
        let out = run(&[
            "baseline-sps",
            "--method",
            method,
            "--data",
            ds.to_str().unwrap(),
            "--heatmap",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 60);
        assert!(stdout(&out).contains("truth (7 arrivals):"));
    }
}

#[test]
fn train_writes_model_and_history_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 6, 29);
    let cfg = dir.path().join("train.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
fc_widths = [625, 24, 1800]
reshape = [4, 15, 30]

[[model.deconv]]
in_channels = 4
out_channels = 4
kernel = [4, 4]
stride = [2, 2]
padding = [1, 1]
output_padding = [0, 0]

[[model.deconv]]
in_channels = 4
out_channels = 1
kernel = [4, 4]
stride = [2, 2]
padding = [1, 1]
output_padding = [0, 0]

[train]
epochs = 2
batch_size = 3
"#,
    )
    .unwrap();

    let paths: Vec<PathBuf> = ["a.model", "b.model"]
        .iter()
        .map(|n| dir.path().join(n))
        .collect();
    for model_path in &paths {
        let out = run(&[
            "train",
            "--data",
            ds.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            model_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        assert!(stdout(&out).contains("epoch=1 train_loss="));
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    let h0 = std::fs::read(dir.path().join("a.model.history")).unwrap();
    let h1 = std::fs::read(dir.path().join("b.model.history")).unwrap();
    assert_eq!(h0, h1);
    assert_eq!(String::from_utf8(h0).unwrap().lines().count(), 2);

    // The saved model is usable for inference.
    let heatmap = dir.path().join("h.csv");
    let out = run(&[
        "infer",
        "--model",
        paths[0].to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--heatmap",
        heatmap.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(heatmap.exists());
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert_eq!(code(&out), 0, "stdout: {}\nstderr: {}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("selftest: all checks passed"));
    assert_eq!(text.matches(": ok (").count(), 8);
}

#[test]
fn model_order_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 1, 31);
    // Order-2 model against order-4 features.
    let config = ModelConfig {
        order: 2,
        fc_widths: vec![81, 16, 1800],
        reshape: (4, 15, 30),
        deconv: vec![
            DeconvSpec {
                in_channels: 4,
                out_channels: 4,
                kernel: (4, 4),
                stride: (2, 2),
                padding: (1, 1),
                output_padding: (0, 0),
            },
            DeconvSpec {
                in_channels: 4,
                out_channels: 1,
                kernel: (4, 4),
                stride: (2, 2),
                padding: (1, 1),
                output_padding: (0, 0),
            },
        ],
        grid: GridSpec::default(),
        final_bias: -2.0,
    };
    let model = build_model(&config, 1).expect("model builds");
    let path = dir.path().join("o2.model");
    save_model(&model, &path).expect("model saves");
    let out = run(&[
        "eval",
        "--method",
        "dcnn",
        "--model",
        path.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn heatmap_matches_the_library_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    write_dataset(&ds, 1, 37);
    let cli_path = dir.path().join("cli.csv");
    let out = run(&[
        "baseline-sps",
        "--method",
        "eb-mvdr",
        "--data",
        ds.to_str().unwrap(),
        "--heatmap",
        cli_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let records = ebdoa::dataset::read_records(&ds).unwrap();
    let cov = ebdoa::dataset::covariance_from_feature(&records[0].feature_f64(), 4).unwrap();
    let grid = build_grid(GridSpec::default());
    let sps = ebdoa::ebdsp::eb_mvdr_spectrum(&cov, &grid).unwrap();
    let lib_path = dir.path().join("lib.csv");
    ebdoa::eval::emit_heatmap(&sps, &lib_path, ebdoa::eval::HeatmapFormat::Csv).unwrap();
    assert_eq!(std::fs::read(&cli_path).unwrap(), std::fs::read(&lib_path).unwrap());
}
