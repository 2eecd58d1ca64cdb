//! End-to-end runs of the `bosd` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bosd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bosd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn small_config(dir: &Path) {
    fs::write(
        dir.join("config.json"),
        r#"{"synthetic": {"t_len": 300}, "fit": {"k": 4, "d_max": 60, "upm": {"kind": "scaled_sine"}, "exclude_final_segment": true}}"#,
    )
    .unwrap();
}

#[test]
fn sample_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(&bosd(
        &[
            "sample",
            "--config",
            "config.json",
            "--seed",
            "7",
            "--out",
            "a",
        ],
        d,
    ));
    ok(&bosd(
        &[
            "sample",
            "--config",
            "config.json",
            "--seed",
            "7",
            "--out",
            "b",
        ],
        d,
    ));
    for f in ["sequence_000.csv", "labels.csv", "model.json"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let seq = fs::read_to_string(d.join("a/sequence_000.csv")).unwrap();
    assert_eq!(seq.lines().count(), 301);
    assert!(seq.starts_with("t,y_1,y_2\n"));
}

#[test]
fn sample_fit_infer_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(&bosd(
        &[
            "sample",
            "--config",
            "config.json",
            "--seed",
            "3",
            "--count",
            "4",
            "--out",
            "data",
        ],
        d,
    ));
    ok(&bosd(
        &[
            "fit",
            "data/sequence_000.csv",
            "data/sequence_001.csv",
            "data/sequence_002.csv",
            "data/sequence_003.csv",
            "--labels",
            "data/labels.csv",
            "--config",
            "config.json",
            "--out",
            "fitted.json",
        ],
        d,
    ));
    let fitted = bosd::model::HsmmParams::load(&d.join("fitted.json")).unwrap();
    assert!(fitted.validate().is_usable());
    assert!(d.join("fitted.report.json").exists());

    let o = bosd(
        &[
            "infer",
            "data/sequence_000.csv",
            "--model",
            "data/model.json",
            "--mode",
            "bosd",
            "--out",
            "trace.csv",
        ],
        d,
    );
    ok(&o);
    let printed: f64 = String::from_utf8_lossy(&o.stdout)
        .trim()
        .rsplit(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 301);
    let summary = bosd::trace::read_trace_summary(trace.as_bytes()).unwrap();
    let sum: f64 = summary.iter().map(|s| s.1).sum();
    assert!((sum - printed).abs() <= 1e-9 * sum.abs().max(1.0));

    let o = bosd(
        &[
            "eval",
            "trace.csv",
            "--labels",
            "data/labels.csv",
            "--out",
            "metrics.json",
        ],
        d,
    );
    ok(&o);
    let report: bosd::metrics::MetricsReport =
        serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert!(report.accuracy > 0.8, "accuracy {}", report.accuracy);
}

#[test]
fn bocpd_mode_needs_a_single_state_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(&bosd(
        &["sample", "--config", "config.json", "--out", "data"],
        d,
    ));
    let o = bosd(
        &[
            "infer",
            "data/sequence_000.csv",
            "--model",
            "data/model.json",
            "--mode",
            "bocpd",
            "--out",
            "t.csv",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("single-state"));
}

#[test]
fn missing_label_file_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(&bosd(
        &["sample", "--config", "config.json", "--out", "data"],
        d,
    ));
    let o = bosd(
        &[
            "fit",
            "data/sequence_000.csv",
            "--labels",
            "nope.csv",
            "--out",
            "m.json",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn underflow_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = bosd::upm::GaussianUpm::fixed(vec![0.0], vec![vec![1e-4]]).unwrap();
    let hazard = bosd::model::HazardFn::constant(0.1, 10).unwrap();
    bosd::model::HsmmParams::from_hazard(&hazard, g.into())
        .save(&d.join("m.json"))
        .unwrap();
    fs::write(d.join("s.csv"), "t,y_1\n1,0\n2,1e160\n").unwrap();
    let o = bosd(
        &[
            "infer", "s.csv", "--model", "m.json", "--mode", "bocpd", "--out", "t.csv",
        ],
        d,
    );
    assert_eq!(
        o.status.code(),
        Some(1),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 2"));
}

#[test]
fn features_command_writes_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("t,ch_1,ch_2\n");
    for i in 0..(512 * 3 + 100) {
        let x = i as f64 / 128.0;
        text += &format!(
            "{},{},{}\n",
            i + 1,
            (2.0 * std::f64::consts::PI * 6.0 * x).sin(),
            (x * 40.0).cos()
        );
    }
    fs::write(d.join("rec.csv"), text).unwrap();
    ok(&bosd(&["features", "rec.csv", "--out", "feat.csv"], d));
    let rows = fs::read_to_string(d.join("feat.csv")).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), 1 + 12);
}
