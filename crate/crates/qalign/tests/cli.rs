//! End-to-end tests of the `qalign` binary: every subcommand, the documented
//! exit codes, and the on-disk file formats.

use std::path::{Path, PathBuf};
use std::process::Command;

fn qalign(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_qalign"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Generates a small model and a pair of corpora, returning their paths.
    fn pipeline(&self, extra_gen: &[&str]) -> (String, String, String) {
        let model = self.arg("model.bin");
        let mut args = vec![
            "gen-model",
            "-o",
            &model,
            "--vocab",
            "256",
            "--dim",
            "16",
            "--layers",
            "2",
            "--max-length",
            "8",
            "--seed",
            "7",
        ];
        args.extend_from_slice(extra_gen);
        let (code, _, err) = qalign(&args);
        assert_eq!(code, 0, "{err}");

        let left = self.path("left.tsv");
        write(
            &left,
            "L1\tRoyal jelly is rich in vitamins\nL2\tSmoke calms the bees!\nL3\tHybridization of breeds\nL4\tDegrees of similarity\n",
        );
        let right = self.path("right.tsv");
        write(
            &right,
            "R1\troyal jelly vitamins\nR2\tbee smoke\nR3\tbreed hybridization\n",
        );
        (
            model,
            left.display().to_string(),
            right.display().to_string(),
        )
    }
}

#[test]
fn unknown_subcommand_exits_2() {
    let (code, _, err) = qalign(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.to_lowercase().contains("usage") || err.contains("unrecognized"), "{err}");
}

#[test]
fn help_exits_0() {
    let (code, out, _) = qalign(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("gen-model") && out.contains("debug-activations"), "{out}");
}

#[test]
fn unreadable_file_exits_1() {
    let f = Fixture::new();
    let (code, _, err) = qalign(&[
        "calibrate",
        "--model",
        &f.arg("missing.bin"),
        "--corpus",
        &f.arg("missing.tsv"),
        "-o",
        &f.arg("stats.json"),
    ]);
    assert_eq!(code, 1, "{err}");
    assert!(!err.is_empty());
}

#[test]
fn gen_model_is_seed_deterministic() {
    let f = Fixture::new();
    for name in ["a.bin", "b.bin"] {
        let (code, _, err) = qalign(&[
            "gen-model", "-o", &f.arg(name), "--vocab", "64", "--dim", "8", "--layers", "1",
            "--max-length", "4", "--seed", "5",
        ]);
        assert_eq!(code, 0, "{err}");
    }
    let a = std::fs::read(f.path("a.bin")).unwrap();
    let b = std::fs::read(f.path("b.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_pipeline_calibrate_quantize_align() {
    let f = Fixture::new();
    let (model, left, right) = f.pipeline(&[]);

    let stats = f.arg("stats.json");
    let (code, _, err) = qalign(&[
        "calibrate", "--model", &model, "--corpus", &left, "-o", &stats,
    ]);
    assert_eq!(code, 0, "{err}");
    let stats_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("stats.json")).unwrap()).unwrap();
    assert_eq!(stats_json["layers"].as_array().unwrap().len(), 2);
    assert!(stats_json["layers"][0]["act_max"].is_array());
    assert!(stats_json["layers"][0]["wt_max"].is_array());

    let qmodel = f.arg("model.q.bin");
    let (code, _, err) = qalign(&[
        "quantize", "--model", &model, "--stats", &stats, "--alpha", "0.5", "-o", &qmodel,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(
        std::fs::metadata(f.path("model.q.bin")).unwrap().len()
            < std::fs::metadata(f.path("model.bin")).unwrap().len()
    );

    let maps = f.arg("maps.tsv");
    let (code, _, err) = qalign(&[
        "align", "--left", &left, "--right", &right, "--model", &qmodel, "--batch-size", "10",
        "-o", &maps,
    ]);
    assert_eq!(code, 0, "{err}");
    let content = std::fs::read_to_string(f.path("maps.tsv")).unwrap();
    let rows: Vec<&str> = content.lines().collect();
    assert_eq!(rows.len(), 4, "one mapping per left record:\n{content}");
    for row in &rows {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 4, "{row}");
        assert!(cols[0].starts_with('L') && cols[1].starts_with('R'));
        // six decimal places on score and probability
        for v in &cols[2..] {
            let frac = v.split('.').nth(1).unwrap();
            assert_eq!(frac.len(), 6, "{row}");
        }
        let p: f32 = cols[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    // determinism: a second run produces the identical file
    let maps2 = f.arg("maps2.tsv");
    let (code, _, _) = qalign(&[
        "align", "--left", &left, "--right", &right, "--model", &qmodel, "-o", &maps2,
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        std::fs::read(f.path("maps.tsv")).unwrap(),
        std::fs::read(f.path("maps2.tsv")).unwrap()
    );
}

#[test]
fn eval_edrm_perfect_prints_one() {
    let f = Fixture::new();
    write(&f.path("gold.tsv"), "a\t4.0\nb\t1.5\nc\t0\n");
    write(&f.path("pred.tsv"), "a\t4.0\nb\t1.5\nc\t0\n");
    let (code, out, err) = qalign(&[
        "eval", "edrm", "--pred", &f.arg("pred.tsv"), "--gold", &f.arg("gold.tsv"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim(), "1.0000");
}

#[test]
fn eval_edrm_hand_value() {
    let f = Fixture::new();
    write(&f.path("gold.tsv"), "a\t4\n");
    write(&f.path("pred.tsv"), "a\t2\n");
    let (code, out, _) = qalign(&[
        "eval", "edrm", "--pred", &f.arg("pred.tsv"), "--gold", &f.arg("gold.tsv"),
    ]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "0.5000");
}

#[test]
fn eval_map_from_files() {
    let f = Fixture::new();
    // q1: relevant at rank 1; q2: relevant at rank 3
    write(
        &f.path("ranked.tsv"),
        "q1\ta\t1\nq1\tb\t2\nq1\tc\t3\nq2\tx\t1\nq2\ty\t2\nq2\ta\t3\n",
    );
    write(&f.path("qrels.tsv"), "q1\ta\nq2\ta\n");
    let (code, out, err) = qalign(&[
        "eval", "map", "--ranked", &f.arg("ranked.tsv"), "--qrels", &f.arg("qrels.tsv"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim(), "0.6667");
}

#[test]
fn eval_spearman_from_files() {
    let f = Fixture::new();
    write(&f.path("pred.tsv"), "a\t1\nb\t3\nc\t2\nd\t4\n");
    write(&f.path("gold.tsv"), "a\t1\nb\t2\nc\t3\nd\t4\n");
    let (code, out, err) = qalign(&[
        "eval", "spearman", "--pred", &f.arg("pred.tsv"), "--gold", &f.arg("gold.tsv"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("0.8000\t"), "{out}");
}

#[test]
fn eval_cls_from_files() {
    let f = Fixture::new();
    write(&f.path("pred.tsv"), "a\t1\nb\t1\nc\t0\nd\t0\ne\t1\n");
    write(&f.path("gold.tsv"), "a\t1\nb\t0\nc\t1\nd\t0\ne\t1\n");
    let (code, out, err) = qalign(&[
        "eval", "cls", "--pred", &f.arg("pred.tsv"), "--gold", &f.arg("gold.tsv"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("accuracy=0.6000"), "{out}");
    assert!(out.contains("precision=") && out.contains("f1="), "{out}");
}

#[test]
fn debug_activations_rows_and_outlier_flags() {
    let f = Fixture::new();
    let (model, left, _) = f.pipeline(&["--outlier-channels", "2", "--outlier-gain", "40"]);
    let csv_path = f.arg("acts.csv");
    let (code, out, err) = qalign(&[
        "debug-activations", "--model", &model, "--corpus", &left, "-o", &csv_path,
    ]);
    assert_eq!(code, 0, "{err}");

    let content = std::fs::read_to_string(f.path("acts.csv")).unwrap();
    let mut lines = content.lines();
    assert_eq!(lines.next().unwrap(), "token,channel,abs_value");
    let data_rows: Vec<&str> = lines.collect();
    // 4 texts x max_length 8 x dim 16
    assert_eq!(data_rows.len(), 4 * 8 * 16, "{out}");

    // flagged channels really exceed the threshold in the CSV
    let mut flagged = Vec::new();
    for line in err.lines() {
        if let Some(rest) = line.strip_prefix("channel ") {
            let ch: usize = rest.split(':').next().unwrap().parse().unwrap();
            flagged.push(ch);
        }
    }
    assert!(!flagged.is_empty(), "outlier fixture must flag channels: {err}");
    for ch in flagged {
        let max = data_rows
            .iter()
            .filter_map(|row| {
                let mut it = row.split(',');
                let _token = it.next()?;
                let channel: usize = it.next()?.parse().ok()?;
                let value: f32 = it.next()?.parse().ok()?;
                (channel == ch).then_some(value)
            })
            .fold(0.0f32, f32::max);
        assert!(max > 2.5, "channel {ch} max {max}");
    }
}

#[test]
fn bench_report_fields_and_comparison() {
    let f = Fixture::new();
    let (model, left, _) = f.pipeline(&[]);
    let report = f.arg("report.json");
    let (code, _, err) = qalign(&[
        "bench", "--model", &model, "--corpus", &left, "--repetitions", "3", "--warmup", "1",
        "--energy-kwh", "2.0", "--label", "fp32", "-o", &report,
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("report.json")).unwrap()).unwrap();
    let obj = v.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(|s| s.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        vec![
            "co2_kg",
            "energy_kwh",
            "label",
            "latency_avg_ms",
            "latency_max_ms",
            "latency_min_ms",
            "size_mb",
        ]
    );
    assert_eq!(v["co2_kg"], serde_json::json!(0.95));
    let avg = v["latency_avg_ms"].as_f64().unwrap();
    let max = v["latency_max_ms"].as_f64().unwrap();
    let min = v["latency_min_ms"].as_f64().unwrap();
    assert!(min <= avg && avg <= max);

    // compare a second (identical-model) run against the first report
    let report2 = f.arg("report2.json");
    let (code, out, err) = qalign(&[
        "bench", "--model", &model, "--corpus", &left, "--repetitions", "3", "--warmup", "1",
        "-o", &report2, "--baseline", &report,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("speedup="), "{out}");
}

#[test]
fn search_writes_report_with_trials_and_outcome() {
    let f = Fixture::new();
    let (model, _, _) = f.pipeline(&[]);
    let report = f.arg("search.json");
    let (code, out, err) = qalign(&[
        "search", "--model", &model, "-o", &report, "--texts", "10", "--targets", "6",
        "--max-length", "8", "--repetitions", "1", "--warmup", "0", "--budget", "4", "--seed",
        "11",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("search.json")).unwrap()).unwrap();
    let trials = v["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 4);
    for t in trials {
        assert!(t["feasible"].is_boolean());
        assert!(t["quality"].as_f64().unwrap() >= 0.0);
        assert!(t["latency_ms"].as_f64().unwrap() > 0.0);
        assert!(t["config"]["alpha"].is_number());
    }
    assert!(!v["frontier"].as_array().unwrap().is_empty());
    let selected = !v["selection"].is_null();
    let infeasible = !v["infeasibility"].is_null();
    assert!(selected ^ infeasible, "exactly one outcome: {out}");
    assert!(out.contains("selected") || out.contains("infeasible"), "{out}");
}
