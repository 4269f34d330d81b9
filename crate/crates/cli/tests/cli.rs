// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freb::benchmarks::Scenario;
use freb::io::{read_split_csv, write_statistic_table};
use serde_json::Value;
use tempfile::TempDir;

fn freb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = freb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn status(args: &[&str]) -> i32 {
    freb(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data_rows(path: &Path) -> usize {
    read_split_csv(path).unwrap().rows.len()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small gauss1d study: splits in `dir/b`, both models in `dir/c`.
fn small_pipeline(dir: &Path) -> (PathBuf, PathBuf) {
    let b = dir.join("b");
    let c = dir.join("c");
    ok(&[
        "benchmark",
        "--scenario",
        "gauss1d",
        "--seed",
        "7",
        "--calibration-size",
        "5000",
        "--diagnostic-size",
        "5000",
        "--train-size",
        "100",
        "--out",
        p(&b),
    ]);
    ok(&[
        "calibrate",
        "--calibration",
        p(&b.join("calibration.csv")),
        "--statistic",
        "gauss1d",
        "--seed",
        "7",
        "--out",
        p(&c),
    ]);
    (b, c)
}

fn write_targets(path: &Path, rows: &[(f64, f64)]) {
    let mut text = String::from("# split: target\nsplit,theta_1,x_1\n");
    for (t, x) in rows {
        text.push_str(&format!("target,{t},{x}\n"));
    }
    fs::write(path, text).unwrap();
}

fn summary_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn benchmark_writes_four_splits_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    ok(&["benchmark", "--scenario", "gauss1d", "--seed", "7", "--out", p(dir.path())]);
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["calibration.csv", "diagnostic.csv", "scenario.json", "target.csv", "train.csv"]
    );
    assert_eq!(data_rows(&dir.path().join("calibration.csv")), 50_000);
    let manifest = json(&dir.path().join("scenario.json"));
    assert_eq!(manifest["scenario"]["name"], "gauss1d");
    assert_eq!(manifest["scenario"]["seed"], 7);
    let hash = manifest["config_hash"].as_str().unwrap();
    for f in ["train.csv", "calibration.csv", "diagnostic.csv", "target.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.contains(&format!("# config_hash: {hash}")), "{f}");
    }
}

#[test]
fn gmm2d_calibration_split_has_thirty_thousand_rows() {
    let dir = TempDir::new().unwrap();
    ok(&["benchmark", "--scenario", "gmm2d", "--out", p(dir.path())]);
    let cal = read_split_csv(&dir.path().join("calibration.csv")).unwrap();
    assert_eq!(cal.rows.len(), 30_000);
    assert_eq!((cal.theta_dim, cal.obs_dim), (2, 2));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(status(&["benchmark", "--scenario", "gauss3d", "--out", p(dir.path())]), 2);
    assert_eq!(status(&["benchmark", "--out", p(dir.path())]), 2);
    assert_eq!(status(&["frobnicate"]), 2);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"scenario": "gauss3d"}"#).unwrap();
    assert_eq!(status(&["benchmark", "--config", p(&cfg), "--out", p(dir.path())]), 2);
    fs::write(&cfg, r#"{"scenaro": "gauss1d"}"#).unwrap();
    assert_eq!(status(&["benchmark", "--config", p(&cfg), "--out", p(dir.path())]), 2);
    fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(status(&["benchmark", "--config", p(&cfg), "--out", p(dir.path())]), 2);
}

#[test]
fn calibrate_defaults_record_oversampling_and_calibration_size() {
    let dir = TempDir::new().unwrap();
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    ok(&["benchmark", "--scenario", "gauss1d", "--seed", "3", "--out", p(&b)]);
    ok(&[
        "calibrate",
        "--calibration",
        p(&b.join("calibration.csv")),
        "--statistic",
        "gauss1d",
        "--out",
        p(&c),
    ]);
    let m = json(&c.join("calibration_manifest.json"));
    assert_eq!(m["oversampling"], 10);
    assert_eq!(m["calibration_size"], 50_000);
    assert_eq!(m["augmented_rows"], 500_000);
    assert_eq!(m["neighbors"], 1358);
    assert_eq!(m["models"], serde_json::json!(["rejection_model.json", "critval_model.json"]));
    let model = json(&c.join("rejection_model.json"));
    assert_eq!(model["oversampling"], 10);
    assert_eq!(model["calibration_size"], 50_000);
    assert_eq!(model["metadata"]["config_hash"], m["config_hash"]);
    assert_eq!(model["metadata"]["statistic"], "gauss1d");
}

#[test]
fn critval_route_emits_only_the_critical_value_model() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    let c = dir.path().join("cv");
    ok(&[
        "calibrate",
        "--calibration",
        p(&b.join("calibration.csv")),
        "--statistic",
        "gauss1d",
        "--route",
        "critval",
        "--alpha",
        "0.1",
        "--out",
        p(&c),
    ]);
    assert!(c.join("critval_model.json").exists());
    assert!(!c.join("rejection_model.json").exists());
    assert_eq!(json(&c.join("critval_model.json"))["alpha"], 0.1);
}

#[test]
fn calibrate_needs_exactly_one_statistic_source() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    let cal = b.join("calibration.csv");
    let out = dir.path().join("x");
    assert_eq!(status(&["calibrate", "--calibration", p(&cal), "--out", p(&out)]), 2);
    let table = dir.path().join("t.csv");
    fs::write(&table, "theta_1,x_id,lambda\n").unwrap();
    assert_eq!(
        status(&[
            "calibrate",
            "--calibration",
            p(&cal),
            "--statistic",
            "gauss1d",
            "--statistic-table",
            p(&table),
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(
        status(&["calibrate", "--calibration", p(&cal), "--statistic", "gauss1d", "--alpha", "1.5", "--out", p(&out)]),
        2
    );
}

#[test]
fn malformed_calibration_row_is_a_data_error_with_its_row_number() {
    let dir = TempDir::new().unwrap();
    let cal = dir.path().join("cal.csv");
    fs::write(
        &cal,
        "# split: calibration\nsplit,theta_1,x_1\ncalibration,0.5,1.0\ncalibration,0.25,oops\n",
    )
    .unwrap();
    let out = freb(&[
        "calibrate",
        "--calibration",
        p(&cal),
        "--statistic",
        "gauss1d",
        "--out",
        p(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2"), "{err}");
}

#[test]
fn calibrating_non_calibration_data_is_refused() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    assert_eq!(
        status(&[
            "calibrate",
            "--calibration",
            p(&b.join("diagnostic.csv")),
            "--statistic",
            "gauss1d",
            "--out",
            p(&dir.path().join("c2"))
        ]),
        3
    );
}

#[test]
fn statistic_table_reproduces_the_builtin_calibration() {
    let dir = TempDir::new().unwrap();
    let (b, c) = small_pipeline(dir.path());
    let cal_path = b.join("calibration.csv");
    let cal = read_split_csv(&cal_path).unwrap();
    let post = Scenario::gauss1d(0).posterior().unwrap();
    let rows: Vec<(Vec<f64>, u64, f64)> = cal
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let theta = r.theta.coords().to_vec();
            let lambda = post.eval(r.x.values(), &theta);
            (theta, i as u64, lambda)
        })
        .collect();
    let table = dir.path().join("table.csv");
    write_statistic_table(&table, 1, &rows).unwrap();
    let t = dir.path().join("ct");
    ok(&[
        "calibrate",
        "--calibration",
        p(&cal_path),
        "--statistic-table",
        p(&table),
        "--seed",
        "7",
        "--out",
        p(&t),
    ]);
    let builtin = json(&c.join("rejection_model.json"));
    let tabulated = json(&t.join("rejection_model.json"));
    assert_eq!(builtin["calibration"], tabulated["calibration"]);
    assert_eq!(tabulated["metadata"]["statistic"], "table");

    // a missing entry is a data error
    write_statistic_table(&table, 1, &rows[1..]).unwrap();
    assert_eq!(
        status(&[
            "calibrate",
            "--calibration",
            p(&cal_path),
            "--statistic-table",
            p(&table),
            "--out",
            p(&dir.path().join("ct2"))
        ]),
        3
    );
}

#[test]
fn infer_on_a_prior_tail_target() {
    let dir = TempDir::new().unwrap();
    let (_, c) = small_pipeline(dir.path());
    let targets = dir.path().join("targets.csv");
    write_targets(&targets, &[(4.0, 4.0)]);

    let freb_out = dir.path().join("freb");
    ok(&[
        "infer",
        "--model",
        p(&c.join("rejection_model.json")),
        "--targets",
        p(&targets),
        "--alpha",
        "0.1",
        "--out",
        p(&freb_out),
    ]);
    let rows = summary_rows(&freb_out.join("summary.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][1], "pvalue");
    assert_eq!(rows[0][4], "true");
    let set = json(&freb_out.join("sets/target_0.json"));
    assert_eq!(set["route"], "freb-pvalue");

    let hpd_out = dir.path().join("hpd");
    ok(&[
        "infer",
        "--method",
        "hpd",
        "--statistic",
        "gauss1d",
        "--targets",
        p(&targets),
        "--out",
        p(&hpd_out),
    ]);
    let rows = summary_rows(&hpd_out.join("summary.csv"));
    assert_eq!(rows[0][1], "hpd");
    assert_eq!(rows[0][4], "false");
    // [0.837, 3.163] on a 0.01 grid
    let size: f64 = rows[0][3].parse().unwrap();
    assert!((size - 2.33).abs() < 0.02, "{size}");

    let cv_out = dir.path().join("cv");
    ok(&[
        "infer",
        "--model",
        p(&c.join("critval_model.json")),
        "--targets",
        p(&targets),
        "--out",
        p(&cv_out),
    ]);
    assert_eq!(summary_rows(&cv_out.join("summary.csv"))[0][4], "true");
}

#[test]
fn infer_argument_errors() {
    let dir = TempDir::new().unwrap();
    let (_, c) = small_pipeline(dir.path());
    let targets = dir.path().join("targets.csv");
    write_targets(&targets, &[(0.0, 0.5)]);
    let out = dir.path().join("o");
    // critical values fitted at 0.1
    assert_eq!(
        status(&["infer", "--model", p(&c.join("critval_model.json")), "--targets", p(&targets), "--alpha", "0.05", "--out", p(&out)]),
        2
    );
    assert_eq!(status(&["infer", "--method", "pvalue", "--statistic", "gauss1d", "--targets", p(&targets), "--out", p(&out)]), 2);
    assert_eq!(status(&["infer", "--method", "hpd", "--targets", p(&targets), "--out", p(&out)]), 2);
    // a 1D model with the 2D statistic
    assert_eq!(
        status(&["infer", "--model", p(&c.join("rejection_model.json")), "--statistic", "gmm2d", "--targets", p(&targets), "--out", p(&out)]),
        3
    );
}

#[test]
fn empty_target_file_gives_an_empty_summary() {
    let dir = TempDir::new().unwrap();
    let (_, c) = small_pipeline(dir.path());
    let targets = dir.path().join("targets.csv");
    write_targets(&targets, &[]);
    let out = dir.path().join("o");
    ok(&["infer", "--model", p(&c.join("rejection_model.json")), "--targets", p(&targets), "--out", p(&out)]);
    assert!(summary_rows(&out.join("summary.csv")).is_empty());
    assert_eq!(fs::read_dir(out.join("sets")).unwrap().count(), 0);
}

#[test]
fn diagnose_hpd_flags_the_prior_tail() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    let out = dir.path().join("d");
    let run = ok(&[
        "diagnose",
        "--diagnostic",
        p(&b.join("diagnostic.csv")),
        "--method",
        "hpd",
        "--statistic",
        "gauss1d",
        "--alpha",
        "0.1",
        "--out",
        p(&out),
    ]);
    let stdout = String::from_utf8_lossy(&run.stdout);
    let tail = stdout
        .lines()
        .find(|l| l.starts_with("under (1.") || l.starts_with("under (2."))
        .unwrap_or_else(|| panic!("{stdout}"));
    assert!(tail.contains(".. (9.0000)"), "{tail}");
    let text = fs::read_to_string(out.join("coverage.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash: "));
    assert_eq!(lines.next().unwrap(), "theta_1,estimate,half_width,flag");
    let at4: Vec<&str> = lines.find(|l| l.starts_with("4.0000000000000000e0,")).unwrap().split(',').collect();
    assert!(at4[1].parse::<f64>().unwrap() < 0.10, "{at4:?}");
    assert_eq!(at4[3], "under");
}

#[test]
fn diagnose_freb_flags_only_a_few_probes() {
    let dir = TempDir::new().unwrap();
    let (b, c) = small_pipeline(dir.path());
    let run = ok(&[
        "diagnose",
        "--diagnostic",
        p(&b.join("diagnostic.csv")),
        "--model",
        p(&c.join("rejection_model.json")),
        "--out",
        p(&dir.path().join("d")),
    ]);
    let stdout = String::from_utf8_lossy(&run.stdout);
    let first = stdout.lines().next().unwrap();
    let flagged: usize = first.split(": ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(first.contains("of 181 grid points"), "{first}");
    assert!(flagged <= 181 / 4, "{stdout}");
}

#[test]
fn diagnose_refuses_calibration_data() {
    let dir = TempDir::new().unwrap();
    let (b, c) = small_pipeline(dir.path());
    let model = c.join("rejection_model.json");
    let out = dir.path().join("d");
    let cal = b.join("calibration.csv");
    assert_eq!(status(&["diagnose", "--diagnostic", p(&cal), "--model", p(&model), "--out", p(&out)]), 3);
    // relabeled calibration rows are caught by their parameter values
    let relabeled = dir.path().join("relabeled.csv");
    let text = fs::read_to_string(&cal)
        .unwrap()
        .replace("# split: calibration", "# split: diagnostic")
        .replace("\ncalibration,", "\ndiagnostic,");
    fs::write(&relabeled, text).unwrap();
    let run = freb(&["diagnose", "--diagnostic", p(&relabeled), "--model", p(&model), "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).contains("provenance"));
}

#[test]
fn diagnose_rejects_nominal_outside_unit_interval() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    for nominal in ["1.2", "0", "-0.5"] {
        assert_eq!(
            status(&[
                "diagnose",
                "--diagnostic",
                p(&b.join("diagnostic.csv")),
                "--statistic",
                "gauss1d",
                "--nominal",
                nominal,
                "--out",
                p(&dir.path().join("d"))
            ]),
            2,
            "{nominal}"
        );
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"calibration": {:?}, "statistic": "gauss1d", "route": "critval", "alpha": 0.2, "k": 300, "seed": 5}}"#,
            p(&b.join("calibration.csv"))
        ),
    )
    .unwrap();
    let out = dir.path().join("c");
    ok(&["calibrate", "--config", p(&cfg), "--alpha", "0.05", "--out", p(&out)]);
    let m = json(&out.join("calibration_manifest.json"));
    assert_eq!(m["route"], "critval");
    assert_eq!(m["alpha"], 0.05);
    assert_eq!(m["neighbors"], 300);
    assert_eq!(m["seed"], 5);
}

#[test]
fn quadratic_local_fit_is_selectable() {
    let dir = TempDir::new().unwrap();
    let (b, _) = small_pipeline(dir.path());
    let out = dir.path().join("q");
    ok(&[
        "calibrate",
        "--calibration",
        p(&b.join("calibration.csv")),
        "--statistic",
        "gauss1d",
        "--route",
        "pvalue",
        "--local-fit",
        "quadratic",
        "--out",
        p(&out),
    ]);
    let m = json(&out.join("calibration_manifest.json"));
    assert_eq!(m["local_fit"], "quadratic");
    // max(250, ⌈5000^(3/4)⌉)
    assert_eq!(m["neighbors"], 595);
    assert_eq!(json(&out.join("rejection_model.json"))["local_fit"], "quadratic");
    assert_eq!(
        status(&["calibrate", "--calibration", p(&b.join("calibration.csv")), "--statistic", "gauss1d", "--local-fit", "cubic", "--out", p(&out)]),
        2
    );
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let run = |root: &Path| {
        let (b, c) = small_pipeline(root);
        let targets = root.join("targets.csv");
        write_targets(&targets, &[(4.0, 4.0), (-1.0, 0.5), (0.0, 9.5)]);
        ok(&["infer", "--model", p(&c.join("rejection_model.json")), "--targets", p(&targets), "--out", p(&root.join("i"))]);
        ok(&[
            "diagnose",
            "--diagnostic",
            p(&b.join("diagnostic.csv")),
            "--model",
            p(&c.join("critval_model.json")),
            "--out",
            p(&root.join("d")),
        ]);
        tree(root)
    };
    let one = TempDir::new().unwrap();
    let two = TempDir::new().unwrap();
    let a = run(one.path());
    let b = run(two.path());
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs", pa.display());
    }
    assert!(a.len() >= 12);

    // a different seed changes the splits
    let three = TempDir::new().unwrap();
    ok(&["benchmark", "--scenario", "gauss1d", "--seed", "8", "--calibration-size", "5000", "--diagnostic-size", "5000", "--train-size", "100", "--out", p(three.path())]);
    assert_ne!(
        fs::read(three.path().join("calibration.csv")).unwrap(),
        fs::read(one.path().join("b/calibration.csv")).unwrap()
    );
}
