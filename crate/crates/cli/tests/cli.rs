use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn fhnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FHNET_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = fhnet(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn hashes(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut v: Vec<(PathBuf, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().into(), sha(&p)))
        .collect();
    v.sort();
    v
}

const TOY: &str = r#"{
  "seed": 4,
  "model": {"t_in": 32, "t_out": 8, "d_lift": 8, "d_cheb": 8, "d_model": 12, "ffn_width": 24},
  "train": {"epochs": 2, "batch_size": 4, "lr": 0.001, "window": {"t_in": 32, "t_out": 8, "stride": 32}},
  "gen": {"records": 2, "mix": {"duration_s": 2.2}}
}"#;

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.json"), TOY).unwrap();
    dir
}

#[test]
fn gen_refuses_to_overwrite_and_is_reproducible() {
    let dir = toy_dir();
    let d = dir.path();
    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    for f in ["record_0000.csv", "record_0000.json", "record_0001.csv", "manifest.json", "config.json"] {
        assert!(d.join("g").join(f).is_file(), "missing {f}");
    }
    let first = hashes(&d.join("g"));
    fs::write(d.join("g/record_0000.csv"), "sentinel").unwrap();
    let again = fhnet(&["gen", "--config", "toy.json", "--out", "g"], d);
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(fs::read_to_string(d.join("g/record_0000.csv")).unwrap(), "sentinel");
    ok(&["gen", "--config", "toy.json", "--out", "g", "--force"], d);
    assert_eq!(hashes(&d.join("g")), first);

    ok(&["gen", "--config", "toy.json", "--out", "h", "--seed", "5"], d);
    assert_ne!(sha(&d.join("g/record_0000.csv")), sha(&d.join("h/record_0000.csv")));
    assert_eq!(sha(&d.join("g/record_0001.csv")), sha(&d.join("h/record_0000.csv")));
}

#[test]
fn default_output_directory_follows_the_environment() {
    let dir = toy_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_fhnet"))
        .args(["gen", "--records", "1", "--duration-s", "1"])
        .current_dir(dir.path())
        .env("FHNET_OUT", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/gen/record_0000.csv").is_file());
    ok(&["gen", "--records", "1", "--duration-s", "1"], dir.path());
    assert!(dir.path().join("fhnet-out/gen/manifest.json").is_file());
}

#[test]
fn config_is_strict_and_echoed_in_full() {
    let dir = toy_dir();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"gen": {"recrods": 2}}"#).unwrap();
    let out = fhnet(&["gen", "--config", "bad.json", "--out", "g"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("recrods"));
    assert!(!d.join("g").exists());

    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("g/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 4);
    assert_eq!(echoed["train"]["seed"], 4);
    assert_eq!(echoed["train"]["grad_clip"], 5.0);
    assert_eq!(echoed["model"]["heads"], 2);
    assert_eq!(echoed["preprocess"]["dwt_levels"], 6);
}

#[test]
fn preprocess_records_stages_without_dedupe() {
    let dir = toy_dir();
    let d = dir.path();
    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    ok(&["preprocess", "--input", "g", "--out", "p1"], d);
    ok(&["preprocess", "--input", "p1", "--out", "p2"], d);
    let stages = |p: &str| -> Vec<String> {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(p)).unwrap()).unwrap();
        serde_json::from_value(v["preprocessing"].clone()).unwrap()
    };
    assert_eq!(stages("p1/record_0000.json"), ["median(0.2,0.6)", "dwt(6,db4,soft)", "zscore"]);
    assert_eq!(stages("p2/record_0001.json").len(), 6);
    let out = fhnet(&["preprocess", "--input", "p1", "--out", "p1", "--force"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn constant_record_preprocesses_to_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("t,lead_1,lead_2\n");
    for i in 0..500 {
        csv.push_str(&format!("{},3.5,-2\n", i as f64 / 250.0));
    }
    fs::write(d.join("flat.csv"), csv).unwrap();
    ok(&["preprocess", "--input", "flat.csv", "--out", "p"], d);
    let text = fs::read_to_string(d.join("p/flat.csv")).unwrap();
    for line in text.lines().skip(1) {
        let vals: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, [0.0, 0.0]);
    }
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.csv"), "t,lead_1\n0,1\n0.004,x\n").unwrap();
    let out = fhnet(&["preprocess", "--input", "bad.csv", "--out", "p"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn train_eval_round_trip_is_deterministic() {
    let dir = toy_dir();
    let d = dir.path();
    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    ok(&["preprocess", "--input", "g", "--out", "p"], d);
    let stdout = ok(&["train", "--config", "toy.json", "--data", "p", "--out", "t1"], d);
    assert_eq!(stdout.trim(), "t1/model.ckpt");
    ok(&["train", "--config", "toy.json", "--data", "p", "--out", "t2"], d);
    for f in ["model.ckpt", "train_log.json"] {
        assert_eq!(sha(&d.join("t1").join(f)), sha(&d.join("t2").join(f)), "{f} differs");
    }
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("t1/train_log.json")).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);

    let shown = ok(&["eval", "--checkpoint", "t1/model.ckpt", "--data", "p", "--out", "e1"], d);
    ok(&["eval", "--checkpoint", "t2/model.ckpt", "--data", "p", "--out", "e2"], d);
    assert_eq!(sha(&d.join("e1/report.json")), sha(&d.join("e2/report.json")));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e1/report.json")).unwrap()).unwrap();
    assert_eq!(report["checkpoint_id"], sha(&d.join("t1/model.ckpt")));
    assert_eq!(report["window"], "32-8");
    assert!(report["wall_clock_s"].is_null());
    for key in ["aggregate", "aggregate_normalized", "concatenated", "records", "windows", "window_count"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    let rmse_line = shown.lines().find(|l| l.starts_with("R2 ")).unwrap();
    let rmse = rmse_line.split("RMSE ").nth(1).unwrap();
    assert_eq!(rmse.split('.').nth(1).unwrap().len(), 4, "{rmse_line}");

    ok(&["eval", "--checkpoint", "t1/model.ckpt", "--data", "p", "--out", "e3", "--timing"], d);
    let timed: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e3/report.json")).unwrap()).unwrap();
    assert!(timed["wall_clock_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn missing_inputs_fail_with_named_paths() {
    let dir = toy_dir();
    let d = dir.path();
    let out = fhnet(&["train", "--config", "toy.json", "--data", "no/such/dir", "--out", "t"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/dir"));
    assert!(!d.join("t").exists());

    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    ok(&["train", "--config", "toy.json", "--data", "g", "--out", "t", "--epochs", "1"], d);
    let csv = fs::read_to_string(d.join("g/record_0000.csv")).unwrap();
    let stripped: String = csv
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    fs::create_dir(d.join("noref")).unwrap();
    fs::write(d.join("noref/r.csv"), stripped).unwrap();
    let out = fhnet(&["eval", "--checkpoint", "t/model.ckpt", "--data", "noref", "--out", "e"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fecg_ref"));
}

#[test]
fn divergence_exits_nonzero() {
    let dir = toy_dir();
    let d = dir.path();
    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    fs::write(
        d.join("wild.json"),
        TOY.replace(r#""lr": 0.001"#, r#""lr": 1e300, "grad_clip": 0"#),
    )
    .unwrap();
    let out = fhnet(&["train", "--config", "wild.json", "--data", "g", "--out", "t"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

/// Writes the 32-sample stretch of a preprocessed record whose last 8
/// reference samples vary the most, with its sidecar, as `one/one.csv`.
fn single_window_record(d: &Path) {
    let text = fs::read_to_string(d.join("p/record_0000.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let rows: Vec<&str> = lines.collect();
    let reference: Vec<f64> = rows
        .iter()
        .map(|r| r.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let var = |o: usize| {
        let s = &reference[o + 24..o + 32];
        let m = s.iter().sum::<f64>() / 8.0;
        s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let best = (0..=reference.len() - 32).step_by(8).max_by(|&a, &b| var(a).total_cmp(&var(b))).unwrap();
    fs::create_dir(d.join("one")).unwrap();
    let mut out = format!("{header}\n");
    for r in &rows[best..best + 32] {
        out.push_str(r);
        out.push('\n');
    }
    fs::write(d.join("one/one.csv"), out).unwrap();
    fs::copy(d.join("p/record_0000.json"), d.join("one/one.json")).unwrap();
}

#[test]
fn memorized_window_evaluates_near_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("memo.json"),
        r#"{
  "seed": 0,
  "model": {"t_in": 32, "t_out": 8, "d_lift": 8, "d_cheb": 8, "d_model": 12, "ffn_width": 24,
            "decoder_padding": "causal"},
  "train": {"epochs": 500, "batch_size": 1, "lr": 0.003, "grad_clip": 0,
            "window": {"t_in": 32, "t_out": 8, "stride": 32}},
  "gen": {"records": 1, "mix": {"duration_s": 1.0}}
}"#,
    )
    .unwrap();
    ok(&["gen", "--config", "memo.json", "--seed", "21", "--out", "g"], d);
    ok(&["preprocess", "--input", "g", "--out", "p"], d);
    single_window_record(d);
    ok(&["train", "--config", "memo.json", "--data", "one", "--out", "t"], d);
    let shown = ok(&["eval", "--checkpoint", "t/model.ckpt", "--data", "one", "--out", "e"], d);
    let line = shown.lines().find(|l| l.starts_with("R2 ")).unwrap();
    let r2: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(r2 >= 0.99, "{shown}");
}

#[test]
fn attribution_table_has_eight_quarter_second_columns() {
    let dir = toy_dir();
    let d = dir.path();
    ok(&["gen", "--config", "toy.json", "--out", "g"], d);
    ok(&["preprocess", "--input", "g", "--out", "p"], d);
    ok(&["train", "--config", "toy.json", "--data", "p", "--out", "t", "--epochs", "1"], d);
    let shown = ok(
        &["attribute", "--checkpoint", "t/model.ckpt", "--data", "p", "--out", "a", "--steps", "8"],
        d,
    );
    let csv = fs::read_to_string(d.join("a/attribution.csv")).unwrap();
    assert_eq!(shown, csv);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 9);
    assert_eq!(header[1], "0.00s-0.25s");
    assert_eq!(header[8], "1.75s-2.00s");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for c in 1..9 {
        let col: Vec<&str> = rows.iter().map(|r| r[c]).collect();
        assert!(col.iter().all(|v| v.split('.').nth(1).unwrap().len() == 4));
        assert!(col.contains(&"1.0000") && col.contains(&"0.0000"), "column {c}: {col:?}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/attribution.json")).unwrap()).unwrap();
    assert_eq!(report["table"]["steps"], 8);
    assert_eq!(report["windows"].as_array().unwrap().len(), 16);
    let attention: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/attention.json")).unwrap()).unwrap();
    assert_eq!(attention.as_array().unwrap().len(), 16);
    assert!(fs::read_to_string(d.join("a/attention.csv")).unwrap().starts_with("window_offset,block,head"));

    let short = fhnet(
        &["attribute", "--checkpoint", "t/model.ckpt", "--data", "p", "--out", "b", "--duration-s", "5"],
        d,
    );
    assert_eq!(short.status.code(), Some(1));
}

#[test]
fn help_documents_flags_and_schemas() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, needles) in [
        ("gen", &["--records", "--force", "--seed", "manifest.json", "RECORD CSV"][..]),
        ("preprocess", &["--input", "--dwt-levels", "preprocessing"][..]),
        ("train", &["--data", "--epochs", "FHNETCK1", "TRAIN LOG", "RUN CONFIG"][..]),
        ("eval", &["--checkpoint", "--timing", "report.json", "undefined"][..]),
        ("attribute", &["--window-s", "--steps", "attribution.csv", "attention.json", "EXIT CODES"][..]),
    ] {
        let help = ok(&[cmd, "--help"], dir.path());
        for n in needles {
            assert!(help.contains(n), "`{cmd} --help` lacks {n}");
        }
    }
}
