use nlch_cli::io::{decode_field, emit_timeseries, encode_field, read_field, read_timeseries, write_field, SeriesRow};
use nlch_core::field::{Grid, ScalarField};
use nlch_core::state::smooth_random_field;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.ini")
}

fn nlch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlch"))
        .args(args)
        .env_remove("NLCH_THREADS")
        .output()
        .unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    nlch(&args)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.ini");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn verify_default_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("verify", &default_config(), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let lines = fs::read_to_string(tmp.path().join("verify.jsonl")).unwrap();
    let modules: std::collections::HashSet<String> = lines
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["module"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(modules.len(), 8);
}

#[test]
fn grad_check_passes_and_catches_a_flipped_adjoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = run("grad-check", &default_config(), &tmp.path().join("ok"), &[]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = run("grad-check", &default_config(), &tmp.path().join("bad"), &["--flip-adjoint-sign"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(String::from_utf8(bad.stdout).unwrap().trim()).unwrap();
    assert_eq!(report["check"], "gradient-fd-mismatch");
    assert!(report["value"].as_f64().unwrap() > report["threshold"].as_f64().unwrap());
}

#[test]
fn make_targets_then_optimize_recovers() {
    let tmp = tempfile::tempdir().unwrap();
    let made = run("make-targets", &default_config(), &tmp.path().join("made"), &[]);
    assert_eq!(made.status.code(), Some(0), "{}", String::from_utf8_lossy(&made.stderr));
    let manifest = tmp.path().join("made/targets/manifest.ini");
    let text = fs::read_to_string(default_config())
        .unwrap()
        .replace("source = synthetic", &format!("source = files\nmanifest = {}", manifest.display()));
    let cfg = write_config(tmp.path(), &text);
    let out_dir = tmp.path().join("opt");
    let opt = run("optimize", &cfg, &out_dir, &[]);
    assert_eq!(opt.status.code(), Some(0), "{}", String::from_utf8_lossy(&opt.stdout));
    let (header, rows) = read_timeseries(&out_dir.join("optimize.csv")).unwrap();
    assert_eq!(header, ["step", "time", "mass", "energy", "separation", "cost", "stationarity"]);
    let cost: Vec<f64> = rows.iter().map(|r| r[5]).collect();
    assert!(cost.windows(2).all(|w| w[1] <= w[0]));
    assert!(cost.last().unwrap() <= &(0.1 * cost[0]), "{} vs {}", cost.last().unwrap(), cost[0]);
    assert!(out_dir.join("v_opt/v_0000_1.nlchf").is_file());
}

#[test]
fn zero_step_simulation_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[grid]\nn = 8\n[state]\nsteps = 0\n");
    let out = run("simulate", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("o/timeseries.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("step,time,mass,energy,separation\n"));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(tree(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn identical_config_and_seed_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let a = run("simulate", &cfg, &tmp.path().join("a"), &["--seed", "5", "--threads", "1"]);
    let b = run("simulate", &cfg, &tmp.path().join("b"), &["--seed", "5", "--threads", "3"]);
    let c = run("simulate", &cfg, &tmp.path().join("c"), &["--seed", "6"]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert_ne!(tree(&tmp.path().join("a")), tree(&tmp.path().join("c")));
}

#[test]
fn threads_fall_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[grid]\nn = 8\n[state]\nsteps = 2\n");
    let out = Command::new(env!("CARGO_BIN_EXE_nlch"))
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()])
        .env("NLCH_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_nlch"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("NLCH_THREADS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn invalid_configs_exit_with_named_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("[grid]\nn = 8\n[targets]\ngamma = 0, 0, 0\n", "C3 violated: not all zero required"),
        ("[grid]\nn = 8\n[control]\nvmin = -1, 3\nvmax = 1, 2\n", "component 1"),
        ("[potential]\ntheta = 0.2\n", "missing required key [grid] n"),
        ("[grid]\nn = 8\n[state]\ndt = -1\n", "[state] dt"),
    ];
    for (text, expect) in cases {
        let cfg = write_config(tmp.path(), text);
        let out = run("simulate", &cfg, &tmp.path().join("o"), &[]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(expect), "{err}");
    }
}

#[test]
fn field_files_round_trip_and_reject_damage() {
    let tmp = tempfile::tempdir().unwrap();
    let g = Grid::new(2, &[16, 16], &[1.0, 1.0]).unwrap();
    let f = smooth_random_field(&g, 3, 0.1, 0.7);
    let p = tmp.path().join("f.nlchf");
    write_field(&p, &f).unwrap();
    let back = read_field(&p).unwrap();
    assert!(back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let bytes = encode_field(&f).unwrap();
    let err = decode_field(&bytes[..bytes.len() - 8]).unwrap_err();
    assert!(err.to_string().contains("payload size mismatch"));
    let mut wrong = bytes.clone();
    wrong[..6].copy_from_slice(b"NLCHF2");
    assert_eq!(decode_field(&wrong).unwrap_err().to_string(), "not a NLCHF1 file");
    let g3 = Grid::new(3, &[4, 5, 6], &[1.0, 0.5, 2.0]).unwrap();
    let f3 = ScalarField::from_fn(&g3, |x| x[0] - x[1] * x[2]);
    assert_eq!(decode_field(&encode_field(&f3).unwrap()).unwrap(), f3);
}

#[test]
fn csv_columns_parse_back_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<SeriesRow> = (0..20)
        .map(|k| {
            let x = 1.0 / (k as f64 + 3.0);
            SeriesRow {
                step: k,
                time: k as f64 * 0.1,
                mass: x * 1e-17,
                energy: -x.sqrt(),
                separation: std::f64::consts::PI * x,
                cost: None,
            }
        })
        .collect();
    let p = tmp.path().join("s.csv");
    emit_timeseries(&p, &rows).unwrap();
    let (header, back) = read_timeseries(&p).unwrap();
    assert_eq!(header.len(), 5);
    for (r, b) in rows.iter().zip(&back) {
        assert_eq!(b[0], r.step as f64);
        for (x, y) in [r.time, r.mass, r.energy, r.separation].iter().zip(&b[1..]) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
