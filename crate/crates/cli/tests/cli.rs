use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_freezeout"))
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Header-stripped rows of a CSV artifact, plus the two comment lines.
fn csv(p: &Path) -> (String, String, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let cfg = lines.next().unwrap().strip_prefix("# config: ").unwrap().to_string();
    let sha = lines.next().unwrap().strip_prefix("# config_sha256: ").unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (cfg, sha, header, rows)
}

fn qudit(gamma: f64, t_max: f64, init: &[usize]) -> Value {
    json!({
        "model": {"family": "coupled_qudit", "gamma": gamma, "init": init},
        "unraveling": {"t_max": t_max, "record_stride": 100, "seed": 7, "early_stop": false},
    })
}

fn random_block() -> Value {
    json!({
        "model": {"family": "random_block", "n_blocks": 4, "block_dim": 4, "gamma": 4.0, "seed": 1},
        "unraveling": {"t_max": 300.0, "record_stride": 100, "seed": 2},
    })
}

#[test]
fn trajectory_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(1.0, 20.0, &[1, 2, 4]));
    let out = tmp.path().join("run");
    let a = run("trajectory", &cfg, &out, &[]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let first: Vec<String> =
        ["weights.csv", "singulars.csv"].iter().map(|f| fs::read_to_string(out.join(f)).unwrap()).collect();
    let b = run("trajectory", &cfg, &out, &[]);
    assert_eq!(code(&b), 0);
    for (f, before) in ["weights.csv", "singulars.csv"].iter().zip(&first) {
        assert_eq!(&fs::read_to_string(out.join(f)).unwrap(), before, "{f}");
    }
}

#[test]
fn artifacts_embed_config_and_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(1.0, 5.0, &[2, 4]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("trajectory", &cfg, &out, &[])), 0);
    let (line, sha, header, rows) = csv(&out.join("weights.csv"));
    let digest: String = Sha256::digest(line.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(sha, digest);
    let embedded: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(embedded["experiment"], "trajectory");
    assert_eq!(embedded["model"]["gamma"], 1.0);
    assert_eq!(header.len(), 1 + 2 * 7);
    assert_eq!(rows.len(), 51);
    // full precision, scientific notation
    for cell in rows[3].iter().filter(|c| !c.ends_with("inf")) {
        let (mantissa, _) = cell.split_once('e').unwrap();
        assert_eq!(mantissa.split_once('.').unwrap().1.len(), 17, "{cell}");
    }
    let report = json_file(&out.join("freeze_report.json"));
    assert_eq!(report["config_sha256"], Value::String(sha));
    assert_eq!(report["config"], embedded);
}

#[test]
fn embedded_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(0.37, 2.0, &[1, 5]));
    let out = tmp.path().join("a");
    assert_eq!(code(&run("trajectory", &cfg, &out, &["--seed", "11", "--n-traj", "3"])), 0);
    let (line, _, _, rows) = csv(&out.join("weights.csv"));
    let again = tmp.path().join("again.json");
    fs::write(&again, &line).unwrap();
    let o = bin().arg("trajectory").arg("--config").arg(&again).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (line2, _, _, rows2) = csv(&out.join("weights.csv"));
    assert_eq!(line, line2);
    assert_eq!(rows, rows2);
}

#[test]
fn flags_override_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(1.0, 2.0, &[2, 4]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("trajectory", &cfg, &out, &["--seed", "99", "--n-traj", "5", "--threads", "1"])), 0);
    let r = json_file(&out.join("freeze_report.json"));
    assert_eq!(r["config"]["unraveling"]["seed"], 99);
    assert_eq!(r["config"]["n_traj"], 5);
    assert_eq!(r["config"]["threads"], 1);
    assert_eq!(r["config"]["out"], out.to_str().unwrap());
}

#[test]
fn random_block_trajectory_freezes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "r.json", &random_block());
    let out = tmp.path().join("run");
    assert_eq!(code(&run("trajectory", &cfg, &out, &[])), 0);
    let (_, _, header, rows) = csv(&out.join("weights.csv"));
    let last: Vec<f64> = rows.last().unwrap().iter().map(|c| c.parse().unwrap()).collect();
    let p = &last[1..5];
    assert!(header[1..5].iter().zip(["p_0", "p_1", "p_2", "p_3"]).all(|(h, e)| h == e));
    assert!(p.iter().any(|&x| x >= 1.0 - 1e-10), "{p:?}");
    let r = json_file(&out.join("freeze_report.json"));
    assert_eq!(r["frozen"], true);
    assert_eq!(r["destination"], r["freeze_event"]["destination"]);
}

#[test]
fn single_subspace_ensemble_has_one_destination() {
    let tmp = TempDir::new().unwrap();
    let mut v = random_block();
    v["model"]["init"] = json!([2]);
    v["unraveling"]["t_max"] = json!(5.0);
    let cfg = write_config(tmp.path(), "r.json", &v);
    let out = tmp.path().join("run");
    assert_eq!(code(&run("ensemble", &cfg, &out, &["--n-traj", "20"])), 0);
    let (_, _, header, rows) = csv(&out.join("destinations.csv"));
    assert_eq!(header, ["alpha", "label", "count", "fraction", "stderr"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "2");
    assert_eq!(rows[0][2], "20");
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 1.0);
    let s = json_file(&out.join("summary.json"));
    assert_eq!(s["n_frozen"], 20);
    assert_eq!(s["n_failed"], 0);
}

#[test]
fn ensemble_artifacts_are_consistent() {
    let tmp = TempDir::new().unwrap();
    let mut v = random_block();
    v["emission"] = json!({"bins": {"uniform": {"count": 8}}, "snapshot_times": [1.0, 300.0]});
    let cfg = write_config(tmp.path(), "r.json", &v);
    let out = tmp.path().join("run");
    assert_eq!(code(&run("ensemble", &cfg, &out, &["--n-traj", "60"])), 0);
    let s = json_file(&out.join("summary.json"));
    let n_frozen = s["n_frozen"].as_u64().unwrap();
    assert_eq!(n_frozen + s["n_unfrozen"].as_u64().unwrap(), 60);

    let (_, _, _, hist) = csv(&out.join("freeze_hist.csv"));
    assert_eq!(hist.len(), 8);
    let f = |r: &Vec<String>, k: usize| r[k].parse::<f64>().unwrap();
    let counts: f64 = hist.iter().map(|r| f(r, 2)).sum();
    assert_eq!(counts as u64, n_frozen);
    let mass: f64 = hist.iter().map(|r| f(r, 3) * (f(r, 1) - f(r, 0))).sum();
    assert!((mass - n_frozen as f64 / 60.0).abs() < 1e-12);
    assert!((f(hist.last().unwrap(), 4) - n_frozen as f64 / 60.0).abs() < 1e-12);

    let (_, _, header, rows) = csv(&out.join("coherence_matrix.csv"));
    assert_eq!(header, ["t", "alpha", "alpha_prime", "value"]);
    assert_eq!(rows.len(), 2 * 16);
    // at late times every trajectory sits in one subspace
    for r in rows.iter().filter(|r| f(r, 0) == 300.0 && r[1] != r[2]) {
        assert!(f(r, 3) < 1e-9, "{r:?}");
    }
    let fractions: f64 = s["destinations"].as_array().unwrap().iter().map(|d| d["fraction"].as_f64().unwrap()).sum();
    assert!((fractions - 1.0).abs() < 1e-12);
}

fn number_toy_sweep(gammas: &[f64]) -> Value {
    json!({
        "model": {"family": "qubit_toy", "variant": "number", "gamma": 1.0},
        "unraveling": {"t_max": 1.0, "record_stride": 100000, "seed": 3, "grace_fraction": 0.0},
        "n_traj": 40,
        "sweep": {"gammas": gammas, "pair": [0, 1], "t_max_gap_multiple": 40.0, "fit_range": [0.1, 2.0], "reference_c": 2.0},
    })
}

#[test]
fn single_point_sweep_has_no_fit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.json", &number_toy_sweep(&[0.5]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("sweep-gamma", &cfg, &out, &[])), 0);
    let fit = json_file(&out.join("fit.json"));
    assert_eq!(fit["applicable"], false);
    assert!(fit["fit"].is_null());
    let (_, _, header, rows) = csv(&out.join("gap_vs_gamma.csv"));
    assert_eq!(header, ["gamma", "gap"]);
    assert!((rows[0][1].parse::<f64>().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn sweep_flags_divergent_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.json", &number_toy_sweep(&[0.0, 0.5, 1.0]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("sweep-gamma", &cfg, &out, &[])), 0);
    let (_, _, header, rows) = csv(&out.join("freezetime_vs_gamma.csv"));
    assert_eq!(header.last().unwrap(), "divergent");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].last().unwrap(), "1");
    assert_eq!(rows[1].last().unwrap(), "0");
    let fit = json_file(&out.join("fit.json"));
    assert_eq!(fit["divergent_gammas"], json!([0.0]));
    assert_eq!(fit["applicable"], true);
    assert!(fit["comparison"]["ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn spectrum_lists_every_sector_eigenvalue() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(1.0, 1.0, &[0]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("spectrum", &cfg, &out, &[])), 0);
    let dims = [1usize, 2, 3, 4, 3, 2, 1];
    let expected: usize = (0..7).flat_map(|a| (a..7).map(move |b| dims[a] * dims[b])).sum();
    let (_, _, header, rows) = csv(&out.join("spectrum.csv"));
    assert_eq!(header, ["alpha", "alpha_prime", "re", "im"]);
    assert_eq!(rows.len(), expected);
    let meta = json_file(&out.join("spectrum.json"));
    let sectors = meta["sectors"].as_array().unwrap();
    assert_eq!(sectors.len(), 28);
    for s in sectors.iter().filter(|s| s["pair"][0] == s["pair"][1]) {
        assert_eq!(s["n_traceless_nondecaying"], 1, "{s}");
    }
}

#[test]
fn steady_states_are_unit_trace_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(1.0, 1.0, &[0]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("steady-states", &cfg, &out, &[])), 0);
    let meta = json_file(&out.join("steady_states.json"));
    let sectors = meta["sectors"].as_array().unwrap();
    assert_eq!(sectors.len(), 7);
    for s in sectors {
        assert_eq!(s["degeneracy"], 1);
        let file = s["states"][0]["file"].as_str().unwrap();
        let (_, _, header, rows) = csv(&out.join(file));
        assert_eq!(header, ["row", "col", "re", "im"]);
        assert_eq!(rows.len(), 256);
        let trace: f64 = rows.iter().filter(|r| r[0] == r[1]).map(|r| r[2].parse::<f64>().unwrap()).sum();
        assert!((trace - 1.0).abs() < 1e-10);
    }
}

#[test]
fn qudit_pairs_are_similar_not_traceless() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.json", &qudit(3.0, 100.0, &[2, 4]));
    let out = tmp.path().join("run");
    assert_eq!(code(&run("detect-traceless", &cfg, &out, &[])), 0);
    let r = json_file(&out.join("traceless_report.json"));
    assert_eq!(r["heuristic"]["non_freezing_pairs"], json!([[2, 4]]));
    assert_eq!(r["spectral"]["ran"], true);
    assert_eq!(r["spectral"]["traceless_pairs"], json!([]));
    let p = &r["pairs"][0];
    assert_eq!(p["classification"], "similar");
    assert_eq!(p["similar"], true);
    assert!(p["sector_gap"].as_f64().unwrap() > 0.1);
    assert_eq!(r["disagreements"], json!([]));
}

#[test]
fn random_block_has_no_traceless_pairs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "r.json", &random_block());
    let out = tmp.path().join("run");
    assert_eq!(code(&run("detect-traceless", &cfg, &out, &[])), 0);
    let r = json_file(&out.join("traceless_report.json"));
    assert_eq!(r["heuristic"]["non_freezing_pairs"], json!([]));
    assert_eq!(r["spectral"]["traceless_pairs"], json!([]));
    assert_eq!(r["pairs"], json!([]));
}

#[test]
fn oversized_sectors_skip_the_oracle() {
    let tmp = TempDir::new().unwrap();
    let mut v = random_block();
    v["spectral"] = json!({"max_sector_dim": 4});
    v["unraveling"]["t_max"] = json!(10.0);
    let cfg = write_config(tmp.path(), "r.json", &v);
    let out = tmp.path().join("run");
    assert_eq!(code(&run("detect-traceless", &cfg, &out, &[])), 0);
    let r = json_file(&out.join("traceless_report.json"));
    assert_eq!(r["spectral"]["ran"], false);
    assert!(r["spectral"]["skipped_reason"].as_str().unwrap().contains("16"));
    for p in r["pairs"].as_array().unwrap() {
        assert_eq!(p["classification"], "unresolved");
        assert!(p["spectral_traceless"].is_null());
    }
}

#[test]
fn models_list_examples_validate() {
    let o = bin().args(["models", "list"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let list: Value = serde_json::from_slice(&o.stdout).unwrap();
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 4);
    let tmp = TempDir::new().unwrap();
    for m in list {
        let family = m["family"].as_str().unwrap();
        let cfg = write_config(tmp.path(), &format!("{family}.json"), &json!({"model": m["example"]}));
        let out = tmp.path().join(family);
        let o = run("validate-model", &cfg, &out, &[]);
        assert_eq!(code(&o), 0, "{family}: {}", String::from_utf8_lossy(&o.stderr));
        let v = json_file(&out.join("validation.json"));
        assert_eq!(v["strong_symmetry"], true, "{family}");
    }
}

#[test]
fn config_errors_exit_2_with_error_json() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let cases = [
        json!({"model": {"family": "no_such_model", "gamma": 1.0}}),
        json!({"model": {"family": "coupled_qudit", "gamma": 1.0}, "unravelling": {}}),
        json!({"model": {"family": "coupled_qudit", "gamma": -1.0}}),
        json!({"model": {"family": "coupled_qudit", "gamma": 1.0}, "unraveling": {"dt": -0.1}}),
        json!({"model": {"family": "coupled_qudit", "gamma": 1.0}}),
    ];
    for (k, v) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{k}.json"), v);
        let cmd = if k == 4 { "sweep-gamma" } else { "trajectory" };
        let o = run(cmd, &cfg, &out, &[]);
        assert_eq!(code(&o), 2, "case {k}: {}", String::from_utf8_lossy(&o.stderr));
        let err: Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(err["error"]["exit_code"], 2);
        assert_eq!(json_file(&out.join("error.json")), err);
    }
    let o = run("trajectory", &tmp.path().join("missing.json"), &out, &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn numerical_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let v = json!({"model": {"family": "coupled_qudit", "gamma": 1.0}, "unraveling": {"dt": 0.5, "t_max": 2.0}});
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("run");
    let o = run("trajectory", &cfg, &out, &[]);
    assert_eq!(code(&o), 3);
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "timestep_too_large");
    let o = run("ensemble", &cfg, &out, &["--n-traj", "4"]);
    assert_eq!(code(&o), 3);
}
