use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tunnelqmc"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("tunnelqmc-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn exact_reports_partition_functions() {
    let out = scratch("exact");
    let o = run(&out, &["exact", "--n-spins", "3", "--beta", "1"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    for k in ["Z_pbc", "Z_obc", "ln_Z_pbc", "ln_Z_obc", "gap", "spectrum_head"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    let lz = v["ln_Z_pbc"].as_f64().unwrap();
    assert!((v["Z_pbc"].as_f64().unwrap().ln() - lz).abs() < 1e-12);
    assert!(out.join("exact/manifest.json").exists());
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn empty_n_list_is_a_config_error() {
    let out = scratch("empty");
    let o = run(&out, &["escape", "--n-list", ""]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["category"], "config");
}

#[test]
fn bad_flags_and_configs_exit_two() {
    let out = scratch("badcfg");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("c.json");
    std::fs::write(&cfg, r#"{"manifest_version":1,"model":{"n_spins":4,"beta":1,"gamma":0.5,"g_poly":[0,1],"colour":1}}"#).unwrap();
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("exact").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("colour"));

    let o = run(&out, &["exact", "--gamma", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&out, &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn config_file_and_flag_precedence() {
    let out = scratch("prec");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("c.json");
    std::fs::write(&cfg, r#"{"manifest_version":1,"model":{"n_spins":3,"beta":1,"gamma":0.5,"g_poly":[0,0,1]}}"#).unwrap();
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["exact", "--beta", "2"]).output().unwrap();
    assert!(o.status.success());
    let written: Value = serde_json::from_slice(&std::fs::read(out.join("exact/config.json")).unwrap()).unwrap();
    assert_eq!(written["model"]["beta"], 2.0);
    assert_eq!(written["model"]["n_spins"], 3);
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn reruns_are_byte_identical_and_manifest_checks_out() {
    let args = [
        "escape", "--n-spins", "6", "--beta", "2", "--gamma", "0.5", "--g-poly", "0,0.05,0.5", "--replicas", "8",
        "--n-list", "4,6", "--seeds", "6", "--budget", "20000", "--min-uncensored", "3", "--bootstrap", "20",
    ];
    let a = scratch("det-a");
    let b = scratch("det-b");
    let oa = run(&a, &args);
    let ob = run(&b, &args);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(ob.status.success());
    for f in ["records.csv", "escape_summary.csv", "fit.json", "config.json"] {
        let x = std::fs::read(a.join("escape").join(f)).unwrap();
        let y = std::fs::read(b.join("escape").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let m: Value = serde_json::from_slice(&std::fs::read(a.join("escape/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["manifest_version"], 1);
    assert_eq!(m["seeds"].as_array().unwrap().len(), 12);
    let outs = m["outputs"].as_array().unwrap();
    assert_eq!(outs.len(), 4);
    for e in outs {
        let bytes = std::fs::read(a.join("escape").join(e["path"].as_str().unwrap())).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), e["sha256"].as_str().unwrap());
    }
    let records = std::fs::read_to_string(a.join("escape/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 13);
    std::fs::remove_dir_all(&a).unwrap();
    std::fs::remove_dir_all(&b).unwrap();
}

#[test]
fn censored_escape_exits_four_with_artifacts() {
    let out = scratch("censor");
    let o = run(
        &out,
        &[
            "escape", "--n-spins", "16", "--beta", "4", "--g-poly", "0,0.05,0.5", "--replicas", "16", "--n-list", "16,20",
            "--seeds", "3", "--budget", "5", "--min-uncensored", "3", "--bootstrap", "10",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"]["category"], "budget");
    assert!(out.join("escape/records.csv").exists());
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn saddle_and_instanton_agree_on_a_tilted_well() {
    let out = scratch("inst");
    let model = ["--n-spins", "32", "--beta", "4", "--gamma", "0.3", "--g-poly", "0,0.02,0.5"];
    let o = run(&out, &[&["instanton", "--grid", "33"][..], &model[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let inst = stdout_json(&o);
    let (f_ob, f_wkb) = (inst["F_ob"].as_f64().unwrap(), inst["F_wkb"].as_f64().unwrap());
    assert!((f_ob - f_wkb).abs() < 1e-6);
    let traj = std::fs::read_to_string(out.join("instanton/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "tau,m_z,m_x,i_m_y,p");
    assert_eq!(traj.lines().count(), 34);

    let o = run(&out, &[&["saddle", "--boundary", "open", "--replicas", "32", "--kind", "min"][..], &model[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["morse_index"], 0);
    assert!(s["residual"].as_f64().unwrap() < 1e-9);
    let prof = std::fs::read_to_string(out.join("saddle/profile.csv")).unwrap();
    assert_eq!(prof.lines().count(), 34);
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn gnuplot_scripts_only_on_request() {
    let out = scratch("gp");
    let model = ["--n-spins", "3", "--beta", "4", "--gamma", "0.3", "--g-poly", "0,0.02,0.5"];
    let o = run(&out, &[&["coherent-check"][..], &model[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("coherent-check/coherent.gp").exists());
    let o = run(&out, &[&["--emit-gnuplot", "coherent-check"][..], &model[..]].concat());
    assert!(o.status.success());
    assert!(out.join("coherent-check/coherent.gp").exists());
    assert!(stdout_json(&o)["max_deviation"].as_f64().unwrap() < 1e-6);
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn compare_theory_table() {
    let out = scratch("cmp");
    let o = run(
        &out,
        &["compare", "--n-spins", "32", "--gamma", "0.2", "--g-poly", "0,0.01,0.5", "--betas", "4", "--skip-qmc"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let r = v["table"][0]["r_theory"].as_f64().unwrap();
    assert!(r > 1.0 && r < 2.0, "{r}");
    let csv = std::fs::read_to_string(out.join("compare/compare.csv")).unwrap();
    assert!(csv.starts_with("beta,quantity,value,provenance"));
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn threshold_scan_reports_each_fraction() {
    let out = scratch("scan");
    let o = run(
        &out,
        &[
            "escape", "--n-spins", "6", "--beta", "2", "--g-poly", "0,0.05,0.5", "--replicas", "8", "--n-list", "4,6",
            "--seeds", "6", "--budget", "20000", "--min-uncensored", "3", "--bootstrap", "20", "--threshold-scan", "0.5,1.5",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let s = v["threshold_sensitivity"].as_array().unwrap();
    assert_eq!(s.len(), 2);
    let base = v["threshold"].as_f64().unwrap();
    let start = v["start_well"].as_f64().unwrap();
    assert!((s[1]["threshold"].as_f64().unwrap() - (start + 1.5 * (base - start))).abs() < 1e-12);
    assert!(out.join("escape/threshold_scan.csv").exists());
    std::fs::remove_dir_all(&out).unwrap();
}
