use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cascade-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn critical_q_reports() {
    let out = run(&["critical-q", "--dist", "atoms=0,2;probs=1/2,1/2"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["result"]["message"], "totally critical");

    let out = stdout_json(&run(&["critical-q", "--dist", "atoms=0.5,1.5;probs=1/2,1/2"]));
    assert_eq!(out["result"]["message"], "no critical exponent ≤ 128");

    let out = stdout_json(&run(&["critical-q", "--dist", "atoms=3,0;probs=1/3,2/3"]));
    assert_eq!(out["result"]["kind"], "supercritical-throughout");
    for row in out["phi"].as_array().unwrap() {
        assert!(row["phi"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn critical_q_inverts_to_a_witness() {
    let out = stdout_json(&run(&["critical-q", "--invert", "4"]));
    let w = &out["witness"];
    assert!((w["moment_q"].as_f64().unwrap() - 8.0).abs() < 1e-9);
    assert!(w["moment_2"].as_f64().unwrap() < 2.0);
    assert_eq!(w["strict_below_q"], true);
    let q = out["result"]["q_crit"].as_f64().unwrap();
    assert!((q - 4.0).abs() < 1e-6);
}

#[test]
fn exact_moments_rows() {
    let out = run(&["exact-moments", "--dist", "atoms=0,2;probs=1/2,1/2", "--q-max", "2", "--levels", "10"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("n,k,value,log_value,domain\n"));
    assert!(csv.lines().any(|l| l.starts_with("10,2,6.0,")));
    assert!(csv.lines().any(|l| l.starts_with("7,1,1.0,")));
    // The resolved config goes to stderr when the CSV is on stdout.
    let echoed: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(echoed["levels"], 10);

    let out = run(&["exact-moments", "--dist", "atoms=3,0;probs=1/3,2/3", "--q-max", "2", "--levels", "5"]);
    assert!(String::from_utf8(out.stdout).unwrap().lines().any(|l| l.starts_with("5,2,14.1875,")));
}

#[test]
fn exit_codes() {
    let bad = run(&["exact-moments", "--dist", "atoms=0,2;probs=1/2", "--q-max", "2", "--levels", "3"]);
    assert_eq!(bad.status.code(), Some(2));
    let parse = run(&["exact-moments", "--dist", "atoms=0,x;probs=1/2,1/2", "--q-max", "2", "--levels", "3"]);
    assert_eq!(parse.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("position"));
    let big = run(&["exact-moments", "--dist", "atoms=0,2;probs=1/2,1/2", "--q-max", "2", "--levels", "20000"]);
    assert_eq!(big.status.code(), Some(3));
    let mc = run(&["simulate", "--dist", "atoms=0,2;probs=1/2,1/2", "--n", "30", "--q", "2", "--samples", "64", "--seed", "1"]);
    assert_eq!(mc.status.code(), Some(3));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn config_echo_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc.csv");
    let args = ["simulate", "--dist", "atoms=0,2;probs=1/2,1/2", "--n", "3,5", "--q", "2.5", "--samples", "256", "--seed", "9"];
    let first = bin().args(args).arg("--out").arg(&out).output().unwrap();
    assert!(first.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let again = dir.path().join("again.csv");
    let cfg = dir.path().join("mc.csv.config.json");
    let second = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert_eq!(csv, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn theta_moments_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.txt", "\t1\n0\t1\n1\t1\n");
    let out = stdout_json(&run(&["theta-moments", "--dist", "atoms=0,2;probs=1/2,1/2", "--q-max", "2", "--weights", w.to_str().unwrap()]));
    // Θ = 1 + X_1 + X_2: E[Θ²] = 1 + 2·2 + E[(X_1 + X_2)²] = 1 + 4 + 6.
    assert_eq!(out["result"]["moments"][1]["value"], 3.0);
    assert_eq!(out["result"]["moments"][2]["value"], 11.0);

    let out = stdout_json(&run(&["bounds", "--dist", "atoms=0.5,1.5;probs=1/2,1/2", "--q", "2", "--n", "1"]));
    assert!((out["result"]["lower"].as_f64().unwrap() - 0.625).abs() < 1e-12);
}

#[test]
fn reduce_modes() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.txt", "\t1\n0\t1\n1\t1\n");
    let out = stdout_json(&run(&["reduce", "--dist", "atoms=0,2;probs=1/2,1/2", "--weights", w.to_str().unwrap()]));
    let stage = &out["stages"][1];
    assert_eq!(stage["weights"][0]["weight"], 11.0);
    assert_eq!(stage["atoms"], serde_json::json!([0.0, 4.0]));

    let ok = run(&["reduce", "--dist", "atoms=0.5,1.5;probs=1/2,1/2", "--n", "6", "--q", "4"]);
    assert!(ok.status.success());
    let exps: Vec<f64> = stdout_json(&ok)["pipeline"]["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["exponent"].as_f64().unwrap())
        .collect();
    assert_eq!(exps, vec![4.0, 2.0, 1.0]);

    let tc = run(&["reduce", "--dist", "atoms=0,2;probs=1/2,1/2", "--n", "6", "--q", "4"]);
    assert_eq!(tc.status.code(), Some(1));
    assert_eq!(stdout_json(&tc)["pipeline"]["halt"]["reason"], "totally-critical");
}

#[test]
fn oracle_check_agrees() {
    let out = run(&["oracle-check", "--dist", "atoms=0,2;probs=1/2,1/2", "--n", "1"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    let rows = v["moments"].as_array().unwrap();
    let m25 = rows.iter().find(|r| r["q"] == 2.5).unwrap()["oracle"].as_f64().unwrap();
    assert!((m25 - 1.914213562373095).abs() < 1e-12);
}

fn bundle(dir: &Path, check: &str) -> PathBuf {
    write(dir, "bundle.json", &format!(r#"{{"checks":[{check}]}}"#))
}

#[test]
fn verify_theorems_fails_honestly() {
    let dir = tempfile::tempdir().unwrap();
    let zero = bundle(
        dir.path(),
        r#"{"name":"tc","base":2,"dist":"atoms=0,2;probs=1/2,1/2","q":2,"engine":"exact","levels":512,"tolerance":0}"#,
    );
    let out = bin().arg("verify-theorems").arg(&zero).arg("--out-dir").arg(dir.path().join("a")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tc"));

    let mislabeled = bundle(
        dir.path(),
        r#"{"name":"tc","base":2,"dist":"atoms=0,2;probs=1/2,1/2","q":2,"engine":"exact","levels":512,"tolerance":0.1,"expect_regime":"critical"}"#,
    );
    let out = bin().arg("verify-theorems").arg(&mislabeled).arg("--out-dir").arg(dir.path().join("b")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/verdicts.json")).unwrap()).unwrap();
    assert_eq!(doc["verdicts"][0]["theorem"], "precondition");

    let unknown = write(dir.path(), "bad.json", r#"{"checks":[],"extra":true}"#);
    assert_eq!(bin().arg("verify-theorems").arg(&unknown).output().unwrap().status.code(), Some(2));
}
