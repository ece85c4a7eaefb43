use std::process::{Command, Output};

fn fracnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracnet"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn nets_csv_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nets.csv");
    let out = fracnet(&[
        "nets",
        "--net",
        "theta",
        "--theta",
        "0.5",
        "--n",
        "4,8",
        "--format",
        "csv",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "net_family,n,i,t,mesh,mesh_theta");
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 5 + 9);
    for r in &rows {
        let n: f64 = r[1].parse().unwrap();
        let mesh_theta: f64 = r[5].parse().unwrap();
        assert!(mesh_theta <= 1.0 / (0.5 * n));
    }
}

#[test]
fn nets_json_is_parseable() {
    let out = fracnet(&["nets", "--n", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.get("config").is_some());
    assert!(v.get("nets").is_some());
}

#[test]
fn simulate_identity_has_no_error() {
    let out = fracnet(&[
        "simulate", "--payoff", "identity", "--n", "4,8", "--paths", "500", "--format", "json",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["rows"].as_array().is_some_and(|r| !r.is_empty()));
}

#[test]
fn simulate_is_reproducible() {
    let args = [
        "simulate", "--payoff", "call", "--n", "4", "--paths", "300", "--seed", "9", "--format",
        "csv",
    ];
    let a = fracnet(&args);
    let b = fracnet(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bad_input_exits_2() {
    let out = fracnet(&["nets", "--net", "theta", "--theta", "1.7", "--n", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = fracnet(&[
        "simulate",
        "--payoff",
        "no_such_payoff",
        "--n",
        "4",
        "--paths",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = fracnet(&["simulate", "--param", "strike"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tampered_verify_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verify.json");
    let out = fracnet(&[
        "verify",
        "--paths",
        "2000",
        "--tampered-theta-net",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let checks = v["checks"].as_array().unwrap();
    let mesh = checks
        .iter()
        .find(|c| c["name"] == "theta_net_mesh_bound")
        .unwrap();
    assert_eq!(mesh["pass"], false);
}

#[test]
fn rates_with_holder_pair() {
    let out = fracnet(&[
        "rates",
        "--payoff",
        "binary",
        "--holder",
        "2,inf",
        "--n",
        "8,16,32,64",
        "--paths",
        "300",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let psi = v["psi_bound"].as_array().unwrap();
    assert_eq!(psi.len(), 4);
    assert!(psi
        .iter()
        .all(|r| r["bound"].as_f64().is_some_and(|b| b > 0.0)));

    let out = fracnet(&["rates", "--holder", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
