use std::process::{Command, Output};

fn fockx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fockx"))
        .args(args)
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    fockx(args).status.code().unwrap()
}

#[test]
fn report_goes_to_stdout() {
    let out = fockx(&["--system", "water:2", "--leaf-size", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["k_checksum"].as_f64().unwrap() > 0.0);
}

#[test]
fn out_and_series_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let cases = dir.path().join("cases.csv");
    let args = [
        "--system",
        "water:2",
        "--out",
        json.to_str().unwrap(),
        "--cases-csv",
        cases.to_str().unwrap(),
    ];
    assert_eq!(code(&args), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["config"]["mode"], "symmetry");
    assert!(std::fs::read_to_string(&cases).unwrap().lines().count() > 1);

    let csv = dir.path().join("s.csv");
    assert_eq!(
        code(&[
            "--series",
            "1,2",
            "--regimes",
            "off:0",
            "--out",
            csv.to_str().unwrap()
        ]),
        0
    );
    let rows =
        fockx::harness::validate_series_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows, 8);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["--no-such-flag"]), 2);
    assert_eq!(code(&["--mode", "bogus"]), 2);
    assert_eq!(code(&["--tau-2e", "tiny"]), 2);
}

#[test]
fn validation_errors_exit_2() {
    assert_eq!(code(&["--system", "water:1", "--tau-ovlp", "-1"]), 2);
    assert_eq!(
        code(&[
            "--system",
            "water:1",
            "--density",
            "file:/nonexistent/p.txt"
        ]),
        2
    );
    assert_eq!(code(&["--series", "1,x"]), 2);
    let out = fockx(&["--system", "water:1", "--leaf-size", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--leaf-size"));
}

#[test]
fn runtime_failure_exits_1() {
    assert_eq!(
        code(&["--system", "water:1", "--out", "/nonexistent/dir/r.json"]),
        1
    );
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&["--help"]), 0);
}
