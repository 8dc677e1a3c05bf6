use std::process::Command;

fn kgreen() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgreen"))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let s = kgreen().arg("bogus").status().unwrap();
    assert_eq!(s.code(), Some(2));
}

#[test]
fn invalid_override_is_an_error() {
    let out = kgreen().args(["spectrum", "--gamma", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn spectrum_writes_reports_and_reports_status() {
    let tmp = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-spectrum");
    let out = kgreen()
        .args(["spectrum", "--grid-n", "8", "--threads", "1", "--out"])
        .arg(tmp.join("out"))
        .arg("--cache")
        .arg(tmp.join("cache"))
        .output()
        .unwrap();
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 1, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.join("out/spectrum/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"] == "pass", code == 0);
    assert_eq!(summary["config"]["grid"]["n"], 8);
    assert!(tmp.join("out/spectrum/dispersion.csv").exists());
}
