use std::process::Command;

fn qkdnsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qkdnsim"))
}

#[test]
fn validate_passes_and_writes_outputs() {
    let out = tempfile::tempdir().unwrap();
    let o = qkdnsim().env("QKDNSIM_OUT", out.path()).arg("validate").output().unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 5);
    for f in ["metrics.csv", "links.csv", "summary.json"] {
        assert!(out.path().join("validate").join(f).is_file(), "{f}");
    }
}

#[test]
fn malformed_config_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[run]\nscenario = \"A\"\nseeds = [1,\n").unwrap();
    let o = qkdnsim().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn invalid_values_exit_one() {
    let o = qkdnsim().args(["run", "--key-rate=-5"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn defaults_print_a_loadable_config() {
    let o = qkdnsim().args(["defaults", "--preset", "padua"]).output().unwrap();
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("padua.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let o = qkdnsim()
        .arg("--out")
        .arg(dir.path())
        .arg("run")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("run_B_seed42").join("sessions.csv").is_file());
}

#[test]
fn small_sweep_writes_figure_data() {
    let out = tempfile::tempdir().unwrap();
    let o = qkdnsim()
        .arg("--out")
        .arg(out.path())
        .args(["sweep-figure", "--rates", "25,340", "--seeds", "42", "--scenarios", "A,D"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    let csv = std::fs::read_to_string(out.path().join("sweep").join("sweep.csv")).unwrap();
    assert!(csv.starts_with("scenario,key_rate_kps,seed,t_msg_ne_ms,t_key_ms,t_msg_km_ms,n_msg_km"));
    assert!(csv.lines().any(|l| l.starts_with("D,340")));
    assert!(stdout.contains("cut-off A"));
}
