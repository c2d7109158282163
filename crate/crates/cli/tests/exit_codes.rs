use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otflow"))
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().expect("binary runs").status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMALL_DISC: &str = r#"
name = "small"
seed = 11
resolution = 32
[cost]
name = "bilinear"
[source]
name = "disc"
params = [1.0]
[target]
name = "disc"
params = [1.0]
[densities]
name = "uniform"
"#;

#[test]
fn verify_exit_codes() {
    let s = scenarios();
    assert_eq!(code(bin().args(["verify", "--config"]).arg(s.join("stationary_disc.toml"))), 0);
    assert_eq!(code(bin().args(["verify", "--config"]).arg(s.join("sqrt_disc.toml"))), 0);
    assert_eq!(code(bin().args(["verify", "--config"]).arg(s.join("square.toml"))), 1);
    assert_eq!(code(bin().args(["verify", "--config"]).arg(s.join("unbalanced_disc.toml"))), 1);
    assert_eq!(code(bin().args(["verify", "--config", "/nonexistent/x.toml"])), 5);
}

#[test]
fn verify_writes_audit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios();
    let status = code(
        bin().args(["verify", "--config"])
            .arg(s.join("ellipse_disc.toml"))
            .arg("--out")
            .arg(dir.path()),
    );
    assert_eq!(status, 0);
    let audit = fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    assert!(audit.starts_with("name,value,threshold,pass"));
    assert!(audit.lines().skip(1).all(|l| l.split(',').nth(3) == Some("true")));
}

#[test]
fn run_then_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        code(bin().args(["run", "--config"]).arg(scenarios().join("ellipse_disc.toml")).arg("--out").arg(&out)),
        0
    );
    for f in ["monitor.csv", "verdicts.txt", "final_state.txt", "config.toml", "audit.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(code(bin().args(["report", "--dir"]).arg(&out)), 0);
    assert!(out.join("plots/udot_envelope.csv").exists());

    // tamper with one monitor value
    let csv = fs::read_to_string(out.join("monitor.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[6].split(',').map(str::to_string).collect();
    fields[2] = "0.75".into();
    lines[6] = fields.join(",");
    fs::write(out.join("monitor.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(code(bin().args(["report", "--dir"]).arg(&out)), 4);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(bin().args(["report", "--dir"]).arg(&empty)), 5);
}

#[test]
fn truncated_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SMALL_DISC}[initializer]\nkind = \"perturbed\"\namplitude = 0.05\n[initializer.base]\nkind = \"affine\"\ns = [1.0, 0.0, 0.0, 1.0]\nb = [0.0, 0.0]\n[solver]\nmax_steps = 20\n"
        ),
    );
    assert_eq!(code(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o"))), 2);
}

#[test]
fn inadmissible_start_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL_DISC}[initializer]\nkind = \"affine\"\ns = [2.0, 0.0, 0.0, 2.0]\nb = [0.0, 0.0]\n"),
    );
    assert_eq!(code(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o"))), 3);
}

#[test]
fn malformed_config_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"x\"\nresolution = \"many\"\n");
    assert_eq!(code(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o"))), 5);
}

#[test]
fn worker_count_does_not_change_monitor_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios().join("ellipse_disc.toml");
    for threads in ["1", "3"] {
        let status = code(
            bin().env("OTFLOW_THREADS", threads)
                .args(["run", "--config"])
                .arg(&s)
                .arg("--out")
                .arg(dir.path().join(threads)),
        );
        assert_eq!(status, 0);
    }
    let a = fs::read(dir.path().join("1/monitor.csv")).unwrap();
    let b = fs::read(dir.path().join("3/monitor.csv")).unwrap();
    assert_eq!(a, b);
}
