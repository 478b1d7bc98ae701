use std::path::Path;
use std::process::{Command, Output};

use encircle_core::{run, RunOptions, Scenario};

fn encircle(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_encircle"));
    cmd.args(args);
    match env_out {
        Some(dir) => cmd.env("ENCIRCLE_OUT", dir),
        None => cmd.env_remove("ENCIRCLE_OUT"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn cli_and_library_write_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cli_dir = tmp.path().join("cli");
    let lib_dir = tmp.path().join("lib");
    let overrides = ["duration=2.0", "seed=21"];
    let o = encircle(
        &[
            "run",
            "v3_fig5",
            "--out",
            cli_dir.to_str().unwrap(),
            "--override",
            overrides[0],
            "--seed",
            "21",
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let s = Scenario::builtin_with("v3_fig5", &overrides).unwrap();
    run(&s, &RunOptions::default())
        .unwrap()
        .write_dir(&lib_dir)
        .unwrap();
    for f in [
        "states.csv",
        "errors.csv",
        "distances.csv",
        "messages.csv",
        "estimates.csv",
        "summary.txt",
        "scenario.toml",
    ] {
        let a = std::fs::read(cli_dir.join(f)).unwrap();
        let b = std::fs::read(lib_dir.join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn override_changes_the_steady_state_speed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = encircle(
        &["run", "v1_fig3", "--override", "controller.omega_star=1.2"],
        Some(tmp.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("target_phase_rate          1.200000"),
        "{text}"
    );
    let rate_err: f64 = text
        .lines()
        .find(|l| l.starts_with("final_phase_rate_error"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(rate_err < 1e-2);
    assert!(tmp.path().join("v1_fig3").join("states.csv").exists());
}

#[test]
fn missing_file_exits_two_and_names_the_path() {
    let o = encircle(&["run", "no/such/scenario.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/scenario.toml"));
}

#[test]
fn unknown_key_exits_two() {
    let o = encircle(
        &["run", "v1_fig3", "--override", "controller.omega_stat=1"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("omega_stat"));
}

#[test]
fn usage_error_exits_two() {
    assert_eq!(encircle(&["run"], None).status.code(), Some(2));
    assert_eq!(encircle(&["frobnicate"], None).status.code(), Some(2));
}

#[test]
fn simulation_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = encircle(
        &["run", "v1_fig3", "--override", "network.topology=line"],
        Some(tmp.path()),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ticks old"), "{}", stderr(&o));
}

#[test]
fn verify_prints_one_line_per_criterion() {
    let o = encircle(&["verify", "--filter", "spectrum"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(
        text.lines().any(|l| l.starts_with("PASS  2 spectrum")),
        "{text}"
    );
}

#[test]
fn sabotaged_phase_gain_fails_phase_checks_only() {
    let o = encircle(
        &[
            "verify",
            "--filter",
            "controller1",
            "--override",
            "controller.gains.k_phi=0",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let line = stdout(&o).lines().next().unwrap().to_string();
    assert!(line.starts_with("FAIL  3 controller1"), "{line}");
    let (_, detail) = line.split_once(")  ").unwrap();
    let failed: Vec<&str> = detail
        .split(';')
        .filter(|c| c.contains("FAIL"))
        .map(|c| c.trim())
        .collect();
    assert!(failed.iter().any(|c| c.contains("phase_err")), "{line}");
    assert!(failed.iter().any(|c| c.contains("phase_decay")), "{line}");
    assert!(
        !failed
            .iter()
            .any(|c| c.contains("rho_err") || c.contains("height")),
        "{line}"
    );
}

#[test]
fn sweep_tabulates_message_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = encircle(
        &[
            "sweep",
            "--param",
            "robots.count",
            "--values",
            "5,10,20",
            "--override",
            "duration=0.5",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(table, stdout(&o));
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (row, n) in rows.iter().zip([5.0, 10.0, 20.0]) {
        assert_eq!(row[6], "4");
        assert_eq!(row[7].parse::<f64>().unwrap(), 4.0 * n);
    }
}

#[test]
fn list_and_show_builtins() {
    let o = encircle(&["list"], None);
    let names: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(names.len(), 7);
    let o = encircle(&["show", "churn_demo"], None);
    assert!(stdout(&o).contains("action = \"remove\""));
    assert_eq!(encircle(&["show", "nope"], None).status.code(), Some(2));
}
