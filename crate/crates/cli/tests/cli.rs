//! End-to-end tests of the binary: exit codes, output determinism, header
//! comments, and the config-file paths.

use std::path::Path;
use std::process::{Command, Output};

use weakmeas::model::config;
use weakmeas::model::presets::{preset, PresetParams};
use weakmeas::model::DensityState;
use weakmeas::Operator;

fn weakmeas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakmeas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn validate_preset_is_clean() {
    let out = weakmeas(&["validate", "--preset", "aav_gaussian"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("# weakmeas "));
    assert!(text.contains("scenario_hash="));
    assert!(text.contains("n_t=1024"));
    // header row only, no findings
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn eq3_emits_one_row_and_is_byte_identical() {
    let args = [
        "eq3",
        "--preset",
        "qubit_qubit",
        "--lambda",
        "0.05",
        "--f-label",
        "+",
        "--n-t",
        "128",
    ];
    let a = weakmeas(&args);
    let b = weakmeas(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout, "identical invocations must emit identical bytes");
    let text = stdout(&a);
    let header = text
        .lines()
        .find(|l| l.starts_with("f_label,"))
        .expect("column header");
    assert_eq!(
        header,
        "f_label,lambda,exact,eq3,kubo_modified,kubo_ordinary,nonperturbative"
    );
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn sweep_writes_file_with_slope_comments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = weakmeas(&[
        "sweep",
        "--preset",
        "qubit_qubit",
        "--n-t",
        "128",
        "--lambdas",
        "0.16,0.08,0.04,0.02",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("# slope_eq3 ="));
    assert_eq!(text.lines().filter(|l| l.starts_with("lambda,")).count(), 1);
    assert_eq!(
        text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("lambda,")).count(),
        4
    );
}

fn write_config(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn invalid_state_in_config_exits_3_with_finding() {
    let mut s = preset(
        "qubit_qubit",
        &PresetParams {
            n_t: Some(16),
            ..Default::default()
        },
    )
    .unwrap();
    s.rho_i = DensityState::new_unchecked(Operator::identity(2).scale_re(0.55));
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "bad.toml", &config::emit(&s));

    let out = weakmeas(&["validate", "--config", &path]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("rho_i.state"));

    // engines refuse the same scenario with the same exit code
    let out = weakmeas(&["exact", "--config", &path]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho_i"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        "typo.toml",
        "format_version = 1\n[preset]\nname = \"qubit_qubit\"\nlambdaa = 0.1\n",
    );
    let out = weakmeas(&["validate", "--config", &path]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_config_file_exits_5() {
    let out = weakmeas(&["validate", "--config", "/nonexistent/nowhere.toml"]);
    assert_eq!(code(&out), 5);
}

#[test]
fn orthogonal_postselection_exits_4() {
    let out = weakmeas(&[
        "eq3",
        "--preset",
        "aav_gaussian",
        "--epsilon",
        "1e-9",
        "--lambda",
        "0",
        "--n-t",
        "64",
        "--boxcar-width",
        "4",
        "--detector-dim",
        "40",
        "--f-label",
        "post",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn preset_config_file_accepts_cli_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        "preset.toml",
        "format_version = 1\n[preset]\nname = \"qubit_qubit\"\nlambda = 0.2\nn_t = 64\n",
    );
    // file sets lambda 0.2; flag overrides to 0.05
    let from_file = weakmeas(&["kubo", "--config", &path]);
    let overridden = weakmeas(&["kubo", "--config", &path, "--lambda", "0.05"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(code(&overridden), 0);
    assert!(stdout(&from_file).contains(",2.0000000000000001e-1,"));
    assert!(stdout(&overridden).contains(",5.0000000000000003e-2,"));
}

#[test]
fn epsilon_rejected_for_explicit_scenarios() {
    let s = preset(
        "qubit_qubit",
        &PresetParams {
            n_t: Some(16),
            ..Default::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "explicit.toml", &config::emit(&s));
    let out = weakmeas(&["exact", "--config", &path, "--epsilon", "0.3"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn text_format_emits_toml() {
    let out = weakmeas(&[
        "kubo",
        "--preset",
        "qubit_qubit",
        "--n-t",
        "64",
        "--format",
        "text",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("kubo_modified = "));
    assert!(text.contains("f_label = \"+\""));
}

#[test]
fn search_negativity_reports_pinned_finding() {
    let out = weakmeas(&["search-negativity", "--seed", "1", "--trials", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("true,1,1482817706323250795,2.0"));
}

#[test]
fn campaign_runs_clean() {
    let out = weakmeas(&["campaign", "--seed", "3", "--scenarios", "4"]);
    assert_eq!(code(&out), 0);
    for line in stdout(&out).lines().filter(|l| !l.starts_with('#')).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3], "0", "no failures expected: {line}");
    }
}
