use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
sbm_blocks = 20,20,20
sbm_p_in = 0.2
sbm_p_out = 0.02
num_clients = 3
hidden = 8
rounds = 4
seeds = 0,1
k_eig = 2
sis_client_counts = 1,3
";

fn s2fgl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2fgl"))
        .args(args)
        .current_dir(dir)
        .env_remove("S2FGL_OUTPUT_ROOT")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = setup();
    let cases: [&[&str]; 5] = [
        &["validate-config", "--bogus", "1"],
        &["run", "--lambda1", "-1"],
        &["run", "-c", "missing.cfg"],
        &["run", "--method", "fedsgd"],
        &["validate-config", "--rounds"],
    ];
    for args in cases {
        let out = s2fgl(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
    let out = s2fgl(dir.path(), &["validate-config", "--bogus", "1"]);
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = setup();
    let out = s2fgl(dir.path(), &["run", "-c", "tiny.cfg", "--dataset", "absent.graph"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn validate_config_applies_precedence() {
    let dir = setup();
    let out = s2fgl(dir.path(), &["validate-config", "-c", "tiny.cfg", "--rounds=7", "--local-epochs", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# schema=s2fgl.config.v1"));
    for line in ["rounds = 7", "local_epochs = 2", "num_clients = 3", "lambda1 = 10"] {
        assert!(text.lines().any(|l| l == line), "{line}\n{text}");
    }
}

#[test]
fn env_var_moves_the_output_root() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_s2fgl"))
        .args(["validate-config", "-c", "tiny.cfg"])
        .current_dir(dir.path())
        .env("S2FGL_OUTPUT_ROOT", "elsewhere")
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("output_dir = elsewhere"));
}

fn without_timestamp(metrics: &str) -> String {
    metrics
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_reproducible_artifacts_inside_the_output_dir() {
    let dir = setup();
    for out_dir in ["a", "b"] {
        let out = s2fgl(dir.path(), &["run", "-c", "tiny.cfg", "--output-dir", out_dir, "--method", "s2fgl"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let mut top: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, ["a", "b", "tiny.cfg"]);

    let read = |d: &str, f: &str| std::fs::read_to_string(dir.path().join(d).join(f)).unwrap();
    let metrics = read("a", "metrics.csv");
    assert!(metrics.starts_with("# schema=s2fgl.metrics.v1\nexperiment,method,backbone,"));
    assert_eq!(without_timestamp(&metrics), without_timestamp(&read("b", "metrics.csv")));
    for f in ["rounds.jsonl", "series.csv"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    let config_a = read("a", "config.resolved");
    assert_eq!(config_a.replace("output_dir = a", "output_dir = b"), read("b", "config.resolved"));
    assert!(!dir.path().join("a/RUNNING").exists());
    assert_eq!(read("a", "rounds.jsonl").lines().count(), 1 + 2 * 4);
}

#[test]
fn diagnostics_write_schema_headed_csvs() {
    let dir = setup();
    let out = s2fgl(dir.path(), &["sis-curve", "-c", "tiny.cfg", "--output-dir", "d"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = s2fgl(dir.path(), &["spectral-heatmap", "-c", "tiny.cfg", "--output-dir", "d"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sis = std::fs::read_to_string(dir.path().join("d/sis_curve.csv")).unwrap();
    assert!(sis.starts_with("# schema=s2fgl.sis_curve.v1\n"));
    assert_eq!(sis.lines().count(), 2 + 2 * 2);
    let heat = std::fs::read_to_string(dir.path().join("d/spectral_heatmap.csv")).unwrap();
    assert!(heat.starts_with("# schema=s2fgl.spectral_heatmap.v1\n"));
    let out = s2fgl(dir.path(), &["describe", "-c", "tiny.cfg"]);
    assert!(out.status.success());
    assert!(!String::from_utf8(out.stdout).unwrap().is_empty());
}
