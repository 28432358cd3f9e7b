use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ddrci(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddrci"))
        .current_dir(dir)
        .env_remove("RCI_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(text: &str) -> usize {
    text.lines().filter(|l| !l.starts_with('#')).count() - 1
}

fn write_config(dir: &Path, body: &str) -> &'static str {
    std::fs::write(dir.join("run.json"), body).unwrap();
    "run.json"
}

#[test]
fn generate_defaults_and_determinism() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(&ddrci(d, &["generate", "--out", "a.csv"])), 0);
    assert_eq!(code(&ddrci(d, &["generate", "--out", "b.csv"])), 0);
    let a = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(data_rows(&a), 21);
    assert!(a.contains("# config_sha256: ") && a.contains("# seed: 0"));
    assert_eq!(a, std::fs::read_to_string(d.join("b.csv")).unwrap());

    let o = Command::new(env!("CARGO_BIN_EXE_ddrci"))
        .current_dir(d)
        .env("RCI_SEED", "5")
        .args(["generate", "--out", "c.csv"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let c = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(c.contains("# seed: 5"));
    assert_ne!(a, c);

    // the flag beats the environment
    let o = Command::new(env!("CARGO_BIN_EXE_ddrci"))
        .current_dir(d)
        .env("RCI_SEED", "5")
        .args(["generate", "--out", "e.csv", "--seed", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(a, std::fs::read_to_string(d.join("e.csv")).unwrap());
}

#[test]
fn minimal_horizon() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), r#"{"experiment": {"horizon": 1}}"#);
    assert_eq!(code(&ddrci(t.path(), &["generate", "-c", cfg, "-o", "d.csv"])), 0);
    assert_eq!(data_rows(&std::fs::read_to_string(t.path().join("d.csv")).unwrap()), 2);
}

#[test]
fn config_errors_exit_2() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    let cfg = write_config(d, r#"{"seeed": 1}"#);
    let o = ddrci(d, &["generate", "-c", cfg, "-o", "x.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown field"));
    assert_eq!(code(&ddrci(d, &["generate", "-c", "missing.json", "-o", "x.csv"])), 2);
    let cfg = write_config(d, r#"{"disturbance": [[10, 0, 0], [0, 10, 0], [0, 0, 10]]}"#);
    assert_eq!(code(&ddrci(d, &["generate", "-c", cfg, "-o", "x.csv"])), 2);
    assert_eq!(code(&ddrci(d, &["generate"])), 2);
    assert_eq!(code(&ddrci(d, &["synthesize", "--lmi", "t7", "-o", "s.json"])), 2);
}

#[test]
fn synthesize_verify_and_tamper() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(&ddrci(d, &["generate", "-o", "data.csv"])), 0);
    let o = ddrci(d, &["synthesize", "-d", "data.csv", "-o", "sol.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sol = json(d.join("sol.json"));
    assert_eq!(sol["status"], "Optimal");
    assert_eq!(sol["meta"]["seed"], "0");
    assert_eq!(sol["meta"]["config_sha256"].as_str().unwrap().len(), 64);

    let o = ddrci(d, &["verify", "-s", "sol.json", "-d", "data.csv", "-o", "report.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(d.join("report.json"));
    assert_eq!(report["pass"], true);
    assert!(report["config_sha256"].is_string());

    // double W while leaving N and K alone
    let mut bad = sol.clone();
    for row in bad["W"].as_array_mut().unwrap() {
        for v in row.as_array_mut().unwrap() {
            *v = Value::from(v.as_f64().unwrap() * 2.0);
        }
    }
    std::fs::write(d.join("bad.json"), serde_json::to_string(&bad).unwrap()).unwrap();
    let o = ddrci(d, &["verify", "-s", "bad.json", "-d", "data.csv", "-o", "bad_report.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("constraints"), "{}", stderr(&o));

    assert_eq!(code(&ddrci(d, &["verify", "-s", "nope.json", "-d", "data.csv"])), 2);
}

#[test]
fn zero_iterations_equal_one_step() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(&ddrci(d, &["synthesize", "-o", "one.json"])), 0);
    let o = ddrci(d, &["synthesize", "-o", "it0.json", "--algorithm", "iterative", "--iters", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(d.join("one.json"))["W"], json(d.join("it0.json"))["W"]);
}

#[test]
fn dilated_lmi_is_not_worse() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(&ddrci(d, &["synthesize", "-o", "t1.json", "--lmi", "t1"])), 0);
    assert_eq!(code(&ddrci(d, &["synthesize", "-o", "t2.json", "--lmi", "t2"])), 0);
    let v1 = json(d.join("t1.json"))["volume"].as_f64().unwrap();
    let v2 = json(d.join("t2.json"))["volume"].as_f64().unwrap();
    assert!(v2 >= 0.95 * v1, "{v2} vs {v1}");
}

#[test]
fn infeasible_exits_3() {
    let t = TempDir::new().unwrap();
    // a state box smaller than the disturbance
    let cfg = write_config(t.path(), r#"{"constraints": {"h": [[20, 0], [-20, 0], [0, 20], [0, -20]], "g": [[0.5], [-0.5]]}}"#);
    let o = ddrci(t.path(), &["synthesize", "-c", cfg, "-o", "s.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn sweep_and_report() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    let o = ddrci(d, &["sweep", "--out-dir", "sweep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let files: Vec<String> = [2, 3, 4].iter().map(|k| format!("sweep/solution_p{k}.json")).collect();
    let mut args = vec!["report", "--plot", "fig.svg"];
    args.extend(files.iter().map(String::as_str));
    let o = ddrci(d, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = std::fs::read_to_string(d.join("fig.svg")).unwrap();
    assert!(svg.contains("config_sha256") && svg.matches("<path").count() >= 4);
    let csv = std::fs::read_to_string(d.join("fig.csv")).unwrap();
    let vols: Vec<f64> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(vols.len(), 3);
    assert!(vols[0] < vols[1] && vols[1] < vols[2], "{vols:?}");

    assert_eq!(code(&ddrci(d, &["report", "--plot", "x.svg"])), 2);
}
