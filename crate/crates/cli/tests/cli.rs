use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fkeit(args: &[&str], workers: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fkeit"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("FKEIT_WORKERS", w.to_string()),
        None => cmd.env_remove("FKEIT_WORKERS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &TempDir, name: &str, json: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn run(sub: &str, cfg: &Path, out: &Path, workers: Option<usize>) -> Output {
    fkeit(&[sub, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], workers)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const MSD: &str = r#"{"experiment":"convergence","medium":{"dim":2,"kind":"constant","kappa":1.5},
  "msd":{"t_grid":[1,2,4,8],"n_realizations":1,"n_paths_per_realization":500},"stepper":{"h":0.25},"seed":7}"#;

const DIRICHLET: &str = r#"{"experiment":"solve","domain":{"kind":"ball","dim":2,"radius":1.0},
  "medium":{"dim":2,"kind":"constant","kappa":1.0},
  "problem":{"kind":"dirichlet","phi":{"kind":"linear","coefficients":[1.0,0.0],"constant":0.0}},
  "probes":[[0.5,0],[-0.3,0.4],[0,0.5],[0.7,0.5],[0.2,-0.6]],"mc":{"n_paths":200},"stepper":{"h":0.01},"seed":3}"#;

const CEM: &str = r#"{"experiment":"solve","domain":{"kind":"ball","dim":2,"radius":1.0},
  "medium":{"dim":2,"kind":"constant","kappa":1.0},
  "layout":{"electrodes":[{"center":[1,0],"radius":0.5},{"center":[-1,0],"radius":0.5}],"z":[1,1],"voltages":[1,-0.5]},
  "problem":{"kind":"cem"},"probes":[[0.5,0]],"seed":1}"#;

#[test]
fn validate_echoes_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "msd.json", MSD);
    let out = fkeit(&["validate", cfg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mc"]["chunk_size"], 1024);
    assert_eq!(v["mc"]["seed"], 7);
    assert_eq!(v["msd"]["directions"], serde_json::json!([[1.0, 0.0]]));
    assert_eq!(v["epsilon"], 1.0);
    assert_eq!(v["stepper"]["max_reflections"], 8);
    assert_eq!(v["medium"]["ellipticity"], 1.5);
}

#[test]
fn ungrounded_voltages_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cem.json", CEM);
    let out = fkeit(&["validate", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "precondition");
    assert!(err["message"].as_str().unwrap().contains("grounding"));
}

#[test]
fn incompatible_flux_is_rejected() {
    let dir = TempDir::new().unwrap();
    let json = DIRICHLET.replace(
        r#""problem":{"kind":"dirichlet","phi":{"kind":"linear","coefficients":[1.0,0.0],"constant":0.0}}"#,
        r#""problem":{"kind":"continuum","flux":{"kind":"constant","value":1.0}}"#,
    );
    let cfg = write_config(&dir, "cont.json", &json);
    let out = run("solve", &cfg, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    let err = read_json(&dir.path().join("out/error.json"));
    assert!(err["message"].as_str().unwrap().contains("compatibility"));
}

#[test]
fn unknown_fields_report_their_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.json", &MSD.replace(r#""h":0.25"#, r#""h":0.25,"dt":1"#));
    let out = fkeit(&["validate", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["path"], "stepper.dt");
}

#[test]
fn subcommand_must_match_the_experiment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "msd.json", MSD);
    let out = run("solve", &cfg, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(read_json(&dir.path().join("out/error.json"))["path"], "experiment");
}

#[test]
fn solve_writes_one_record_per_probe() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "d.json", DIRICHLET);
    let out = run("solve", &cfg, &dir.path().join("out"), Some(2));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir.path().join("out/results.json"));
    let probes = r["results"]["probes"].as_array().unwrap();
    assert_eq!(probes.len(), 5);
    for p in probes {
        let x0 = p["x"][0].as_f64().unwrap();
        let (mean, se) = (p["mean"].as_f64().unwrap(), p["stderr"].as_f64().unwrap());
        assert!((mean - x0).abs() <= 4.0 * se + 0.02, "{p}");
        assert_eq!(p["kind"], "dirichlet");
        assert_eq!(p["seed"], 3);
        assert_eq!(p["config_hash"], r["provenance"]["config_hash"]);
    }
    assert!(r["provenance"]["version"].as_str().unwrap().starts_with('v'));
    assert!(dir.path().join("out/timing.json").exists());
}

#[test]
fn convergence_writes_one_csv_row_per_horizon() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "msd.json", MSD);
    let out = run("convergence", &cfg, &dir.path().join("out"), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,mean,stderr,reference,abs_error");
    assert_eq!(lines.len(), 5);
    assert_eq!(read_json(&dir.path().join("out/results.json"))["results"]["reference"], 1.5);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "d.json", DIRICHLET);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("solve", &cfg, &a, Some(1)).status.success());
    assert!(run("solve", &cfg, &b, Some(1)).status.success());
    assert_eq!(std::fs::read(a.join("results.json")).unwrap(), std::fs::read(b.join("results.json")).unwrap());
}

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let dir = TempDir::new().unwrap();
    let json = MSD.replace(r#""n_realizations":1"#, r#""n_realizations":6"#);
    let cfg = write_config(&dir, "msd.json", &json);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("convergence", &cfg, &a, Some(1)).status.success());
    assert!(run("convergence", &cfg, &b, Some(3)).status.success());
    for f in ["results.json", "convergence.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(read_json(&b.join("timing.json"))["workers"], 3);
}

#[test]
fn cell_oracle_recovers_the_laminate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "cell.json",
        r#"{"experiment":"oracle","medium":{"dim":2,"kind":"layered","axis":0,"width":1.0,"values":[1.0,4.0]},
            "oracle":{"kind":"cell_tensor","cells":16,"window":4.0}}"#,
    );
    let out = run("oracle", &cfg, &dir.path().join("out"), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = &read_json(&dir.path().join("out/results.json"))["results"]["tensor"];
    assert!((t[0][0].as_f64().unwrap() - 1.6).abs() < 1e-8, "{t}");
    assert!((t[1][1].as_f64().unwrap() - 2.5).abs() < 1e-8, "{t}");
}
