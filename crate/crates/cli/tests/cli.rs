use std::path::Path;
use std::process::{Command, Output};

use lorenzlab_cli::RunManifest;

fn lorenzlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorenzlab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

const SADDLE: &str = r#"
output_dir = "out"
[system]
name = "linear"
params = { rates = [1.0, -2.0] }
[[pipeline]]
stage = "lyapunov"
params = { x0 = [0.0, 0.0], transient = 0.0, window = 20.0, renorm_step = 0.1 }
"#;

const SMALL_LORENZ: &str = r#"
seed = 3
output_dir = "out"
[system]
name = "lorenz"
[[pipeline]]
stage = "splitting"
params = { steps = 1200, step = 0.1 }
[[pipeline]]
stage = "sectional"
params = { stride = 100, t_max = 5 }
[[pipeline]]
stage = "spanning"
params = { sample_index = 100, count = 2000, n_max = 8 }
"#;

#[test]
fn empty_pipeline_passes_with_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "output_dir = \"out\"\n[system]\nname = \"lorenz\"\n");
    let o = lorenzlab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&dir.path().join("out"));
    assert!(m.stages.is_empty() && m.files.is_empty());
    let r = lorenzlab(&["report", "out/manifest.json"], dir.path());
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).contains("no stages"));
}

#[test]
fn linear_saddle_exponents_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "saddle.toml", SADDLE);
    let o = lorenzlab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("out/exponents.csv")).unwrap();
    let ex: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(ex.len(), 2);
    assert!((ex[0] - 1.0).abs() < 1e-8 && (ex[1] + 2.0).abs() < 1e-8, "{ex:?}");
    let m = manifest(&dir.path().join("out"));
    for f in &m.files {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
    assert!(m.files.contains(&"exponents.csv".to_string()));
}

#[test]
fn manifest_hash_tracks_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "saddle.toml", SADDLE);
    lorenzlab(&["run", &cfg], dir.path());
    let a = manifest(&dir.path().join("out"));
    let parsed = lorenzlab_cli::ExperimentConfig::parse(SADDLE).unwrap();
    assert_eq!(a.config_hash, lorenzlab_cli::manifest::config_hash(&parsed));
    lorenzlab(&["run", &cfg, "--seed", "9"], dir.path());
    let b = manifest(&dir.path().join("out"));
    assert_ne!(a.config_hash, b.config_hash);
    assert_eq!(b.seed, 9);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[system]\nname = \"lorenz\"\n[[pipeline]]\nstage = \"nope\"\n");
    assert_eq!(lorenzlab(&["validate", &bad], dir.path()).status.code(), Some(2));
    assert_eq!(lorenzlab(&["run", &bad], dir.path()).status.code(), Some(2));
    let order = write(dir.path(), "order.toml", "[system]\nname = \"lorenz\"\n[[pipeline]]\nstage = \"census\"\n");
    assert_eq!(lorenzlab(&["validate", &order], dir.path()).status.code(), Some(2));
    assert_eq!(lorenzlab(&["validate", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(lorenzlab(&["report", "missing.json"], dir.path()).status.code(), Some(2));
    let ok = write(dir.path(), "ok.toml", SADDLE);
    assert_eq!(lorenzlab(&["validate", &ok], dir.path()).status.code(), Some(0));
    assert_eq!(lorenzlab(&["validate", "lorenz-full"], dir.path()).status.code(), Some(0));
}

#[test]
fn exhausted_time_budget_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SADDLE}\n[[pipeline]]\nstage = \"singularity\"\n[budgets]\ntime_secs = 1e-9\n");
    let cfg = write(dir.path(), "budget.toml", &text);
    let o = lorenzlab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn failed_gate_exits_with_one_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    // The centre of a rotation is elliptic, so the hyperbolicity gate fails.
    let cfg = write(
        dir.path(),
        "rot.toml",
        "output_dir = \"out\"\n[system]\nname = \"rotation\"\n[[pipeline]]\nstage = \"singularity\"\n",
    );
    assert_eq!(lorenzlab(&["run", &cfg], dir.path()).status.code(), Some(1));
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m.failing_stage.as_deref(), Some("singularity"));
    assert_eq!(m.witness.as_deref(), Some("singularities.json"));
}

#[test]
fn report_survives_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "manifest.json", "{ not json");
    let o = lorenzlab(&["report", "manifest.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("warnings"));

    let cfg = write(dir.path(), "saddle.toml", SADDLE);
    lorenzlab(&["run", &cfg], dir.path());
    write(&dir.path().join("out"), "lyapunov.json", "[1, 2");
    let o = lorenzlab(&["report", "out/manifest.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("corrupt artifact lyapunov.json"), "{text}");
}

#[test]
fn small_lorenz_run_is_deterministic_and_reports_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL_LORENZ);
    let first = lorenzlab(&["run", &cfg, "--output", "a"], dir.path());
    assert!(matches!(first.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&first.stderr));
    lorenzlab(&["run", &cfg, "--output", "b", "--threads", "1"], dir.path());
    let m = manifest(&dir.path().join("a"));
    assert_eq!(m.stages.len(), 3);
    for f in m.files.iter().filter(|f| f.ends_with(".csv")) {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let r = lorenzlab(&["report", "a/manifest.json"], dir.path());
    assert!(String::from_utf8_lossy(&r.stdout).contains("h_lower > 0"));
}

#[test]
fn list_systems_names_every_system_and_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = lorenzlab(&["list-systems"], dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["lorenz", "linear", "rotation", "spanning", "census"] {
        assert!(text.contains(name), "{name}");
    }
}
