use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::rng::hex_digest;
use crate::stages::{Context, StageError};
use crate::systems;

pub const MANIFEST: &str = "manifest.json";
pub const FAILURE: &str = "failure.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub wall_secs: f64,
    pub passed: bool,
    pub budget_exceeded: bool,
    pub summary: String,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// SHA-256 of the effective config in canonical TOML form.
    pub config_hash: String,
    pub system: String,
    pub seed: u64,
    pub tol: f64,
    pub stages: Vec<StageRecord>,
    /// Every file written to the output directory except the manifest.
    pub files: Vec<String>,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

pub mod exit {
    pub const PASS: i32 = 0;
    pub const GATE: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const BUDGET: i32 = 3;
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    hex_digest(config.to_toml().as_bytes())
}

fn error_code(e: &StageError) -> i32 {
    match e {
        _ if e.is_budget() => exit::BUDGET,
        StageError::Input(_) | StageError::Core(lorenzlab_core::Error::Input(_)) => exit::INPUT,
        _ => exit::GATE,
    }
}

/// Runs the pipeline in order, writing artifacts and the manifest into the
/// config's output directory. Gate failures do not stop later stages;
/// errors and an exhausted time budget do.
pub fn run(config: &ExperimentConfig) -> std::io::Result<RunManifest> {
    let out = config.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    let system = systems::build(&config.system).map_err(std::io::Error::other)?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(config),
        system: system.to_string(),
        seed: config.seed,
        tol: config.tol,
        stages: Vec::new(),
        files: Vec::new(),
        exit_code: exit::PASS,
        failing_stage: None,
        witness: None,
    };
    let mut ctx = Context {
        system,
        seed: config.seed,
        tol: config.tol,
        budgets: &config.budgets,
        out,
        field: None,
        poincare: None,
        block: None,
        seeds: None,
        records: None,
        h_upper: None,
    };
    let start = Instant::now();
    let mut gate_failed = false;
    let mut budget_hit = false;
    for spec in &config.pipeline {
        let name = spec.stage.name().to_string();
        if config.budgets.time_secs.is_some_and(|b| start.elapsed().as_secs_f64() > b) {
            manifest.exit_code = exit::BUDGET;
            manifest.failing_stage = Some(name);
            return finish(out, manifest);
        }
        let t = Instant::now();
        match ctx.run(spec.stage, &spec.params) {
            Ok(o) => {
                if !o.passed && !gate_failed {
                    gate_failed = true;
                    manifest.failing_stage = Some(name.clone());
                    manifest.witness = o.files.iter().find(|f| f.ends_with(".json")).or(o.files.first()).cloned();
                }
                budget_hit |= o.budget_exceeded;
                manifest.files.extend(o.files.iter().cloned());
                manifest.stages.push(StageRecord {
                    stage: name,
                    wall_secs: t.elapsed().as_secs_f64(),
                    passed: o.passed,
                    budget_exceeded: o.budget_exceeded,
                    summary: o.summary,
                    files: o.files,
                    error: None,
                });
            }
            Err(e) => {
                let msg = e.to_string();
                let witness = serde_json::json!({ "stage": name, "error": msg });
                std::fs::write(out.join(FAILURE), serde_json::to_string_pretty(&witness)?)?;
                manifest.files.push(FAILURE.to_string());
                manifest.stages.push(StageRecord {
                    stage: name.clone(),
                    wall_secs: t.elapsed().as_secs_f64(),
                    passed: false,
                    budget_exceeded: e.is_budget(),
                    summary: String::new(),
                    files: Vec::new(),
                    error: Some(msg),
                });
                manifest.exit_code = error_code(&e);
                manifest.failing_stage = Some(name);
                manifest.witness = Some(FAILURE.to_string());
                return finish(out, manifest);
            }
        }
    }
    manifest.exit_code = if budget_hit {
        exit::BUDGET
    } else if gate_failed {
        exit::GATE
    } else {
        exit::PASS
    };
    finish(out, manifest)
}

fn finish(out: &Path, manifest: RunManifest) -> std::io::Result<RunManifest> {
    std::fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
