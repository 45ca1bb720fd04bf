use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::manifest::{RunManifest, StageRecord};

/// Best-effort digest of a run. Unreadable manifests and missing or corrupt
/// artifacts produce warnings rather than errors.
pub fn report(manifest_path: &Path) -> std::io::Result<String> {
    let text = std::fs::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    let manifest: RunManifest = match serde_json::from_slice(&text) {
        Ok(m) => m,
        Err(e) => {
            warning_block(&mut out, &[format!("{} is not a readable manifest: {e}", manifest_path.display())]);
            return Ok(out);
        }
    };
    let _ = writeln!(out, "lorenzlab run report");
    let _ = writeln!(out, "  system       {}", manifest.system);
    let _ = writeln!(out, "  seed         {}", manifest.seed);
    let _ = writeln!(out, "  tolerance    {:e}", manifest.tol);
    let _ = writeln!(out, "  config hash  {}", manifest.config_hash);
    let _ = writeln!(out, "  version      {}", manifest.version);
    let _ = writeln!(out, "  exit code    {}", manifest.exit_code);
    if manifest.stages.is_empty() {
        let _ = writeln!(out, "\nno stages");
        return Ok(out);
    }
    let mut warnings = Vec::new();
    let _ = writeln!(out, "\nstages");
    for s in &manifest.stages {
        let verdict = match (&s.error, s.passed) {
            (Some(_), _) => "ERROR",
            (None, true) => "pass",
            (None, false) => "FAIL",
        };
        let _ = writeln!(out, "  {:<14} {:<5} {:>9.2}s  {}", s.stage, verdict, s.wall_secs, s.summary);
        if let Some(e) = &s.error {
            let _ = writeln!(out, "  {:<14} error: {e}", "");
        }
        for f in &s.files {
            if !dir.join(f).is_file() {
                warnings.push(format!("missing artifact {f} from stage {}", s.stage));
            }
        }
    }
    let _ = writeln!(out, "\ndigest");
    for s in &manifest.stages {
        digest_stage(&mut out, dir, s, &mut warnings);
    }
    if let Some(stage) = &manifest.failing_stage {
        let _ = writeln!(
            out,
            "\nfirst failing stage: {stage}{}",
            manifest.witness.as_ref().map(|w| format!(" (witness {w})")).unwrap_or_default()
        );
    }
    if !warnings.is_empty() {
        out.push('\n');
        warning_block(&mut out, &warnings);
    }
    Ok(out)
}

fn warning_block(out: &mut String, lines: &[String]) {
    let _ = writeln!(out, "warnings");
    for l in lines {
        let _ = writeln!(out, "  ! {l}");
    }
}

fn load(dir: &Path, name: &str, warnings: &mut Vec<String>) -> Option<Value> {
    let bytes = std::fs::read(dir.join(name)).ok()?;
    match serde_json::from_slice(&bytes) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("corrupt artifact {name}: {e}"));
            None
        }
    }
}

fn num(v: &Value) -> String {
    v.as_f64().map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn digest_stage(out: &mut String, dir: &Path, s: &StageRecord, warnings: &mut Vec<String>) {
    if s.error.is_some() {
        return;
    }
    match s.stage.as_str() {
        "lyapunov" => {
            if let Some(v) = load(dir, "lyapunov.json", warnings) {
                let ex: Vec<String> = v["exponents"].as_array().into_iter().flatten().map(num).collect();
                let _ = writeln!(out, "  Lyapunov exponents    [{}]", ex.join(", "));
            }
        }
        "spanning" => {
            if let Some(v) = load(dir, "entropy.json", warnings) {
                let lo = v["h_lower"].as_f64().unwrap_or(f64::NAN);
                let _ = writeln!(out, "  h_lower > 0           {} (h_lower = {lo:.4})", if lo > 0.0 { "yes" } else { "no" });
                let _ = writeln!(out, "  entropy bracket       [{lo:.4}, {}]", num(&v["h_upper"]));
            }
        }
        "disk" => {
            if let Some(v) = load(dir, "disk.json", warnings) {
                let _ = writeln!(out, "  volume growth v_F     {}", num(&v["v_f"]));
            }
        }
        "certify" => {
            if let Some(v) = load(dir, "certificates.json", warnings) {
                let certs = v["certificates"].as_array().cloned().unwrap_or_default();
                let pass = certs.iter().filter(|c| c["passes"].as_bool() == Some(true)).count();
                let _ = writeln!(out, "  certificates          {pass} pass, {} fail", certs.len() - pass);
            }
        }
        "census" => {
            if let Some(v) = load(dir, "census.json", warnings) {
                let n = v["orbits"].as_array().map_or(0, |a| a.len());
                let _ = writeln!(out, "  census rate           {} ({n} orbits)", num(&v["rate"]));
            }
        }
        "shadow" => {
            if let Some(v) = load(dir, "periodic_orbits.json", warnings) {
                let mut orbits = v.as_array().cloned().unwrap_or_default();
                orbits.sort_by(|a, b| {
                    let key = |o: &Value| o["period"].as_f64().unwrap_or(f64::INFINITY);
                    key(a).total_cmp(&key(b))
                });
                let mut seen = std::collections::HashSet::new();
                orbits.retain(|o| o["symbol_sequence"].as_str().is_none_or(|w| seen.insert(w.to_string())));
                let _ = writeln!(out, "  shadowing bounds (shortest orbits)");
                let _ = writeln!(out, "    {:>10}  {:<12} {:>10} {:>10} {:>10}", "period", "word", "gap", "c", "d");
                for o in orbits.iter().take(10) {
                    let _ = writeln!(
                        out,
                        "    {:>10.6}  {:<12} {:>10.2e} {:>10.2e} {:>10.3}",
                        o["period"].as_f64().unwrap_or(f64::NAN),
                        o["symbol_sequence"].as_str().unwrap_or("-"),
                        o["gap"].as_f64().unwrap_or(f64::NAN),
                        o["c_bound"].as_f64().unwrap_or(f64::NAN),
                        o["d_bound"].as_f64().unwrap_or(f64::NAN),
                    );
                }
            }
        }
        _ => {}
    }
}
