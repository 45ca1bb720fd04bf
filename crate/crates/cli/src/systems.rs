use lorenzlab_core::flow::{FlowSystem, LORENZ_BETA, LORENZ_RHO, LORENZ_SIGMA};
use nalgebra::DMatrix;
use toml::{Table, Value};

use crate::config::SystemSpec;

pub struct SystemInfo {
    pub name: &'static str,
    pub params: &'static str,
    pub summary: &'static str,
}

pub const SYSTEMS: &[SystemInfo] = &[
    SystemInfo {
        name: "lorenz",
        params: "sigma = 10, rho = 28, beta = 8/3",
        summary: "Lorenz equations in R^3",
    },
    SystemInfo {
        name: "linear",
        params: "matrix = [[..], ..] or rates = [..] (diagonal)",
        summary: "linear vector field x' = A x",
    },
    SystemInfo {
        name: "rotation",
        params: "omega = 1",
        summary: "planar rotation at angular speed omega",
    },
];

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn scalar(params: &Table, key: &str, default: f64) -> Result<f64, String> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => number(v).ok_or_else(|| format!("system parameter {key} must be a number")),
    }
}

fn vector(v: &Value, what: &str) -> Result<Vec<f64>, String> {
    v.as_array()
        .ok_or_else(|| format!("{what} must be an array"))?
        .iter()
        .map(|x| number(x).ok_or_else(|| format!("{what} entries must be numbers")))
        .collect()
}

fn only(params: &Table, allowed: &[&str]) -> Result<(), String> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unknown system parameter {k}")),
        None => Ok(()),
    }
}

pub fn build(spec: &SystemSpec) -> Result<FlowSystem, String> {
    let p = &spec.params;
    match spec.name.as_str() {
        "lorenz" => {
            only(p, &["sigma", "rho", "beta"])?;
            Ok(FlowSystem::lorenz(
                scalar(p, "sigma", LORENZ_SIGMA)?,
                scalar(p, "rho", LORENZ_RHO)?,
                scalar(p, "beta", LORENZ_BETA)?,
            ))
        }
        "linear" => {
            only(p, &["matrix", "rates"])?;
            match (p.get("matrix"), p.get("rates")) {
                (Some(m), None) => {
                    let rows = m
                        .as_array()
                        .ok_or("matrix must be an array of rows")?
                        .iter()
                        .map(|r| vector(r, "matrix row"))
                        .collect::<Result<Vec<_>, _>>()?;
                    let n = rows.len();
                    if n == 0 || rows.iter().any(|r| r.len() != n) {
                        return Err("matrix must be square and nonempty".into());
                    }
                    let flat: Vec<f64> = rows.concat();
                    FlowSystem::linear(DMatrix::from_row_slice(n, n, &flat)).map_err(|e| e.to_string())
                }
                (None, Some(r)) => FlowSystem::linear_diagonal(&vector(r, "rates")?).map_err(|e| e.to_string()),
                _ => Err("linear needs exactly one of matrix or rates".into()),
            }
        }
        "rotation" => {
            only(p, &["omega"])?;
            Ok(FlowSystem::rotation(scalar(p, "omega", 1.0)?))
        }
        other => Err(format!("unknown system {other}; see list-systems")),
    }
}

/// Default starting point: a point near the attractor for Lorenz, a point
/// off the origin otherwise.
pub fn default_start(system: &FlowSystem) -> Vec<f64> {
    if system.name() == "lorenz" {
        vec![1.0, 1.0, 20.0]
    } else {
        let mut x = vec![0.0; system.dim()];
        x[0] = 1.0;
        x
    }
}
