use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Table;

use crate::stages::Stage;
use crate::systems;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Table::is_empty")]
    pub params: Table,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    /// Wall-clock cap for the whole run, checked between stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_secs: Option<f64>,
    /// Mesh vertex cap for disk stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_vertices: Option<usize>,
    /// Cap on |K| times iterates for spanning stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_samples: Option<usize>,
}

impl Budgets {
    fn is_empty(&self) -> bool {
        self == &Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Table::is_empty")]
    pub params: Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Budgets::is_empty")]
    pub budgets: Budgets,
    #[serde(default)]
    pub pipeline: Vec<StageSpec>,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

pub const LORENZ_FULL: &str = include_str!("../../../recipes/lorenz-full.toml");

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; the name of a shipped recipe is accepted when no
    /// such file exists.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if !path.exists() && path.as_os_str() == "lorenz-full" {
            return Self::parse(LORENZ_FULL);
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without running: the system,
    /// stage parameters, stage ordering and tolerances.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(ConfigError::Invalid(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if let Some(t) = self.budgets.time_secs {
            if !(t > 0.0) {
                return Err(ConfigError::Invalid("budgets.time_secs must be positive".into()));
            }
        }
        let system = systems::build(&self.system).map_err(ConfigError::Invalid)?;
        let mut seen = Vec::new();
        for (i, spec) in self.pipeline.iter().enumerate() {
            spec.stage
                .check_params(&spec.params)
                .map_err(|e| ConfigError::Invalid(format!("stage {} ({}): {e}", i + 1, spec.stage.name())))?;
            for need in spec.stage.requires() {
                if !seen.contains(need) {
                    return Err(ConfigError::Invalid(format!(
                        "stage {} ({}) needs an earlier {} stage",
                        i + 1,
                        spec.stage.name(),
                        need.name()
                    )));
                }
            }
            if spec.stage.needs_dimension_three() && system.dim() != 3 {
                return Err(ConfigError::Invalid(format!(
                    "stage {} ({}) needs a 3-dimensional system",
                    i + 1,
                    spec.stage.name()
                )));
            }
            seen.push(spec.stage);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_stage_is_a_parse_error() {
        let text = "[system]\nname = \"lorenz\"\n[[pipeline]]\nstage = \"bogus\"\n";
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn unknown_stage_parameter_is_rejected() {
        let text = "[system]\nname = \"lorenz\"\n[[pipeline]]\nstage = \"lyapunov\"\nparams = { windw = 10.0 }\n";
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_prerequisite_is_rejected() {
        let text = "[system]\nname = \"lorenz\"\n[[pipeline]]\nstage = \"pesin\"\n";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("splitting"), "{err}");
    }

    #[test]
    fn shipped_recipe_is_valid() {
        let c = ExperimentConfig::parse(LORENZ_FULL).unwrap();
        assert_eq!(c.system.name, "lorenz");
        assert!(c.pipeline.len() >= 12);
    }

    fn stage() -> impl Strategy<Value = StageSpec> {
        (0usize..3, proptest::option::of(1.0f64..1e4), proptest::option::of(1usize..1000)).prop_map(|(k, w, n)| {
            let mut params = Table::new();
            let stage = match k {
                0 => {
                    if let Some(w) = w {
                        params.insert("window".into(), toml::Value::Float(w));
                    }
                    Stage::Lyapunov
                }
                1 => Stage::Singularity,
                _ => {
                    if let Some(n) = n {
                        params.insert("steps".into(), toml::Value::Integer(n as i64 + 10));
                    }
                    Stage::Splitting
                }
            };
            StageSpec { stage, params }
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            seed in 0u64..(i64::MAX as u64),
            tol in 1e-14f64..1e-2,
            time in proptest::option::of(0.5f64..1e5),
            pipeline in proptest::collection::vec(stage(), 0..6),
            dir in "[a-z]{1,8}(/[a-z0-9_]{1,8}){0,2}",
        ) {
            let config = ExperimentConfig {
                seed,
                tol,
                output_dir: PathBuf::from(dir),
                system: SystemSpec { name: "lorenz".into(), params: Table::new() },
                budgets: Budgets { time_secs: time, ..Default::default() },
                pipeline,
            };
            let text = config.to_toml();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &config);
            prop_assert_eq!(back.to_toml(), text);
        }
    }
}
