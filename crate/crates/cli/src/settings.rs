//! Resolved per-command settings: bundled defaults, then an optional JSON
//! config file, then command-line flags.

use std::path::{Path, PathBuf};

use pedcross::calibration::BolfiConfig;
use pedcross::ppo::ParamSampling;
use pedcross::scenario::ScenarioTable;
use pedcross::{EnvConfig, NonPolicyParams, TrainConfig, Variant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{require_file, CliError, CliResult};

/// Environment variable naming the root directory for command outputs.
pub const OUT_ROOT_ENV: &str = "PEDCROSS_OUT";

/// Parameter point used when a command is not given one: low noise, moderate
/// time pressure and effort, weak looming aversion.
pub const DEFAULT_EVAL_PARAMS: NonPolicyParams = NonPolicyParams {
    sigma_v_day: 1.0,
    sigma_v_night: 4.0,
    time_pressure_gain: 1.0,
    effort_weight: 1.0,
    looming_weight: 0.5,
};

/// Directory a command writes to when `--out` is absent.
pub fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("pedcross-out"));
    root.join(command)
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    require_file(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn load_table(path: Option<&Path>) -> CliResult<ScenarioTable> {
    match path {
        None => Ok(ScenarioTable::bundled()),
        Some(p) => {
            require_file(p, "scenario table")?;
            Ok(ScenarioTable::load(p)?)
        }
    }
}

fn default_variant() -> Variant {
    Variant::SM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub ppo: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { variant: Variant::SM, seed: 0, out: None, ppo: TrainConfig::default() }
    }
}

impl TrainSettings {
    pub fn fixed_params(&mut self, params: NonPolicyParams) {
        self.ppo.params = ParamSampling::Fixed { params };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub checkpoint: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub reps: usize,
    pub seed: u64,
    pub params: NonPolicyParams,
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            table: None,
            reps: 50,
            seed: 0,
            params: DEFAULT_EVAL_PARAMS,
            out: None,
            env: EnvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSettings {
    pub checkpoint: Option<PathBuf>,
    /// Observed metric table; when absent one is synthesized at `truth`.
    pub observed: Option<PathBuf>,
    pub truth: NonPolicyParams,
    /// Seed for the synthetic observed table (independent of the fitting seed).
    pub truth_seed: u64,
    pub table: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub bolfi: BolfiConfig,
    pub env: EnvConfig,
}

impl Default for CalibrateSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            observed: None,
            truth: DEFAULT_EVAL_PARAMS,
            truth_seed: 1_000_003,
            table: None,
            out: None,
            bolfi: BolfiConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// Output directory of a `simulate` run.
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Width of the position bins in the speed profiles, metres.
    pub bin_width: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { input: None, out: None, bin_width: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub checkpoints: Vec<PathBuf>,
    pub table: Option<PathBuf>,
    pub reps: usize,
    pub seed: u64,
    pub params: NonPolicyParams,
    pub out: Option<PathBuf>,
    pub bin_width: f64,
    pub env: EnvConfig,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            table: None,
            reps: 20,
            seed: 0,
            params: DEFAULT_EVAL_PARAMS,
            out: None,
            bin_width: 0.25,
            env: EnvConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        DEFAULT_EVAL_PARAMS.validate().unwrap();
        TrainSettings::default().ppo.validate().unwrap();
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let s: TrainSettings = serde_json::from_str(r#"{"variant": "S", "ppo": {"total_env_steps": 5000}}"#).unwrap();
        assert_eq!(s.variant, Variant::S);
        assert_eq!(s.ppo.total_env_steps, 5000);
        assert_eq!(s.ppo.rollout_len, TrainConfig::default().rollout_len);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<SimulateSettings>(r#"{"repz": 3}"#).is_err());
    }
}
