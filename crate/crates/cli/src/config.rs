//! Run configuration.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys anywhere are rejected. `--set section.key=value` overrides
//! are applied to the parsed table before it is checked, and the value is
//! read as a TOML literal when possible (`--set env.kind=reach`,
//! `--set experiment.episodes=10`, `--set controller.slack="exponential"`).

use std::path::{Path, PathBuf};

use atacom::controller::{AtacomController, BasisMethod, ControllerParams};
use atacom::envs::{EnvKind, Environment, NavConfig, NavEnv, ReachConfig, ReachEnv};
use atacom::geometry::SdfScene;
use atacom::learn::{CemConfig, RolloutSettings};
use atacom::slack::{SlackKind, SlackModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub controller: ControllerSection,
    pub training: CemConfig,
    pub experiment: ExperimentSection,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// Scene file: static obstacles for `reach`, obstacle-frame shapes for `nav`.
    pub scene_file: Option<PathBuf>,
    pub nav: NavConfig,
    pub reach: ReachConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub slack: SlackKind,
    pub beta: f64,
    pub correction_gain: f64,
    pub damping: f64,
    pub margin: f64,
    pub basis: BasisMethod,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let p = ControllerParams::default();
        Self {
            slack: SlackKind::SoftCorner,
            beta: 1.0,
            correction_gain: p.correction_gain,
            damping: p.damping,
            margin: p.margin,
            basis: p.basis,
        }
    }
}

impl ControllerSection {
    pub fn slack_model(&self) -> atacom::Result<SlackModel> {
        SlackModel::new(self.slack, self.beta)
    }

    pub fn params(&self) -> ControllerParams {
        ControllerParams {
            correction_gain: self.correction_gain,
            damping: self.damping,
            margin: self.margin,
            basis: self.basis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    #[default]
    Random,
    Zero,
    Saved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub episodes: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Margins below `-tolerance` count as violations.
    pub tolerance: f64,
    /// Discount of the reported return (training uses `training.gamma`).
    pub gamma: f64,
    pub policy: PolicyChoice,
    pub policy_file: Option<PathBuf>,
    pub safety: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            output: PathBuf::from("runs/latest"),
            tolerance: 0.01,
            gamma: 0.99,
            policy: PolicyChoice::Random,
            policy_file: None,
            safety: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub slacks: Vec<SlackKind>,
    pub bases: Vec<BasisMethod>,
    pub gains: Vec<f64>,
    pub episodes: usize,
    /// Adds a row without the safety controller.
    pub include_unsafe: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            slacks: SlackKind::ALL.to_vec(),
            bases: vec![BasisMethod::Projected, BasisMethod::Qr],
            gains: vec![1.0, 10.0],
            episodes: 20,
            include_unsafe: true,
        }
    }
}

/// A parsed configuration together with the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Input file text, empty when no file was given.
    pub source: String,
    pub overrides: Vec<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, CliError> {
        let source = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let config = Self::from_str_with_overrides(&source, overrides)?;
        Ok(LoadedConfig {
            config,
            source,
            overrides: overrides.to_vec(),
        })
    }

    pub fn from_str_with_overrides(source: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = source.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let config: RunConfig = table.try_into().map_err(|e| CliError::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: atacom::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        check(self.env.nav.validate())?;
        check(self.env.reach.validate())?;
        check(self.controller.slack_model().map(|_| ()))?;
        check(self.controller.params().validate())?;
        check(self.training.validate())?;
        let e = &self.experiment;
        if e.episodes == 0 {
            return Err(CliError::Config("experiment.episodes must be >= 1".into()));
        }
        if !(e.tolerance >= 0.0 && e.gamma > 0.0 && e.gamma <= 1.0) {
            return Err(CliError::Config("experiment.tolerance must be >= 0 and gamma in (0, 1]".into()));
        }
        if e.policy == PolicyChoice::Saved && e.policy_file.is_none() {
            return Err(CliError::Config("experiment.policy = \"saved\" needs experiment.policy_file".into()));
        }
        let c = &self.compare;
        if c.slacks.is_empty() || c.bases.is_empty() || c.gains.is_empty() || c.episodes == 0 {
            return Err(CliError::Config("compare sweeps must be non-empty".into()));
        }
        if c.gains.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(CliError::Config("compare.gains must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>, CliError> {
        let scene = match &self.env.scene_file {
            Some(p) => Some(SdfScene::load(p).map_err(|e| CliError::Config(e.to_string()))?),
            None => None,
        };
        let env: atacom::Result<Box<dyn Environment>> = match self.env.kind {
            EnvKind::Nav => NavEnv::new(NavConfig {
                obstacle_scene: scene.or_else(|| self.env.nav.obstacle_scene.clone()),
                ..self.env.nav.clone()
            })
            .map(|e| Box::new(e) as Box<dyn Environment>),
            EnvKind::Reach => ReachEnv::new(ReachConfig {
                scene: scene.or_else(|| self.env.reach.scene.clone()),
                ..self.env.reach.clone()
            })
            .map(|e| Box::new(e) as Box<dyn Environment>),
        };
        env.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build_controller(&self, env: &dyn Environment) -> Result<AtacomController, CliError> {
        let slack = self.controller.slack_model().map_err(|e| CliError::Config(e.to_string()))?;
        AtacomController::for_env(env, slack, self.controller.params()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn rollout_settings(&self) -> RolloutSettings {
        RolloutSettings {
            gamma: self.experiment.gamma,
            tolerance: self.experiment.tolerance,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{item}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key '{key}' is malformed")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{key}': '{part}' is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
