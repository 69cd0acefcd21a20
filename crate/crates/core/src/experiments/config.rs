//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::kinematic::Profile;
use crate::models::ModelDescriptor;

/// Experiment selected by a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    SeriesCheck,
    Decoupling,
    Larc,
    OscillatoryTrack,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SeriesCheck => "series-check",
            ExperimentKind::Decoupling => "decoupling",
            ExperimentKind::Larc => "larc",
            ExperimentKind::OscillatoryTrack => "oscillatory-track",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

/// Initial condition; missing vectors default to zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q: Option<Vec<f64>>,
    pub qdot: Option<Vec<f64>>,
}

/// Open-loop run: one gain string per active input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub horizon: f64,
    #[serde(default)]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSection {
    pub orders: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub profile: Profile,
    pub duration: f64,
    /// Signed 1-based indices into the decoupling fields found at the
    /// initial configuration; the sign sets the direction of travel.
    pub segments: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecouplingSection {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    pub plan: Option<PlanSection>,
}

/// Which vector fields enter the rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LarcFields {
    #[default]
    Decoupling,
    Inputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarcSection {
    #[serde(default)]
    pub fields: LarcFields,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    /// Evaluation points; defaults to the initial configuration.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

/// Pair gain `z_bc` on 1-based inputs `b < c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairGain {
    pub inputs: [usize; 2],
    pub gain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorySection {
    /// One gain string `z_a` per active input.
    pub inputs: Vec<String>,
    #[serde(default)]
    pub pairs: Vec<PairGain>,
    pub horizon: f64,
    pub period: Option<f64>,
    /// Used by `oscillatory-track`.
    pub epsilon: Option<f64>,
    /// Used by `convergence`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_points_per_period")]
    pub points_per_period: usize,
    /// Times of the coefficient audit; defaults to 20 evenly spaced times.
    #[serde(default)]
    pub audit_times: Vec<f64>,
}

fn default_depth() -> usize {
    3
}

fn default_rank_tol() -> f64 {
    crate::kinematic::DEFAULT_RANK_TOL
}

fn default_points_per_period() -> usize {
    100
}

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelDescriptor,
    /// Output directory, relative to the working directory.
    pub output: Option<PathBuf>,
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub initial: InitialSection,
    pub simulate: Option<SimulateSection>,
    pub series: Option<SeriesSection>,
    pub decoupling: Option<DecouplingSection>,
    pub larc: Option<LarcSection>,
    pub oscillatory: Option<OscillatorySection>,
    /// Free-form notes, echoed into the manifest.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Directory for artifacts: `override_dir`, then `output`, then
    /// `out/<experiment>`.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(self.experiment.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_simulate_config() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            experiment = "simulate"
            [model]
            name = "flat"
            [integrator]
            dt = 0.01
            [simulate]
            horizon = 1.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Simulate);
        assert_eq!(cfg.integrator.unwrap().dt, 0.01);
        assert_eq!(cfg.output_dir(None), PathBuf::from("out/simulate"));
        assert_eq!(cfg.output_dir(Some(Path::new("x"))), PathBuf::from("x"));
    }

    #[test]
    fn unknown_keys_and_tags_are_config_errors() {
        let bad_key = "experiment = \"simulate\"\nspeed = 3\n[model]\nname = \"flat\"\n";
        assert!(matches!(
            ExperimentConfig::from_toml_str(bad_key),
            Err(Error::Config(_))
        ));
        let bad_tag = "experiment = \"fly\"\n[model]\nname = \"flat\"\n";
        assert!(matches!(
            ExperimentConfig::from_toml_str(bad_tag),
            Err(Error::Config(_))
        ));
    }
}
