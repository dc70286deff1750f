//! Pipeline configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapeharmony::{EvalConfig, InterpolationConfig, MatchConfig, TtaConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh_x: PathBuf,
    pub mesh_y: PathBuf,
    pub outdir: PathBuf,
    /// Source of all randomness (feature jitter, specificity sampling).
    pub seed: u64,
    /// Basis size.
    pub k: usize,
    /// Standard deviation of Gaussian noise added to the initial features.
    pub init_jitter: f64,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub interpolate: InterpolationConfig,
    pub tta: TtaConfig,
    pub gt: GroundTruth,
    pub eval: EvalConfig,
    pub ssm: SsmSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mesh_x: PathBuf::new(),
            mesh_y: PathBuf::new(),
            outdir: PathBuf::from("out"),
            seed: 0,
            k: 50,
            init_jitter: 0.0,
            matching: MatchConfig::default(),
            interpolate: InterpolationConfig::default(),
            tta: TtaConfig::default(),
            gt: GroundTruth::None,
            eval: EvalConfig::default(),
            ssm: SsmSettings::default(),
        }
    }
}

/// Ground truth for `eval`: none, the identity (same vertex order), or a hard-map file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    #[default]
    None,
    Identity,
    File(PathBuf),
}

impl GroundTruth {
    /// `identity`, `none`, or a path.
    pub fn parse(s: &str) -> Self {
        match s {
            "identity" => Self::Identity,
            "none" => Self::None,
            path => Self::File(PathBuf::from(path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmSettings {
    /// Corresponded meshes; empty means the adapted X frames of the pipeline run.
    pub shapes: Vec<PathBuf>,
    /// Mode count; `None` keeps all non-degenerate modes.
    pub modes: Option<usize>,
    pub specificity_trials: usize,
    /// Exported samples sit at +-this many standard deviations.
    pub sample_sd: f64,
    pub exported_modes: usize,
}

impl Default for SsmSettings {
    fn default() -> Self {
        Self {
            shapes: Vec::new(),
            modes: None,
            specificity_trials: 100,
            sample_sd: 2.0,
            exported_modes: 3,
        }
    }
}

/// Stages a command runs; validation depends on which inputs they need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Match,
    Interpolate,
    Tta,
    Eval,
    Ssm,
}

impl Stage {
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Match => "match",
            Stage::Interpolate => "interpolate",
            Stage::Tta => "tta",
            Stage::Eval => "eval",
            Stage::Ssm => "ssm",
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn wrap(r: shapeharmony::Result<()>) -> Result<(), CliError> {
    r.map_err(|e| usage(e.to_string()))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks every value the given stages read; touches no files.
    pub fn validate(&self, stages: &[Stage]) -> Result<(), CliError> {
        if self.outdir.as_os_str().is_empty() {
            return Err(usage("outdir must not be empty"));
        }
        let needs_pair = stages.iter().any(|s| *s != Stage::Ssm) || self.ssm.shapes.is_empty();
        if needs_pair && (self.mesh_x.as_os_str().is_empty() || self.mesh_y.as_os_str().is_empty())
        {
            return Err(usage("mesh_x and mesh_y must be set"));
        }
        if self.k < 3 {
            return Err(usage(format!("k must be >= 3, got {}", self.k)));
        }
        if !(self.init_jitter >= 0.0) || !self.init_jitter.is_finite() {
            return Err(usage(format!(
                "init_jitter must be >= 0, got {}",
                self.init_jitter
            )));
        }
        wrap(self.matching.validate())?;
        wrap(self.interpolate.validate())?;
        wrap(self.tta.validate())?;
        wrap(self.eval.validate())?;
        if stages.contains(&Stage::Eval) && self.gt == GroundTruth::None {
            return Err(usage(
                "eval needs a ground truth (gt = \"identity\" or a map file)",
            ));
        }
        if let GroundTruth::File(p) = &self.gt {
            if p.as_os_str().is_empty() {
                return Err(usage("ground-truth path must not be empty"));
            }
        }
        let s = &self.ssm;
        if s.modes == Some(0) {
            return Err(usage("ssm.modes must be >= 1"));
        }
        if s.specificity_trials < 1 {
            return Err(usage("ssm.specificity_trials must be >= 1"));
        }
        if !(s.sample_sd >= 0.0) || !s.sample_sd.is_finite() {
            return Err(usage(format!(
                "ssm.sample_sd must be >= 0, got {}",
                s.sample_sd
            )));
        }
        if stages == [Stage::Ssm] && !s.shapes.is_empty() && s.shapes.len() < 3 {
            return Err(usage(format!(
                "ssm needs at least 3 shapes, got {}",
                s.shapes.len()
            )));
        }
        if s.shapes.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(usage("ssm shape paths must not be empty"));
        }
        Ok(())
    }
}
