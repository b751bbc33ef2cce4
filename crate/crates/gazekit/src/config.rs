//! Run configuration: one TOML file drives every command.
//!
//! Defaults are the intended training recipe (5 splits at a 19:5 subject
//! ratio, 100 epochs of batch 400 at learning rate 0.05 with 0.9 decay, the
//! rotation/zeroing augmentation scheme, a 1 m depth assumption and the
//! 10 cm reconstruction sphere). Unknown keys are tolerated unless strict
//! mode is on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPlan;
use crate::classifier::{GammaSpec, NamedGamma, SvcGrid};
use crate::error::{Error, Result};
use crate::pipeline::EvalOptions;
use crate::regressor::TrainConfig;
use crate::synthgen::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset.jsonl".into(),
            model_dir: "models".into(),
            report_dir: "reports".into(),
        }
    }
}

/// Classifier training settings: either a fixed `(c, gamma)` pair or an
/// exhaustive grid search scored by stratified k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvcSettings {
    pub grid_search: bool,
    pub grid: SvcGrid,
    pub folds: usize,
    /// Used when `grid_search` is off.
    pub c: f64,
    pub gamma: GammaSpec,
    /// Solver stopping tolerance.
    pub tol: f64,
}

impl Default for SvcSettings {
    fn default() -> Self {
        SvcSettings {
            grid_search: true,
            grid: SvcGrid::default(),
            folds: 5,
            c: 10.0,
            gamma: GammaSpec::Named(NamedGamma::Scale),
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub k: usize,
    /// Train:test subject ratio.
    pub ratio: (u32, u32),
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            k: 5,
            ratio: (19, 5),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    /// Depth assumption (meters) for frames without a measured centroid
    /// depth.
    pub depth: DepthSetting,
    /// Reject records with unknown fields on ingestion.
    pub strict_ingestion: bool,
    pub scene: SceneConfig,
    pub augment: AugmentPlan,
    pub train: TrainConfig,
    pub svc: SvcSettings,
    pub split: SplitSettings,
    pub eval: EvalOptions,
}

/// Wrapper so the default depth is visible in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DepthSetting(pub f64);

impl Default for DepthSetting {
    fn default() -> Self {
        DepthSetting(1.0)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        if self.depth.0 <= 0.0 {
            return Err(Error::ConfigError(format!(
                "depth must be positive, got {}",
                self.depth.0
            )));
        }
        if self.split.k == 0 {
            return Err(Error::ConfigError("split.k must be positive".into()));
        }
        if self.svc.folds < 2 {
            return Err(Error::ConfigError("svc.folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::ConfigError(format!("cannot serialize config: {e}")))
    }
}

/// Loads a TOML run configuration. In strict mode keys outside the schema
/// are rejected; otherwise they are ignored.
pub fn load_config(path: &Path, strict: bool) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, strict)
}

pub fn parse_config(text: &str, strict: bool) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| Error::ConfigError(format!("invalid config: {e}")))?;
    if strict {
        let given: toml::Value = toml::from_str(text)
            .map_err(|e| Error::ConfigError(format!("invalid config: {e}")))?;
        let known: toml::Value = toml::from_str(&config.to_toml()?)
            .map_err(|e| Error::ConfigError(format!("cannot re-parse config: {e}")))?;
        let mut path = Vec::new();
        check_known_keys(&given, &known, &mut path)?;
    }
    config.validate()?;
    Ok(config)
}

fn check_known_keys(
    given: &toml::Value,
    known: &toml::Value,
    path: &mut Vec<String>,
) -> Result<()> {
    if let (toml::Value::Table(given), toml::Value::Table(known)) = (given, known) {
        for (key, value) in given {
            match known.get(key) {
                Some(known_value) => {
                    path.push(key.clone());
                    check_known_keys(value, known_value, path)?;
                    path.pop();
                }
                None => {
                    path.push(key.clone());
                    return Err(Error::ConfigError(format!(
                        "unknown key `{}` in strict mode",
                        path.join(".")
                    )));
                }
            }
        }
    }
    Ok(())
}
