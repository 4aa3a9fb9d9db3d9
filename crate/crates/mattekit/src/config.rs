//! The TOML pipeline configuration: one file drives every CLI command.
//! Unset fields take the documented defaults (an empty file is a complete
//! default config); unknown keys are rejected with the offending line.
//! The seed lives here so no command ever consults the wall clock.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::metrics::{MetricParams, SweepConfig};
use crate::model::{RefineMode, Stage1Config, Stage2Config};
use crate::train::TrainPlan;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: MetricParams,
    pub sweep: SweepConfig,
    /// Post-processing for inference/eval: "none", "stage2", or
    /// "guided:r=20,eps=1e-4". Parsed on use; see [`RefineMode`].
    pub refine: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: MetricParams::default(),
            sweep: SweepConfig::default(),
            refine: "stage2".to_string(),
        }
    }
}

impl EvalConfig {
    pub fn refine_mode(&self) -> Result<RefineMode> {
        self.refine.parse()
    }
}

/// Default input/output locations; CLI flags override these.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Foreground/background asset directory for `synth`.
    pub assets: Option<PathBuf>,
    /// Synthesized dataset directory (output of `synth`, input of `train`).
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; every random stream in the pipeline derives from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainPlan,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    /// Cross-field checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.training.validate()?;
        self.eval.metrics.validate()?;
        self.eval.sweep.validate()?;
        self.eval.refine_mode().map(|_| ())?;
        Ok(())
    }
}

/// Parses the config file; an empty (or all-comment) file yields the full
/// default config. Syntax errors and unknown keys surface with toml's
/// line/column positions.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: PipelineConfig = toml::from_str(&text)
        .map_err(|e| Error::ConfigParse { path: path.to_path_buf(), source: e })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_toml(cfg: &PipelineConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "").unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.training.batch_size, 4);
        assert_eq!(cfg.training.adam.lr, 1e-5);
        assert_eq!(cfg.eval.sweep.d_list, vec![1, 4, 7, 10, 13, 16, 19]);
    }

    #[test]
    fn round_trip_preserves_config() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 99;
        cfg.model.stage1.width_multiplier = 0.125;
        cfg.training.phase1_steps = 1234;
        cfg.eval.refine = "guided:r=8,eps=1e-3".to_string();
        cfg.paths.dataset = Some(PathBuf::from("/tmp/data"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, config_to_toml(&cfg)).unwrap();
        let back = load_config(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[training]\nlerning_rate = 0.1\n").unwrap();
        let err = load_config(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lerning_rate"), "{}", msg);
        assert!(msg.contains("line 2"), "{}", msg);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            "seed = 7\n[training.adam]\nlr = 1e-3\n[model.stage1]\nwidth_multiplier = 0.25\n",
        )
        .unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training.adam.lr, 1e-3);
        assert_eq!(cfg.training.adam.beta1, 0.9); // untouched default
        assert_eq!(cfg.model.stage1.width_multiplier, 0.25);
        assert_eq!(cfg.model.stage2.width_multiplier, 1.0);
    }

    #[test]
    fn bad_refine_string_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[eval]\nrefine = \"sharpen\"\n").unwrap();
        assert!(load_config(&path).is_err());
    }
}
