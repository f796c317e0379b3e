//! Run configuration: one JSON file covering every stage. Unknown keys are
//! rejected; missing keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use connectome_core::models::{ridge_alpha_grid, svm_beta_grid, CnnConfig, Family, FcnConfig};
use connectome_core::preprocess::PreprocessConfig;
use connectome_core::saliency::ScoreMode;
use connectome_core::synthgen::SynthSpec;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    /// Raw dataset manifest for `preprocess`; defaults to `<out>/synth/manifest.json`.
    pub manifest: Option<PathBuf>,
    /// Atlas CVOL files; defaults to every `.cvol` in `<out>/synth/atlases`.
    pub atlases: Vec<PathBuf>,
    /// Output root of a separately processed held-out dataset, for `test`.
    pub test_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub families: Vec<Family>,
    pub cnn: CnnConfig,
    pub fcn: FcnConfig,
    pub ridge: GridConfig,
    pub svm_l2: GridConfig,
    pub svm_l1: GridConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            families: vec![Family::Cnn, Family::Fcn, Family::Ridge, Family::SvmL2, Family::SvmL1],
            cnn: CnnConfig::default(),
            fcn: FcnConfig::default(),
            ridge: GridConfig { values: ridge_alpha_grid() },
            svm_l2: GridConfig { values: svm_beta_grid() },
            svm_l1: GridConfig { values: svm_beta_grid() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStrategy {
    /// Balance labels across folds.
    #[default]
    Stratified,
    /// Balance (site, label) strata across folds.
    SiteStratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub folds: usize,
    pub strategy: FoldStrategy,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { folds: 10, strategy: FoldStrategy::Stratified }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyConfig {
    pub mode: ScoreMode,
    pub top_k: usize,
    /// Also write a max-normalized copy of each group map.
    pub max_normalize: bool,
    /// Zero saliency outside the atlas mask.
    pub apply_mask: bool,
    /// Write every per-subject map, not just the group average.
    pub per_subject: bool,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig { mode: ScoreMode::Logit, top_k: 20, max_normalize: false, apply_mask: true, per_subject: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every random stream in the pipeline derives from it.
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    pub out_dir: Option<PathBuf>,
    pub inputs: InputsConfig,
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    pub models: ModelsConfig,
    pub evaluation: EvaluationConfig,
    pub saliency: SaliencyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            precision: Precision::F32,
            out_dir: None,
            inputs: InputsConfig::default(),
            synth: SynthSpec::default(),
            preprocess: PreprocessConfig::default(),
            models: ModelsConfig::default(),
            evaluation: EvaluationConfig::default(),
            saliency: SaliencyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if self.evaluation.folds < 2 {
            return bad(format!("evaluation.folds must be >= 2, got {}", self.evaluation.folds));
        }
        if self.models.families.is_empty() {
            return bad("models.families is empty".into());
        }
        self.synth.validate()?;
        if !(self.preprocess.fd_threshold_mm > 0.0) {
            return bad("preprocess.fd_threshold_mm must be > 0".into());
        }
        if let Some(b) = &self.preprocess.bandpass {
            if !(b.lo_hz >= 0.0 && b.lo_hz < b.hi_hz) {
                return bad(format!("preprocess.bandpass needs 0 <= lo < hi, got {} and {}", b.lo_hz, b.hi_hz));
            }
        }
        self.models.cnn.train.validate()?;
        self.models.fcn.train.validate()?;
        for (name, g) in [("ridge", &self.models.ridge), ("svm_l2", &self.models.svm_l2), ("svm_l1", &self.models.svm_l1)] {
            if g.values.is_empty() || g.values.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("models.{name}.values must be a nonempty list of positive numbers"));
            }
        }
        if self.models.fcn.dropout < 0.0 || self.models.fcn.dropout >= 1.0 || self.models.cnn.dropout < 0.0 || self.models.cnn.dropout >= 1.0 {
            return bad("dropout rates must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn grid(&self, family: Family) -> &[f64] {
        match family {
            Family::Ridge => &self.models.ridge.values,
            Family::SvmL2 => &self.models.svm_l2.values,
            Family::SvmL1 => &self.models.svm_l1.values,
            Family::Cnn | Family::Fcn => &[],
        }
    }
}
