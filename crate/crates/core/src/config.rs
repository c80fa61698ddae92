//! Run configuration: one TOML document with a section per module, every
//! field defaulted, unknown keys rejected. Environment variables named
//! `GRASPFORGE_<SECTION>__<KEY>` override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ExtentMode, HogConfig, SvmConfig};
use crate::collect::CollectConfig;
use crate::curriculum::StageConfig;
use crate::eval::{ClutterConfig, RerankConfig};
use crate::learner::{Arch, PretrainConfig, TrainConfig};
use crate::patch::{AugmentConfig, PatchConfig};
use crate::scene::{GripperSpec, RenderStyle, ShapeLibraryConfig, Workspace};

pub const ENV_PREFIX: &str = "GRASPFORGE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Standard deviation of the initial head weights.
    pub head_init_std: f64,
    /// Initialise the convolutions from the auxiliary shape task.
    pub pretrained: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::default(),
            head_init_std: 0.01,
            pretrained: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicGrid {
    /// Parameters of the fixed-rule variants.
    pub angle_threshold_deg: f64,
    pub limit_factor: f64,
    /// Grids searched by the optimistic variant.
    pub thresholds_deg: Vec<f64>,
    /// Extent limits as multiples of the minimum closing width in patch
    /// pixels.
    pub limit_factors: Vec<f64>,
    pub mode: ExtentMode,
}

impl Default for HeuristicGrid {
    fn default() -> Self {
        Self {
            angle_threshold_deg: 10.0,
            limit_factor: 1.0,
            thresholds_deg: (1..=18).map(|i| 5.0 * i as f64).collect(),
            limit_factors: (0..=12).map(|i| 0.25 * i as f64).collect(),
            mode: ExtentMode::Extent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Random interactions collected on held-out objects.
    pub test_interactions: usize,
    pub balanced: bool,
    pub threshold: f64,
    pub hog: HogConfig,
    pub svm: SvmConfig,
    pub knn_ks: Vec<usize>,
    pub heuristic: HeuristicGrid,
    pub rerank: RerankConfig,
    /// Executed grasps per grasp-rate measurement.
    pub rate_tries: usize,
    /// Execution noise used when comparing re-ranking to arg-max.
    pub rerank_jitter_mm: f64,
    pub clutter: ClutterConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_interactions: 6000,
            balanced: true,
            threshold: 0.5,
            hog: HogConfig::default(),
            svm: SvmConfig::default(),
            knn_ks: (0..25).map(|i| 2 * i + 1).collect(),
            heuristic: HeuristicGrid::default(),
            rerank: RerankConfig::default(),
            rate_tries: 500,
            rerank_jitter_mm: 2.0,
            clutter: ClutterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Random-trial counts of the data-size curve.
    pub sizes: Vec<usize>,
    /// Independent seeds per comparison.
    pub replicates: usize,
    /// Stages of the staging comparison.
    pub stages: u32,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 5000, 10000],
            replicates: 3,
            stages: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub workspace: Workspace,
    pub gripper: GripperSpec,
    pub render: RenderStyle,
    pub library: ShapeLibraryConfig,
    pub collect: CollectConfig,
    pub patch: PatchConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    /// Stage-0 schedule phases, run in order.
    pub train: Vec<TrainConfig>,
    pub pretrain: PretrainConfig,
    pub stage: StageConfig,
    /// Number of staged rounds after stage 0.
    pub stages: u32,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            workers: 0,
            workspace: Workspace::default(),
            gripper: GripperSpec::default(),
            render: RenderStyle::default(),
            library: ShapeLibraryConfig::default(),
            collect: CollectConfig::default(),
            patch: PatchConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            train: vec![TrainConfig::stage0()],
            pretrain: PretrainConfig::default(),
            stage: StageConfig::default(),
            stages: 1,
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn invalid(key: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.to_string(),
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, var: &str, raw: &str) -> Result<(), ConfigError> {
    let path: Vec<String> = var[ENV_PREFIX.len()..]
        .split("__")
        .map(|p| p.to_ascii_lowercase())
        .collect();
    let key = path.join(".");
    if path.iter().any(|p| p.is_empty()) {
        return Err(invalid(&key, format!("malformed override variable {var}")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(&key, format!("`{p}` is not a section (from {var})")))?;
    }
    t.insert(last.clone(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    /// Parses `text`, then applies `overrides` (environment-style
    /// `GRASPFORGE_...` name/value pairs, other names ignored).
    pub fn from_toml_with<I>(text: &str, overrides: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut vars: Vec<(String, String)> = overrides
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (k, v) in &vars {
            apply_override(&mut table, k, v)?;
        }
        // re-render so type errors point at a line with the key
        let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, std::iter::empty())
    }

    /// Reads a config file with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_with(&text, std::env::vars())
    }

    /// Defaults plus environment overrides.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_toml_with("", std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workspace.validate().map_err(|e| invalid("workspace", e))?;
        self.gripper.validate().map_err(|e| invalid("gripper", e))?;
        self.collect.validate().map_err(|e| invalid("collect", e))?;
        self.model.arch.validate().map_err(|e| invalid("model.arch", e))?;
        if self.model.arch.input_side != self.patch.input_side {
            return Err(invalid("model.arch.input_side", "must equal patch.input_side"));
        }
        if self.model.arch.groups != crate::patch::N_BINS || self.model.arch.classes != 2 {
            return Err(invalid("model.arch", "grasp heads must be 18 groups of 2 classes"));
        }
        if !(self.model.head_init_std >= 0.0) {
            return Err(invalid("model.head_init_std", "must be non-negative"));
        }
        if self.train.is_empty() {
            return Err(invalid("train", "needs at least one schedule phase"));
        }
        for t in &self.train {
            t.validate().map_err(|e| invalid("train", e))?;
        }
        self.stage.validate().map_err(|e| invalid("stage", e))?;
        self.stage
            .schedule
            .validate()
            .map_err(|e| invalid("stage.schedule", e))?;
        if self.patch.input_side == 0 || !(self.patch.context_scale > 0.0) {
            return Err(invalid("patch", "input_side and context_scale must be positive"));
        }
        if self.augment.copies > crate::patch::MAX_ALIGNED_COPIES {
            return Err(invalid(
                "augment.copies",
                format!("at most {} distinct rotations exist", crate::patch::MAX_ALIGNED_COPIES),
            ));
        }
        if self.pretrain.batch_size == 0 {
            return Err(invalid("pretrain.batch_size", "must be at least 1"));
        }
        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err(invalid("eval.threshold", "must be in [0, 1]"));
        }
        if e.knn_ks.is_empty() || e.knn_ks.contains(&0) {
            return Err(invalid("eval.knn_ks", "needs positive values"));
        }
        if e.heuristic.thresholds_deg.is_empty() || e.heuristic.limit_factors.is_empty() {
            return Err(invalid("eval.heuristic", "grids must be non-empty"));
        }
        if e.hog.cell_size == 0 || e.hog.orientation_bins == 0 || self.patch.input_side / e.hog.cell_size.max(1) < 2 {
            return Err(invalid("eval.hog", "cells must tile the patch at least 2×2"));
        }
        if self.patch.input_side % e.hog.cell_size != 0 {
            return Err(invalid("eval.hog.cell_size", "must divide patch.input_side"));
        }
        if e.svm.c_grid.is_empty() || e.svm.c_grid.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid("eval.svm.c_grid", "needs positive values"));
        }
        if !(0.0..1.0).contains(&e.svm.validation_fraction) {
            return Err(invalid("eval.svm.validation_fraction", "must be in [0, 1)"));
        }
        if e.rerank.top_k == 0 || e.rerank.n_patches == 0 {
            return Err(invalid("eval.rerank", "top_k and n_patches must be at least 1"));
        }
        if !(e.rerank.radius_mm >= 0.0) || !(e.rerank_jitter_mm >= 0.0) {
            return Err(invalid("eval.rerank", "radius and jitter must be non-negative"));
        }
        if e.clutter.objects == 0 || e.clutter.max_interactions == 0 {
            return Err(invalid("eval.clutter", "objects and max_interactions must be positive"));
        }
        if self.ablation.sizes.contains(&0) {
            return Err(invalid("ablation.sizes", "sizes must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml("[collect]\ntrails = 5\n").unwrap_err().to_string();
        assert!(e.contains("trails"), "{e}");
    }

    #[test]
    fn invalid_value_is_named() {
        let e = RunConfig::from_toml("[stage]\ngamma = 0\n").unwrap_err();
        assert!(
            matches!(e, ConfigError::Invalid { ref key, .. } if key == "stage"),
            "{e}"
        );
        assert!(e.to_string().contains("gamma"));
    }

    #[test]
    fn env_overrides_apply_in_sections() {
        let vars = vec![
            ("GRASPFORGE_SEED".to_string(), "99".to_string()),
            ("GRASPFORGE_COLLECT__TRIALS".to_string(), "123".to_string()),
            ("GRASPFORGE_EVAL__RERANK__TOP_K".to_string(), "3".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = RunConfig::from_toml_with("[collect]\ntrials = 5\n", vars).unwrap();
        assert_eq!((c.seed, c.collect.trials, c.eval.rerank.top_k), (99, 123, 3));
        let bad = vec![("GRASPFORGE_COLLECT__NOPE".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml_with("", bad)
            .unwrap_err()
            .to_string()
            .contains("nope"));
    }
}
