//! Run configuration: one JSON file for every stage.
//!
//! Component seeds left out of the file are derived from the global seed, so
//! a loaded config always carries explicit seeds. Relative paths resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use indfair::dataset::{CsvOptions, SplitSpec};
use indfair::fair_metric::SubspaceOptions;
use indfair::ifgb::IfgbConfig;
use indfair::models::TrainConfig;
use indfair::sensr::SensrConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub label_col: String,
    #[serde(default)]
    pub sensitive_col: Option<String>,
    #[serde(default)]
    pub id_col: Option<String>,
    #[serde(default = "yes")]
    pub drop_missing: bool,
}

fn yes() -> bool {
    true
}

impl DataConfig {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label_col: self.label_col.clone(),
            sensitive_col: self.sensitive_col.clone(),
            id_col: self.id_col.clone(),
            drop_missing: self.drop_missing,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Downsample the majority label of main_train before fitting models.
    pub balance_labels: bool,
    pub balance_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Explicit ε grid; otherwise `grid_size` points from the test split.
    pub epsilons: Option<Vec<f64>>,
    pub grid_size: usize,
    /// Pairs per audit; all pairs when absent.
    pub pair_budget: Option<u64>,
    pub lipschitz_constant: f64,
    pub threshold: f64,
    pub reference_group: String,
    /// ROC thresholds; every distinct score when absent.
    pub roc_thresholds: Option<usize>,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            epsilons: None,
            grid_size: 20,
            pair_budget: Some(indfair::fairness_eval::DEFAULT_PAIR_BUDGET),
            lipschitz_constant: 1.0,
            threshold: 0.5,
            reference_group: "M".into(),
            roc_thresholds: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub metric: SubspaceOptions,
    #[serde(default)]
    pub baseline_nn: TrainConfig,
    #[serde(default)]
    pub sensr: SensrConfig,
    #[serde(default)]
    pub baseline_gbt: TrainConfig,
    #[serde(default)]
    pub ifgb: IfgbConfig,
    #[serde(default)]
    pub audit: AuditConfig,
}

/// JSON pointers of component seeds and the offset added to the global seed
/// when one is missing. Fair models share the seed of their baseline.
const SEEDS: [(&str, u64); 8] = [
    ("/split/seed", 0),
    ("/preprocess/balance_seed", 1),
    ("/metric/seed", 2),
    ("/baseline_nn/seed", 3),
    ("/sensr/train/seed", 3),
    ("/baseline_gbt/seed", 4),
    ("/ifgb/train/seed", 4),
    ("/audit/seed", 5),
];

impl RunConfig {
    /// Parses `bytes`, resolves relative paths against `base` and fills
    /// missing seeds from the global seed (after applying `seed_override`).
    pub fn from_json(bytes: &[u8], base: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let raw: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let mut cfg: RunConfig =
            serde_json::from_value(raw.clone()).map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        for (ptr, offset) in SEEDS {
            if raw.pointer(ptr).is_none() {
                *cfg.seed_mut(ptr) = cfg.seed.wrapping_add(offset);
            }
        }
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        if let Some(out) = &cfg.output_dir {
            if out.is_relative() {
                cfg.output_dir = Some(base.join(out));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&bytes, base, seed_override)
    }

    fn seed_mut(&mut self, ptr: &str) -> &mut u64 {
        match ptr {
            "/split/seed" => &mut self.split.seed,
            "/preprocess/balance_seed" => &mut self.preprocess.balance_seed,
            "/metric/seed" => &mut self.metric.seed,
            "/baseline_nn/seed" => &mut self.baseline_nn.seed,
            "/sensr/train/seed" => &mut self.sensr.train.seed,
            "/baseline_gbt/seed" => &mut self.baseline_gbt.seed,
            "/ifgb/train/seed" => &mut self.ifgb.train.seed,
            "/audit/seed" => &mut self.audit.seed,
            _ => unreachable!("unknown seed pointer {ptr}"),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let arg = |e: indfair::Error| CliError::Config(e.to_string());
        self.split.validate().map_err(arg)?;
        self.baseline_nn.validate().map_err(arg)?;
        self.baseline_gbt.validate().map_err(arg)?;
        self.sensr.validate().map_err(arg)?;
        self.ifgb.train.validate().map_err(arg)?;
        if !(self.ifgb.epsilon >= 0.0 && self.ifgb.epsilon.is_finite()) {
            return Err(CliError::Config("ifgb epsilon must be finite and non-negative".into()));
        }
        if self.ifgb.candidate_cap == 0 {
            return Err(CliError::Config("ifgb candidate_cap must be positive".into()));
        }
        let a = &self.audit;
        if a.epsilons.is_none() && a.grid_size == 0 {
            return Err(CliError::Config("audit grid_size must be positive".into()));
        }
        if !(a.lipschitz_constant > 0.0 && a.lipschitz_constant.is_finite()) {
            return Err(CliError::Config("audit lipschitz_constant must be finite and positive".into()));
        }
        if !(a.threshold > 0.0 && a.threshold < 1.0) {
            return Err(CliError::Config("audit threshold must lie in (0, 1)".into()));
        }
        if a.roc_thresholds == Some(0) || a.pair_budget == Some(0) {
            return Err(CliError::Config("audit roc_thresholds and pair_budget must be positive".into()));
        }
        if self.data.sensitive_col.is_none() {
            return Err(CliError::Config("data.sensitive_col is required".into()));
        }
        Ok(())
    }
}
