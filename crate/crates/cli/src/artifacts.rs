//! On-disk layout of a run and the cross-checks between its artifacts.
//!
//! ```text
//! <out>/split/{manifest.json, metric_train.csv, main_train.csv, test.csv, preprocess.json}
//! <out>/metric/{metric.json, fit_report.json}
//! <out>/models/<method>.json, <method>.log.jsonl
//! <out>/eval/{report.json, roc_<name>.csv, ifm_<name>.csv}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use indfair::dataset::{load_csv_with, CsvOptions, PreprocessRecipe, Role, SplitManifest, TabularDataset};
use indfair::fair_metric::{load_metric, FairMetric, SubspaceFitReport, SubspaceOptions};
use indfair::io::{file_sha256, read_json, rows_sha256};
use indfair::Error;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ROW_ID: &str = "row_id";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Layout { root }
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn manifest(&self) -> PathBuf {
        self.split_dir().join("manifest.json")
    }

    pub fn split_csv(&self, role: Role) -> PathBuf {
        self.split_dir().join(format!("{}.csv", role_name(role)))
    }

    pub fn preprocess(&self) -> PathBuf {
        self.split_dir().join("preprocess.json")
    }

    pub fn metric_dir(&self) -> PathBuf {
        self.root.join("metric")
    }

    pub fn metric(&self) -> PathBuf {
        self.metric_dir().join("metric.json")
    }

    pub fn fit_report(&self) -> PathBuf {
        self.metric_dir().join("fit_report.json")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("{name}.json"))
    }

    pub fn model_log(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("{name}.log.jsonl"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

pub fn role_name(role: Role) -> &'static str {
    match role {
        Role::MetricTrain => "metric_train",
        Role::MainTrain => "main_train",
        Role::Test => "test",
        Role::Unsplit => "unsplit",
    }
}

/// `split/manifest.json`: row ids per partition plus checksums of the
/// source file and every file written next to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub manifest: SplitManifest,
    pub source: SourceInfo,
    pub label_col: String,
    pub sensitive_col: String,
    pub rows_sha256: BTreeMap<String, String>,
    pub files_sha256: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceInfo {
    pub file_name: String,
    pub sha256: String,
    pub records: usize,
    pub complete_rows: usize,
}

/// `metric/fit_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub report: SubspaceFitReport,
    pub options: SubspaceOptions,
    pub metric_sha256: String,
    pub split_manifest_sha256: String,
    /// Row ids the metric was learned from.
    pub metric_train_rows: Vec<usize>,
}

/// A verified split: the manifest passed the partition check and every file
/// it names matches its checksum.
pub struct Split {
    pub file: SplitFile,
    pub manifest_sha256: String,
    pub recipe: PreprocessRecipe,
    layout_root: PathBuf,
}

impl Split {
    pub fn load(layout: &Layout) -> Result<Self, CliError> {
        let path = layout.manifest();
        if !path.exists() {
            return Err(CliError::Missing(format!(
                "split manifest {} not found; run `split` first",
                path.display()
            )));
        }
        let file: SplitFile = read_json(&path)?;
        // Overlap is checked before checksums so a tampered manifest is
        // reported as the isolation failure it is.
        file.manifest.check_partition()?;
        for (name, expected) in &file.files_sha256 {
            let got = file_sha256(&layout.split_dir().join(name))?;
            if &got != expected {
                return Err(Error::Integrity(format!("{name} does not match the split manifest")).into());
            }
        }
        let m = &file.manifest;
        for (role, ids) in [("metric_train", &m.metric_train), ("main_train", &m.main_train), ("test", &m.test)] {
            if file.rows_sha256.get(role) != Some(&rows_sha256(ids)) {
                return Err(Error::Integrity(format!("{role} row ids do not match their recorded checksum")).into());
            }
        }
        let recipe = read_json(&layout.preprocess())?;
        Ok(Split {
            manifest_sha256: file_sha256(&path)?,
            file,
            recipe,
            layout_root: layout.root.clone(),
        })
    }

    pub fn ids(&self, role: Role) -> &[usize] {
        let m = &self.file.manifest;
        match role {
            Role::MetricTrain => &m.metric_train,
            Role::MainTrain => &m.main_train,
            Role::Test => &m.test,
            Role::Unsplit => &[],
        }
    }

    pub fn file_sha256(&self, name: &str) -> String {
        self.file.files_sha256.get(name).cloned().unwrap_or_default()
    }

    /// Loads one partition, checks its row ids against the manifest and
    /// applies the fitted preprocessing.
    pub fn dataset(&self, role: Role) -> Result<TabularDataset, CliError> {
        let layout = Layout::new(self.layout_root.clone());
        let opts = CsvOptions {
            label_col: self.file.label_col.clone(),
            sensitive_col: (role != Role::MainTrain).then(|| self.file.sensitive_col.clone()),
            id_col: Some(ROW_ID.into()),
            drop_missing: false,
        };
        let raw = load_csv_with(&layout.split_csv(role), &opts)?;
        let mut ids = raw.row_ids().to_vec();
        ids.sort_unstable();
        if ids != self.ids(role) {
            if role == Role::MainTrain && intersects(&ids, self.ids(Role::MetricTrain)) {
                return Err(Error::Isolation("main_train.csv holds metric_train rows".into()).into());
            }
            return Err(Error::Integrity(format!("{}.csv rows differ from the manifest", role_name(role))).into());
        }
        let (ds, warnings) = self.recipe.apply(&raw)?;
        for w in warnings {
            log::warn!("{}: {w}", role_name(role));
        }
        Ok(ds.with_role(role))
    }
}

pub fn intersects(a: &[usize], b: &[usize]) -> bool {
    let set: BTreeSet<usize> = a.iter().copied().collect();
    b.iter().any(|i| set.contains(i))
}

/// A learned metric whose recorded row set was checked against the split.
pub struct Metric {
    pub metric: FairMetric,
    pub sha256: String,
    pub rows: Vec<usize>,
}

impl Metric {
    /// Loads the metric for training or evaluation. Fails unless it was
    /// learned from `split` and its rows are disjoint from `train_ids`.
    pub fn load(layout: &Layout, split: &Split, train_ids: &[usize]) -> Result<Self, CliError> {
        let path = layout.metric();
        if !path.exists() {
            return Err(CliError::Missing(format!(
                "metric required: {} not found; run `learn-metric` first",
                path.display()
            )));
        }
        let (metric, provenance) = load_metric(&path)?;
        let sha256 = file_sha256(&path)?;
        let report: MetricReport = read_json(&layout.fit_report())?;
        if report.metric_sha256 != sha256 {
            return Err(Error::Integrity("fit_report.json refers to a different metric file".into()).into());
        }
        let rows_sha = rows_sha256(&report.metric_train_rows);
        if provenance.get("metric_train_rows_sha256") != Some(&rows_sha) {
            return Err(Error::Integrity("metric row set does not match its provenance".into()).into());
        }
        if intersects(&report.metric_train_rows, train_ids) {
            return Err(Error::Isolation("the metric was learned on rows used to train classifiers".into()).into());
        }
        if provenance.get("split_manifest_sha256") != Some(&split.manifest_sha256) {
            return Err(Error::Integrity("the metric was learned from a different split".into()).into());
        }
        Ok(Metric { metric, sha256, rows: report.metric_train_rows })
    }
}

/// True when the stage output at `path` would overwrite something.
pub fn occupied(path: &Path) -> bool {
    match std::fs::read_dir(path) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => path.exists(),
    }
}
