//! Tabular credit data: CSV ingestion, preprocessing and the three-way split
//! that keeps sensitive attributes away from classifier training.
//!
//! A [`TabularDataset`] is immutable once built. The sensitive column is
//! never part of the feature matrix; it lives in a separate [`Sensitive`]
//! block that is dropped whenever a dataset takes the
//! [`Role::MainTrain`] role.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens treated as a missing cell.
const MISSING_TOKENS: [&str; 6] = ["", "NA", "N/A", "NaN", "nan", "null"];

/// Position of a dataset in the two-step pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MetricTrain,
    MainTrain,
    Test,
    Unsplit,
}

/// Raw type of a feature column before preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Values are stored as codes into `categories` (sorted).
    Categorical { categories: Vec<String> },
}

/// Categorical sensitive attribute, stored apart from the features.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitive {
    pub name: String,
    /// Sorted distinct category labels.
    pub categories: Vec<String>,
    /// Per-row index into `categories`.
    pub codes: Vec<usize>,
}

impl Sensitive {
    pub fn from_values<S: AsRef<str>>(name: &str, values: &[S]) -> Self {
        let categories: Vec<String> = values
            .iter()
            .map(|v| v.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = values
            .iter()
            .map(|v| categories.binary_search_by(|c| c.as_str().cmp(v.as_ref())).unwrap())
            .collect();
        Sensitive {
            name: name.to_string(),
            categories,
            codes,
        }
    }

    pub fn label_of(&self, row: usize) -> &str {
        &self.categories[self.codes[row]]
    }

    fn select(&self, rows: &[usize]) -> Self {
        Sensitive {
            name: self.name.clone(),
            categories: self.categories.clone(),
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabularDataset {
    features: Array2<f64>,
    feature_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
    labels: Vec<u8>,
    sensitive: Option<Sensitive>,
    role: Role,
    row_ids: Vec<usize>,
}

impl TabularDataset {
    /// Builds a dataset of numeric features with row ids `0..n` and role
    /// [`Role::Unsplit`].
    pub fn from_numeric(
        features: Array2<f64>,
        feature_names: Vec<String>,
        labels: Vec<u8>,
        sensitive: Option<Sensitive>,
    ) -> Result<Self> {
        let kinds = vec![ColumnKind::Numeric; feature_names.len()];
        let n = features.nrows();
        Self::new(
            features,
            feature_names,
            kinds,
            labels,
            sensitive,
            Role::Unsplit,
            (0..n).collect(),
        )
    }

    pub fn new(
        features: Array2<f64>,
        feature_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
        labels: Vec<u8>,
        sensitive: Option<Sensitive>,
        role: Role,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let n = features.nrows();
        Error::check_dim(features.ncols(), feature_names.len())?;
        Error::check_dim(features.ncols(), column_kinds.len())?;
        Error::check_dim(n, labels.len())?;
        Error::check_dim(n, row_ids.len())?;
        if let Some(s) = &sensitive {
            Error::check_dim(n, s.codes.len())?;
            if feature_names.iter().any(|f| f == &s.name) {
                return Err(Error::Schema(format!(
                    "sensitive column '{}' must not be a feature",
                    s.name
                )));
            }
        }
        if let Some(pos) = labels.iter().position(|&l| l > 1) {
            return Err(Error::DataAtRow {
                row: pos,
                message: "label must be 0 or 1".into(),
            });
        }
        if let Some(((r, c), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::DataAtRow {
                row: r,
                message: format!("non-finite value in column '{}'", feature_names[c]),
            });
        }
        let sensitive = if role == Role::MainTrain { None } else { sensitive };
        Ok(TabularDataset {
            features,
            feature_names,
            column_kinds,
            labels,
            sensitive,
            role,
            row_ids,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> Option<&Sensitive> {
        self.sensitive.as_ref()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Original row identifiers (positions in the source file unless an id
    /// column was given).
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Copy of the dataset with a new role. Taking [`Role::MainTrain`]
    /// purges the sensitive block.
    pub fn with_role(&self, role: Role) -> Self {
        let mut out = self.clone();
        out.role = role;
        if role == Role::MainTrain {
            out.sensitive = None;
        }
        out
    }

    pub fn without_sensitive(&self) -> Self {
        let mut out = self.clone();
        out.sensitive = None;
        out
    }

    /// Rows at the given positions, under `role`.
    pub fn select_rows(&self, positions: &[usize], role: Role) -> Self {
        let features = self.features.select(ndarray::Axis(0), positions);
        let sensitive = match role {
            Role::MainTrain => None,
            _ => self.sensitive.as_ref().map(|s| s.select(positions)),
        };
        TabularDataset {
            features,
            feature_names: self.feature_names.clone(),
            column_kinds: self.column_kinds.clone(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            sensitive,
            role,
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
        }
    }

    /// Downsamples the majority label to the minority count. Row order is
    /// preserved.
    pub fn balance_labels(&self, seed: u64) -> Self {
        let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let keep = by_class[0].len().min(by_class[1].len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept: Vec<usize> = Vec::with_capacity(2 * keep);
        for class in by_class.iter_mut() {
            class.shuffle(&mut rng);
            kept.extend_from_slice(&class[..keep]);
        }
        kept.sort_unstable();
        self.select_rows(&kept, self.role)
    }
}

/// Column-oriented raw CSV contents (all cells as strings).
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Err(Error::Data("empty file".into()));
        }
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            records.push(rec.iter().map(|c| c.trim().to_string()).collect());
        }
        if records.is_empty() {
            return Err(Error::Data("file has a header but no rows".into()));
        }
        Ok(RawTable { headers, records })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    }

    /// Records at `rows`, with `drop_cols` removed and an `id_col` column
    /// holding the row position prepended.
    pub fn subset(&self, rows: &[usize], drop_cols: &[&str], id_col: &str) -> RawTable {
        let keep: Vec<usize> = (0..self.headers.len())
            .filter(|&c| !drop_cols.contains(&self.headers[c].as_str()))
            .collect();
        let mut headers = vec![id_col.to_string()];
        headers.extend(keep.iter().map(|&c| self.headers[c].clone()));
        let records = rows
            .iter()
            .map(|&r| {
                let mut rec = vec![r.to_string()];
                rec.extend(keep.iter().map(|&c| self.records[r][c].clone()));
                rec
            })
            .collect();
        RawTable { headers, records }
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.records {
            w.write_record(r)?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
    }
}

/// Options for turning a CSV file into a [`TabularDataset`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOptions {
    pub label_col: String,
    #[serde(default)]
    pub sensitive_col: Option<String>,
    /// Column holding stable row identifiers; otherwise the data-row index.
    #[serde(default)]
    pub id_col: Option<String>,
    /// Drop rows with missing cells instead of failing.
    #[serde(default = "default_true")]
    pub drop_missing: bool,
}

fn default_true() -> bool {
    true
}

impl CsvOptions {
    pub fn new(label_col: &str, sensitive_col: Option<&str>) -> Self {
        CsvOptions {
            label_col: label_col.to_string(),
            sensitive_col: sensitive_col.map(str::to_string),
            id_col: None,
            drop_missing: true,
        }
    }
}

/// Loads a CSV with a header row. The sensitive column, if named, is moved
/// out of the features.
pub fn load_csv(path: &Path, label_col: &str, sensitive_col: Option<&str>) -> Result<TabularDataset> {
    load_csv_with(path, &CsvOptions::new(label_col, sensitive_col))
}

pub fn load_csv_with(path: &Path, opts: &CsvOptions) -> Result<TabularDataset> {
    dataset_from_raw(&RawTable::read(path)?, opts)
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell)
}

pub fn dataset_from_raw(raw: &RawTable, opts: &CsvOptions) -> Result<TabularDataset> {
    let label_idx = raw.column(&opts.label_col)?;
    let sens_idx = opts.sensitive_col.as_deref().map(|s| raw.column(s)).transpose()?;
    let id_idx = opts.id_col.as_deref().map(|s| raw.column(s)).transpose()?;
    let feature_cols: Vec<usize> = (0..raw.headers.len())
        .filter(|&c| c != label_idx && Some(c) != sens_idx && Some(c) != id_idx)
        .collect();

    let mut kept = Vec::with_capacity(raw.records.len());
    for (r, rec) in raw.records.iter().enumerate() {
        if rec.len() != raw.headers.len() {
            return Err(Error::DataAtRow {
                row: r,
                message: format!("expected {} fields, found {}", raw.headers.len(), rec.len()),
            });
        }
        let mut needed = feature_cols.iter().copied().chain([label_idx]).chain(sens_idx);
        if let Some(c) = needed.find(|&c| is_missing(&rec[c])) {
            if opts.drop_missing {
                continue;
            }
            return Err(Error::DataAtRow {
                row: r,
                message: format!("missing value in column '{}'", raw.headers[c]),
            });
        }
        kept.push(r);
    }
    if kept.is_empty() {
        return Err(Error::Data("no complete rows".into()));
    }

    let mut labels = Vec::with_capacity(kept.len());
    for &r in &kept {
        let cell = &raw.records[r][label_idx];
        let label = match cell.parse::<f64>() {
            Ok(0.0) => 0u8,
            Ok(1.0) => 1u8,
            _ => {
                return Err(Error::DataAtRow {
                    row: r,
                    message: format!("label '{cell}' is not 0 or 1"),
                })
            }
        };
        labels.push(label);
    }

    let row_ids = match id_idx {
        Some(c) => kept
            .iter()
            .map(|&r| {
                raw.records[r][c].parse::<usize>().map_err(|_| Error::DataAtRow {
                    row: r,
                    message: format!("row id '{}' is not a non-negative integer", raw.records[r][c]),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => kept.clone(),
    };

    let mut features = Array2::<f64>::zeros((kept.len(), feature_cols.len()));
    let mut kinds = Vec::with_capacity(feature_cols.len());
    for (j, &c) in feature_cols.iter().enumerate() {
        let parsed: Option<Vec<f64>> = kept
            .iter()
            .map(|&r| raw.records[r][c].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) => {
                features.column_mut(j).assign(&ndarray::Array1::from(values));
                kinds.push(ColumnKind::Numeric);
            }
            None => {
                let values: Vec<&str> = kept.iter().map(|&r| raw.records[r][c].as_str()).collect();
                let s = Sensitive::from_values("", &values);
                for (i, &code) in s.codes.iter().enumerate() {
                    features[[i, j]] = code as f64;
                }
                kinds.push(ColumnKind::Categorical {
                    categories: s.categories,
                });
            }
        }
    }

    let sensitive = sens_idx.map(|c| {
        let values: Vec<&str> = kept.iter().map(|&r| raw.records[r][c].as_str()).collect();
        Sensitive::from_values(&raw.headers[c], &values)
    });

    TabularDataset::new(
        features,
        feature_cols.iter().map(|&c| raw.headers[c].clone()).collect(),
        kinds,
        labels,
        sensitive,
        Role::Unsplit,
        row_ids,
    )
}

/// Fractions of the full dataset assigned to the metric and test splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub metric_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratify_on_label: bool,
}

impl SplitSpec {
    /// 8,501 of 52,588 records for metric learning, 20,942 for testing.
    pub const CREDIT_METRIC_FRACTION: f64 = 8_501.0 / 52_588.0;
    pub const CREDIT_TEST_FRACTION: f64 = 20_942.0 / 52_588.0;

    pub fn validate(&self) -> Result<()> {
        let in_unit = |f: f64| f > 0.0 && f < 1.0;
        if !in_unit(self.metric_fraction) || !in_unit(self.test_fraction) {
            return Err(Error::Argument(format!(
                "fractions must lie in (0, 1): metric {}, test {}",
                self.metric_fraction, self.test_fraction
            )));
        }
        if self.metric_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Argument(
                "metric_fraction + test_fraction must be below 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            metric_fraction: Self::CREDIT_METRIC_FRACTION,
            test_fraction: Self::CREDIT_TEST_FRACTION,
            seed: 0,
            stratify_on_label: true,
        }
    }
}

/// Persisted record of a split: row ids per partition, sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub metric_fraction: f64,
    pub test_fraction: f64,
    pub stratify_on_label: bool,
    pub n_rows: usize,
    pub metric_train: Vec<usize>,
    pub main_train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    /// Fails with an isolation error if metric-learning rows and classifier
    /// training rows intersect.
    pub fn check_isolation(&self) -> Result<()> {
        let metric: BTreeSet<usize> = self.metric_train.iter().copied().collect();
        let shared: Vec<usize> = self
            .main_train
            .iter()
            .copied()
            .filter(|i| metric.contains(i))
            .take(5)
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(Error::Isolation(format!(
                "metric_train and main_train share rows (first: {shared:?})"
            )))
        }
    }

    /// Pairwise disjoint and covering every row id exactly once.
    pub fn check_partition(&self) -> Result<()> {
        self.check_isolation()?;
        let mut all: Vec<usize> = self
            .metric_train
            .iter()
            .chain(&self.main_train)
            .chain(&self.test)
            .copied()
            .collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != total {
            return Err(Error::Isolation("split partitions overlap".into()));
        }
        if total != self.n_rows {
            return Err(Error::Integrity(format!(
                "split covers {total} rows, dataset has {}",
                self.n_rows
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub metric_train: TabularDataset,
    pub main_train: TabularDataset,
    pub test: TabularDataset,
    pub manifest: SplitManifest,
}

/// Largest-remainder apportionment of `total` across groups in proportion
/// to `sizes`, never exceeding `caps`.
fn apportion(total: usize, sizes: &[usize], caps: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut out: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(q, &c)| (q.floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = out.iter().sum();
    // Remainders first, then any spare capacity.
    for pass in 0..2 {
        for &g in &order {
            if assigned >= total {
                break;
            }
            let limit = if pass == 0 { out[g] + 1 } else { caps[g] };
            let add = (limit.min(caps[g]) - out[g].min(caps[g])).min(total - assigned);
            out[g] += add;
            assigned += add;
        }
    }
    out
}

/// Positions (not row ids) of each partition for `labels` under `spec`.
pub(crate) fn split_positions(labels: &[u8], spec: &SplitSpec) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let n_test = ((n as f64) * spec.test_fraction).round() as usize;
    let n_metric = (((n as f64) * spec.metric_fraction).round() as usize).min(n - n_test.min(n));
    let n_test = n_test.min(n);

    let groups: Vec<Vec<usize>> = if spec.stratify_on_label {
        (0..=1u8)
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let test_per = apportion(n_test, &sizes, &sizes);
    let left: Vec<usize> = sizes.iter().zip(&test_per).map(|(s, t)| s - t).collect();
    let metric_per = apportion(n_metric, &sizes, &left);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut metric, mut main, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (g, mut idx) in groups.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..test_per[g]]);
        metric.extend_from_slice(&idx[test_per[g]..test_per[g] + metric_per[g]]);
        main.extend_from_slice(&idx[test_per[g] + metric_per[g]..]);
    }
    metric.sort_unstable();
    main.sort_unstable();
    test.sort_unstable();
    (metric, main, test)
}

/// Splits an unsplit dataset into metric-learning, classifier-training and
/// test partitions. Only the main-train partition loses its sensitive block.
pub fn three_way_split(ds: &TabularDataset, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if ds.role() != Role::Unsplit {
        return Err(Error::Argument(format!(
            "can only split an unsplit dataset, got {:?}",
            ds.role()
        )));
    }
    if ds.sensitive().is_none() {
        return Err(Error::Schema(
            "three-way split requires a sensitive column".into(),
        ));
    }
    let (metric, main, test) = split_positions(ds.labels(), spec);
    let ids = |pos: &[usize]| pos.iter().map(|&p| ds.row_ids()[p]).collect::<Vec<_>>();
    let mut manifest = SplitManifest {
        seed: spec.seed,
        metric_fraction: spec.metric_fraction,
        test_fraction: spec.test_fraction,
        stratify_on_label: spec.stratify_on_label,
        n_rows: ds.n_rows(),
        metric_train: ids(&metric),
        main_train: ids(&main),
        test: ids(&test),
    };
    manifest.metric_train.sort_unstable();
    manifest.main_train.sort_unstable();
    manifest.test.sort_unstable();
    Ok(DatasetSplit {
        metric_train: ds.select_rows(&metric, Role::MetricTrain),
        main_train: ds.select_rows(&main, Role::MainTrain),
        test: ds.select_rows(&test, Role::Test),
        manifest,
    })
}

/// Per-column transform with its fitted statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    Standardize { mean: f64, std: f64 },
    OneHot { categories: Vec<String> },
    Passthrough,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnRecipe {
    pub name: String,
    #[serde(flatten)]
    pub transform: ColumnTransform,
}

/// Fitted preprocessing. Applying it to already-transformed data is not a
/// no-op except for passthrough columns: standardized columns get shifted
/// and scaled again, and one-hot blocks no longer match by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecipe {
    pub columns: Vec<ColumnRecipe>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Fits standardization (population std) for numeric columns and one-hot
/// encodings for categorical ones. Constant numeric columns fall back to
/// passthrough with a warning.
pub fn fit_preprocess(ds: &TabularDataset) -> Result<PreprocessRecipe> {
    if !matches!(ds.role(), Role::MetricTrain | Role::MainTrain) {
        return Err(Error::Argument(format!(
            "preprocessing must be fitted on a training split, got {:?}",
            ds.role()
        )));
    }
    let n = ds.n_rows() as f64;
    let mut columns = Vec::with_capacity(ds.n_features());
    let mut warnings = Vec::new();
    for (j, (name, kind)) in ds.feature_names().iter().zip(ds.column_kinds()).enumerate() {
        let transform = match kind {
            ColumnKind::Categorical { categories } => ColumnTransform::OneHot {
                categories: categories.clone(),
            },
            ColumnKind::Numeric => {
                let col = ds.features().column(j);
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                if std <= 1e-12 * mean.abs().max(1.0) {
                    warnings.push(format!(
                        "column '{name}' is constant on the fitting rows; passed through"
                    ));
                    ColumnTransform::Passthrough
                } else {
                    ColumnTransform::Standardize { mean, std }
                }
            }
        };
        columns.push(ColumnRecipe {
            name: name.clone(),
            transform,
        });
    }
    Ok(PreprocessRecipe { columns, warnings })
}

impl PreprocessRecipe {
    /// Names of the output features.
    pub fn output_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.columns {
            match &c.transform {
                ColumnTransform::OneHot { categories } => {
                    out.extend(categories.iter().map(|cat| format!("{}={}", c.name, cat)))
                }
                _ => out.push(c.name.clone()),
            }
        }
        out
    }

    /// Applies the recipe. Unseen categories encode as all zeros and are
    /// reported in the returned warnings.
    pub fn apply(&self, ds: &TabularDataset) -> Result<(TabularDataset, Vec<String>)> {
        if ds.feature_names().len() != self.columns.len()
            || ds.feature_names().iter().zip(&self.columns).any(|(a, b)| a != &b.name)
        {
            return Err(Error::Schema(format!(
                "dataset columns {:?} do not match recipe columns {:?}",
                ds.feature_names(),
                self.columns.iter().map(|c| &c.name).collect::<Vec<_>>()
            )));
        }
        let names = self.output_names();
        let n = ds.n_rows();
        let mut out = Array2::<f64>::zeros((n, names.len()));
        let mut warnings = Vec::new();
        let mut offset = 0;
        for (j, c) in self.columns.iter().enumerate() {
            let src = ds.features().column(j);
            match (&c.transform, &ds.column_kinds()[j]) {
                (ColumnTransform::Standardize { mean, std }, ColumnKind::Numeric) => {
                    out.column_mut(offset).assign(&src.mapv(|v| (v - mean) / std));
                    offset += 1;
                }
                (ColumnTransform::Passthrough, ColumnKind::Numeric) => {
                    out.column_mut(offset).assign(&src);
                    offset += 1;
                }
                (ColumnTransform::OneHot { categories }, ColumnKind::Categorical { categories: have }) => {
                    let lookup: BTreeMap<&str, usize> = categories
                        .iter()
                        .enumerate()
                        .map(|(k, cat)| (cat.as_str(), k))
                        .collect();
                    let mut unseen = BTreeSet::new();
                    for (i, &code) in src.iter().enumerate() {
                        let cat = have[code as usize].as_str();
                        match lookup.get(cat) {
                            Some(&k) => out[[i, offset + k]] = 1.0,
                            None => {
                                unseen.insert(cat.to_string());
                            }
                        }
                    }
                    if !unseen.is_empty() {
                        warnings.push(format!(
                            "column '{}': unseen categories {:?} encoded as all zeros",
                            c.name, unseen
                        ));
                    }
                    offset += categories.len();
                }
                (t, k) => {
                    return Err(Error::Schema(format!(
                        "column '{}': transform {t:?} cannot apply to {k:?} data",
                        c.name
                    )))
                }
            }
        }
        let ds_out = TabularDataset::new(
            out,
            names.clone(),
            vec![ColumnKind::Numeric; names.len()],
            ds.labels().to_vec(),
            ds.sensitive().cloned(),
            ds.role(),
            ds.row_ids().to_vec(),
        )?;
        Ok((ds_out, warnings))
    }
}
