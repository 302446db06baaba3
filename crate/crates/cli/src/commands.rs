use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use indfair::dataset::{dataset_from_raw, fit_preprocess, three_way_split, RawTable, Role};
use indfair::fair_metric::{learn_sensitive_subspace, save_metric};
use indfair::fairness_eval::{
    auc_trapezoid, concordance_auc, default_epsilon_grid, group_metrics_from_scores, ifm_from_labels,
    lipschitz_from_proba, roc_points, GroupMetricTable, IfmCurve, LipschitzAudit,
};
use indfair::ifgb::train_ifgb;
use indfair::io::{file_sha256, rows_sha256, sha256_hex, write_atomic, write_json, write_jsonl};
use indfair::models::{
    labels_from_proba, load_model, predict_proba, save_model, train_boosted, train_smooth, ModelRecord,
    ProbabilisticClassifier, SavedModel,
};
use indfair::sensr::train_sensr;
use indfair::synthetic::{credit_like, SyntheticSpec};
use indfair::Error;
use serde::Serialize;

use crate::artifacts::{
    intersects, occupied, role_name, Layout, Metric, MetricReport, SourceInfo, Split, SplitFile, ROW_ID,
};
use crate::config::RunConfig;
use crate::{CliError, Method};

fn refuse_unless(force: bool, path: &Path) -> Result<(), CliError> {
    if !force && occupied(path) {
        return Err(CliError::Refused(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn json_sha256<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(sha256_hex(&serde_json::to_vec(value).map_err(Error::from)?))
}

/// Splits the source CSV into the three partitions and fits preprocessing on
/// main_train.
pub fn split(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<String, CliError> {
    refuse_unless(force, &layout.split_dir())?;
    let raw = RawTable::read(&cfg.data.path)?;
    if raw.headers.iter().any(|h| h == ROW_ID) && cfg.data.id_col.as_deref() != Some(ROW_ID) {
        return Err(Error::Schema(format!("source column '{ROW_ID}' is reserved for row ids")).into());
    }
    let ds = dataset_from_raw(&raw, &cfg.data.csv_options())?;

    // row id -> source record
    let record_of: HashMap<usize, usize> = match cfg.data.id_col.as_deref() {
        None => ds.row_ids().iter().map(|&i| (i, i)).collect(),
        Some(col) => {
            let c = raw.column(col)?;
            let mut map = HashMap::new();
            for (r, rec) in raw.records.iter().enumerate() {
                if let Ok(id) = rec[c].parse::<usize>() {
                    if map.insert(id, r).is_some() {
                        return Err(Error::DataAtRow { row: r, message: format!("duplicate row id {id}") }.into());
                    }
                }
            }
            map
        }
    };

    let split = three_way_split(&ds, &cfg.split)?;
    let recipe = fit_preprocess(&split.main_train)?;
    for w in &recipe.warnings {
        log::warn!("preprocess: {w}");
    }

    let sensitive = cfg.data.sensitive_col.clone().expect("validated");
    let m = &split.manifest;
    let mut files = BTreeMap::new();
    let mut rows = BTreeMap::new();
    for (role, ids) in [(Role::MetricTrain, &m.metric_train), (Role::MainTrain, &m.main_train), (Role::Test, &m.test)] {
        let mut drop: Vec<&str> = cfg.data.id_col.iter().map(String::as_str).collect();
        if role == Role::MainTrain {
            drop.push(&sensitive);
        }
        let table = partition_table(&raw, ids, &record_of, &drop);
        let bytes = table.to_csv_bytes()?;
        let path = layout.split_csv(role);
        write_atomic(&path, &bytes)?;
        files.insert(format!("{}.csv", role_name(role)), sha256_hex(&bytes));
        rows.insert(role_name(role).to_string(), rows_sha256(ids));
    }
    write_json(&layout.preprocess(), &recipe)?;
    files.insert("preprocess.json".into(), file_sha256(&layout.preprocess())?);

    let file = SplitFile {
        manifest: m.clone(),
        source: SourceInfo {
            file_name: cfg.data.path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            sha256: file_sha256(&cfg.data.path)?,
            records: raw.records.len(),
            complete_rows: ds.n_rows(),
        },
        label_col: cfg.data.label_col.clone(),
        sensitive_col: sensitive,
        rows_sha256: rows,
        files_sha256: files,
    };
    write_json(&layout.manifest(), &file)?;
    Ok(format!(
        "split {} rows: metric_train {}, main_train {}, test {}",
        m.n_rows,
        m.metric_train.len(),
        m.main_train.len(),
        m.test.len()
    ))
}

fn partition_table(raw: &RawTable, ids: &[usize], record_of: &HashMap<usize, usize>, drop: &[&str]) -> RawTable {
    let keep: Vec<usize> = (0..raw.headers.len()).filter(|&c| !drop.contains(&raw.headers[c].as_str())).collect();
    let mut headers = vec![ROW_ID.to_string()];
    headers.extend(keep.iter().map(|&c| raw.headers[c].clone()));
    let records = ids
        .iter()
        .map(|id| {
            let rec = &raw.records[record_of[id]];
            let mut out = vec![id.to_string()];
            out.extend(keep.iter().map(|&c| rec[c].clone()));
            out
        })
        .collect();
    RawTable { headers, records }
}

pub fn learn_metric(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<String, CliError> {
    refuse_unless(force, &layout.metric_dir())?;
    let split = Split::load(layout)?;
    let ds = split.dataset(Role::MetricTrain)?;
    let (metric, report) = learn_sensitive_subspace(&ds, &cfg.metric)?;
    for w in &report.warnings {
        log::warn!("metric: {w}");
    }
    let rows = split.ids(Role::MetricTrain).to_vec();
    let provenance = BTreeMap::from([
        ("split_manifest_sha256".to_string(), split.manifest_sha256.clone()),
        ("metric_train_rows_sha256".to_string(), rows_sha256(&rows)),
        ("metric_train_csv_sha256".to_string(), split.file_sha256("metric_train.csv")),
        ("preprocess_sha256".to_string(), split.file_sha256("preprocess.json")),
        ("options_sha256".to_string(), json_sha256(&cfg.metric)?),
    ]);
    save_metric(&metric, &layout.metric(), &provenance)?;
    let out = MetricReport {
        report: report.clone(),
        options: cfg.metric.clone(),
        metric_sha256: file_sha256(&layout.metric())?,
        split_manifest_sha256: split.manifest_sha256.clone(),
        metric_train_rows: rows,
    };
    write_json(&layout.fit_report(), &out)?;
    Ok(format!(
        "learned a {}-dimensional sensitive subspace (holdout accuracy {:.4}, default epsilon {:.6})",
        report.subspace_dim, report.holdout_accuracy, report.epsilon_default
    ))
}

pub fn train(cfg: &RunConfig, layout: &Layout, method: Method, force: bool) -> Result<String, CliError> {
    let name = method.name();
    refuse_unless(force, &layout.model(name))?;
    let split = Split::load(layout)?;
    let mut ds = split.dataset(Role::MainTrain)?;
    if cfg.preprocess.balance_labels {
        ds = ds.balance_labels(cfg.preprocess.balance_seed);
    }
    let train_ids = ds.row_ids().to_vec();
    let mut provenance = BTreeMap::from([
        ("split_manifest_sha256".to_string(), split.manifest_sha256.clone()),
        ("main_train_csv_sha256".to_string(), split.file_sha256("main_train.csv")),
        ("preprocess_sha256".to_string(), split.file_sha256("preprocess.json")),
        ("train_rows_sha256".to_string(), rows_sha256(&train_ids)),
        ("train_rows".to_string(), train_ids.len().to_string()),
    ]);
    if cfg.preprocess.balance_labels {
        provenance.insert("balance_seed".into(), cfg.preprocess.balance_seed.to_string());
    }
    let metric = if method.is_fair() {
        let m = Metric::load(layout, &split, &train_ids)?;
        provenance.insert("metric_sha256".into(), m.sha256.clone());
        provenance.insert("metric_train_rows_sha256".into(), rows_sha256(&m.rows));
        Some(m)
    } else {
        None
    };

    let (model, config, log_lines) = match method {
        Method::BaselineNn => {
            let fit = train_smooth(&ds, &cfg.baseline_nn)?;
            (SavedModel::Network(fit.model), to_value(&cfg.baseline_nn)?, lines(&fit.log)?)
        }
        Method::Sensr => {
            let fit = train_sensr(&ds, &metric.as_ref().expect("fair").metric, &cfg.sensr)?;
            (SavedModel::Network(fit.model), to_value(&cfg.sensr)?, lines(&fit.log)?)
        }
        Method::BaselineGbt => {
            let fit = train_boosted(&ds, &cfg.baseline_gbt, None)?;
            fit.warnings.iter().for_each(|w| log::warn!("{name}: {w}"));
            (SavedModel::Ensemble(fit.model), to_value(&cfg.baseline_gbt)?, lines(&fit.log)?)
        }
        Method::Ifgb => {
            let fit = train_ifgb(&ds, &metric.as_ref().expect("fair").metric, &cfg.ifgb)?;
            fit.warnings.iter().for_each(|w| log::warn!("{name}: {w}"));
            (SavedModel::Ensemble(fit.model), to_value(&cfg.ifgb)?, lines(&fit.log)?)
        }
    };
    provenance.insert("config_sha256".into(), json_sha256(&config)?);
    let record = ModelRecord { method: name.to_string(), model, config, provenance };
    save_model(&record, &layout.model(name))?;
    write_jsonl(&layout.model_log(name), &log_lines)?;
    Ok(format!("trained {name} on {} rows", train_ids.len()))
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| Error::from(e).into())
}

fn lines<T: Serialize>(log: &[T]) -> Result<Vec<serde_json::Value>, CliError> {
    log.iter().map(to_value).collect()
}

#[derive(Serialize)]
struct ModelReport {
    name: String,
    method: String,
    model_sha256: String,
    accuracy: f64,
    auc_concordance: Option<f64>,
    auc_trapezoid: f64,
    group_metrics: GroupMetricTable,
    ifm: IfmCurve,
    lipschitz: LipschitzAudit,
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Report {
    epsilons: Vec<f64>,
    n_test: usize,
    audit: crate::config::AuditConfig,
    inputs: BTreeMap<String, String>,
    models: Vec<ModelReport>,
}

/// Resolves `--models` arguments: existing paths are used as given, other
/// values name a model under `models/`. Without arguments every model in
/// `models/` is evaluated.
fn model_paths(layout: &Layout, args: &[String]) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut paths: Vec<PathBuf> = if args.is_empty() {
        let dir = layout.models_dir();
        let entries = std::fs::read_dir(&dir)
            .map_err(|_| CliError::Missing(format!("no models in {}; run `train` first", dir.display())))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        found.sort();
        found
    } else {
        args.iter()
            .map(|a| {
                let p = PathBuf::from(a);
                if p.is_file() { p } else { layout.model(a) }
            })
            .collect()
    };
    if paths.is_empty() {
        return Err(CliError::Missing("no models to evaluate".into()));
    }
    let mut seen = BTreeMap::new();
    for p in paths.drain(..) {
        if !p.is_file() {
            return Err(CliError::Missing(format!("model file {} not found", p.display())));
        }
        let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if seen.insert(name.clone(), p).is_some() {
            return Err(CliError::Config(format!("two models share the name '{name}'")));
        }
    }
    Ok(seen.into_iter().collect())
}

/// Re-derives a model's training rows and checks them against its
/// provenance, the split and (for fair models) the metric rows.
fn verify_isolation(record: &ModelRecord, name: &str, split: &Split, metric: &Metric) -> Result<(), CliError> {
    let p = &record.provenance;
    let get = |k: &str| {
        p.get(k)
            .cloned()
            .ok_or_else(|| CliError::from(Error::Integrity(format!("model '{name}' has no provenance entry '{k}'"))))
    };
    if get("split_manifest_sha256")? != split.manifest_sha256 {
        return Err(Error::Integrity(format!("model '{name}' was trained on a different split")).into());
    }
    let mut train_ids = split.ids(Role::MainTrain).to_vec();
    if let Some(seed) = p.get("balance_seed") {
        let seed = seed
            .parse()
            .map_err(|_| Error::Integrity(format!("model '{name}' has a malformed balance seed")))?;
        train_ids = split.dataset(Role::MainTrain)?.balance_labels(seed).row_ids().to_vec();
    }
    if get("train_rows_sha256")? != rows_sha256(&train_ids) {
        return Err(Error::Integrity(format!("model '{name}' training rows do not match main_train")).into());
    }
    if intersects(&train_ids, split.ids(Role::Test)) {
        return Err(Error::Isolation(format!("model '{name}' was trained on test rows")).into());
    }
    if p.contains_key("metric_sha256") {
        if get("metric_sha256")? != metric.sha256 || get("metric_train_rows_sha256")? != rows_sha256(&metric.rows) {
            return Err(Error::Integrity(format!("model '{name}' was trained with a different metric")).into());
        }
        if intersects(&train_ids, &metric.rows) {
            return Err(Error::Isolation(format!("model '{name}' shares training rows with its metric")).into());
        }
    }
    Ok(())
}

fn float_csv(header: &str, rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn evaluate(cfg: &RunConfig, layout: &Layout, models: &[String], force: bool) -> Result<String, CliError> {
    let dir = layout.eval_dir();
    refuse_unless(force, &dir)?;
    let split = Split::load(layout)?;
    let test = split.dataset(Role::Test)?;
    let metric = Metric::load(layout, &split, split.ids(Role::MainTrain))?;
    let a = &cfg.audit;
    let grid = match &a.epsilons {
        Some(g) => g.clone(),
        None => default_epsilon_grid(&metric.metric, &test, a.grid_size, a.pair_budget, a.seed)?,
    };
    let sens = test.sensitive().ok_or_else(|| Error::Schema("test split lacks the sensitive column".into()))?;
    let groups: Vec<&str> = (0..test.n_rows()).map(|i| sens.label_of(i)).collect();

    let mut reports = Vec::new();
    let mut csvs = Vec::new();
    for (name, path) in model_paths(layout, models)? {
        let record = load_model(&path)?;
        verify_isolation(&record, &name, &split, &metric)?;
        let model = &record.model;
        if model.feature_names() != test.feature_names() {
            return Err(Error::Schema(format!("model '{name}' features do not match the test split")).into());
        }
        let proba = predict_proba(model, test.features())?;
        let predicted = labels_from_proba(&proba, a.threshold);
        let correct = predicted.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
        let roc = roc_points(&proba, test.labels(), a.roc_thresholds.unwrap_or(usize::MAX))?;
        let ifm = ifm_from_labels(&predicted, &metric.metric, &test, &grid, a.pair_budget, a.seed)?;
        let lipschitz = lipschitz_from_proba(&proba, &metric.metric, &test, a.lipschitz_constant, a.pair_budget, a.seed)?;
        csvs.push((
            format!("roc_{name}.csv"),
            float_csv("fpr,tpr", roc.iter().map(|(f, t)| vec![f.to_string(), t.to_string()])),
        ));
        csvs.push((
            format!("ifm_{name}.csv"),
            float_csv(
                "epsilon,ifm,pairs,agree",
                (0..grid.len()).map(|k| {
                    vec![
                        ifm.epsilons[k].to_string(),
                        ifm.ifm[k].map(|v| v.to_string()).unwrap_or_default(),
                        ifm.pair_counts[k].to_string(),
                        ifm.agree_counts[k].to_string(),
                    ]
                }),
            ),
        ));
        reports.push(ModelReport {
            method: record.method.clone(),
            model_sha256: file_sha256(&path)?,
            accuracy: correct as f64 / test.n_rows() as f64,
            auc_concordance: concordance_auc(&proba, test.labels()),
            auc_trapezoid: auc_trapezoid(&roc),
            group_metrics: group_metrics_from_scores(&proba, test.labels(), &groups, a.threshold, &a.reference_group)?,
            ifm,
            lipschitz,
            provenance: record.provenance.clone(),
            name,
        });
    }

    if force && dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot clear {}: {e}", dir.display())))?;
    }
    for (file, bytes) in &csvs {
        write_atomic(&dir.join(file), bytes)?;
    }
    let report = Report {
        epsilons: grid,
        n_test: test.n_rows(),
        audit: a.clone(),
        inputs: BTreeMap::from([
            ("split_manifest_sha256".to_string(), split.manifest_sha256.clone()),
            ("test_csv_sha256".to_string(), split.file_sha256("test.csv")),
            ("preprocess_sha256".to_string(), split.file_sha256("preprocess.json")),
            ("metric_sha256".to_string(), metric.sha256.clone()),
        ]),
        models: reports,
    };
    write_json(&dir.join("report.json"), &report)?;
    let names: Vec<&str> = report.models.iter().map(|m| m.name.as_str()).collect();
    Ok(format!("evaluated {} on {} test rows", names.join(", "), report.n_test))
}

pub fn synth(out: &Path, rows: usize, seed: Option<u64>, force: bool) -> Result<String, CliError> {
    refuse_unless(force, out)?;
    let mut spec = SyntheticSpec { n_rows: rows, ..SyntheticSpec::default() };
    if let Some(s) = seed {
        spec.seed = s;
    }
    write_atomic(out, &credit_like(&spec).to_csv_bytes()?)?;
    Ok(format!("wrote {rows} synthetic rows to {}", out.display()))
}
