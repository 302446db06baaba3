use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use indfair::dataset::{load_csv_with, CsvOptions, PreprocessRecipe, Role};
use indfair::io::read_json;
use indfair::models::{load_model, predict_proba};
use serde_json::Value;

fn indfair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indfair")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Run {
    /// Synthetic data and a small, fast config in a fresh directory.
    fn new(rows: usize, extra: Value) -> Run {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("credit.csv");
        let out = indfair(&["synth", "--rows", &rows.to_string(), "--seed", "3", "--out", data.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let mut cfg = serde_json::json!({
            "seed": 11,
            "data": {"path": "credit.csv", "label_col": "default", "sensitive_col": "SEX"},
            "output_dir": "out",
            "baseline_nn": {"epochs": 8, "hidden": [8]},
            "sensr": {"steps": 3, "train": {"epochs": 8, "hidden": [8]}},
            "baseline_gbt": {"rounds": 15},
            "ifgb": {"candidate_cap": 10, "train": {"rounds": 15}},
            "audit": {"grid_size": 5}
        });
        merge(&mut cfg, extra);
        let config = root.join("run.json");
        fs::write(&config, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        Run { config: config.to_str().unwrap().to_string(), root, _dir: dir }
    }

    fn out(&self) -> PathBuf {
        self.root.join("out")
    }

    fn cmd(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", self.config.as_str()];
        all.extend_from_slice(args);
        indfair(&all)
    }

    fn ok(&self, args: &[&str]) {
        let out = self.cmd(args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }

    fn pipeline(&self, extra: &[&str]) {
        for stage in [&["split"][..], &["learn-metric"], &["train", "--method", "baseline-nn"], &["train", "--method", "sensr"],
            &["train", "--method", "baseline-gbt"], &["train", "--method", "ifgb"], &["evaluate"]]
        {
            let mut args = stage.to_vec();
            args.extend_from_slice(extra);
            self.ok(&args);
        }
    }
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, e) => *b = e,
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn rerun_produces_byte_identical_artifacts() {
    let run = Run::new(1200, Value::Null);
    run.pipeline(&[]);
    let second = run.root.join("again");
    run.pipeline(&["--output", second.to_str().unwrap()]);
    let a = files_under(&run.out());
    let b = files_under(&second);
    assert_eq!(a.len(), 24);
    assert_eq!(a.iter().map(|p| p.strip_prefix(run.out()).unwrap()).collect::<Vec<_>>(),
        b.iter().map(|p| p.strip_prefix(&second).unwrap()).collect::<Vec<_>>());
    for (x, y) in a.iter().zip(&b) {
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn main_train_file_has_no_sensitive_column() {
    let run = Run::new(400, Value::Null);
    run.ok(&["split"]);
    let header = |f: &str| fs::read_to_string(run.out().join("split").join(f)).unwrap().lines().next().unwrap().to_string();
    assert!(!header("main_train.csv").split(',').any(|c| c == "SEX"));
    assert!(header("test.csv").split(',').any(|c| c == "SEX"));
    assert!(header("metric_train.csv").starts_with("row_id,"));
}

#[test]
fn fair_methods_need_a_metric() {
    let run = Run::new(400, Value::Null);
    run.ok(&["split"]);
    for method in ["sensr", "ifgb"] {
        let out = run.cmd(&["train", "--method", method]);
        assert_eq!(code(&out), 3);
        assert!(stderr(&out).contains("metric required"), "{}", stderr(&out));
    }
    run.ok(&["train", "--method", "baseline-gbt"]);
}

#[test]
fn tampered_manifest_is_an_isolation_violation() {
    let run = Run::new(600, Value::Null);
    run.ok(&["split"]);
    run.ok(&["learn-metric"]);
    run.ok(&["train", "--method", "sensr"]);
    let path = run.out().join("split/manifest.json");
    let mut m: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let leaked = m["manifest"]["metric_train"][0].clone();
    m["manifest"]["main_train"].as_array_mut().unwrap().push(leaked);
    fs::write(&path, serde_json::to_vec_pretty(&m).unwrap()).unwrap();

    let out = run.cmd(&["train", "--method", "ifgb"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("isolation"));
    assert_eq!(code(&run.cmd(&["evaluate"])), 4);
}

#[test]
fn existing_outputs_need_force() {
    let run = Run::new(300, Value::Null);
    run.ok(&["split"]);
    let manifest = fs::read(run.out().join("split/manifest.json")).unwrap();
    let out = run.cmd(&["split"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    run.ok(&["split", "--force"]);
    assert_eq!(fs::read(run.out().join("split/manifest.json")).unwrap(), manifest);
    // a different seed gives a different split
    run.ok(&["split", "--force", "--seed", "12"]);
    assert_ne!(fs::read(run.out().join("split/manifest.json")).unwrap(), manifest);
}

#[test]
fn ifgb_without_budget_matches_baseline_gbt() {
    let run = Run::new(800, serde_json::json!({"ifgb": {"epsilon": 0.0}}));
    run.ok(&["split"]);
    run.ok(&["learn-metric"]);
    run.ok(&["train", "--method", "baseline-gbt"]);
    run.ok(&["train", "--method", "ifgb"]);

    let split = run.out().join("split");
    let opts = CsvOptions {
        label_col: "default".into(),
        sensitive_col: Some("SEX".into()),
        id_col: Some("row_id".into()),
        drop_missing: false,
    };
    let recipe: PreprocessRecipe = read_json(&split.join("preprocess.json")).unwrap();
    let (test, _) = recipe.apply(&load_csv_with(&split.join("test.csv"), &opts).unwrap()).unwrap();
    let test = test.with_role(Role::Test);
    let base = load_model(&run.out().join("models/baseline-gbt.json")).unwrap();
    let fair = load_model(&run.out().join("models/ifgb.json")).unwrap();
    let (p, q) = (predict_proba(&base.model, test.features()).unwrap(), predict_proba(&fair.model, test.features()).unwrap());
    let max = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max <= 1e-9, "max |dp| {max}");
    assert!(fair.provenance.contains_key("metric_sha256"));
    assert!(!base.provenance.contains_key("metric_sha256"));
}

#[test]
fn report_compares_two_models_on_one_grid() {
    let run = Run::new(700, Value::Null);
    run.ok(&["split"]);
    run.ok(&["learn-metric"]);
    run.ok(&["train", "--method", "baseline-nn"]);
    run.ok(&["train", "--method", "sensr"]);
    run.ok(&["evaluate", "--models", "baseline-nn", "sensr"]);
    let report: Value = serde_json::from_slice(&fs::read(run.out().join("eval/report.json")).unwrap()).unwrap();
    let models = report["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    let grid = &report["epsilons"];
    assert_eq!(grid.as_array().unwrap().len(), 5);
    for m in models {
        assert_eq!(&m["ifm"]["epsilons"], grid);
        let diffs = m["group_metrics"]["diffs"].as_array().unwrap();
        assert_eq!((diffs[0]["reference"].as_str(), diffs[0]["other"].as_str()), (Some("M"), Some("F")));
        let groups = m["group_metrics"]["groups"].as_array().unwrap();
        let acc = |g: &str| groups.iter().find(|r| r["group"] == g).unwrap()["accuracy"].as_f64().unwrap();
        assert!((diffs[0]["accuracy"].as_f64().unwrap() - (acc("M") - acc("F"))).abs() < 1e-12);
    }
    let ifm_csv = fs::read_to_string(run.out().join("eval/ifm_sensr.csv")).unwrap();
    assert_eq!(ifm_csv.lines().count(), 6);
    assert!(run.out().join("eval/roc_baseline-nn.csv").is_file());
    assert!(!run.out().join("eval/roc_ifgb.csv").exists());
}

#[test]
fn credit_sized_split_matches_expected_counts() {
    let run = Run::new(52_588, Value::Null);
    let out = run.cmd(&["split"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = |f: &str| fs::read_to_string(run.out().join("split").join(f)).unwrap().lines().count() - 1;
    let (main, metric, test) = (rows("main_train.csv"), rows("metric_train.csv"), rows("test.csv"));
    assert!(main.abs_diff(23_145) <= 1 && metric.abs_diff(8_501) <= 1 && test.abs_diff(20_942) <= 1,
        "{main}/{metric}/{test}");
}

#[test]
fn config_and_data_errors_have_distinct_exit_codes() {
    let run = Run::new(200, serde_json::json!({"sensr": {"stepz": 1}}));
    let out = run.cmd(&["split"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stepz"));

    let missing = Run::new(200, serde_json::json!({"data": {"path": "nope.csv"}}));
    assert_eq!(code(&missing.cmd(&["split"])), 3);

    let no_label = Run::new(200, serde_json::json!({"data": {"label_col": "absent"}}));
    assert_eq!(code(&no_label.cmd(&["split"])), 3);

    assert_eq!(code(&indfair(&["split"])), 2);
}
