mod common;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use indfair::dataset::{fit_preprocess, three_way_split, Role, Sensitive, SplitSpec, TabularDataset};
use indfair::fair_metric::{learn_sensitive_subspace, load_metric, save_metric, FairMetric, SubspaceOptions};
use indfair::fairness_eval::ifm;
use indfair::models::{train_smooth, SmoothClassifier, TrainConfig};
use indfair::sensr::{train_sensr, SensrConfig};
use indfair::Error;

#[test]
fn ten_row_split_example() {
    let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
    let sens = Sensitive::from_values("g", &["M", "F", "M", "F", "M", "F", "M", "F", "M", "F"]);
    let ds = TabularDataset::from_numeric(x, vec!["a".into()], vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], Some(sens)).unwrap();
    let spec = SplitSpec { metric_fraction: 0.2, test_fraction: 0.4, seed: 3, stratify_on_label: true };
    let split = three_way_split(&ds, &spec).unwrap();
    let m = &split.manifest;
    assert_eq!((m.metric_train.len(), m.main_train.len(), m.test.len()), (2, 4, 4));
    let mut all: Vec<usize> = m.metric_train.iter().chain(&m.main_train).chain(&m.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(split.metric_train.role(), Role::MetricTrain);
    assert!(split.main_train.sensitive().is_none());
    m.check_partition().unwrap();
}

#[test]
fn preprocessing_does_not_leak_test_statistics() {
    let data = common::prepare(3000, 2);
    let x = data.main_train.features();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let name = &data.main_train.feature_names()[j];
        if !name.contains('=') {
            assert!(col.mean().unwrap().abs() < 1e-9, "{name}");
            assert!((col.std(0.0) - 1.0).abs() < 1e-9, "{name}");
        }
    }
    let test_means: Vec<f64> = (0..x.ncols())
        .filter(|&j| !data.test.feature_names()[j].contains('='))
        .map(|j| data.test.features().column(j).mean().unwrap())
        .collect();
    assert!(test_means.iter().any(|m| m.abs() > 1e-6));
}

#[test]
fn metric_is_learned_only_from_the_metric_split() {
    let data = common::prepare(1000, 3);
    let err = learn_sensitive_subspace(&data.test, &SubspaceOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Isolation(_)));
    let (m, report) = learn_sensitive_subspace(&data.metric_train, &SubspaceOptions::default()).unwrap();
    assert_eq!(report.subspace_dim, 1);
    // the planted proxy dominates the sensitive direction
    let proxy = m.feature_names().iter().position(|n| n == "SPEND_PROFILE").unwrap();
    assert!(m.basis()[[0, proxy]].abs() > 0.9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metric.json");
    save_metric(&m, &path, &Default::default()).unwrap();
    let (back, _) = load_metric(&path).unwrap();
    assert_eq!(back, m);
    let p = back.projector();
    assert!((p.dot(p) - p).iter().all(|v| v.abs() <= 1e-8));
}

/// Label depends only on feature 0, which is also the sensitive direction.
fn aligned_toy(n: usize, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        y.push((a > 0.0) as u8);
    }
    TabularDataset::from_numeric(x, vec!["s".into(), "b".into()], y, None)
        .unwrap()
        .with_role(Role::MainTrain)
}

fn sensitivity(m: &SmoothClassifier, x: &Array2<f64>) -> f64 {
    let ts = [-1.0, -0.5, 0.5, 1.0];
    let mut total = 0.0;
    for row in x.rows() {
        let p0 = indfair::models::sigmoid(m.logit(row.as_slice().unwrap()));
        for t in ts {
            let mut moved = row.to_vec();
            moved[0] += t;
            total += (indfair::models::sigmoid(m.logit(&moved)) - p0).abs();
        }
    }
    total / (x.nrows() * ts.len()) as f64
}

#[test]
fn sensr_shrinks_dependence_on_the_sensitive_direction() {
    let train = aligned_toy(400, 1);
    let metric = FairMetric::from_directions(&[vec![1.0, 0.0]], vec!["s".into(), "b".into()], 0.0).unwrap();
    let cfg = TrainConfig { epochs: 40, hidden: vec![16], ..TrainConfig::default() };
    let base = train_smooth(&train, &cfg).unwrap().model;
    let fair = train_sensr(&train, &metric, &SensrConfig { train: cfg, ..SensrConfig::default() }).unwrap().model;
    let probe = aligned_toy(200, 2);
    let (sb, sf) = (sensitivity(&base, probe.features()), sensitivity(&fair, probe.features()));
    assert!(sb >= 5.0 * sf, "baseline {sb}, sensr {sf}");
}

#[test]
fn fair_models_raise_ifm_at_default_epsilon() {
    let s = common::scenario(3000, 5);
    let eps = [s.metric.epsilon_default()];
    let at = |m: &dyn Fn() -> indfair::Result<indfair::fairness_eval::IfmCurve>| m().unwrap().ifm[0].unwrap();
    let sensr = at(&|| ifm(&s.sensr, &s.metric, &s.data.test, &eps, None, 0));
    let nn = at(&|| ifm(&s.baseline_nn, &s.metric, &s.data.test, &eps, None, 0));
    let ifgb = at(&|| ifm(&s.ifgb, &s.metric, &s.data.test, &eps, None, 0));
    let gbt = at(&|| ifm(&s.baseline_gbt, &s.metric, &s.data.test, &eps, None, 0));
    assert!(sensr >= nn, "sensr {sensr} < baseline {nn}");
    assert!(ifgb >= gbt, "ifgb {ifgb} < baseline {gbt}");
}

#[test]
fn main_train_never_exposes_the_sensitive_column() {
    let data = common::prepare(500, 4);
    assert!(data.main_train.sensitive().is_none());
    assert!(!data.main_train.feature_names().iter().any(|n| n == "SEX" || n.starts_with("SEX=")));
    assert!(data.test.sensitive().is_some());
    let recipe = fit_preprocess(&data.main_train).unwrap();
    assert!(!recipe.output_names().iter().any(|n| n.starts_with("SEX")));
}
