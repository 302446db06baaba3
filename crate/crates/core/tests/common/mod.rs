//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use indfair::dataset::{fit_preprocess, three_way_split, SplitSpec, TabularDataset};
use indfair::fair_metric::{learn_sensitive_subspace, FairMetric, SubspaceOptions};
use indfair::fairness_eval::default_epsilon_grid;
use indfair::ifgb::{train_ifgb, IfgbConfig};
use indfair::models::{train_boosted, train_smooth, BoostedEnsemble, SmoothClassifier, TrainConfig};
use indfair::sensr::{train_sensr, SensrConfig};
use indfair::synthetic::{credit_like_dataset, SyntheticSpec};

pub struct Prepared {
    pub metric_train: TabularDataset,
    pub main_train: TabularDataset,
    pub test: TabularDataset,
}

/// Synthetic data split and preprocessed with statistics from main_train.
pub fn prepare(n_rows: usize, seed: u64) -> Prepared {
    let raw = credit_like_dataset(&SyntheticSpec { n_rows, seed, ..SyntheticSpec::default() }).unwrap();
    let split = three_way_split(&raw, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
    let recipe = fit_preprocess(&split.main_train).unwrap();
    Prepared {
        metric_train: recipe.apply(&split.metric_train).unwrap().0,
        main_train: recipe.apply(&split.main_train).unwrap().0,
        test: recipe.apply(&split.test).unwrap().0,
    }
}

pub struct Scenario {
    pub data: Prepared,
    pub metric: FairMetric,
    pub grid: Vec<f64>,
    pub baseline_nn: SmoothClassifier,
    pub sensr: SmoothClassifier,
    pub baseline_gbt: BoostedEnsemble,
    pub ifgb: BoostedEnsemble,
}

pub fn nn_config() -> TrainConfig {
    TrainConfig { epochs: 30, hidden: vec![32], ..TrainConfig::default() }
}

pub fn gbt_config() -> TrainConfig {
    TrainConfig { rounds: 100, max_depth: 3, learning_rate: 0.1, ..TrainConfig::default() }
}

/// Full two-step pipeline on the synthetic credit data.
pub fn scenario(n_rows: usize, seed: u64) -> Scenario {
    let data = prepare(n_rows, seed);
    let (metric, _) = learn_sensitive_subspace(&data.metric_train, &SubspaceOptions { seed, ..SubspaceOptions::default() }).unwrap();
    let grid = default_epsilon_grid(&metric, &data.test, 20, None, seed).unwrap();
    let baseline_nn = train_smooth(&data.main_train, &nn_config()).unwrap().model;
    let sensr = train_sensr(
        &data.main_train,
        &metric,
        &SensrConfig { train: nn_config(), ..SensrConfig::default() },
    )
    .unwrap()
    .model;
    let baseline_gbt = train_boosted(&data.main_train, &gbt_config(), None).unwrap().model;
    let ifgb = train_ifgb(
        &data.main_train,
        &metric,
        &IfgbConfig { train: gbt_config(), ..IfgbConfig::default() },
    )
    .unwrap()
    .model;
    Scenario { data, metric, grid, baseline_nn, sensr, baseline_gbt, ifgb }
}
