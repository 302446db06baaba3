//! Sensitive-subspace robust training of the smooth classifier.
//!
//! Each training row is replaced by a worst-case neighbour found by gradient
//! ascent on
//!
//! ```text
//! J(δ) = loss(h(x + δ), y) − λ · d(x, x + δ)²
//! ```
//!
//! where `d` is the frozen fair distance. Moving along sensitive directions
//! costs nothing, so a model that leans on them gets punished.

use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::fair_metric::FairMetric;
use crate::models::{fit_network, Adversary, SmoothClassifier, SmoothFit, TrainConfig, TrainPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensrConfig {
    /// Gradient-ascent iterations per sample.
    pub steps: usize,
    pub step_size: f64,
    /// Fair-cost multiplier λ.
    pub lambda: f64,
    /// Target mean fair distance of perturbations (fair-distance units).
    pub epsilon: f64,
    /// Rescale λ after each epoch so the mean perturbation distance tracks
    /// `epsilon`.
    pub auto_tune: bool,
    /// Each coordinate of a perturbed point stays within ±`box_limit`
    /// (or the original value, if that is further out).
    pub box_limit: f64,
    pub train: TrainConfig,
}

impl Default for SensrConfig {
    fn default() -> Self {
        SensrConfig {
            steps: 10,
            step_size: 2.0,
            lambda: 1.0,
            epsilon: 0.05,
            auto_tune: true,
            box_limit: 6.0,
            train: TrainConfig::default(),
        }
    }
}

impl SensrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument("sensr lambda must be positive".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Argument("sensr step_size must be non-negative".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Argument("sensr epsilon must be non-negative".into()));
        }
        if !(self.box_limit > 0.0) {
            return Err(Error::Argument("sensr box_limit must be positive".into()));
        }
        self.train.validate()
    }
}

/// Outcome of [`worst_case_perturb`].
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub x_adv: Vec<f64>,
    /// `loss(h(x_adv), y)`.
    pub loss: f64,
    /// Fair distance between `x` and `x_adv`.
    pub distance: f64,
    /// Set when the ascent produced a non-finite objective.
    pub warning: Option<String>,
}

struct AscentParams {
    steps: usize,
    step_size: f64,
    lambda: f64,
    box_limit: f64,
}

/// Fixed-step ascent with best-iterate tracking, so the returned point never
/// has a lower objective than `x` itself.
///
/// Each step moves along the loss gradient, then applies the quadratic
/// penalty in closed form: the fair component of the step is shrunk by
/// `1 / (1 + 2·step·λ)`, the sensitive component is left alone. This is the
/// proximal form of the penalized gradient step and is stable for every λ.
fn ascend(model: &SmoothClassifier, metric: &FairMetric, x: &[f64], y: u8, params: &AscentParams) -> Perturbation {
    let p = x.len();
    let (loss0, mut grad) = model.loss_and_input_gradient(x, y);
    let mut best = Perturbation {
        x_adv: x.to_vec(),
        loss: loss0,
        distance: 0.0,
        warning: None,
    };
    let mut best_obj = loss0;
    let mut cur = x.to_vec();
    let mut delta = vec![0.0; p];
    let mut fair = vec![0.0; p];
    let shrink = 2.0 * params.step_size * params.lambda / (1.0 + 2.0 * params.step_size * params.lambda);
    for _ in 0..params.steps {
        for j in 0..p {
            delta[j] = cur[j] - x[j] + params.step_size * grad[j];
        }
        metric.project_out_into(&delta, &mut fair);
        for j in 0..p {
            let lo = x[j].min(-params.box_limit);
            let hi = x[j].max(params.box_limit);
            cur[j] = (x[j] + delta[j] - shrink * fair[j]).clamp(lo, hi);
            delta[j] = cur[j] - x[j];
        }
        let (loss, g) = model.loss_and_input_gradient(&cur, y);
        grad = g;
        metric.project_out_into(&delta, &mut fair);
        let sq: f64 = fair.iter().map(|v| v * v).sum();
        let obj = loss - params.lambda * sq;
        if !obj.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            best.warning = Some("non-finite ascent objective; returning best finite iterate".into());
            break;
        }
        if obj > best_obj {
            best_obj = obj;
            best.x_adv.copy_from_slice(&cur);
            best.loss = loss;
            best.distance = sq.sqrt();
        }
    }
    best
}

/// Worst-case fair perturbation of one sample under `cfg`'s fixed λ.
pub fn worst_case_perturb(
    model: &SmoothClassifier,
    metric: &FairMetric,
    x: &[f64],
    y: u8,
    cfg: &SensrConfig,
) -> Result<Perturbation> {
    cfg.validate()?;
    Error::check_dim(metric.n_features(), x.len())?;
    Error::check_dim(model.layers[0].n_in, x.len())?;
    Ok(ascend(
        model,
        metric,
        x,
        y,
        &AscentParams {
            steps: cfg.steps,
            step_size: cfg.step_size,
            lambda: cfg.lambda,
            box_limit: cfg.box_limit,
        },
    ))
}

const LAMBDA_RANGE: (f64, f64) = (1e-6, 1e6);

struct SensrAdversary<'a> {
    metric: &'a FairMetric,
    params: AscentParams,
    epsilon: f64,
    auto_tune: bool,
}

impl Adversary for SensrAdversary<'_> {
    fn perturb(&self, model: &SmoothClassifier, x: &[f64], y: u8) -> TrainPoint {
        let p = ascend(model, self.metric, x, y, &self.params);
        TrainPoint {
            x: p.x_adv,
            dist: p.distance,
        }
    }

    fn lambda(&self) -> Option<f64> {
        Some(self.params.lambda)
    }

    fn end_epoch(&mut self, mean_dist: f64) {
        if !self.auto_tune || self.params.steps == 0 {
            return;
        }
        let lambda = &mut self.params.lambda;
        if mean_dist > 1.2 * self.epsilon {
            *lambda *= 1.5;
        } else if mean_dist < 0.8 * self.epsilon {
            *lambda /= 1.5;
        }
        *lambda = lambda.clamp(LAMBDA_RANGE.0, LAMBDA_RANGE.1);
    }
}

/// Trains the network on worst-case fair perturbations of the main-train
/// rows. The metric is read-only for the whole run.
pub fn train_sensr(ds: &TabularDataset, metric: &FairMetric, cfg: &SensrConfig) -> Result<SmoothFit> {
    cfg.validate()?;
    if ds.role() != crate::dataset::Role::MainTrain || ds.sensitive().is_some() {
        return Err(Error::Isolation(format!(
            "SenSR trains only on the main_train split, got {:?}",
            ds.role()
        )));
    }
    metric.check_features(ds.feature_names())?;
    let mut adversary = SensrAdversary {
        metric,
        params: AscentParams {
            steps: cfg.steps,
            step_size: cfg.step_size,
            lambda: cfg.lambda,
            box_limit: cfg.box_limit,
        },
        epsilon: cfg.epsilon,
        auto_tune: cfg.auto_tune,
    };
    fit_network(ds, &cfg.train, &mut adversary)
}
