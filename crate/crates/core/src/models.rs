//! Baseline learners behind one probabilistic-classifier contract: a small
//! feed-forward network trained by SGD with momentum, and gradient-boosted
//! regression trees grown by exact greedy search on second-order statistics.
//!
//! Both training loops accept a hook so the fair variants in [`crate::sensr`]
//! and [`crate::ifgb`] share the exact same code path as the baselines.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Role, TabularDataset};
use crate::error::{Error, Result};
use crate::{io, par};

/// Rows per accumulation chunk. Fixed so gradient sums do not depend on the
/// thread count.
const GRAD_CHUNK: usize = 32;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy of logit `z` against label `y`; positives are
/// scaled by `pos_weight`.
pub fn logistic_loss(z: f64, y: u8, pos_weight: f64) -> f64 {
    if y == 1 {
        pos_weight * softplus(-z)
    } else {
        softplus(z)
    }
}

/// Derivative of [`logistic_loss`] with respect to `z`.
fn logistic_loss_grad(z: f64, y: u8, pos_weight: f64) -> f64 {
    let p = sigmoid(z);
    if y == 1 {
        pos_weight * (p - 1.0)
    } else {
        p
    }
}

/// A model that scores one feature row with a probability in (0, 1).
pub trait ProbabilisticClassifier: Sync {
    fn n_features(&self) -> usize;

    fn feature_names(&self) -> &[String];

    fn proba_row(&self, x: &[f64]) -> f64;
}

/// Probabilities for every row of `x`.
pub fn predict_proba<C: ProbabilisticClassifier + ?Sized>(model: &C, x: &Array2<f64>) -> Result<Vec<f64>> {
    if x.nrows() == 0 {
        return Ok(Vec::new());
    }
    Error::check_dim(model.n_features(), x.ncols())?;
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    let p = x.ncols();
    Ok(par::map_indices(x.nrows(), |i| model.proba_row(&data[i * p..(i + 1) * p])))
}

/// `1[proba ≥ threshold]` per row.
pub fn predict_label<C: ProbabilisticClassifier + ?Sized>(
    model: &C,
    x: &Array2<f64>,
    threshold: f64,
) -> Result<Vec<u8>> {
    Ok(labels_from_proba(&predict_proba(model, x)?, threshold))
}

pub fn labels_from_proba(proba: &[f64], threshold: f64) -> Vec<u8> {
    proba.iter().map(|&p| (p >= threshold) as u8).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Shared hyperparameters for both baseline learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Network epochs.
    pub epochs: usize,
    /// Boosting rounds.
    pub rounds: usize,
    pub batch_size: usize,
    /// SGD step size, or shrinkage for boosting.
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub max_depth: usize,
    /// Minimum hessian sum in each child of a split.
    pub min_leaf_weight: f64,
    /// L2 penalty on leaf values.
    pub reg_lambda: f64,
    pub threshold: f64,
    /// Extra weight on positive-class loss terms.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            rounds: 100,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            hidden: vec![32],
            activation: Activation::Relu,
            max_depth: 3,
            min_leaf_weight: 1.0,
            reg_lambda: 1.0,
            threshold: 0.5,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Argument(format!("train config: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.min_leaf_weight >= 0.0) || !(self.reg_lambda >= 0.0) {
            return bad("min_leaf_weight and reg_lambda must be non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return bad("pos_weight must be positive");
        }
        Ok(())
    }
}

fn require_main_train(ds: &TabularDataset) -> Result<()> {
    if ds.role() != Role::MainTrain || ds.sensitive().is_some() {
        return Err(Error::Isolation(format!(
            "classifiers train only on the main_train split, got {:?}",
            ds.role()
        )));
    }
    if ds.n_rows() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    Ok(())
}

/// Fully connected layer, `weights` row-major `n_out × n_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            b + self.weights[o * self.n_in..(o + 1) * self.n_in]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
        }));
    }
}

/// Feed-forward network with a single logit output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothClassifier {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub feature_names: Vec<String>,
}

/// Per-layer pre-activations and outputs of one forward pass.
struct Trace {
    /// `inputs[l]` feeds layer `l`; the last entry is the input to the
    /// output layer.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    logit: f64,
}

/// Parameter gradient with the same shapes as the network.
#[derive(Clone, Debug)]
pub(crate) struct Grad {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grad {
    fn zeros_like(net: &SmoothClassifier) -> Self {
        Grad {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn add(&mut self, other: &Grad) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }
}

impl SmoothClassifier {
    /// Randomly initialized network. Hidden weights are uniform with
    /// He (relu) or Glorot (tanh) scale; biases and the output layer start
    /// at zero, so the untrained network predicts exactly 0.5.
    pub fn init(feature_names: Vec<String>, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut n_in = feature_names.len();
        for &h in hidden {
            let limit = match activation {
                Activation::Relu => (6.0 / n_in.max(1) as f64).sqrt(),
                Activation::Tanh => (6.0 / (n_in + h) as f64).sqrt(),
            };
            let mut layer = Layer::zeros(n_in, h);
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-limit..limit));
            layers.push(layer);
            n_in = h;
        }
        layers.push(Layer::zeros(n_in, 1));
        SmoothClassifier {
            layers,
            activation,
            feature_names,
        }
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation, feature_names: Vec<String>) -> Result<Self> {
        let mut n_in = feature_names.len();
        for l in &layers {
            Error::check_dim(n_in, l.n_in)?;
            Error::check_dim(l.n_in * l.n_out, l.weights.len())?;
            Error::check_dim(l.n_out, l.bias.len())?;
            n_in = l.n_out;
        }
        if n_in != 1 || layers.is_empty() {
            return Err(Error::Argument("network must end in a single logit".into()));
        }
        Ok(SmoothClassifier {
            layers,
            activation,
            feature_names,
        })
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        for layer in &self.layers[..last] {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.affine(&cur, &mut z);
            let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut cur, a));
            pre.push(z);
        }
        let mut out = Vec::with_capacity(1);
        self.layers[last].affine(&cur, &mut out);
        inputs.push(cur);
        Trace {
            inputs,
            pre,
            logit: out[0],
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).logit
    }

    /// Backpropagates `dloss/dlogit` from a trace. Returns the gradient with
    /// respect to the input, and accumulates parameter gradients if asked.
    fn backward(&self, trace: &Trace, dlogit: f64, mut grad: Option<&mut Grad>) -> Vec<f64> {
        let mut delta = vec![dlogit];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = &mut g.layers[l];
                for (o, d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                    row.iter_mut().zip(input).for_each(|(w, v)| *w += d * v);
                }
            }
            let mut back = vec![0.0; layer.n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
            }
            if l > 0 {
                let z = &trace.pre[l - 1];
                back.iter_mut()
                    .zip(z.iter().zip(input))
                    .for_each(|(b, (&zi, &ai))| *b *= self.activation.derivative(zi, ai));
            }
            delta = back;
        }
        delta
    }

    /// `∂ loss(h(x), y) / ∂x` for the unweighted logistic loss.
    pub fn input_gradient(&self, x: &[f64], y: u8) -> Result<Vec<f64>> {
        Error::check_dim(self.n_features(), x.len())?;
        Ok(self.loss_and_input_gradient(x, y).1)
    }

    pub(crate) fn loss_and_input_gradient(&self, x: &[f64], y: u8) -> (f64, Vec<f64>) {
        let trace = self.forward(x);
        let g = logistic_loss_grad(trace.logit, y, 1.0);
        (logistic_loss(trace.logit, y, 1.0), self.backward(&trace, g, None))
    }

    pub fn loss(&self, x: &[f64], y: u8) -> f64 {
        logistic_loss(self.logit(x), y, 1.0)
    }

    /// Mean unweighted logistic loss over the rows of `x`.
    pub fn mean_loss(&self, x: &Array2<f64>, labels: &[u8]) -> f64 {
        let x = x.as_standard_layout();
        let data = x.as_slice().expect("standard layout");
        let p = x.ncols();
        let parts = par::map_chunks(labels.len(), GRAD_CHUNK, |r| {
            r.map(|i| self.loss(&data[i * p..(i + 1) * p], labels[i])).sum::<f64>()
        });
        parts.iter().sum::<f64>() / labels.len().max(1) as f64
    }

    fn step(&mut self, grad: &Grad, velocity: &mut Grad, lr: f64, momentum: f64) {
        for ((layer, (gw, gb)), (vw, vb)) in self.layers.iter_mut().zip(&grad.layers).zip(&mut velocity.layers) {
            for ((w, g), v) in layer.weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
                *v = momentum * *v - lr * g;
                *w += *v;
            }
            for ((b, g), v) in layer.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                *v = momentum * *v - lr * g;
                *b += *v;
            }
        }
    }
}

impl ProbabilisticClassifier for SmoothClassifier {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn proba_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// One line of the network training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss on the unperturbed batch rows, before each update.
    pub clean_loss: f64,
    /// Mean loss on the rows actually trained on.
    pub adv_loss: f64,
    pub mean_perturb_dist: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

/// What the training loop feeds the network for one sample.
pub(crate) struct TrainPoint {
    pub x: Vec<f64>,
    pub dist: f64,
}

/// Replaces training inputs on the fly; the identity for plain training.
pub(crate) trait Adversary: Sync {
    fn perturb(&self, model: &SmoothClassifier, x: &[f64], y: u8) -> TrainPoint;

    fn lambda(&self) -> Option<f64> {
        None
    }

    /// Called once per epoch with the mean perturbation distance.
    fn end_epoch(&mut self, _mean_dist: f64) {}
}

struct NoAdversary;

impl Adversary for NoAdversary {
    fn perturb(&self, _: &SmoothClassifier, x: &[f64], _: u8) -> TrainPoint {
        TrainPoint { x: x.to_vec(), dist: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SmoothFit {
    pub model: SmoothClassifier,
    pub log: Vec<EpochLog>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains the baseline network on the main-train split.
pub fn train_smooth(ds: &TabularDataset, cfg: &TrainConfig) -> Result<SmoothFit> {
    require_main_train(ds)?;
    fit_network(ds, cfg, &mut NoAdversary)
}

/// Mini-batch SGD with momentum on mean logistic loss. Batches are drawn
/// from a seeded shuffle each epoch; a batch covering the whole dataset
/// keeps the original row order.
pub(crate) fn fit_network<A: Adversary>(ds: &TabularDataset, cfg: &TrainConfig, adversary: &mut A) -> Result<SmoothFit> {
    cfg.validate()?;
    let x = ds.features().as_standard_layout().into_owned();
    let data = x.as_slice().expect("standard layout");
    let p = x.ncols();
    let labels = ds.labels();
    let n = labels.len();
    let mut model = SmoothClassifier::init(ds.feature_names().to_vec(), &cfg.hidden, cfg.activation, cfg.seed);
    let mut velocity = Grad::zeros_like(&model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let initial_loss = model.mean_loss(&x, labels);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.batch_size < n {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut clean_sum, mut adv_sum, mut dist_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let snapshot = &model;
            let adv = &*adversary;
            let parts = par::map_chunks(batch.len(), GRAD_CHUNK, |r| {
                let mut g = Grad::zeros_like(snapshot);
                let (mut clean, mut advl, mut dist) = (0.0, 0.0, 0.0);
                for &i in &batch[r] {
                    let xi = &data[i * p..(i + 1) * p];
                    let y = labels[i];
                    let point = adv.perturb(snapshot, xi, y);
                    let trace = snapshot.forward(&point.x);
                    let z_clean = if point.dist == 0.0 && point.x == xi {
                        trace.logit
                    } else {
                        snapshot.logit(xi)
                    };
                    clean += logistic_loss(z_clean, y, 1.0);
                    advl += logistic_loss(trace.logit, y, cfg.pos_weight);
                    dist += point.dist;
                    snapshot.backward(&trace, logistic_loss_grad(trace.logit, y, cfg.pos_weight), Some(&mut g));
                }
                (g, clean, advl, dist)
            });
            let mut grad = Grad::zeros_like(&model);
            for (g, c, a, d) in &parts {
                grad.add(g);
                clean_sum += c;
                adv_sum += a;
                dist_sum += d;
            }
            let scale = 1.0 / batch.len() as f64;
            for (w, b) in &mut grad.layers {
                w.iter_mut().for_each(|v| *v *= scale);
                b.iter_mut().for_each(|v| *v *= scale);
            }
            model.step(&grad, &mut velocity, cfg.learning_rate, cfg.momentum);
        }
        let entry = EpochLog {
            epoch,
            clean_loss: clean_sum / n as f64,
            adv_loss: adv_sum / n as f64,
            mean_perturb_dist: dist_sum / n as f64,
            lambda: adversary.lambda(),
        };
        if !entry.adv_loss.is_finite() || !entry.clean_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss at epoch {epoch} (learning rate {} may be too high)",
                cfg.learning_rate
            )));
        }
        if entry.adv_loss > 1e3 * initial_loss.max(1e-12) {
            return Err(Error::Diverged(format!(
                "loss {} at epoch {epoch} exceeds 1000x the initial {initial_loss}",
                entry.adv_loss
            )));
        }
        adversary.end_epoch(entry.mean_perturb_dist);
        log.push(entry);
    }
    let final_loss = model.mean_loss(&x, labels);
    Ok(SmoothFit {
        model,
        log,
        initial_loss,
        final_loss,
    })
}

/// Node of a regression tree. Rows with `x[feature] < threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        leaf_value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf_value } => return *leaf_value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] < *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Additive tree ensemble in log-odds space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub feature_names: Vec<String>,
}

impl BoostedEnsemble {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// The ensemble made of the first `k` trees.
    pub fn truncated(&self, k: usize) -> Self {
        BoostedEnsemble {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }
}

impl ProbabilisticClassifier for BoostedEnsemble {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn proba_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

/// One line of the boosting log; adversary fields are set by IFGB only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean unweighted logistic loss before this round's tree.
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moved_mass_fraction: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BoostedFit {
    pub model: BoostedEnsemble,
    pub log: Vec<RoundLog>,
    pub warnings: Vec<String>,
}

/// Supplies per-sample weights for each boosting round.
pub(crate) trait RoundWeights {
    /// `losses` are the current per-sample logistic losses. Returning
    /// `None` means uniform unit weights.
    fn weights(&mut self, round: usize, losses: &[f64], log: &mut RoundLog) -> Result<Option<Vec<f64>>>;
}

struct FixedWeights<'a>(Option<&'a [f64]>);

impl RoundWeights for FixedWeights<'_> {
    fn weights(&mut self, _: usize, _: &[f64], _: &mut RoundLog) -> Result<Option<Vec<f64>>> {
        Ok(self.0.map(<[f64]>::to_vec))
    }
}

fn validate_weights(w: &[f64], n: usize) -> Result<()> {
    Error::check_dim(n, w.len())?;
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Argument("sample weights must be finite and non-negative".into()));
    }
    let sum: f64 = w.iter().sum();
    if (sum - n as f64).abs() > 1e-6 * n as f64 {
        return Err(Error::Argument(format!(
            "sample weights must sum to n_rows = {n}, got {sum}"
        )));
    }
    Ok(())
}

/// Gradient boosting on logistic loss. `weights`, when given, must be
/// non-negative and sum to `n_rows`; unit weights reproduce plain boosting.
pub fn train_boosted(ds: &TabularDataset, cfg: &TrainConfig, weights: Option<&[f64]>) -> Result<BoostedFit> {
    require_main_train(ds)?;
    if let Some(w) = weights {
        validate_weights(w, ds.n_rows())?;
    }
    fit_boosted(ds, cfg, &mut FixedWeights(weights))
}

pub(crate) fn fit_boosted<W: RoundWeights>(ds: &TabularDataset, cfg: &TrainConfig, weights: &mut W) -> Result<BoostedFit> {
    cfg.validate()?;
    if cfg.learning_rate > 1.0 {
        return Err(Error::Argument("boosting learning_rate must lie in [0, 1]".into()));
    }
    let x = ds.features().as_standard_layout().into_owned();
    let data = x.as_slice().expect("standard layout");
    let p = x.ncols();
    let labels = ds.labels();
    let n = labels.len();
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let prior = (positives as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (prior / (1.0 - prior)).ln();
    let mut model = BoostedEnsemble {
        trees: Vec::new(),
        learning_rate: cfg.learning_rate,
        base_score,
        feature_names: ds.feature_names().to_vec(),
    };
    let mut warnings = Vec::new();
    if positives == 0 || positives == n {
        warnings.push("all training labels belong to one class; returning the prior-only model".into());
        return Ok(BoostedFit {
            model,
            log: Vec::new(),
            warnings,
        });
    }
    let mut margins = vec![base_score; n];
    let mut log = Vec::with_capacity(cfg.rounds);
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_leaf_weight: cfg.min_leaf_weight,
        reg_lambda: cfg.reg_lambda,
    };
    for round in 0..cfg.rounds {
        let losses: Vec<f64> = margins
            .iter()
            .zip(labels)
            .map(|(&z, &y)| logistic_loss(z, y, 1.0))
            .collect();
        let mut entry = RoundLog {
            round,
            mean_loss: losses.iter().sum::<f64>() / n as f64,
            adv_objective: None,
            lambda_star: None,
            moved_mass_fraction: None,
        };
        let w = weights.weights(round, &losses, &mut entry)?;
        if let Some(w) = &w {
            validate_weights(w, n)?;
        }
        let mut grad = Vec::with_capacity(n);
        let mut hess = Vec::with_capacity(n);
        for i in 0..n {
            let wi = w.as_ref().map_or(1.0, |w| w[i]);
            let pi = sigmoid(margins[i]);
            let scale = if labels[i] == 1 { cfg.pos_weight } else { 1.0 };
            grad.push(wi * scale * (pi - labels[i] as f64));
            hess.push(wi * scale * pi * (1.0 - pi));
        }
        let tree = grow_tree(&x, &grad, &hess, (0..n).collect(), 0, &params);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += cfg.learning_rate * tree.predict(&data[i * p..(i + 1) * p]);
        }
        model.trees.push(tree);
        log.push(entry);
    }
    Ok(BoostedFit { model, log, warnings })
}

struct TreeParams {
    max_depth: usize,
    min_leaf_weight: f64,
    reg_lambda: f64,
}

#[derive(Clone, Copy, Debug)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        g * g / (h + lambda)
    } else {
        0.0
    }
}

/// Best split of `rows` on one feature by exact greedy scan.
fn best_split_on(
    x: &Array2<f64>,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    feature: usize,
    params: &TreeParams,
) -> Option<SplitCandidate> {
    let mut sorted: Vec<usize> = rows.to_vec();
    sorted.sort_by(|&a, &b| x[[a, feature]].total_cmp(&x[[b, feature]]).then(a.cmp(&b)));
    let g_tot: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h_tot: f64 = rows.iter().map(|&i| hess[i]).sum();
    let parent = leaf_score(g_tot, h_tot, params.reg_lambda);
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut best: Option<SplitCandidate> = None;
    for k in 0..sorted.len() - 1 {
        let i = sorted[k];
        gl += grad[i];
        hl += hess[i];
        let a = x[[i, feature]];
        let b = x[[sorted[k + 1], feature]];
        if !(a < b) {
            continue;
        }
        let (gr, hr) = (g_tot - gl, h_tot - hl);
        if hl < params.min_leaf_weight || hr < params.min_leaf_weight {
            continue;
        }
        let gain = 0.5 * (leaf_score(gl, hl, params.reg_lambda) + leaf_score(gr, hr, params.reg_lambda) - parent);
        if gain > 1e-12 && best.is_none_or(|c| gain > c.gain) {
            let mut threshold = a + (b - a) / 2.0;
            if threshold <= a {
                threshold = b;
            }
            best = Some(SplitCandidate {
                feature,
                threshold,
                gain,
            });
        }
    }
    best
}

fn grow_tree(x: &Array2<f64>, grad: &[f64], hess: &[f64], rows: Vec<usize>, depth: usize, params: &TreeParams) -> TreeNode {
    let g: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| hess[i]).sum();
    let leaf = || TreeNode::Leaf {
        leaf_value: if h + params.reg_lambda > 0.0 {
            -g / (h + params.reg_lambda)
        } else {
            0.0
        },
    };
    if depth >= params.max_depth || rows.len() < 2 {
        return leaf();
    }
    let per_feature = par::map_indices(x.ncols(), |f| best_split_on(x, grad, hess, &rows, f, params));
    let best = per_feature
        .into_iter()
        .flatten()
        .fold(None::<SplitCandidate>, |acc, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        });
    let Some(split) = best else {
        return leaf();
    };
    let (left, right): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&i| x[[i, split.feature]] < split.threshold);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow_tree(x, grad, hess, left, depth + 1, params)),
        right: Box::new(grow_tree(x, grad, hess, right, depth + 1, params)),
    }
}

/// Either trained model kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Network(SmoothClassifier),
    Ensemble(BoostedEnsemble),
}

impl ProbabilisticClassifier for SavedModel {
    fn n_features(&self) -> usize {
        match self {
            SavedModel::Network(m) => m.n_features(),
            SavedModel::Ensemble(m) => m.n_features(),
        }
    }

    fn feature_names(&self) -> &[String] {
        match self {
            SavedModel::Network(m) => &m.feature_names,
            SavedModel::Ensemble(m) => &m.feature_names,
        }
    }

    fn proba_row(&self, x: &[f64]) -> f64 {
        match self {
            SavedModel::Network(m) => m.proba_row(x),
            SavedModel::Ensemble(m) => m.proba_row(x),
        }
    }
}

/// Contents of a model file: the model, the method that produced it, its
/// training configuration and provenance checksums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub method: String,
    pub model: SavedModel,
    pub config: serde_json::Value,
    pub provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    record: ModelRecord,
    checksum: String,
}

pub fn model_to_json(record: &ModelRecord) -> Result<Vec<u8>> {
    let checksum = io::sha256_hex(&serde_json::to_vec(record)?);
    let mut out = serde_json::to_vec_pretty(&ModelFile {
        record: record.clone(),
        checksum,
    })?;
    out.push(b'\n');
    Ok(out)
}

pub fn model_from_json(bytes: &[u8]) -> Result<ModelRecord> {
    let file: ModelFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Integrity(format!("unreadable model file: {e}")))?;
    let expected = io::sha256_hex(&serde_json::to_vec(&file.record)?);
    if expected != file.checksum {
        return Err(Error::Integrity(format!(
            "model checksum mismatch: stored {}, computed {expected}",
            file.checksum
        )));
    }
    Ok(file.record)
}

pub fn save_model(record: &ModelRecord, path: &Path) -> Result<()> {
    io::write_atomic(path, &model_to_json(record)?)
}

pub fn load_model(path: &Path) -> Result<ModelRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&bytes)
}
