//! Fairness audits for trained classifiers.
//!
//! Individual fairness is measured over pairs of test rows: the fraction of
//! comparable pairs (fair distance at most `ε`) that receive the same label,
//! and the fraction of pairs violating a Lipschitz bound on predicted
//! probabilities. Group fairness compares accuracy, FPR, FNR and AUC across
//! the categories of the sensitive column.
//!
//! Pairs never include a row with itself and the similarity test `d ≤ ε` is
//! inclusive. Rates with a zero denominator are reported as `None`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::fair_metric::{euclidean_distance, FairMetric};
use crate::models::{labels_from_proba, predict_proba, ProbabilisticClassifier};
use crate::pairs::{quantile_sorted, total_pairs, PairPlan, PairSampling};

/// Pair budget used when none is configured.
pub const DEFAULT_PAIR_BUDGET: u64 = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfmCurve {
    pub epsilons: Vec<f64>,
    pub ifm: Vec<Option<f64>>,
    /// Pairs with `d ≤ ε`.
    pub pair_counts: Vec<u64>,
    /// Of those, pairs with equal predicted labels.
    pub agree_counts: Vec<u64>,
    pub sampling: PairSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzAudit {
    pub lipschitz_constant: f64,
    pub violations: u64,
    pub pairs: u64,
    pub alpha: Option<f64>,
    /// Normal-approximation 95% half-width, only for sampled pairs.
    pub ci_half_width: Option<f64>,
    pub sampling: PairSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub auc: Option<f64>,
}

/// Reference group minus another group, per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDiff {
    pub reference: String,
    pub other: String,
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetricTable {
    pub threshold: f64,
    pub overall: GroupRow,
    pub groups: Vec<GroupRow>,
    pub diffs: Vec<GroupDiff>,
}

fn check_grid(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::Argument("epsilon grid is empty".into()));
    }
    if epsilons.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Argument("epsilon grid must be finite and non-negative".into()));
    }
    if epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("epsilon grid must be strictly ascending".into()));
    }
    Ok(())
}

fn audit_inputs(metric: &FairMetric, ds: &TabularDataset) -> Result<Array2<f64>> {
    if ds.n_rows() == 0 {
        return Err(Error::Data("cannot audit an empty dataset".into()));
    }
    metric.check_features(ds.feature_names())?;
    Ok(metric.fair_coordinates(ds.features()))
}

fn row_distance(z: &Array2<f64>, i: usize, j: usize) -> f64 {
    euclidean_distance(
        z.row(i).as_slice().expect("standard layout"),
        z.row(j).as_slice().expect("standard layout"),
    )
}

/// IFM curve at label threshold 0.5.
pub fn ifm<C: ProbabilisticClassifier + ?Sized>(
    model: &C,
    metric: &FairMetric,
    ds: &TabularDataset,
    epsilons: &[f64],
    pair_budget: Option<u64>,
    seed: u64,
) -> Result<IfmCurve> {
    let p = predict_proba(model, ds.features())?;
    ifm_from_labels(&labels_from_proba(&p, 0.5), metric, ds, epsilons, pair_budget, seed)
}

/// IFM curve for precomputed predicted labels, one per row of `ds`.
pub fn ifm_from_labels(
    labels: &[u8],
    metric: &FairMetric,
    ds: &TabularDataset,
    epsilons: &[f64],
    pair_budget: Option<u64>,
    seed: u64,
) -> Result<IfmCurve> {
    check_grid(epsilons)?;
    let z = audit_inputs(metric, ds)?;
    Error::check_dim(ds.n_rows(), labels.len())?;
    let g = epsilons.len();
    let plan = PairPlan::new(ds.n_rows(), pair_budget, seed);
    let hist = plan.histogram(2 * g, |i, j, acc| {
        let d = row_distance(&z, i, j);
        let k = epsilons.partition_point(|&e| e < d);
        if k < g {
            acc[k] += 1;
            if labels[i] == labels[j] {
                acc[g + k] += 1;
            }
        }
    });
    let mut pair_counts = Vec::with_capacity(g);
    let mut agree_counts = Vec::with_capacity(g);
    let (mut c, mut a) = (0u64, 0u64);
    for k in 0..g {
        c += hist[k];
        a += hist[g + k];
        pair_counts.push(c);
        agree_counts.push(a);
    }
    let ifm = pair_counts
        .iter()
        .zip(&agree_counts)
        .map(|(&c, &a)| (c > 0).then(|| a as f64 / c as f64))
        .collect();
    Ok(IfmCurve {
        epsilons: epsilons.to_vec(),
        ifm,
        pair_counts,
        agree_counts,
        sampling: plan.descriptor(),
    })
}

/// Counts pairs with `|p(x) − p(x′)| > L · d(x, x′)`.
pub fn lipschitz_audit<C: ProbabilisticClassifier + ?Sized>(
    model: &C,
    metric: &FairMetric,
    ds: &TabularDataset,
    lipschitz_constant: f64,
    pair_budget: Option<u64>,
    seed: u64,
) -> Result<LipschitzAudit> {
    let p = predict_proba(model, ds.features())?;
    lipschitz_from_proba(&p, metric, ds, lipschitz_constant, pair_budget, seed)
}

pub fn lipschitz_from_proba(
    proba: &[f64],
    metric: &FairMetric,
    ds: &TabularDataset,
    lipschitz_constant: f64,
    pair_budget: Option<u64>,
    seed: u64,
) -> Result<LipschitzAudit> {
    if !(lipschitz_constant > 0.0) {
        return Err(Error::Argument(format!(
            "Lipschitz constant must be positive, got {lipschitz_constant}"
        )));
    }
    let z = audit_inputs(metric, ds)?;
    Error::check_dim(ds.n_rows(), proba.len())?;
    let plan = PairPlan::new(ds.n_rows(), pair_budget, seed);
    let violations = plan.histogram(1, |i, j, acc| {
        if (proba[i] - proba[j]).abs() > lipschitz_constant * row_distance(&z, i, j) {
            acc[0] += 1;
        }
    })[0];
    let pairs = plan.len();
    let alpha = (pairs > 0).then(|| violations as f64 / pairs as f64);
    let ci_half_width = match (&plan, alpha) {
        (PairPlan::Sampled { .. }, Some(a)) => Some(1.96 * (a * (1.0 - a) / pairs as f64).sqrt()),
        _ => None,
    };
    Ok(LipschitzAudit {
        lipschitz_constant,
        violations,
        pairs,
        alpha,
        ci_half_width,
        sampling: plan.descriptor(),
    })
}

/// Pairwise concordance AUC with ties counted as one half. `None` unless
/// both classes are present.
pub fn concordance_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the number of concordant pairs, ties contributing 1
    let mut twice = 0u128;
    let mut neg_below = 0u128;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut p, mut n) = (0u128, 0u128);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            k += 1;
        }
        twice += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Some(twice as f64 / (2 * pos * neg) as f64)
}

/// ROC staircase from `(0, 0)` to `(1, 1)` as `(FPR, TPR)` points, scoring
/// `s ≥ t` as positive. With `n_thresholds` at least the number of distinct
/// scores plus two every distinct score is used and the trapezoidal area
/// equals [`concordance_auc`]; otherwise thresholds are spread evenly over
/// the sorted distinct scores.
pub fn roc_points(scores: &[f64], labels: &[u8], n_thresholds: usize) -> Result<Vec<(f64, f64)>> {
    if n_thresholds < 2 {
        return Err(Error::Argument("ROC needs at least two thresholds".into()));
    }
    Error::check_dim(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC is undefined for single-class labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // cumulative (fp, tp) after each distinct score, descending
    let mut steps = Vec::new();
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        steps.push((fp, tp));
    }
    let inner = n_thresholds - 2;
    let chosen: Vec<(usize, usize)> = if inner >= steps.len() {
        steps
    } else if inner == 0 {
        Vec::new()
    } else {
        (1..=inner)
            .map(|q| steps[(q * steps.len()).div_ceil(inner + 1).saturating_sub(1)])
            .collect()
    };
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(chosen.into_iter().map(|(f, t)| (f as f64 / neg as f64, t as f64 / pos as f64)));
    if pts.last() != Some(&(1.0, 1.0)) {
        pts.push((1.0, 1.0));
    }
    Ok(pts)
}

/// ROC of a model on a labelled dataset.
pub fn roc_curve<C: ProbabilisticClassifier + ?Sized>(
    model: &C,
    ds: &TabularDataset,
    n_thresholds: usize,
) -> Result<Vec<(f64, f64)>> {
    let p = predict_proba(model, ds.features())?;
    roc_points(&p, ds.labels(), n_thresholds)
}

/// Trapezoidal area under a polyline sorted by its first coordinate.
pub fn auc_trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn group_row(group: &str, scores: &[f64], labels: &[u8], threshold: f64) -> GroupRow {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    GroupRow {
        group: group.to_string(),
        n: labels.len(),
        accuracy: ratio(tp + tn, labels.len()),
        fpr: ratio(fp, fp + tn),
        fnr: ratio(fn_, fn_ + tp),
        auc: concordance_auc(scores, labels),
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Per-group rates for precomputed scores. `groups[i]` names the group of
/// row `i`; diffs are `reference − other` for every other group.
pub fn group_metrics_from_scores(
    scores: &[f64],
    labels: &[u8],
    groups: &[&str],
    threshold: f64,
    reference: &str,
) -> Result<GroupMetricTable> {
    Error::check_dim(scores.len(), labels.len())?;
    Error::check_dim(scores.len(), groups.len())?;
    let mut names: Vec<&str> = groups.to_vec();
    names.sort_unstable();
    names.dedup();
    if !names.contains(&reference) {
        return Err(Error::Argument(format!(
            "reference group {reference:?} not present (groups: {names:?})"
        )));
    }
    let rows: Vec<GroupRow> = names
        .iter()
        .map(|&g| {
            let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            group_row(g, &s, &y, threshold)
        })
        .collect();
    let r = rows.iter().find(|r| r.group == reference).expect("reference present");
    let diffs = rows
        .iter()
        .filter(|o| o.group != reference)
        .map(|o| GroupDiff {
            reference: reference.to_string(),
            other: o.group.clone(),
            accuracy: diff(r.accuracy, o.accuracy),
            fpr: diff(r.fpr, o.fpr),
            fnr: diff(r.fnr, o.fnr),
            auc: diff(r.auc, o.auc),
        })
        .collect();
    Ok(GroupMetricTable {
        threshold,
        overall: group_row("all", scores, labels, threshold),
        groups: rows,
        diffs,
    })
}

/// Group table for a model on a test split that carries the sensitive
/// column.
pub fn group_metrics<C: ProbabilisticClassifier + ?Sized>(
    model: &C,
    ds: &TabularDataset,
    threshold: f64,
    reference: &str,
) -> Result<GroupMetricTable> {
    let sens = ds
        .sensitive()
        .ok_or_else(|| Error::Schema("group metrics need the sensitive column".into()))?;
    let p = predict_proba(model, ds.features())?;
    let groups: Vec<&str> = (0..ds.n_rows()).map(|i| sens.label_of(i)).collect();
    group_metrics_from_scores(&p, ds.labels(), &groups, threshold, reference)
}

/// `count` log-spaced values between the 1st and 50th percentiles of
/// pairwise fair distances. A zero lower percentile is replaced by the
/// smallest positive distance.
pub fn default_epsilon_grid(
    metric: &FairMetric,
    ds: &TabularDataset,
    count: usize,
    pair_budget: Option<u64>,
    seed: u64,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Argument("grid size must be at least 1".into()));
    }
    let z = audit_inputs(metric, ds)?;
    let budget = pair_budget.unwrap_or(total_pairs(ds.n_rows()));
    let mut d = PairPlan::new(ds.n_rows(), Some(budget), seed).map(|i, j| row_distance(&z, i, j));
    d.sort_by(f64::total_cmp);
    let hi = quantile_sorted(&d, 0.5).ok_or_else(|| Error::Data("need at least two rows for a distance grid".into()))?;
    let mut lo = quantile_sorted(&d, 0.01).unwrap_or(0.0);
    if lo <= 0.0 {
        lo = d.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
    }
    if !(lo > 0.0) || hi <= lo || count == 1 {
        return if hi > 0.0 { Ok(vec![hi]) } else { Err(Error::Data("all pairwise fair distances are zero".into())) };
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    grid.dedup();
    Ok(grid)
}
