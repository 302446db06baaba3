//! Fair distance learned from a sensitive subspace.
//!
//! The subspace is spanned by the coefficient vectors of logistic models
//! that predict the sensitive category from the features, optionally
//! extended by the leading between-group mean directions. The fair distance
//! is the Euclidean norm of `x - x'` after projecting out that subspace:
//!
//! ```text
//! d(x, x')² = (x - x')ᵀ (I - P) (x - x'),   P = Bᵀ B
//! ```
//!
//! with `B` the `k × p` orthonormal basis. Pairs that differ only along
//! sensitive directions are at distance zero.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Role, TabularDataset};
use crate::error::{Error, Result};
use crate::io;
use crate::pairs::{quantile_sorted, PairPlan};

/// Directions whose Gram-Schmidt residual falls below this fraction of the
/// largest input direction are dropped as rank-deficient.
const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct FairMetric {
    basis: Array2<f64>,
    projector: Array2<f64>,
    feature_names: Vec<String>,
    epsilon_default: f64,
}

impl FairMetric {
    /// Orthonormalizes `directions` (rows) into a basis. Dependent
    /// directions are dropped.
    pub fn from_directions(
        directions: &[Vec<f64>],
        feature_names: Vec<String>,
        epsilon_default: f64,
    ) -> Result<Self> {
        let p = feature_names.len();
        for d in directions {
            Error::check_dim(p, d.len())?;
        }
        if !(epsilon_default >= 0.0 && epsilon_default.is_finite()) {
            return Err(Error::Argument(format!(
                "epsilon_default must be a finite non-negative number, got {epsilon_default}"
            )));
        }
        let scale = directions
            .iter()
            .map(|d| norm(d))
            .fold(0.0_f64, f64::max);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for d in directions {
            let mut v = d.clone();
            // two passes keep the basis orthonormal to ~1e-15
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &v);
                    v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
                }
            }
            let nv = norm(&v);
            if scale > 0.0 && nv > RANK_TOL * scale {
                v.iter_mut().for_each(|vi| *vi /= nv);
                basis.push(v);
            }
        }
        let k = basis.len();
        let basis = Array2::from_shape_vec((k, p), basis.concat())
            .expect("basis rows have feature dimension");
        Ok(Self::from_basis_unchecked(basis, feature_names, epsilon_default))
    }

    fn from_basis_unchecked(basis: Array2<f64>, feature_names: Vec<String>, epsilon_default: f64) -> Self {
        let projector = basis.t().dot(&basis);
        FairMetric {
            basis,
            projector,
            feature_names,
            epsilon_default,
        }
    }

    /// Metric with an empty sensitive subspace: plain Euclidean distance.
    pub fn euclidean(feature_names: Vec<String>) -> Self {
        let p = feature_names.len();
        Self::from_basis_unchecked(Array2::zeros((0, p)), feature_names, 0.0)
    }

    /// `k × p`, orthonormal rows.
    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn projector(&self) -> &Array2<f64> {
        &self.projector
    }

    /// `Σ = I − P`.
    pub fn complement(&self) -> Array2<f64> {
        Array2::eye(self.n_features()) - &self.projector
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn epsilon_default(&self) -> f64 {
        self.epsilon_default
    }

    pub fn with_epsilon_default(mut self, eps: f64) -> Self {
        self.epsilon_default = eps;
        self
    }

    /// Guards against column-order drift between the metric and a dataset.
    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names != self.feature_names.as_slice() {
            return Err(Error::Schema(format!(
                "metric features {:?} differ from data features {:?}",
                self.feature_names, names
            )));
        }
        Ok(())
    }

    /// `Σ v`: removes the sensitive-subspace component of `v`.
    pub fn project_out(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let coords = self.basis.dot(&v);
        &v - &self.basis.t().dot(&coords)
    }

    /// `Σ v` on a plain slice, written into `out`.
    pub(crate) fn project_out_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        for b in self.basis.rows() {
            let c: f64 = b.iter().zip(v).map(|(x, y)| x * y).sum();
            out.iter_mut().zip(b).for_each(|(o, bi)| *o -= c * bi);
        }
    }

    /// Squared fair distance without dimension checks.
    pub fn sq_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut r = vec![0.0; diff.len()];
        self.project_out_into(&diff, &mut r);
        r.iter().map(|v| v * v).sum()
    }

    pub fn distance(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        Error::check_dim(self.n_features(), x.len())?;
        Error::check_dim(self.n_features(), y.len())?;
        let (x, y) = (x.to_vec(), y.to_vec());
        let mut px = vec![0.0; x.len()];
        let mut py = vec![0.0; y.len()];
        self.project_out_into(&x, &mut px);
        self.project_out_into(&y, &mut py);
        Ok(euclidean_distance(&px, &py))
    }

    /// Rows of `x` mapped to fair coordinates `x Σ`; Euclidean distances
    /// between the mapped rows equal fair distances between the originals.
    pub fn fair_coordinates(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        let mut buf = vec![0.0; x.ncols()];
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let src: Vec<f64> = row.to_vec();
            self.project_out_into(&src, &mut buf);
            dst.iter_mut().zip(&buf).for_each(|(d, b)| *d = *b);
        }
        out
    }
}

/// `sqrt((x − x′)ᵀ Σ (x − x′))`.
pub fn fair_distance(m: &FairMetric, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    m.distance(x, y)
}

/// Plain Euclidean distance, summed left to right. Every fair distance in
/// the crate goes through here so audits agree with [`fair_distance`] to
/// the bit.
pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Settings for [`learn_sensitive_subspace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubspaceOptions {
    /// Extra between-group mean directions added to the basis.
    pub k_extra: usize,
    /// L2 penalty on the direction classifier (intercept unpenalized).
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Pairwise-distance quantile used for `epsilon_default`.
    pub epsilon_quantile: f64,
    /// Pair budget for estimating that quantile.
    pub epsilon_pairs: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        SubspaceOptions {
            k_extra: 0,
            l2: 1e-2,
            max_iter: 100,
            tol: 1e-10,
            seed: 0,
            epsilon_quantile: 0.05,
            epsilon_pairs: 200_000,
        }
    }
}

/// Diagnostics from fitting the sensitive subspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceFitReport {
    /// Accuracy of the direction classifier on a held-out fold.
    pub holdout_accuracy: f64,
    pub holdout_rows: usize,
    pub subspace_dim: usize,
    /// Largest Newton iteration count over the direction classifiers.
    pub iterations: usize,
    pub converged: bool,
    pub epsilon_default: f64,
    pub warnings: Vec<String>,
}

/// Result of a penalized logistic fit.
#[derive(Clone, Debug)]
pub(crate) struct LogisticFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticFit {
    fn score(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Newton's method with backtracking on
/// `mean(logloss) + l2/2 · ‖w‖²`.
pub(crate) fn fit_logistic(x: &Array2<f64>, y: &[f64], l2: f64, max_iter: usize, tol: f64) -> LogisticFit {
    let (n, p) = x.dim();
    let nf = n as f64;
    let dim = p + 1;
    let mut theta = DVector::<f64>::zeros(dim);

    let objective = |theta: &DVector<f64>| -> f64 {
        let mut loss = 0.0;
        for i in 0..n {
            let z = theta[p] + (0..p).map(|j| x[[i, j]] * theta[j]).sum::<f64>();
            loss += log1p_exp(z) - y[i] * z;
        }
        loss / nf + 0.5 * l2 * (0..p).map(|j| theta[j] * theta[j]).sum::<f64>()
    };

    let mut f = objective(&theta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        let mut row = vec![0.0; dim];
        for i in 0..n {
            for j in 0..p {
                row[j] = x[[i, j]];
            }
            row[p] = 1.0;
            let z: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-z).exp());
            let w = mu * (1.0 - mu);
            for a in 0..dim {
                grad[a] += (mu - y[i]) * row[a];
                for b in a..dim {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        grad /= nf;
        hess /= nf;
        for j in 0..p {
            grad[j] += l2 * theta[j];
            hess[(j, j)] += l2;
        }
        hess[(p, p)] += 1e-12;
        if grad.amax() < tol {
            converged = true;
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess.lu().solve(&grad).unwrap_or_else(|| grad.clone()),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta - &step * t;
            let fc = objective(&cand);
            if fc.is_finite() && fc <= f {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (step.amax() * t) < tol {
            converged = accepted || grad.amax() < 1e3 * tol;
            break;
        }
    }
    LogisticFit {
        coef: theta.iter().take(p).copied().collect(),
        intercept: theta[p],
        iterations,
        converged,
    }
}

/// One logistic model per non-reference category (category 0 is the
/// reference), each fitted on the rows of that category and the reference.
fn fit_direction_classifiers(
    x: &Array2<f64>,
    codes: &[usize],
    n_categories: usize,
    opts: &SubspaceOptions,
) -> Vec<LogisticFit> {
    (1..n_categories)
        .map(|c| {
            let rows: Vec<usize> = (0..codes.len())
                .filter(|&i| codes[i] == 0 || codes[i] == c)
                .collect();
            let xs = x.select(Axis(0), &rows);
            let ys: Vec<f64> = rows.iter().map(|&i| (codes[i] == c) as u8 as f64).collect();
            fit_logistic(&xs, &ys, opts.l2, opts.max_iter, opts.tol)
        })
        .collect()
}

fn predict_category(fits: &[LogisticFit], x: ArrayView1<'_, f64>) -> usize {
    let mut best = (0usize, 0.0f64);
    for (c, f) in fits.iter().enumerate() {
        let s = f.score(x);
        if s > best.1 {
            best = (c + 1, s);
        }
    }
    best.0
}

/// Leading eigenvectors of the between-group scatter `Σ_g n_g (μ_g − μ)(μ_g − μ)ᵀ`.
fn between_group_directions(x: &Array2<f64>, codes: &[usize], n_categories: usize, k: usize) -> Vec<Vec<f64>> {
    if k == 0 {
        return Vec::new();
    }
    let p = x.ncols();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for c in 0..n_categories {
        let rows: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == c).collect();
        let mu = x.select(Axis(0), &rows).mean_axis(Axis(0)).expect("non-empty group");
        let d = DVector::from_iterator(p, (&mu - &mean).iter().copied());
        scatter += (&d * d.transpose()) * rows.len() as f64;
    }
    let eig = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    order
        .into_iter()
        .take(k)
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * top)
        .map(|i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect()
}

/// Learns the sensitive subspace from the metric-learning split.
///
/// Only datasets with [`Role::MetricTrain`] are accepted, so classifier
/// training rows can never leak into the metric.
pub fn learn_sensitive_subspace(
    ds: &TabularDataset,
    opts: &SubspaceOptions,
) -> Result<(FairMetric, SubspaceFitReport)> {
    if ds.role() != Role::MetricTrain {
        return Err(Error::Isolation(format!(
            "fair metric must be learned on the metric_train split, got {:?}",
            ds.role()
        )));
    }
    let sens = ds
        .sensitive()
        .ok_or_else(|| Error::Schema("metric split has no sensitive column".into()))?;
    let n_cat = sens.categories.len();
    let mut counts = vec![0usize; n_cat];
    sens.codes.iter().for_each(|&c| counts[c] += 1);
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateSubspace(
            "sensitive column has a single category".into(),
        ));
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::DegenerateSubspace(format!(
            "every sensitive category needs at least 2 rows, counts {counts:?}"
        )));
    }
    let x = ds.features();
    let n = ds.n_rows();
    let mut warnings = Vec::new();

    // held-out accuracy of the direction classifier
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_hold = n / 5;
    let (hold, fit_rows) = order.split_at(n_hold);
    let mut fit_rows = fit_rows.to_vec();
    fit_rows.sort_unstable();
    let fit_codes: Vec<usize> = fit_rows.iter().map(|&i| sens.codes[i]).collect();
    let holdout_accuracy = if n_hold > 0 {
        let fits = fit_direction_classifiers(&x.select(Axis(0), &fit_rows), &fit_codes, n_cat, opts);
        let hits = hold
            .iter()
            .filter(|&&i| predict_category(&fits, x.row(i)) == sens.codes[i])
            .count();
        hits as f64 / n_hold as f64
    } else {
        warnings.push("too few rows for a held-out fold; accuracy is in-sample".into());
        f64::NAN
    };

    let fits = fit_direction_classifiers(x, &sens.codes, n_cat, opts);
    let converged = fits.iter().all(|f| f.converged);
    if !converged {
        warnings.push(format!(
            "direction classifier did not converge in {} iterations; using best iterate",
            opts.max_iter
        ));
    }
    let iterations = fits.iter().map(|f| f.iterations).max().unwrap_or(0);
    let holdout_accuracy = if holdout_accuracy.is_nan() {
        let hits = (0..n)
            .filter(|&i| predict_category(&fits, x.row(i)) == sens.codes[i])
            .count();
        hits as f64 / n as f64
    } else {
        holdout_accuracy
    };

    let mut directions: Vec<Vec<f64>> = fits.iter().map(|f| f.coef.clone()).collect();
    directions.extend(between_group_directions(x, &sens.codes, n_cat, opts.k_extra));
    let metric = FairMetric::from_directions(&directions, ds.feature_names().to_vec(), 0.0)?;
    if metric.subspace_dim() == 0 {
        return Err(Error::DegenerateSubspace(
            "all sensitive directions vanished (zero coefficients)".into(),
        ));
    }

    let eps = pairwise_distance_quantile(&metric, x, opts.epsilon_quantile, opts.epsilon_pairs, opts.seed)
        .unwrap_or(0.0);
    let metric = metric.with_epsilon_default(eps);
    let report = SubspaceFitReport {
        holdout_accuracy,
        holdout_rows: n_hold,
        subspace_dim: metric.subspace_dim(),
        iterations,
        converged,
        epsilon_default: eps,
        warnings,
    };
    Ok((metric, report))
}

/// Quantile of pairwise fair distances among the rows of `x`.
pub fn pairwise_distance_quantile(
    m: &FairMetric,
    x: &Array2<f64>,
    q: f64,
    budget: u64,
    seed: u64,
) -> Option<f64> {
    let mut d = pairwise_distances(m, x, budget, seed);
    d.sort_by(f64::total_cmp);
    quantile_sorted(&d, q)
}

/// Fair distances over all pairs, or `budget` sampled pairs.
pub(crate) fn pairwise_distances(m: &FairMetric, x: &Array2<f64>, budget: u64, seed: u64) -> Vec<f64> {
    let z = m.fair_coordinates(x);
    PairPlan::new(x.nrows(), Some(budget), seed).map(|i, j| {
        euclidean_distance(z.row(i).as_slice().expect("standard layout"), z.row(j).as_slice().expect("standard layout"))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct MetricPayload {
    basis: Vec<Vec<f64>>,
    projector: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    epsilon_default: f64,
    provenance: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricFile {
    basis: Vec<Vec<f64>>,
    projector: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    epsilon_default: f64,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
    checksum: String,
}

impl MetricFile {
    fn split(self) -> (MetricPayload, String) {
        let payload = MetricPayload {
            basis: self.basis,
            projector: self.projector,
            feature_names: self.feature_names,
            epsilon_default: self.epsilon_default,
            provenance: self.provenance,
        };
        (payload, self.checksum)
    }
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn payload_checksum(p: &MetricPayload) -> Result<String> {
    Ok(io::sha256_hex(&serde_json::to_vec(p)?))
}

/// Serializes the metric with a content checksum. `provenance` entries are
/// covered by the checksum.
pub fn metric_to_json(m: &FairMetric, provenance: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let payload = MetricPayload {
        basis: rows_of(&m.basis),
        projector: rows_of(&m.projector),
        feature_names: m.feature_names.clone(),
        epsilon_default: m.epsilon_default,
        provenance: provenance.clone(),
    };
    let checksum = payload_checksum(&payload)?;
    let file = MetricFile {
        basis: payload.basis,
        projector: payload.projector,
        feature_names: payload.feature_names,
        epsilon_default: payload.epsilon_default,
        provenance: payload.provenance,
        checksum,
    };
    let mut out = serde_json::to_vec_pretty(&file)?;
    out.push(b'\n');
    Ok(out)
}

pub fn save_metric(m: &FairMetric, path: &Path, provenance: &BTreeMap<String, String>) -> Result<()> {
    io::write_atomic(path, &metric_to_json(m, provenance)?)
}

/// Parses a metric file, verifying its checksum and projector algebra.
pub fn metric_from_json(bytes: &[u8]) -> Result<(FairMetric, BTreeMap<String, String>)> {
    let file: MetricFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Integrity(format!("unreadable metric file: {e}")))?;
    let (payload, stored_checksum) = file.split();
    let expected = payload_checksum(&payload)?;
    if expected != stored_checksum {
        return Err(Error::Integrity(format!(
            "metric checksum mismatch: stored {stored_checksum}, computed {expected}"
        )));
    }
    let MetricPayload {
        basis,
        projector,
        feature_names,
        epsilon_default,
        provenance,
    } = payload;
    let p = feature_names.len();
    let k = basis.len();
    if basis.iter().any(|r| r.len() != p) || projector.len() != p || projector.iter().any(|r| r.len() != p) {
        return Err(Error::Integrity("metric matrix shapes are inconsistent".into()));
    }
    let basis = Array2::from_shape_vec((k, p), basis.concat()).expect("checked shape");
    let stored = Array2::from_shape_vec((p, p), projector.concat()).expect("checked shape");
    let metric = FairMetric {
        projector: stored,
        basis,
        feature_names,
        epsilon_default,
    };
    let recomputed = metric.basis.t().dot(&metric.basis);
    let drift = (&recomputed - &metric.projector)
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    if drift > 1e-12 {
        return Err(Error::Integrity(format!(
            "stored projector differs from basis by {drift:e}"
        )));
    }
    Ok((metric, provenance))
}

pub fn load_metric(path: &Path) -> Result<(FairMetric, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    metric_from_json(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use crate::dataset::Sensitive;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn e1_metric() -> FairMetric {
        FairMetric::from_directions(&[vec![1.0, 0.0]], names(2), 0.0).unwrap()
    }

    #[test]
    fn distance_examples() {
        let m = e1_metric();
        let o = array![0.0, 0.0];
        assert_abs_diff_eq!(m.distance(array![3.0, 4.0].view(), o.view()).unwrap(), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.distance(array![3.0, 0.0].view(), o.view()).unwrap(), 0.0, epsilon = 1e-15);
        let e = FairMetric::euclidean(names(2));
        assert_abs_diff_eq!(e.distance(array![3.0, 4.0].view(), o.view()).unwrap(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let m = e1_metric();
        assert!(matches!(
            m.distance(array![1.0].view(), array![1.0, 2.0].view()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dependent_directions_are_dropped() {
        let m = FairMetric::from_directions(&[vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 0.0], vec![0.0, 1.0, 0.0]], names(3), 0.0)
            .unwrap();
        assert_eq!(m.subspace_dim(), 2);
        let gram = m.basis().dot(&m.basis().t());
        for ((i, j), v) in gram.indexed_iter() {
            assert_abs_diff_eq!(*v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
    }

    #[test]
    fn complement_annihilates_basis() {
        let m = FairMetric::from_directions(&[vec![0.3, -1.0, 2.0]], names(3), 0.0).unwrap();
        let sigma = m.complement();
        let v = sigma.dot(&m.basis().row(0));
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    fn toy_metric_split(n: usize, seed: u64, aligned: bool) -> TabularDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut groups = Vec::with_capacity(n);
        for i in 0..n {
            let male = rng.random_bool(0.5);
            x[[i, 0]] = if aligned {
                if male { 1.0 } else { -1.0 }
            } else {
                StandardNormal.sample(&mut rng)
            };
            x[[i, 1]] = StandardNormal.sample(&mut rng);
            groups.push(if male { "M" } else { "F" });
        }
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        TabularDataset::from_numeric(x, names(2), labels, Some(Sensitive::from_values("gender", &groups)))
            .unwrap()
            .with_role(Role::MetricTrain)
    }

    #[test]
    fn aligned_gender_feature_is_recovered() {
        let ds = toy_metric_split(400, 1, true);
        let (m, report) = learn_sensitive_subspace(&ds, &SubspaceOptions::default()).unwrap();
        assert_eq!(m.subspace_dim(), 1);
        assert_eq!(report.subspace_dim, 1);
        assert!(m.basis()[[0, 0]].abs() >= 0.99, "basis {:?}", m.basis());
        // d((a,b),(a',b')) ≈ |b - b'|
        let d = m.distance(array![1.0, 0.5].view(), array![-1.0, 2.0].view()).unwrap();
        assert!((d - 1.5).abs() < 0.1, "d = {d}, basis {:?}", m.basis());
        assert!(report.holdout_accuracy > 0.99);
    }

    #[test]
    fn uncorrelated_sensitive_is_chance() {
        let ds = toy_metric_split(4000, 2, false);
        let (_, report) = learn_sensitive_subspace(&ds, &SubspaceOptions::default()).unwrap();
        assert!((report.holdout_accuracy - 0.5).abs() <= 0.05, "{}", report.holdout_accuracy);
    }

    #[test]
    fn binary_without_extras_has_dimension_one() {
        let ds = toy_metric_split(100, 3, false);
        let (m, _) = learn_sensitive_subspace(&ds, &SubspaceOptions::default()).unwrap();
        assert_eq!(m.subspace_dim(), 1);
        let opts = SubspaceOptions { k_extra: 1, ..Default::default() };
        let (m2, _) = learn_sensitive_subspace(&ds, &opts).unwrap();
        assert!(m2.subspace_dim() <= 2);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i + j) as f64);
        let one = TabularDataset::from_numeric(x.clone(), names(2), vec![0; 6], Some(Sensitive::from_values("g", &["M"; 6])))
            .unwrap()
            .with_role(Role::MetricTrain);
        assert!(matches!(
            learn_sensitive_subspace(&one, &SubspaceOptions::default()),
            Err(Error::DegenerateSubspace(_))
        ));
        let lonely = TabularDataset::from_numeric(
            x.clone(),
            names(2),
            vec![0; 6],
            Some(Sensitive::from_values("g", &["M", "M", "M", "M", "M", "F"])),
        )
        .unwrap()
        .with_role(Role::MetricTrain);
        assert!(matches!(
            learn_sensitive_subspace(&lonely, &SubspaceOptions::default()),
            Err(Error::DegenerateSubspace(_))
        ));
    }

    #[test]
    fn wrong_role_is_refused() {
        for role in [Role::MainTrain, Role::Test, Role::Unsplit] {
            let ds = toy_metric_split(50, 4, true).with_role(role);
            assert!(learn_sensitive_subspace(&ds, &SubspaceOptions::default()).is_err());
        }
    }

    #[test]
    fn file_round_trip_and_tamper() {
        let m = FairMetric::from_directions(&[vec![0.2, 0.7, -0.1], vec![1.0, 0.0, 0.3]], names(3), 0.125).unwrap();
        let prov = BTreeMap::from([("split".to_string(), "abc".to_string())]);
        let bytes = metric_to_json(&m, &prov).unwrap();
        let (back, prov_back) = metric_from_json(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(prov_back, prov);
        let p = back.projector();
        let idem = (&p.dot(p) - p).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(idem <= 1e-8);

        let text = String::from_utf8(bytes).unwrap();
        let tampered = text.replacen("0.125", "0.25", 1);
        assert!(matches!(metric_from_json(tampered.as_bytes()), Err(Error::Integrity(_))));
        assert!(matches!(metric_from_json(b"{not json"), Err(Error::Integrity(_))));
    }

    #[test]
    fn logistic_matches_separable_direction() {
        let x = array![[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]];
        let y = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let fit = fit_logistic(&x, &y, 1e-2, 100, 1e-12);
        assert!(fit.converged);
        assert!(fit.coef[0] > 0.0);
    }
}
