//! Individually fair gradient boosting.
//!
//! Before each boosting round an adversary redistributes the empirical
//! distribution over the training rows. Each row may move its `1/n` mass to
//! comparable rows (small fair distance) with higher loss, subject to a
//! transport budget:
//!
//! ```text
//! max_Π  Σᵢⱼ Πᵢⱼ · loss(j)
//! s.t.   Σⱼ Πᵢⱼ = 1/n,   Σᵢⱼ Πᵢⱼ · d(xᵢ, xⱼ)² ≤ ε,   Π ≥ 0
//! ```
//!
//! The LP is solved through its Lagrangian: for a multiplier `λ` every row
//! sends its mass to `argmaxⱼ loss(j) − λ·d²ᵢⱼ`; bisection on `λ` finds the
//! budget crossing and the rows that switch there are mixed to spend the
//! budget exactly. The column sums of the plan become the sample weights
//! of the next tree.

use serde::{Deserialize, Serialize};

use crate::dataset::{Role, TabularDataset};
use crate::error::{Error, Result};
use crate::fair_metric::FairMetric;
use crate::models::{fit_boosted, BoostedFit, RoundLog, RoundWeights, TrainConfig};
use crate::par;

/// Per-row comparable samples, each with its squared fair distance. Rows
/// are sorted by `(d², column)` and always contain the row itself at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateTable {
    rows: Vec<Vec<(usize, f64)>>,
}

impl CandidateTable {
    /// Builds the table from explicit rows. Infinite distances are
    /// dropped (the pair is not comparable).
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut out = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut row: Vec<(usize, f64)> = row.into_iter().filter(|(_, d)| d.is_finite()).collect();
            if let Some(&(j, d)) = row.iter().find(|(j, d)| *j >= n || d.is_nan() || *d < 0.0) {
                return Err(Error::Argument(format!(
                    "row {i}: invalid candidate ({j}, {d})"
                )));
            }
            if !row.iter().any(|&(j, d)| j == i && d == 0.0) {
                return Err(Error::Argument(format!(
                    "row {i} must include itself at distance 0"
                )));
            }
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            row.dedup_by_key(|c| c.0);
            out.push(row);
        }
        Ok(CandidateTable { rows: out })
    }

    /// Full table from a dense `n × n` matrix of squared distances.
    pub fn from_dense(d2: &ndarray::Array2<f64>) -> Result<Self> {
        Error::check_dim(d2.nrows(), d2.ncols())?;
        Self::from_rows(
            d2.rows()
                .into_iter()
                .map(|r| r.iter().copied().enumerate().collect())
                .collect(),
        )
    }

    /// The `cap` nearest rows (by fair distance) for every row of `x`,
    /// including the row itself.
    pub fn nearest(metric: &FairMetric, x: &ndarray::Array2<f64>, cap: usize) -> Result<Self> {
        Self::nearest_where(metric, x, cap, |_, _| true)
    }

    /// Like [`nearest`](Self::nearest), but rows only see rows with the same
    /// label: moving mass across labels has infinite cost.
    pub fn nearest_same_label(
        metric: &FairMetric,
        x: &ndarray::Array2<f64>,
        labels: &[u8],
        cap: usize,
    ) -> Result<Self> {
        Error::check_dim(x.nrows(), labels.len())?;
        Self::nearest_where(metric, x, cap, |i, j| labels[i] == labels[j])
    }

    fn nearest_where<F>(metric: &FairMetric, x: &ndarray::Array2<f64>, cap: usize, allowed: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> bool + Sync,
    {
        if cap == 0 {
            return Err(Error::Argument("candidate cap must be at least 1".into()));
        }
        Error::check_dim(metric.n_features(), x.ncols())?;
        let z = metric.fair_coordinates(x).as_standard_layout().into_owned();
        let data = z.as_slice().expect("standard layout");
        let (n, p) = z.dim();
        let rows = par::map_indices(n, |i| {
            let zi = &data[i * p..(i + 1) * p];
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&j| allowed(i, j))
                .map(|j| {
                    let d: f64 = if i == j {
                        0.0
                    } else {
                        zi.iter()
                            .zip(&data[j * p..(j + 1) * p])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum()
                    };
                    (j, d)
                })
                .collect();
            let key = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if cap < all.len() {
                all.select_nth_unstable_by(cap - 1, key);
                all.truncate(cap);
            }
            all.sort_by(key);
            if !all.iter().any(|&(j, _)| j == i) {
                all.pop();
                all.insert(0, (i, 0.0));
                all.sort_by(key);
            }
            all
        });
        Ok(CandidateTable { rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

/// Solution of the adversary LP, stored row-sparse. Each row lists the
/// columns receiving its mass with the share of the row's `1/n` mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub budget: f64,
    /// Multiplier at the budget crossing; infinite when the budget is zero.
    pub lambda_star: f64,
    /// `Σᵢⱼ Πᵢⱼ · loss(j)`.
    pub objective: f64,
    /// `Σᵢⱼ Πᵢⱼ · d²ᵢⱼ`.
    pub cost: f64,
    /// Mass that left its own row, in `[0, 1]`.
    pub moved_mass_fraction: f64,
}

impl TransportPlan {
    fn identity(n: usize, losses: &[f64], budget: f64) -> Self {
        TransportPlan {
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
            budget,
            lambda_star: f64::INFINITY,
            objective: losses.iter().sum::<f64>() / n.max(1) as f64,
            cost: 0.0,
            moved_mass_fraction: 0.0,
        }
    }

    /// Dense `Π` with entries `share / n`.
    pub fn dense(&self) -> ndarray::Array2<f64> {
        let mut out = ndarray::Array2::zeros((self.n, self.n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, s) in row {
                out[[i, j]] += s / self.n as f64;
            }
        }
        out
    }

    /// `wⱼ = n · Σᵢ Πᵢⱼ`; sums to `n`.
    pub fn column_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n];
        for row in &self.rows {
            for &(j, s) in row {
                w[j] += s;
            }
        }
        w
    }
}

/// Lagrangian best response of every row at multiplier `lambda`, as an
/// index into the row's candidate list. Ties go to the lowest column.
fn best_response(losses: &[f64], table: &CandidateTable, lambda: f64) -> Vec<usize> {
    par::map_indices(table.n_rows(), |i| {
        let row = table.row(i);
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (k, &(j, d2)) in row.iter().enumerate() {
            let v = losses[j] - lambda * d2;
            if v > best_val || (v == best_val && j < row[best].0) {
                best = k;
                best_val = v;
            }
        }
        best
    })
}

fn cost_of(table: &CandidateTable, choice: &[usize]) -> f64 {
    let n = choice.len() as f64;
    choice
        .iter()
        .enumerate()
        .map(|(i, &k)| table.row(i)[k].1)
        .sum::<f64>()
        / n
}

/// Solves the budgeted transport LP over loss values.
pub fn solve_adversary_lp(losses: &[f64], table: &CandidateTable, budget: f64) -> Result<TransportPlan> {
    if !(budget >= 0.0) {
        return Err(Error::Argument(format!("transport budget must be non-negative, got {budget}")));
    }
    let n = losses.len();
    Error::check_dim(n, table.n_rows())?;
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Argument("losses must be finite".into()));
    }
    if n == 0 || budget == 0.0 {
        return Ok(TransportPlan::identity(n, losses, budget));
    }

    let free = best_response(losses, table, 0.0);
    let (choice_lo, choice_hi, lambda_star) = if cost_of(table, &free) <= budget {
        (free.clone(), free, 0.0)
    } else {
        let (lo_l, hi_l) = (
            losses.iter().copied().fold(f64::INFINITY, f64::min),
            losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        let min_d2 = (0..n)
            .flat_map(|i| table.row(i).iter().map(|c| c.1))
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        let mut hi = if hi_l > lo_l && min_d2.is_finite() {
            (hi_l - lo_l) / min_d2
        } else {
            1.0
        };
        let mut hi_choice = best_response(losses, table, hi);
        let mut doublings = 0;
        while cost_of(table, &hi_choice) > budget {
            hi *= 2.0;
            doublings += 1;
            if doublings > 2000 || !hi.is_finite() {
                return Err(Error::Argument(
                    "no feasible multiplier: zero-distance moves exceed the budget".into(),
                ));
            }
            hi_choice = best_response(losses, table, hi);
        }
        let mut lo = 0.0;
        let mut lo_choice = free;
        for _ in 0..200 {
            let mid = lo + (hi - lo) / 2.0;
            if mid <= lo || mid >= hi {
                break;
            }
            let c = best_response(losses, table, mid);
            if cost_of(table, &c) <= budget {
                hi = mid;
                hi_choice = c;
            } else {
                lo = mid;
                lo_choice = c;
            }
        }
        (lo_choice, hi_choice, hi)
    };

    // Start from the feasible response and move rows toward the infeasible
    // one, best ratio first, splitting the last row to hit the budget.
    let nf = n as f64;
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(table.row(i)[choice_hi[i]].0, 1.0)]).collect();
    let mut spare = budget - cost_of(table, &choice_hi);
    let mut switches: Vec<(usize, f64, f64)> = (0..n)
        .filter(|&i| choice_lo[i] != choice_hi[i])
        .map(|i| {
            let (jl, dl) = table.row(i)[choice_lo[i]];
            let (jh, dh) = table.row(i)[choice_hi[i]];
            (i, (losses[jl] - losses[jh]) / nf, (dl - dh) / nf)
        })
        .filter(|&(_, gain, _)| gain > 0.0)
        .collect();
    let ratio = |gain: f64, cost: f64| if cost <= 0.0 { f64::INFINITY } else { gain / cost };
    switches.sort_by(|a, b| ratio(b.1, b.2).total_cmp(&ratio(a.1, a.2)).then(a.0.cmp(&b.0)));
    for (i, _, dcost) in switches {
        let to = table.row(i)[choice_lo[i]].0;
        if dcost <= spare {
            rows[i] = vec![(to, 1.0)];
            spare -= dcost.max(0.0);
        } else {
            let theta = (spare / dcost).clamp(0.0, 1.0);
            if theta > 0.0 {
                let from = rows[i][0].0;
                rows[i] = vec![(from, 1.0 - theta), (to, theta)];
            }
            break;
        }
    }

    let mut objective = 0.0;
    let mut cost = 0.0;
    let mut stayed = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for &(j, s) in row {
            objective += s * losses[j];
            let d2 = table.row(i).iter().find(|c| c.0 == j).map_or(0.0, |c| c.1);
            cost += s * d2;
            if j == i {
                stayed += s;
            }
        }
    }
    Ok(TransportPlan {
        n,
        rows,
        budget,
        lambda_star,
        objective: objective / nf,
        cost: cost / nf,
        moved_mass_fraction: (1.0 - stayed / nf).clamp(0.0, 1.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IfgbConfig {
    /// Transport budget per round, in mean squared fair distance.
    pub epsilon: f64,
    /// Comparable samples kept per row, nearest first.
    pub candidate_cap: usize,
    /// Keep the candidate table for the whole run instead of rebuilding it
    /// every round.
    pub cache_distances: bool,
    /// Only move mass between rows with the same label.
    pub label_preserving: bool,
    pub train: TrainConfig,
}

impl Default for IfgbConfig {
    fn default() -> Self {
        IfgbConfig {
            epsilon: 0.05,
            candidate_cap: 50,
            cache_distances: true,
            label_preserving: true,
            train: TrainConfig::default(),
        }
    }
}

struct IfgbWeights<'a> {
    metric: &'a FairMetric,
    x: &'a ndarray::Array2<f64>,
    labels: Option<&'a [u8]>,
    cap: usize,
    cached: Option<CandidateTable>,
    budget: f64,
}

impl IfgbWeights<'_> {
    fn build(&self) -> Result<CandidateTable> {
        match self.labels {
            Some(y) => CandidateTable::nearest_same_label(self.metric, self.x, y, self.cap),
            None => CandidateTable::nearest(self.metric, self.x, self.cap),
        }
    }
}

impl RoundWeights for IfgbWeights<'_> {
    fn weights(&mut self, _round: usize, losses: &[f64], log: &mut RoundLog) -> Result<Option<Vec<f64>>> {
        let plan = if self.budget == 0.0 {
            TransportPlan::identity(losses.len(), losses, 0.0)
        } else {
            match &self.cached {
                Some(t) => solve_adversary_lp(losses, t, self.budget)?,
                None => solve_adversary_lp(losses, &self.build()?, self.budget)?,
            }
        };
        log.adv_objective = Some(plan.objective);
        log.lambda_star = Some(plan.lambda_star);
        log.moved_mass_fraction = Some(plan.moved_mass_fraction);
        Ok(Some(plan.column_weights()))
    }
}

/// Boosting against the transport adversary. The candidate table is built
/// once from the frozen metric unless caching is disabled.
pub fn train_ifgb(ds: &TabularDataset, metric: &FairMetric, cfg: &IfgbConfig) -> Result<BoostedFit> {
    if ds.role() != Role::MainTrain || ds.sensitive().is_some() {
        return Err(Error::Isolation(format!(
            "IFGB trains only on the main_train split, got {:?}",
            ds.role()
        )));
    }
    if !(cfg.epsilon >= 0.0) {
        return Err(Error::Argument("ifgb epsilon must be non-negative".into()));
    }
    if cfg.candidate_cap == 0 {
        return Err(Error::Argument("candidate_cap must be at least 1".into()));
    }
    metric.check_features(ds.feature_names())?;
    let mut weights = IfgbWeights {
        metric,
        x: ds.features(),
        labels: cfg.label_preserving.then(|| ds.labels()),
        cap: cfg.candidate_cap,
        cached: None,
        budget: cfg.epsilon,
    };
    if cfg.cache_distances && cfg.epsilon > 0.0 {
        weights.cached = Some(weights.build()?);
    }
    fit_boosted(ds, &cfg.train, &mut weights)
}
