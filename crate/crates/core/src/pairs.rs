//! Pair enumeration for pairwise audits: exhaustive over all `i < j`, or a
//! seeded uniform sample of unordered pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par;

/// How the pairs of an audit were chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PairSampling {
    Exhaustive,
    Sampled { count: u64, seed: u64 },
}

pub fn total_pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

#[derive(Clone, Debug)]
pub enum PairPlan {
    Exhaustive { n: usize },
    Sampled { pairs: Vec<(u32, u32)>, seed: u64 },
}

impl PairPlan {
    /// Exhaustive when `budget` is absent or covers every pair, otherwise
    /// `budget` pairs drawn uniformly (with replacement) from the unordered
    /// pairs with `i != j`.
    pub fn new(n: usize, budget: Option<u64>, seed: u64) -> Self {
        let total = total_pairs(n);
        match budget {
            Some(b) if b < total => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pairs = (0..b)
                    .map(|_| {
                        let i = rng.random_range(0..n as u32);
                        let mut j = rng.random_range(0..n as u32 - 1);
                        if j >= i {
                            j += 1;
                        }
                        (i.min(j), i.max(j))
                    })
                    .collect();
                PairPlan::Sampled { pairs, seed }
            }
            _ => PairPlan::Exhaustive { n },
        }
    }

    pub fn len(&self) -> u64 {
        match self {
            PairPlan::Exhaustive { n } => total_pairs(*n),
            PairPlan::Sampled { pairs, .. } => pairs.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn descriptor(&self) -> PairSampling {
        match self {
            PairPlan::Exhaustive { .. } => PairSampling::Exhaustive,
            PairPlan::Sampled { pairs, seed } => PairSampling::Sampled {
                count: pairs.len() as u64,
                seed: *seed,
            },
        }
    }

    /// Sums per-pair integer histograms of length `width`.
    pub fn histogram<F>(&self, width: usize, f: F) -> Vec<u64>
    where
        F: Fn(usize, usize, &mut [u64]) + Sync + Send,
    {
        match self {
            PairPlan::Exhaustive { n } => par::sum_histograms(*n, width, |i, acc| {
                for j in i + 1..*n {
                    f(i, j, acc);
                }
            }),
            PairPlan::Sampled { pairs, .. } => {
                const CHUNK: usize = 4096;
                let n_chunks = pairs.len().div_ceil(CHUNK);
                par::sum_histograms(n_chunks, width, |c, acc| {
                    for &(i, j) in &pairs[c * CHUNK..((c + 1) * CHUNK).min(pairs.len())] {
                        f(i as usize, j as usize, acc);
                    }
                })
            }
        }
    }

    /// Per-pair values in a fixed order (row-major `i < j` when exhaustive).
    pub fn map<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize, usize) -> R + Sync + Send,
    {
        match self {
            PairPlan::Exhaustive { n } => par::map_indices(*n, |i| {
                (i + 1..*n).map(|j| f(i, j)).collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect(),
            PairPlan::Sampled { pairs, .. } => {
                par::map_indices(pairs.len(), |k| f(pairs[k].0 as usize, pairs[k].1 as usize))
            }
        }
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_when_budget_covers_all() {
        assert!(matches!(PairPlan::new(5, Some(10), 0), PairPlan::Exhaustive { .. }));
        assert!(matches!(PairPlan::new(5, None, 0), PairPlan::Exhaustive { .. }));
        let s = PairPlan::new(5, Some(9), 0);
        assert_eq!(s.len(), 9);
        for (i, j) in s.map(|i, j| (i, j)) {
            assert!(i < j && j < 5);
        }
    }

    #[test]
    fn exhaustive_visits_each_pair_once() {
        let plan = PairPlan::new(7, None, 0);
        let h = plan.histogram(1, |_, _, acc| acc[0] += 1);
        assert_eq!(h[0], 21);
        assert_eq!(plan.map(|i, j| i * 10 + j).len(), 21);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), Some(3.0));
        assert_eq!(quantile_sorted(&v, 0.0), Some(1.0));
        assert_eq!(quantile_sorted(&v, 0.25), Some(2.0));
        assert_eq!(quantile_sorted(&[], 0.3), None);
    }
}
