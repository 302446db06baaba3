use ndarray::{Array1, Array2};
use proptest::prelude::*;

use indfair::dataset::{three_way_split, Role, Sensitive, SplitSpec, TabularDataset};
use indfair::fair_metric::{fair_distance, FairMetric};
use indfair::fairness_eval::{concordance_auc, ifm_from_labels, lipschitz_from_proba};
use indfair::ifgb::{solve_adversary_lp, CandidateTable};
use indfair::models::{predict_proba, Activation, SmoothClassifier};

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("f{j}")).collect()
}

fn metric_strategy(p: usize) -> impl Strategy<Value = FairMetric> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, p), 0..p.min(3))
        .prop_map(move |dirs| FairMetric::from_directions(&dirs, names(p), 0.0).unwrap())
}

fn vector(p: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(-3.0..3.0f64, p).prop_map(Array1::from)
}

fn test_set(x: Array2<f64>) -> TabularDataset {
    let n = x.nrows();
    let p = x.ncols();
    TabularDataset::from_numeric(x, names(p), vec![0; n], None)
        .unwrap()
        .with_role(Role::Test)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_is_orthonormal_and_projector_idempotent(m in (1usize..6).prop_flat_map(metric_strategy)) {
        let b = m.basis();
        let gram = b.dot(&b.t());
        for ((i, j), v) in gram.indexed_iter() {
            let expected = if i == j { 1.0 } else { 0.0 };
            prop_assert!((v - expected).abs() <= 1e-10);
        }
        let p = m.projector();
        prop_assert!((p.dot(p) - p).iter().all(|v| v.abs() <= 1e-8));
        prop_assert!((p - &p.t()).iter().all(|v| v.abs() <= 1e-12));
        let sigma = m.complement();
        for row in b.rows() {
            prop_assert!(sigma.dot(&row).iter().all(|v| v.abs() <= 1e-8));
        }
    }

    #[test]
    fn fair_distance_is_a_seminorm(
        (m, x, y, z, c, t) in (1usize..6).prop_flat_map(|p| (
            metric_strategy(p), vector(p), vector(p), vector(p), vector(p), prop::collection::vec(-5.0..5.0f64, 3),
        ))
    ) {
        let d = |a: &Array1<f64>, b: &Array1<f64>| fair_distance(&m, a.view(), b.view()).unwrap();
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() <= 1e-12);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
        prop_assert!((d(&(&x + &c), &(&y + &c)) - d(&x, &y)).abs() <= 1e-9);
        for (row, s) in m.basis().rows().into_iter().zip(t) {
            let shifted = &y + &(&row * s);
            prop_assert!((d(&x, &shifted) - d(&x, &y)).abs() <= 1e-8);
        }
    }

    #[test]
    fn ifm_is_row_order_invariant(
        (points, labels, perm_seed, grid) in (2usize..40).prop_flat_map(|n| (
            prop::collection::vec(prop::collection::vec(0..5i32, 2), n),
            prop::collection::vec(0..2u8, n),
            any::<u64>(),
            prop::collection::btree_set(0..60u32, 1..6),
        ))
    ) {
        let n = points.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| points[i][j] as f64);
        let m = FairMetric::from_directions(&[vec![1.0, 1.0]], names(2), 0.0).unwrap();
        let grid: Vec<f64> = grid.into_iter().map(|g| g as f64 / 10.0).collect();
        let a = ifm_from_labels(&labels, &m, &test_set(x.clone()), &grid, None, 0).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let xp = Array2::from_shape_fn((n, 2), |(i, j)| x[[perm[i], j]]);
        let lp: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let b = ifm_from_labels(&lp, &m, &test_set(xp), &grid, None, 0).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.pair_counts.windows(2).all(|w| w[0] <= w[1]));
        for (v, c) in a.ifm.iter().zip(&a.pair_counts) {
            prop_assert_eq!(v.is_some(), *c > 0);
        }
    }

    #[test]
    fn sampled_with_full_budget_equals_exhaustive(
        (points, proba) in (2usize..30).prop_flat_map(|n| (
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(0.0..1.0f64, n),
        ))
    ) {
        let n = points.len();
        let ds = test_set(Array2::from_shape_fn((n, 1), |(i, _)| points[i]));
        let m = FairMetric::euclidean(names(1));
        let full = lipschitz_from_proba(&proba, &m, &ds, 1.0, None, 0).unwrap();
        let budget = (n * (n - 1) / 2) as u64;
        let same = lipschitz_from_proba(&proba, &m, &ds, 1.0, Some(budget), 3).unwrap();
        prop_assert_eq!(full.alpha, same.alpha);
        prop_assert!(full.alpha.unwrap() <= 1.0);
    }

    #[test]
    fn auc_invariant_under_monotone_transforms(
        (raw, labels) in (2usize..80).prop_flat_map(|n| (
            prop::collection::vec(0..1000u32, n),
            prop::collection::vec(0..2u8, n),
        ))
    ) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let s: Vec<f64> = raw.iter().map(|&v| v as f64 / 1000.0).collect();
        let base = concordance_auc(&s, &labels).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| 3.0 * v - 7.0).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let logit: Vec<f64> = s.iter().map(|v| (v + 0.01).ln() - (1.01 - v).ln()).collect();
        prop_assert_eq!(concordance_auc(&affine, &labels), Some(base));
        prop_assert_eq!(concordance_auc(&exp, &labels), Some(base));
        prop_assert_eq!(concordance_auc(&logit, &labels), Some(base));
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn transport_plan_invariants(
        (losses, pts, budgets) in (1usize..9).prop_flat_map(|n| (
            prop::collection::vec(0.0..3.0f64, n),
            prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), n),
            prop::collection::vec(0.0..0.5f64, 2),
        ))
    ) {
        let n = losses.len();
        let d2 = Array2::from_shape_fn((n, n), |(i, j)| (pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2));
        let t = CandidateTable::from_dense(&d2).unwrap();
        let (lo, hi) = (budgets[0].min(budgets[1]), budgets[0].max(budgets[1]));
        let a = solve_adversary_lp(&losses, &t, lo).unwrap();
        let b = solve_adversary_lp(&losses, &t, hi).unwrap();
        prop_assert!(a.objective <= b.objective + 1e-12);
        for plan in [&a, &b] {
            let dense = plan.dense();
            for row in dense.rows() {
                prop_assert!((row.sum() - 1.0 / n as f64).abs() <= 1e-10);
            }
            prop_assert!((&dense * &d2).sum() <= plan.budget + 1e-8);
            prop_assert!((plan.column_weights().iter().sum::<f64>() - n as f64).abs() <= 1e-8);
            prop_assert!((0.0..=1.0).contains(&plan.moved_mass_fraction));
        }
    }

    #[test]
    fn split_is_a_partition(n in 3usize..400, mf in 0.05..0.45f64, tf in 0.05..0.45f64, seed in any::<u64>(), strat in any::<bool>()) {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let sens = Sensitive::from_values("g", &(0..n).map(|i| if i % 2 == 0 { "M" } else { "F" }).collect::<Vec<_>>());
        let ds = TabularDataset::from_numeric(x, names(1), labels, Some(sens)).unwrap();
        let spec = SplitSpec { metric_fraction: mf, test_fraction: tf, seed, stratify_on_label: strat };
        let split = three_way_split(&ds, &spec).unwrap();
        let m = &split.manifest;
        let mut all: Vec<usize> = m.metric_train.iter().chain(&m.main_train).chain(&m.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!((m.test.len() as f64 - n as f64 * tf).abs() <= 1.0);
        prop_assert!((m.metric_train.len() as f64 - n as f64 * mf).abs() <= 1.0);
        prop_assert!(split.main_train.sensitive().is_none());
        prop_assert!(split.test.sensitive().is_some());
        let again = three_way_split(&ds, &spec).unwrap();
        prop_assert_eq!(&again.manifest, m);
    }

    #[test]
    fn predictions_are_permutation_equivariant(rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..30), seed in 0u64..100) {
        let mut m = SmoothClassifier::init(names(3), &[5], Activation::Tanh, seed);
        // the output layer starts at zero; give it weights so outputs vary
        let last = m.layers.len() - 1;
        m.layers[last].weights.iter_mut().enumerate().for_each(|(k, w)| *w = 0.3 * (k as f64 + 1.0));
        let n = rows.len();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| rows[i][j]);
        let rev = Array2::from_shape_fn((n, 3), |(i, j)| rows[n - 1 - i][j]);
        let a = predict_proba(&m, &x).unwrap();
        let mut b = predict_proba(&m, &rev).unwrap();
        b.reverse();
        prop_assert_eq!(a, b);
    }
}
