//! Boosting properties: split search against exhaustive enumeration,
//! min_child_weight on fitted trees, shrinkage, determinism and recovery of
//! planted structure.

mod common;

use common::{exhaustive_tree, pairwise_auc, route, OracleNode, SplitInstance};
use failpred::gbt::{
    feature_importance, fit, grad_hess, grow_tree, predict_scores, select_top_k, split_gain, DenseMatrix, Ensemble,
    GbtConfig, TreeNode, TreeParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

/// Logistic loss as a function of the margin, `ln(1 + e^m) - y m`, in its
/// numerically stable form.
fn log_loss_of_margin(m: f64, y: u8) -> f64 {
    m.max(0.0) + (-m.abs()).exp().ln_1p() - f64::from(y) * m
}

/// First and second derivatives by five-point central differences.
fn central_differences(f: impl Fn(f64) -> f64, x: f64) -> (f64, f64) {
    let e = 1e-3;
    let (a, b, c, d, o) = (f(x + 2.0 * e), f(x + e), f(x - e), f(x - 2.0 * e), f(x));
    let first = (-a + 8.0 * b - 8.0 * c + d) / (12.0 * e);
    let second = (-a + 16.0 * b - 30.0 * o + 16.0 * c - d) / (12.0 * e * e);
    (first, second)
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

fn same_tree(got: &TreeNode, want: &OracleNode) -> Result<(), String> {
    match (got, want) {
        (TreeNode::Leaf { value }, OracleNode::Leaf(v)) => {
            if (value - v).abs() <= 1e-12 {
                Ok(())
            } else {
                Err(format!("leaf {value} vs {v}"))
            }
        }
        (
            TreeNode::Split {
                feature,
                threshold,
                default_left,
                gain,
                left,
                right,
            },
            OracleNode::Split {
                feature: f,
                threshold: t,
                default_left: d,
                gain: g,
                left: l,
                right: r,
            },
        ) => {
            if (feature, threshold, default_left) != (f, t, d) {
                return Err(format!("split ({feature}, {threshold}, {default_left}) vs ({f}, {t}, {d})"));
            }
            if (gain - g).abs() > 1e-12 {
                return Err(format!("gain {gain} vs {g}"));
            }
            same_tree(left, l)?;
            same_tree(right, r)
        }
        (a, b) => Err(format!("shape {a:?} vs {b:?}")),
    }
}

/// Smallest child hessian over every split, routing `rows` with hessians `h`.
fn min_child_hessian(tree: &TreeNode, value_of: &dyn Fn(usize, usize) -> f64, rows: &[usize], h: &[f64]) -> f64 {
    match tree {
        TreeNode::Leaf { .. } => f64::INFINITY,
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
            ..
        } => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| {
                let v = value_of(row, *feature);
                if v.is_nan() {
                    *default_left
                } else {
                    v < *threshold
                }
            });
            let hl: f64 = l.iter().map(|&i| h[i]).sum();
            let hr: f64 = r.iter().map(|&i| h[i]).sum();
            hl.min(hr)
                .min(min_child_hessian(left, value_of, &l, h))
                .min(min_child_hessian(right, value_of, &r, h))
        }
    }
}

fn params_of(inst: &SplitInstance) -> TreeParams {
    TreeParams {
        max_depth: inst.max_depth,
        min_child_weight: inst.min_child_weight,
        lambda: inst.lambda,
        gamma: inst.gamma,
    }
}

fn matrix_of(inst: &SplitInstance) -> DenseMatrix {
    DenseMatrix::from_columns(names(inst.columns.len()), inst.columns.clone()).unwrap()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Vec<Vec<f64>> {
    (0..f).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn margins_after_each_tree(e: &Ensemble, m: &DenseMatrix) -> Vec<Vec<f64>> {
    let mut margins = vec![e.base_score; m.n_rows()];
    let mut history = vec![margins.clone()];
    for t in &e.trees {
        for (r, v) in margins.iter_mut().enumerate() {
            *v += e.config.learning_rate * t.eval_row(m, r);
        }
        history.push(margins.clone());
    }
    history
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn split_choice_equals_exhaustive_enumeration(seed in any::<u64>()) {
        let inst = SplitInstance::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let m = matrix_of(&inst);
        let tree = grow_tree(&m, &inst.g, &inst.h, &params_of(&inst));
        if let Err(e) = same_tree(&tree, &exhaustive_tree(&inst)) {
            return Err(TestCaseError::fail(e));
        }
        let rows: Vec<usize> = (0..inst.n_rows()).collect();
        let value_of = |r: usize, c: usize| inst.columns[c][r];
        prop_assert!(min_child_hessian(&tree, &value_of, &rows, &inst.h) >= inst.min_child_weight);
        if let TreeNode::Split { feature, threshold, default_left, .. } = &tree {
            let (l, r) = route(&inst, &rows, *feature, *threshold, *default_left);
            prop_assert!(!l.is_empty() && !r.is_empty());
        }
    }

    #[test]
    fn split_gain_equals_its_formula(
        gl in -50.0f64..50.0, hl in 0.0f64..50.0, gr in -50.0f64..50.0, hr in 0.0f64..50.0,
        lambda in 0.01f64..5.0, gamma in 0.0f64..2.0,
    ) {
        let want = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - (gl + gr).powi(2) / (hl + hr + lambda)) - gamma;
        let got = split_gain(gl, hl, gr, hr, lambda, gamma);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences(m in -6.0f64..6.0, y in 0u8..2) {
        let loss = |m: f64| log_loss_of_margin(m, y);
        let (g, h) = grad_hess(sigmoid(m), y);
        let (g_fd, h_fd) = central_differences(loss, m);
        prop_assert!((g - g_fd).abs() <= 1e-6 * g.abs().max(1e-3), "g {} vs {}", g, g_fd);
        prop_assert!((h - h_fd).abs() <= 1e-6 * h.abs().max(1e-3), "h {} vs {}", h, h_fd);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fitted_splits_respect_min_child_weight(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(20..120);
        let mut cols = gaussian_matrix(&mut rng, n, 4);
        for v in cols[3].iter_mut() {
            if rng.gen_bool(0.3) {
                *v = f64::NAN;
            }
        }
        let labels: Vec<u8> = (0..n).map(|r| u8::from(cols[0][r] + rng.gen_range(-1.0..1.0) > 0.5)).collect();
        prop_assume!(labels.iter().any(|&y| y == 1) && labels.iter().any(|&y| y == 0));
        let m = DenseMatrix::from_columns(names(4), cols).unwrap();
        let cfg = GbtConfig {
            learning_rate: 0.3,
            n_estimators: 8,
            max_depth: 3,
            min_child_weight: rng.gen_range(0.2..2.0),
            ..GbtConfig::default()
        };
        let e = fit(&m, &labels, &cfg).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let value_of = |r: usize, c: usize| m.get(r, c);
        for (t, margins) in e.trees.iter().zip(margins_after_each_tree(&e, &m)) {
            let h: Vec<f64> = margins.iter().map(|&v| sigmoid(v) * (1.0 - sigmoid(v))).collect();
            prop_assert!(min_child_hessian(t, &value_of, &rows, &h) >= cfg.min_child_weight - 1e-9);
        }
    }
}

#[test]
fn symmetric_null_split_costs_gamma() {
    assert_eq!(split_gain(0.0, 3.0, 0.0, 3.0, 1.0, 0.25), -0.25);
    assert_eq!(split_gain(-2.0, 4.0, 2.0, 4.0, 1.0, 0.0), 0.8);
}

#[test]
fn gradient_at_p_point_three() {
    for y in [0u8, 1] {
        let m = (0.3f64 / 0.7).ln();
        let loss = |m: f64| log_loss_of_margin(m, y);
        let (g, h) = grad_hess(0.3, y);
        let (g_fd, h_fd) = central_differences(loss, m);
        assert!((g - g_fd).abs() <= 1e-6);
        assert!((h - h_fd).abs() <= 1e-6);
    }
}

#[test]
fn pure_leaf_round_matches_the_hand_formula() {
    let labels = [1u8, 0, 0, 1, 0, 0, 0, 0];
    let m = DenseMatrix::from_columns(names(1), vec![(0..8).map(f64::from).collect()]).unwrap();
    let cfg = GbtConfig {
        learning_rate: 0.3,
        n_estimators: 1,
        max_depth: 2,
        min_child_weight: 1e9,
        lambda_leaf: 1.0,
        ..GbtConfig::default()
    };
    let e = fit(&m, &labels, &cfg).unwrap();
    let base = (0.25f64 / 0.75).ln();
    let p0 = sigmoid(base);
    let g: f64 = labels.iter().map(|&y| p0 - f64::from(y)).sum();
    let h = 8.0 * p0 * (1.0 - p0);
    let want = sigmoid(base + 0.3 * (-g / (h + 1.0)));
    for s in predict_scores(&e, &m).unwrap() {
        assert!((s - want).abs() <= 1e-12, "{s} vs {want}");
    }
}

#[test]
fn halving_the_learning_rate_halves_the_first_increment() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cols = gaussian_matrix(&mut rng, 300, 3);
    let labels: Vec<u8> = (0..300).map(|r| u8::from(cols[1][r] > 0.2)).collect();
    let m = DenseMatrix::from_columns(names(3), cols).unwrap();
    let cfg = GbtConfig {
        learning_rate: 0.2,
        n_estimators: 1,
        max_depth: 3,
        min_child_weight: 1.0,
        ..GbtConfig::default()
    };
    let full = fit(&m, &labels, &cfg).unwrap();
    let half = fit(&m, &labels, &GbtConfig { learning_rate: 0.1, ..cfg }).unwrap();
    assert_eq!(full.trees, half.trees);
    let a = full.predict_margins(&m).unwrap();
    let b = half.predict_margins(&m).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let (dx, dy) = (x - full.base_score, y - half.base_score);
        assert!((dx - 2.0 * dy).abs() <= 1e-15 * dx.abs().max(1.0), "{dx} vs {dy}");
    }
}

#[test]
fn thread_count_does_not_change_the_ensemble() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cols = gaussian_matrix(&mut rng, 2_000, 12);
    for v in cols[4].iter_mut() {
        *v = (*v * 2.0).round();
    }
    let labels: Vec<u8> = (0..2_000)
        .map(|r| u8::from(cols[0][r] + cols[4][r] * 0.5 + rng.gen_range(-1.0..1.0) > 1.0))
        .collect();
    let m = DenseMatrix::from_columns(names(12), cols).unwrap();
    let cfg = GbtConfig {
        n_estimators: 15,
        subsample_rows: 0.8,
        subsample_cols: 0.7,
        seed: 99,
        ..GbtConfig::default()
    };
    let text = |threads| {
        let e = fit(&m, &labels, &GbtConfig { threads, ..cfg.clone() }).unwrap();
        let mut out = Vec::new();
        e.write_to(&mut out).unwrap();
        out
    };
    let one = text(1);
    assert_eq!(one, text(1));
    assert_eq!(one, text(4));
}

#[test]
fn xor_needs_depth_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 2_000;
    let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<u8> = (0..n).map(|r| u8::from((cols[0][r] > 0.0) != (cols[1][r] > 0.0))).collect();
    let m = DenseMatrix::from_columns(names(2), cols).unwrap();
    let train_auc = |depth| {
        let cfg = GbtConfig {
            learning_rate: 0.1,
            n_estimators: 50,
            max_depth: depth,
            min_child_weight: 1.0,
            ..GbtConfig::default()
        };
        let e = fit(&m, &labels, &cfg).unwrap();
        pairwise_auc(&predict_scores(&e, &m).unwrap(), &labels)
    };
    let deep = train_auc(2);
    let stump = train_auc(1);
    assert!(deep >= 0.95, "depth 2 AUC {deep}");
    assert!(stump <= 0.75, "depth 1 AUC {stump}");
}

#[test]
fn planted_dominant_feature_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 3_000;
    let cols = gaussian_matrix(&mut rng, n, 20);
    let labels: Vec<u8> = (0..n)
        .map(|r| u8::from(rng.gen_bool(sigmoid(3.0 * cols[7][r] + 0.3 * cols[2][r] - 1.0))))
        .collect();
    let m = DenseMatrix::from_columns(names(20), cols).unwrap();
    let e = fit(&m, &labels, &GbtConfig::preliminary()).unwrap();
    let imp = feature_importance(&e);
    let top = imp.iter().max_by(|a, b| a.gain_sq.total_cmp(&b.gain_sq)).unwrap();
    assert_eq!(top.name, "f7");
    assert_eq!(select_top_k(&m, &labels, 1, &GbtConfig::preliminary()).unwrap(), vec!["f7"]);
}

#[test]
fn five_planted_features_are_selected() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let n = 5_000;
    let planted = [3usize, 11, 19, 30, 42];
    let cols = gaussian_matrix(&mut rng, n, 50);
    let labels: Vec<u8> = (0..n)
        .map(|r| {
            let z: f64 = planted.iter().map(|&c| 1.5 * cols[c][r]).sum();
            u8::from(rng.gen_bool(sigmoid(z)))
        })
        .collect();
    let m = DenseMatrix::from_columns(names(50), cols).unwrap();
    let mut got = select_top_k(&m, &labels, 5, &GbtConfig::preliminary()).unwrap();
    got.sort();
    let mut want: Vec<String> = planted.iter().map(|c| format!("f{c}")).collect();
    want.sort();
    assert_eq!(got, want);
}
