use churnforge::classical::*;
use churnforge::data::{Day, WindowSample};
use churnforge::metrics::{roc_auc, Scorer};
use churnforge::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

fn auc_of(scores: &[f64], y: &[f64]) -> f64 {
    let labels: Vec<u8> = y.iter().map(|v| *v as u8).collect();
    roc_auc(scores, &labels).unwrap()
}

fn xor_set(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        rows.push(vec![a, b]);
        y.push(((a > 0.0) != (b > 0.0)) as u8 as f64);
    }
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn scores(x: &Matrix, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.rows).map(|i| f(x.row(i))).collect()
}

#[test]
fn logreg_separates_a_separable_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..400 {
        let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        if (a + 2.0 * b).abs() < 0.2 {
            continue;
        }
        rows.push(vec![a, b]);
        y.push((a + 2.0 * b > 0.0) as u8 as f64);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let h = fit_logreg(&x, &y, &ones(x.rows), &LogRegConfig::default()).unwrap();
    assert!(auc_of(&scores(&x, |r| h.predict(r)), &y) >= 0.999);
}

#[test]
fn logreg_on_zero_features_predicts_base_rate() {
    let x = Matrix::new(200, 3, vec![0.0; 600]).unwrap();
    let y: Vec<f64> = (0..200).map(|i| (i % 5 == 0) as u8 as f64).collect();
    let h = fit_logreg(&x, &y, &ones(200), &LogRegConfig::default()).unwrap();
    assert!((h.predict(&[0.0, 0.0, 0.0]) - 0.2).abs() <= 1e-6);
    assert!(h.grad_norm <= 1e-6);
}

#[test]
fn logreg_recovers_planted_signs() {
    let planted = [1.5, -2.0, 0.8, -0.6, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..3000 {
        let r: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: f64 = r.iter().zip(&planted).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng);
        y.push(rng.random_bool(1.0 / (1.0 + (-3.0 * z).exp())) as u8 as f64);
        rows.push(r);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let h = fit_logreg(&x, &y, &ones(x.rows), &LogRegConfig::default()).unwrap();
    for (w, p) in h.weights.iter().zip(&planted) {
        assert_eq!(w.signum(), p.signum(), "{:?}", h.weights);
    }
}

#[test]
fn tree_finds_step_boundary() {
    let grid: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
    let x = Matrix::new(100, 1, grid.clone()).unwrap();
    let y: Vec<f64> = grid.iter().map(|v| (*v > 6.25) as u8 as f64).collect();
    let t = fit_tree(&x, &y, &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
    match t.nodes[0] {
        TreeNode::Split { feature, threshold, .. } => {
            assert_eq!(feature, 0);
            assert!((threshold - 6.25).abs() <= 0.1, "{}", threshold);
        }
        _ => panic!("expected a split"),
    }
    assert_eq!(t.depth(), 1);
}

#[test]
fn tree_depth_respects_limit() {
    let (x, y) = xor_set(500, 3);
    for d in 0..6 {
        let t = fit_tree(&x, &y, &TreeConfig { max_depth: d, ..Default::default() }).unwrap();
        assert!(t.depth() <= d);
        for n in &t.nodes {
            if let TreeNode::Leaf { value } = n {
                assert!(value.is_finite());
            }
        }
    }
}

#[test]
fn single_full_tree_forest_equals_tree() {
    let (x, y) = xor_set(300, 4);
    let cfg = ForestConfig { n_trees: 1, bootstrap: false, feature_subsample: FeatureSubsample::All, ..Default::default() };
    let forest = fit_random_forest(&x, &y, &ones(x.rows), &cfg, 9).unwrap();
    let tree = fit_tree(&x, &y, &TreeConfig { max_depth: cfg.max_depth, ..Default::default() }).unwrap();
    assert_eq!(forest[0], tree);
    for i in 0..x.rows {
        assert_eq!(forest_predict(&forest, x.row(i)), tree.predict(x.row(i)));
    }
}

#[test]
fn forest_is_deterministic_and_averages_trees() {
    let (x, y) = xor_set(300, 5);
    let cfg = ForestConfig { n_trees: 20, ..Default::default() };
    let a = fit_random_forest(&x, &y, &ones(x.rows), &cfg, 3).unwrap();
    let b = fit_random_forest(&x, &y, &ones(x.rows), &cfg, 3).unwrap();
    assert_eq!(a, b);
    let c = fit_random_forest(&x, &y, &ones(x.rows), &cfg, 4).unwrap();
    assert_ne!(a, c);
    for i in 0..20 {
        let mean = a.iter().map(|t| t.predict(x.row(i))).sum::<f64>() / 20.0;
        assert!((forest_predict(&a, x.row(i)) - mean).abs() <= 1e-12);
    }
}

#[test]
fn xor_needs_trees() {
    let (x, y) = xor_set(2000, 6);
    let (xt, yt) = xor_set(1000, 7);
    let lr = fit_logreg(&x, &y, &ones(x.rows), &LogRegConfig::default()).unwrap();
    let rf = fit_random_forest(&x, &y, &ones(x.rows), &ForestConfig { n_trees: 50, ..Default::default() }, 1).unwrap();
    let (gbt, _) = fit_gbt(&x, &y, &ones(x.rows), &BoostConfig { n_trees: 100, ..Default::default() }, 1).unwrap();
    let lr_auc = auc_of(&scores(&xt, |r| lr.predict(r)), &yt);
    let rf_auc = auc_of(&scores(&xt, |r| forest_predict(&rf, r)), &yt);
    let gbt_auc = auc_of(&scores(&xt, |r| gbt.predict(r)), &yt);
    assert!(lr_auc <= 0.6, "LR {}", lr_auc);
    assert!(rf_auc >= 0.95, "RF {}", rf_auc);
    assert!(gbt_auc >= 0.95, "GBT {}", gbt_auc);
}

#[test]
fn gbt_without_trees_is_base_rate() {
    let (x, y) = xor_set(400, 8);
    let (h, losses) = fit_gbt(&x, &y, &ones(x.rows), &BoostConfig { n_trees: 0, ..Default::default() }, 0).unwrap();
    let base = y.iter().sum::<f64>() / y.len() as f64;
    assert!((h.predict(x.row(0)) - base).abs() <= 1e-12);
    assert_eq!(losses.len(), 1);
}

#[test]
fn gbt_loss_is_non_increasing_and_prediction_resums() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..1500).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| rng.random_bool(1.0 / (1.0 + (-(4.0 * r[0] * r[1] + r[2])).exp())) as u8 as f64).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    for cfg in [
        BoostConfig::default(),
        BoostConfig { shrinkage: 1.0, max_depth: 6, n_trees: 60, ..Default::default() },
        BoostConfig { subsample: 0.5, n_trees: 80, ..Default::default() },
    ] {
        let (h, losses) = fit_gbt(&x, &y, &ones(x.rows), &cfg, 2).unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose {} -> {}", w[0], w[1]);
        }
        assert!(losses.last().unwrap() < &losses[0]);
        for i in 0..50 {
            let m = h.init + h.trees.iter().map(|t| h.shrinkage * t.predict(x.row(i))).sum::<f64>();
            assert!((h.predict(x.row(i)) - 1.0 / (1.0 + (-m).exp())).abs() <= 1e-12);
        }
    }
}

#[test]
fn gbt_rejects_non_positive_shrinkage() {
    let (x, y) = xor_set(50, 1);
    for s in [0.0, -0.1] {
        let err = fit_gbt(&x, &y, &ones(50), &BoostConfig { shrinkage: s, ..Default::default() }, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

fn samples(n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let level: f64 = rng.random_range(0.0..1.0);
            let x: Vec<f64> = (0..30 * 2).map(|k| if k % 2 == 0 { level + rng.random_range(-0.2..0.2) } else { rng.random_range(-1.0..1.0) }).collect();
            let y = [0.2, 0.4, 0.6, 0.8].map(|c| (level + rng.random_range(-0.1..0.1) < c) as u8);
            WindowSample { user_id: i as u64, anchor_date: Day(0), x, y }
        })
        .collect()
}

#[test]
fn classical_models_roundtrip_and_are_deterministic() {
    let train = samples(400, 10);
    let test = samples(100, 11);
    for kind in [ClassicalKind::Lr, ClassicalKind::Rf, ClassicalKind::Gbt] {
        let mut cfg = ClassicalConfig::new(kind);
        cfg.forest.n_trees = 20;
        cfg.boost.n_trees = 30;
        cfg.seed = 5;
        let a = fit_classical(&train, 2, &cfg).unwrap();
        let b = fit_classical(&train, 2, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.heads.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        a.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"version\": 1"));
        let back = ClassicalModel::load(&p).unwrap();
        assert_eq!(back.predict(&test).unwrap(), a.predict(&test).unwrap());
        for p in a.predict(&test).unwrap().iter().flatten() {
            assert!(*p >= PROB_CLAMP && *p <= 1.0 - PROB_CLAMP);
        }
        let preds = a.predict(&test).unwrap();
        let s: Vec<f64> = preds.iter().map(|p| p[0]).collect();
        let y: Vec<f64> = test.iter().map(|t| t.y[0] as f64).collect();
        assert!(auc_of(&s, &y) > 0.8, "{:?}", kind);
    }
}

#[test]
fn degenerate_week_is_an_error() {
    let mut train = samples(50, 12);
    train.iter_mut().for_each(|s| s.y[2] = 1);
    let err = fit_classical(&train, 2, &ClassicalConfig::new(ClassicalKind::Lr)).unwrap_err();
    assert!(matches!(err, Error::DegenerateLabels(_)));
}

#[test]
fn zero_weight_logreg_predicts_sigmoid_of_intercept() {
    let mut m = fit_classical(&samples(100, 13), 2, &ClassicalConfig::new(ClassicalKind::Lr)).unwrap();
    for h in &mut m.heads {
        if let Head::LogReg(lr) = h {
            lr.weights.iter_mut().for_each(|w| *w = 0.0);
            lr.intercept = -1.3;
        }
    }
    let p = predict_classical(&m, &[0.7, 0.1, -3.0, 2.0]).unwrap();
    assert_eq!(p, [sigmoid(-1.3); 4]);
    assert!(predict_classical(&m, &[0.0; 3]).is_err());
}

#[test]
fn extreme_inputs_stay_inside_the_unit_interval() {
    let train = samples(200, 14);
    for kind in [ClassicalKind::Lr, ClassicalKind::Rf, ClassicalKind::Gbt] {
        let mut cfg = ClassicalConfig::new(kind);
        cfg.forest.n_trees = 5;
        cfg.boost.n_trees = 10;
        let m = fit_classical(&train, 2, &cfg).unwrap();
        for g in [[1e300, -1e300, 1e300, 0.0], [-1e300, 1e300, -1e300, 1e300], [0.0; 4]] {
            for p in predict_classical(&m, &g).unwrap() {
                assert!(p > 0.0 && p < 1.0 && !p.is_nan());
            }
        }
    }
}

#[test]
fn class_weighting_raises_minority_scores() {
    let train = samples(400, 15);
    let plain = fit_classical(&train, 2, &ClassicalConfig::new(ClassicalKind::Lr)).unwrap();
    let mut cfg = ClassicalConfig::new(ClassicalKind::Lr);
    cfg.class_weight = true;
    let weighted = fit_classical(&train, 2, &cfg).unwrap();
    let test = samples(200, 16);
    let mean = |m: &ClassicalModel| m.predict(&test).unwrap().iter().map(|p| p[0]).sum::<f64>() / test.len() as f64;
    assert!(mean(&weighted) > mean(&plain));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn tree_models_are_invariant_to_monotone_transforms(seed in 0u64..1000) {
        let (x, y) = xor_set(300, seed);
        let tx = x.map(|v| 2.0 * v + 1.0);
        let w = ones(x.rows);
        let grid: Vec<[f64; 2]> = (0..21).flat_map(|i| (0..21).map(move |j| [-1.0 + 0.1 * i as f64 + 0.0123, -1.0 + 0.1 * j as f64 + 0.0071])).collect();
        let rf_cfg = ForestConfig { n_trees: 5, ..Default::default() };
        let a = fit_random_forest(&x, &y, &w, &rf_cfg, seed).unwrap();
        let b = fit_random_forest(&tx, &y, &w, &rf_cfg, seed).unwrap();
        let (ga, _) = fit_gbt(&x, &y, &w, &BoostConfig { n_trees: 10, ..Default::default() }, seed).unwrap();
        let (gb, _) = fit_gbt(&tx, &y, &w, &BoostConfig { n_trees: 10, ..Default::default() }, seed).unwrap();
        for g in &grid {
            let t = [2.0 * g[0] + 1.0, 2.0 * g[1] + 1.0];
            for (ta, tb) in a.iter().zip(&b) {
                prop_assert_eq!(ta.path(g), tb.path(&t));
            }
            for (ta, tb) in ga.trees.iter().zip(&gb.trees) {
                prop_assert_eq!(ta.path(g), tb.path(&t));
            }
            prop_assert_eq!(forest_predict(&a, g), forest_predict(&b, &t));
            prop_assert!((ga.predict(g) - gb.predict(&t)).abs() <= 1e-12);
        }
    }
}
