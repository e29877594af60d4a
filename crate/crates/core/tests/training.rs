use churnforge::data::{Day, WindowSample};
use churnforge::deep::{build_model, ArchKind, ArchitectureConfig, DeepModel, Preset};
use churnforge::metrics::{evaluate, ConstantScorer};
use churnforge::train::{sync_gradient_average, train_with, validation_metrics, LossKind, TrainConfig, TrainHistory, Trainer};
use churnforge::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Windows whose labels follow the sign of the first feature's mean, with
/// the later weeks adding a little label noise.
fn separable(n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x: Vec<f64> = (0..330).map(|j| if j % 11 == 0 { 0.8 * s + rng.random_range(-0.5..0.5) } else { rng.random_range(-1.0..1.0) }).collect();
            let y = std::array::from_fn(|w| if rng.random_bool(0.05 * w as f64) { (s < 0.0) as u8 } else { (s > 0.0) as u8 });
            WindowSample { user_id: i as u64, anchor_date: Day(100), x, y }
        })
        .collect()
}

fn desk(kind: ArchKind, seed: u64) -> DeepModel {
    build_model(&ArchitectureConfig::new(kind, Preset::Desk).with_dropout(0.0), seed).unwrap()
}

fn distance(a: &DeepModel, b: &DeepModel) -> f64 {
    a.params().iter().zip(b.params()).flat_map(|(p, q)| p.data().iter().zip(q.data()).map(|(x, y)| (x - y) * (x - y))).sum::<f64>().sqrt()
}

fn history_csv(h: &TrainHistory) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    h.write_csv(&path).unwrap();
    std::fs::read_to_string(path).unwrap()
}

// ---------------------------------------------------------------- gradient averaging

#[test]
fn averaging_identical_sets_returns_the_set() {
    let g = vec![vec![1.0, -2.0, 0.5], vec![3.0]];
    assert_eq!(sync_gradient_average(&[g.clone(), g.clone(), g.clone()]).unwrap(), g);
}

#[test]
fn averaging_opposite_sets_cancels() {
    let g = vec![vec![1.5, -2.0], vec![0.25]];
    let neg: Vec<Vec<f64>> = g.iter().map(|t| t.iter().map(|v| -v).collect()).collect();
    let avg = sync_gradient_average(&[g, neg]).unwrap();
    assert!(avg.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn mismatched_gradient_sets_are_rejected() {
    assert!(matches!(sync_gradient_average(&[vec![vec![1.0]], vec![vec![1.0, 2.0]]]), Err(Error::Shape(_))));
    assert!(sync_gradient_average(&[]).is_err());
}

fn parallel_matches_single(kind: ArchKind, workers: usize) -> f64 {
    let data = separable(64, 3);
    let base = TrainConfig { batch: 64, lr: 1e-3, frozen_norm: true, ..Default::default() };
    let mut one = Trainer::new(desk(kind, 1), &base).unwrap();
    let mut many = Trainer::new(desk(kind, 1), &TrainConfig { workers, ..base }).unwrap();
    let batch: Vec<&WindowSample> = data.iter().collect();
    for _ in 0..10 {
        let (a, b) = (one.step(&batch).unwrap(), many.step(&batch).unwrap());
        assert!((a - b).abs() <= 1e-9);
    }
    distance(one.model(), many.model())
}

#[test]
fn four_workers_match_one_worker_after_ten_steps() {
    let d = parallel_matches_single(ArchKind::VggCnn, 4);
    assert!(d <= 1e-5, "distance {}", d);
}

#[test]
fn two_workers_match_one_worker_after_ten_steps() {
    let d = parallel_matches_single(ArchKind::VggCnn, 2);
    assert!(d <= 1e-5, "distance {}", d);
}

#[test]
fn unequal_shards_still_match_the_full_batch() {
    let data = separable(30, 4);
    let base = TrainConfig { batch: 30, lr: 1e-3, ..Default::default() };
    let mut one = Trainer::new(desk(ArchKind::Linear, 0), &base).unwrap();
    let mut many = Trainer::new(desk(ArchKind::Linear, 0), &TrainConfig { workers: 4, ..base }).unwrap();
    let batch: Vec<&WindowSample> = data.iter().collect();
    for _ in 0..10 {
        one.step(&batch).unwrap();
        many.step(&batch).unwrap();
    }
    assert!(distance(one.model(), many.model()) <= 1e-10);
}

// ---------------------------------------------------------------- training loop

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = separable(40, 1);
    let model = desk(ArchKind::Lstm, 2);
    let config = TrainConfig { epochs: 3, batch: 16, lr: 0.0, ..Default::default() };
    let out = train_with(model.clone(), &data, &[], &config, |_| {}).unwrap();
    assert_eq!(distance(&out.model, &model), 0.0);
    assert_eq!(out.history.epochs.len(), 3);
}

#[test]
fn single_worker_training_is_reproducible() {
    let (train, val) = (separable(96, 5), separable(40, 6));
    let config = TrainConfig { epochs: 3, batch: 32, lr: 1e-3, seed: 9, ..Default::default() };
    let model = build_model(&ArchitectureConfig::new(ArchKind::Transformer, Preset::Desk), 9).unwrap();
    let a = train_with(model.clone(), &train, &val, &config, |_| {}).unwrap();
    let b = train_with(model, &train, &val, &config, |_| {}).unwrap();
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(distance(&a.model, &b.model), 0.0);
}

#[test]
fn full_batch_linear_loss_never_increases() {
    let data = separable(200, 7);
    let config = TrainConfig { epochs: 30, batch: 200, lr: 1e-2, ..Default::default() };
    let out = train_with(desk(ArchKind::Linear, 0), &data, &[], &config, |_| {}).unwrap();
    let losses: Vec<f64> = out.history.epochs.iter().map(|e| e.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", losses);
}

#[test]
fn both_losses_reduce_training_loss() {
    let data = separable(128, 8);
    for loss in [LossKind::Bce, LossKind::SquaredError] {
        let config = TrainConfig { loss, epochs: 10, batch: 32, lr: 1e-3, ..Default::default() };
        let out = train_with(desk(ArchKind::VggCnn, 1), &data, &[], &config, |_| {}).unwrap();
        let (first, last) = (out.history.epochs[0].train_loss, out.history.last().unwrap().train_loss);
        assert!(last < first, "{:?}: {} -> {}", loss, first, last);
    }
}

#[test]
fn transformer_halves_its_loss_on_separable_data() {
    let data = separable(256, 9);
    let config = TrainConfig { epochs: 20, batch: 32, lr: 1e-3, ..Default::default() };
    let out = train_with(desk(ArchKind::Transformer, 0), &data, &[], &config, |_| {}).unwrap();
    let (first, last) = (out.history.epochs[0].train_loss, out.history.last().unwrap().train_loss);
    assert!(last <= 0.5 * first, "{} -> {}", first, last);
}

#[test]
fn non_finite_input_aborts_with_a_diagnostic() {
    let mut data = separable(32, 10);
    data[20].x[7] = f64::NAN;
    let config = TrainConfig { epochs: 2, batch: 16, ..Default::default() };
    let err = train_with(desk(ArchKind::Linear, 0), &data, &[], &config, |_| {}).unwrap_err();
    let Error::Divergence(msg) = err else { panic!("expected divergence, got {:?}", err) };
    assert!(msg.contains("epoch 1") && msg.contains("batch"), "{}", msg);
    assert!(msg.contains("norms"), "{}", msg);
}

#[test]
fn empty_training_part_is_rejected() {
    let config = TrainConfig::default();
    assert!(train_with(desk(ArchKind::Linear, 0), &[], &[], &config, |_| {}).is_err());
}

#[test]
fn samples_of_the_wrong_width_are_rejected() {
    let mut data = separable(8, 0);
    data[3].x.pop();
    assert!(matches!(train_with(desk(ArchKind::Linear, 0), &data, &[], &TrainConfig::default(), |_| {}), Err(Error::Shape(_))));
}

#[test]
fn history_has_one_row_per_epoch_and_best_model_tracks_auc() {
    let (train, val) = (separable(64, 11), separable(64, 12));
    let config = TrainConfig { epochs: 4, batch: 16, lr: 1e-3, ..Default::default() };
    let mut seen = Vec::new();
    let out = train_with(desk(ArchKind::Linear, 0), &train, &val, &config, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert_eq!(out.history.epochs.len(), 4);
    let best = out.best.unwrap();
    let top = out.history.epochs.iter().map(|e| e.auc.iter().flatten().sum::<f64>() / 4.0).fold(f64::MIN, f64::max);
    assert!((best.mean_auc - top).abs() < 1e-12);
    let (_, auc) = validation_metrics(&best.model, &val, &config).unwrap();
    assert!((auc.iter().flatten().sum::<f64>() / 4.0 - best.mean_auc).abs() < 1e-12);
}

#[test]
fn stop_threshold_ends_training_early() {
    let (train, val) = (separable(128, 13), separable(64, 14));
    let config = TrainConfig { epochs: 50, batch: 16, lr: 1e-2, stop_at_auc: Some(0.9), ..Default::default() };
    let out = train_with(desk(ArchKind::Linear, 0), &train, &val, &config, |_| {}).unwrap();
    assert!(out.history.epochs.len() < 50);
    assert!(out.history.last().unwrap().auc[0].unwrap() >= 0.9);
}

// ---------------------------------------------------------------- evaluation

#[test]
fn constant_scores_have_chance_auc_every_week() {
    let report = evaluate(&ConstantScorer(0.3), &separable(200, 15)).unwrap();
    for w in 1..=4 {
        assert_eq!(report.auc(w), Some(0.5));
    }
}

#[test]
fn evaluating_a_trained_model_is_deterministic() {
    let data = separable(100, 16);
    let config = TrainConfig { epochs: 2, batch: 25, lr: 1e-3, ..Default::default() };
    let out = train_with(desk(ArchKind::Lstm, 0), &data, &[], &config, |_| {}).unwrap();
    let (a, b) = (evaluate(&out.model, &data).unwrap(), evaluate(&out.model, &data).unwrap());
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write(da.path()).unwrap();
    b.write(db.path()).unwrap();
    for entry in std::fs::read_dir(da.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(da.path().join(&name)).unwrap(), std::fs::read(db.path().join(&name)).unwrap());
    }
}
