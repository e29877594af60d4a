//! The ten end-to-end acceptance criteria. Runs as a plain binary so every
//! criterion prints its PASS/FAIL line whatever the outcome of the others.

mod common;

use std::path::Path;
use std::time::Instant;

use churnforge::classical::{fit_classical, ClassicalConfig, ClassicalKind};
use churnforge::data::*;
use churnforge::deep::{build_model, run_architecture_suite, ArchKind, ArchitectureConfig, DeepModel, Preset};
use churnforge::metrics::{auc, evaluate, pr_area, pr_curve, roc_auc, roc_curve, ConstantScorer};
use churnforge::pipeline::featurize;
use churnforge::synth::{generate, BehaviorConfig};
use churnforge::tensor::suite::run_op_suite;
use churnforge::tensor::GradCheckConfig;
use churnforge::train::{train_with, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn parameter_anchors() -> Verdict {
    let anchors = [
        (ArchKind::Transformer, 1.8e6),
        (ArchKind::InceptionResnet, 2.4e6),
        (ArchKind::Convnext, 0.8e6),
        (ArchKind::Lstm, 1.0e6),
        (ArchKind::VggCnn, 1.0e6),
        (ArchKind::CnnFullWidth, 1.0e6),
        (ArchKind::CnnFullHeight, 1.0e6),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, target) in anchors {
        let n = build_model(&ArchitectureConfig::new(kind, Preset::Paper), 0).unwrap().count_parameters();
        ok &= (n as f64 - target).abs() <= 0.15 * target;
        parts.push(format!("{} {}", kind, n));
    }
    verdict(ok, parts.join(", "))
}

// ---------------------------------------------------------------- 2

fn gradient_checks() -> Verdict {
    let started = Instant::now();
    let config = GradCheckConfig::default();
    let mut results = run_op_suite(0, &config).unwrap();
    results.extend(run_architecture_suite(0, &config).unwrap());
    let failed: Vec<&str> = results.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();
    let worst = results.iter().map(|(_, r)| r.max_rel_error()).fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        failed.is_empty() && secs < 300.0,
        format!(
            "{}/{} passed, worst relative error {:.2e}, {:.0}s{}",
            results.len() - failed.len(),
            results.len(),
            worst,
            secs,
            if failed.is_empty() { String::new() } else { format!(", failed {}", failed.join(" ")) }
        ),
    )
}

// ---------------------------------------------------------------- 3

fn auc_matches_mann_whitney() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=500);
        let levels = rng.random_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.35) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let mw = common::mann_whitney(&scores, &labels);
        worst = worst.max((auc(&roc_curve(&scores, &labels).unwrap()) - mw).abs());
        worst = worst.max((roc_auc(&scores, &labels).unwrap() - mw).abs());
    }
    verdict(worst <= 1e-9, format!("max deviation {:.2e} over 1000 instances", worst))
}

// ---------------------------------------------------------------- 4

fn pipeline_oracle() -> Verdict {
    let (first, days) = (19_000, 150);
    let schema = FeatureSchema::default();
    let txns = common::random_transactions(10_000, 80, first, days, 4);
    let rows = aggregate_level01(&txns, &schema).unwrap();
    let oracle = common::level01_oracle(&txns, &schema);
    let rows_match = rows.len() == oracle.len()
        && rows.iter().zip(&oracle).all(|(r, ((u, d), (f, n)))| r.user_id == *u && r.date == *d && r.n_txn == *n && &r.features == f);
    let range = DateRange::new(Day(first), Day(first + days));
    let set = build_windows(&rows, 11, &schema.inactive_row(), range, &AnchorPolicy::default(), WindowSpec::default()).unwrap();
    let labels_match = set.samples.iter().all(|s| s.y == common::label_oracle(&txns, s.user_id, s.anchor_date));
    verdict(rows_match && labels_match && !set.samples.is_empty(), format!("{} daily rows, {} windows", rows.len(), set.samples.len()))
}

// ---------------------------------------------------------------- 5

fn level02_oracle() -> Verdict {
    let schema = FeatureSchema::default();
    let txns = common::random_transactions(10_000, 80, 19_000, 150, 5);
    let rows = aggregate_level01(&txns, &schema).unwrap();
    let range = DateRange::new(Day(19_000), Day(19_150));
    let set = build_windows(&rows, 11, &schema.inactive_row(), range, &AnchorPolicy::default(), WindowSpec::default()).unwrap();
    let mut worst: f64 = 0.0;
    for s in &set.samples {
        let g = aggregate_level02(s, 11).unwrap().g;
        for (a, b) in g.iter().zip(common::two_pass_moments(&s.x, 11)) {
            worst = worst.max((a - b).abs());
        }
    }
    let ramp: Vec<f64> = (0..30).map(|v| v as f64).collect();
    let sigma = column_moments(&ramp, 1).unwrap()[1];
    let ramp_err = (sigma - (899.0f64 / 12.0).sqrt()).abs();
    verdict(worst <= 1e-12 && ramp_err <= 1e-9, format!("max deviation {:.2e} over {} windows, ramp sigma {:.12}", worst, set.samples.len(), sigma))
}

// ---------------------------------------------------------------- 6, 7

fn evenly(samples: &[WindowSample], n: usize) -> Vec<WindowSample> {
    samples.iter().step_by((samples.len() / n).max(1)).take(n).cloned().collect()
}

/// Desk transformer trained on an even subsample of the training part,
/// returning the best-validation snapshot.
fn fit_transformer(split: &DatasetSplit, n_train: usize, config: &TrainConfig) -> DeepModel {
    let model = build_model(&ArchitectureConfig::new(ArchKind::Transformer, Preset::Desk), config.seed).unwrap();
    let out = train_with(model, &evenly(&split.train, n_train), &evenly(&split.validation, 500), config, |_| {}).unwrap();
    out.best.map_or(out.model, |b| b.model)
}

fn planted_signal_recovery() -> Verdict {
    let started = Instant::now();
    let cfg = BehaviorConfig { seed: 6, ..Default::default() };
    let syn = generate(&cfg).unwrap();
    let split = featurize(&syn.transactions, &FeatureSchema::default(), cfg.range(), &AnchorPolicy::default(), 6).unwrap().normalized();
    let gbt = fit_classical(&split.train, 11, &ClassicalConfig { seed: 6, ..ClassicalConfig::new(ClassicalKind::Gbt) }).unwrap();
    let gbt_auc = evaluate(&gbt, &split.test).unwrap().auc(1).unwrap();
    let config = TrainConfig { epochs: 20, batch: 64, lr: 1e-3, seed: 6, stop_at_auc: Some(0.92), ..Default::default() };
    let model = fit_transformer(&split, 2000, &config);
    let tf_auc = evaluate(&model, &split.test).unwrap().auc(1).unwrap();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        gbt_auc >= 0.90 && tf_auc >= 0.90 && secs <= 900.0,
        format!("{} users, week-1 test AUC transformer {:.4}, GBT {:.4}, {:.0}s", cfg.n_users, tf_auc, gbt_auc, secs),
    )
}

fn ordering_over_level02_lr() -> Verdict {
    let mut gaps = Vec::new();
    for seed in [1u64, 2, 3] {
        let cfg = BehaviorConfig { signal_strength: 0.6, n_users: 4000, seed, ..BehaviorConfig::temporal() };
        let syn = generate(&cfg).unwrap();
        let split = featurize(&syn.transactions, &FeatureSchema::default(), cfg.range(), &AnchorPolicy::default(), seed).unwrap().normalized();
        let lr = fit_classical(&split.train, 11, &ClassicalConfig { seed, ..ClassicalConfig::new(ClassicalKind::Lr) }).unwrap();
        let lr_auc = evaluate(&lr, &split.test).unwrap().auc(1).unwrap();
        let config = TrainConfig { epochs: 12, batch: 64, lr: 2e-3, seed, ..Default::default() };
        let tf_auc = evaluate(&fit_transformer(&split, 1500, &config), &split.test).unwrap().auc(1).unwrap();
        gaps.push((tf_auc, lr_auc));
    }
    let mean = gaps.iter().map(|(t, l)| t - l).sum::<f64>() / gaps.len() as f64;
    let per: Vec<String> = gaps.iter().map(|(t, l)| format!("{:.4}/{:.4}", t, l)).collect();
    verdict(mean >= 0.02, format!("mean week-1 AUC gap {:.4} (transformer/LR per seed: {})", mean, per.join(", ")))
}

// ---------------------------------------------------------------- 8

fn distributed_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<WindowSample> = (0..64)
        .map(|i| {
            let x: Vec<f64> = (0..330).map(|_| rng.random_range(-1.5..1.5)).collect();
            let y = std::array::from_fn(|w| (x[w] + x[11 + w] > 0.0) as u8);
            WindowSample { user_id: i, anchor_date: Day(0), x, y }
        })
        .collect();
    let batch: Vec<&WindowSample> = data.iter().collect();
    let model = build_model(&ArchitectureConfig::new(ArchKind::VggCnn, Preset::Desk).with_dropout(0.0), 8).unwrap();
    let base = TrainConfig { batch: 64, lr: 1e-3, seed: 8, frozen_norm: true, ..Default::default() };
    let mut one = Trainer::new(model.clone(), &base).unwrap();
    let mut four = Trainer::new(model, &TrainConfig { workers: 4, ..base }).unwrap();
    for _ in 0..10 {
        one.step(&batch).unwrap();
        four.step(&batch).unwrap();
    }
    let d = one
        .model()
        .params()
        .iter()
        .zip(four.model().params())
        .flat_map(|(p, q)| p.data().iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        .sqrt();
    verdict(d <= 1e-5, format!("parameter distance {:.2e} after 10 steps", d))
}

// ---------------------------------------------------------------- 9

fn imbalance_behavior() -> Verdict {
    let cfg = BehaviorConfig { n_users: 10_000, seed: 9, target_skew: Some(10.0), ..Default::default() };
    let syn = generate(&cfg).unwrap();
    let schema = FeatureSchema::default();
    let rows = aggregate_level01(&syn.transactions, &schema).unwrap();
    let set = build_windows(&rows, 11, &schema.inactive_row(), cfg.range(), &AnchorPolicy::default(), WindowSpec::default()).unwrap();
    let target = 1.0 / 11.0;
    let labels: Vec<u8> = set.samples.iter().map(|s| s.y[0]).collect();
    let rate = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
    let scores = vec![0.5; labels.len()];
    let area = pr_area(&pr_curve(&scores, &labels).unwrap());
    let report = evaluate(&ConstantScorer(0.5), &set.samples).unwrap();
    let roc = report.auc(1).unwrap();
    verdict(
        (rate / target - 1.0).abs() <= 0.10
            && (area - rate).abs() <= 0.03
            && (report.weeks[0].pr_area.unwrap() - rate).abs() <= 0.03
            && (roc - 0.5).abs() <= 0.02,
        format!("week-1 positive rate {:.4} (target {:.4}), constant-score PR area {:.4}, ROC AUC {:.4}", rate, target, area, roc),
    )
}

// ---------------------------------------------------------------- 10

fn pipeline_run(dir: &Path) {
    let cfg = BehaviorConfig { n_users: 400, seed: 10, ..Default::default() };
    let syn = generate(&cfg).unwrap();
    syn.write(&dir.join("synth")).unwrap();
    let ingested = ingest_transactions(&dir.join("synth/transactions.csv"), &FeatureSchema::default(), &IngestOptions::default()).unwrap();
    let split = featurize(&ingested.records, &FeatureSchema::default(), cfg.range(), &AnchorPolicy::default(), 10).unwrap().normalized();
    let model = build_model(&ArchitectureConfig::new(ArchKind::Transformer, Preset::Desk), 10).unwrap();
    let config = TrainConfig { epochs: 2, batch: 64, seed: 10, ..Default::default() };
    let out = train_with(model, &split.train, &split.validation, &config, |_| {}).unwrap();
    out.history.write_csv(&dir.join("history.csv")).unwrap();
    evaluate(&out.model, &split.test).unwrap().write(&dir.join("report")).unwrap();
}

fn reproducibility() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline_run(a.path());
    pipeline_run(b.path());
    let list = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d.join("report")).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    let names = list(a.path());
    let same_names = names == list(b.path()) && !names.is_empty();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join("report").join(n)).ok() != std::fs::read(b.path().join("report").join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    let history_same = std::fs::read(a.path().join("history.csv")).unwrap() == std::fs::read(b.path().join("history.csv")).unwrap();
    verdict(
        same_names && differing.is_empty() && history_same,
        format!(
            "{} report files compared, {}",
            names.len(),
            if differing.is_empty() { "all identical".to_string() } else { format!("differing: {}", differing.join(" ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("parameter-count anchors", parameter_anchors),
        ("gradient-check suite", gradient_checks),
        ("AUC equals Mann-Whitney", auc_matches_mann_whitney),
        ("pipeline oracle on 10^4 transactions", pipeline_oracle),
        ("Level-02 oracle", level02_oracle),
        ("planted-signal recovery", planted_signal_recovery),
        ("transformer beats Level-02 LR on temporal data", ordering_over_level02_lr),
        ("4-worker equals 1-worker training", distributed_equivalence),
        ("10x imbalance behaviour", imbalance_behavior),
        ("byte-identical reports", reproducibility),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if filter.as_ref().is_some_and(|f| *f != id) {
            continue;
        }
        let started = Instant::now();
        let v = run();
        failures += usize::from(!v.passed);
        println!("{} criterion {:>2} {}: {} [{:.1}s]", if v.passed { "PASS" } else { "FAIL" }, id, name, v.detail, started.elapsed().as_secs_f64());
    }
    if failures > 0 {
        println!("{} acceptance criteria failed", failures);
        std::process::exit(1);
    }
}
