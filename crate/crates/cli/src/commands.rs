use std::path::{Path, PathBuf};

use churnforge::classical::{fit_classical, ClassicalKind};
use churnforge::data::{
    ingest_transactions, write_level01, DateRange, FeatureSchema, IngestOptions, NormalizationStats, WindowDataset, WindowSample, HORIZON_WEEKS, TAU,
};
use churnforge::deep::{build_model, run_architecture_suite, save_checkpoint, ArchKind, ArchitectureConfig, Preset};
use churnforge::io;
use churnforge::metrics::{evaluate, render_svgs, Scorer};
use churnforge::pipeline::{featurize, observed_range, AnyModel};
use churnforge::synth::{generate, BehaviorConfig};
use churnforge::tensor::suite::run_op_suite;
use churnforge::tensor::{GradCheckConfig, GradCheckReport};
use churnforge::train::{train_with, LossKind};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| usage("--out DIR is required"))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Features(_) => "features",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Predict(_) => "predict",
        Command::Gradcheck(_) => "gradcheck",
        Command::Report(_) => "report",
    }
}

/// Folds subcommand flags into the configuration.
fn apply_flags(cfg: &mut RunConfig, command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => {
            if let Some(d) = &a.dynamics {
                let seedless = match d.to_ascii_lowercase().as_str() {
                    "level" => BehaviorConfig::default(),
                    "temporal" => BehaviorConfig::temporal(),
                    _ => return Err(usage(format!("unknown dynamics {:?} (expected level or temporal)", d))),
                };
                cfg.synth = BehaviorConfig { n_users: cfg.synth.n_users, start: cfg.synth.start, end: cfg.synth.end, ..seedless };
            }
            if let Some(n) = a.users {
                cfg.synth.n_users = n;
            }
            if let Some(s) = a.signal {
                cfg.synth.signal_strength = s;
            }
            if a.skew.is_some() {
                cfg.synth.target_skew = a.skew;
            }
        }
        Command::Features(a) => {
            if let Some(p) = &a.schema {
                cfg.features.schema = FeatureSchema::load(p)?;
            }
        }
        Command::Train(a) => {
            if let Some(m) = &a.model {
                cfg.model.kind = m.clone();
                cfg.model.architecture = None;
            }
            if let Some(p) = &a.preset {
                cfg.model.preset = Preset::parse(p).ok_or_else(|| usage(format!("unknown preset {:?} (expected desk or paper)", p)))?;
            }
            if let Some(l) = &a.loss {
                cfg.train.loss = LossKind::parse(l).ok_or_else(|| usage(format!("unknown loss {:?} (expected bce or squared_error)", l)))?;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = a.batch {
                cfg.train.batch = b;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            if a.dropout.is_some() {
                cfg.model.dropout = a.dropout;
            }
            if ClassicalKind::parse(&cfg.model.kind).is_none() && ArchKind::parse(&cfg.model.kind).is_none() && cfg.model.architecture.is_none() {
                return Err(usage(format!("unknown model {:?}", cfg.model.kind)));
            }
        }
        Command::Evaluate(_) | Command::Predict(_) | Command::Gradcheck(_) | Command::Report(_) => {}
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.global.workers {
        cfg.workers = w;
    }
    cfg.command = command_name(&cli.command).to_string();
    apply_flags(&mut cfg, &cli.command)?;
    cfg.resolve()?;
    // fails only if a pool already exists, which is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();

    let out = &cli.global.out;
    match &cli.command {
        Command::Synth(_) => synth(&cfg, required_out(out)?),
        Command::Features(a) => features(&cfg, &a.data, required_out(out)?),
        Command::Train(a) => train(&cfg, &a.data, required_out(out)?),
        Command::Evaluate(a) => evaluate_cmd(&cfg, &a.model, &a.data, a.stats.as_deref(), required_out(out)?),
        Command::Predict(a) => predict(&cfg, &a.model, &a.data, a.stats.as_deref(), required_out(out)?),
        Command::Gradcheck(a) => gradcheck(&cfg, a.ops_only, out.as_deref()),
        Command::Report(a) => report(&a.data, out.as_deref().unwrap_or(&a.data)),
    }
}

fn save_run_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    Ok(io::write_json(&out.join("run_config.json"), cfg)?)
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.synth.validate()?;
    let s = generate(&cfg.synth)?;
    s.write(out)?;
    save_run_config(cfg, out)?;
    eprintln!("synth: {} users, {} transactions, {} to {}", s.config.n_users, s.transactions.len(), s.config.start, s.config.end);
    Ok(())
}

fn features(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let f = &cfg.features;
    f.schema.validate()?;
    let (path, beside) = if data.is_dir() { (data.join("transactions.csv"), Some(data.join("config.json"))) } else { (data.to_path_buf(), None) };
    let declared = match (f.start, f.end) {
        (Some(s), Some(e)) => Some(DateRange::new(s, e)),
        (None, None) => match beside.filter(|p| p.exists()) {
            Some(p) => Some(BehaviorConfig::load(&p)?.range()),
            None => None,
        },
        _ => return Err(usage("features.start and features.end must be set together")),
    };
    let ingested = ingest_transactions(&path, &f.schema, &IngestOptions { max_malformed_fraction: f.max_malformed_fraction, range: declared })?;
    if ingested.malformed > 0 {
        eprintln!("features: skipped {} malformed rows of {}", ingested.malformed, ingested.total_rows);
    }
    let range = match declared.or_else(|| observed_range(&ingested.records)) {
        Some(r) => r,
        None => return Err(usage(format!("{} holds no transactions and no date range is configured", path.display()))),
    };
    let feats = featurize(&ingested.records, &f.schema, range, &f.anchors, cfg.seed)?;
    let nf = f.schema.n_features();
    write_level01(&out.join("level01.csv"), &f.schema, &feats.level01)?;
    for (name, part) in [("train", &feats.split.train), ("validation", &feats.split.validation), ("test", &feats.split.test)] {
        WindowDataset::new(TAU, nf, part.clone())?.save(&out.join(format!("{}.bin", name)))?;
    }
    feats.stats.save(&out.join("normalization.json"))?;
    io::write_json(&out.join("schema.json"), &f.schema)?;
    save_run_config(cfg, out)?;
    eprintln!(
        "features: {} daily rows, windows train {} / validation {} / test {} ({} edge and {} inactive anchors skipped)",
        feats.level01.len(),
        feats.split.train.len(),
        feats.split.validation.len(),
        feats.split.test.len(),
        feats.skipped_edge,
        feats.skipped_ineligible
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<WindowDataset> {
    let path = if path.is_dir() { path.join("test.bin") } else { path.to_path_buf() };
    Ok(WindowDataset::load(&path)?)
}

/// Standardizes `ds` with `stats` after checking the feature counts agree.
fn normalized(ds: WindowDataset, stats: &NormalizationStats) -> Result<Vec<WindowSample>> {
    if stats.n_features() != ds.n_features {
        return Err(usage(format!("normalization statistics cover {} features, dataset has {}", stats.n_features(), ds.n_features)));
    }
    let mut samples = ds.samples;
    stats.apply_all(&mut samples);
    Ok(samples)
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let stats_path = data.join("normalization.json");
    if !stats_path.exists() {
        return Err(usage(format!("{} is not a features directory (normalization.json missing)", data.display())));
    }
    let stats = NormalizationStats::load(&stats_path)?;
    let train_ds = WindowDataset::load(&data.join("train.bin"))?;
    let val_ds = WindowDataset::load(&data.join("validation.bin"))?;
    let (tau, nf) = (train_ds.tau, train_ds.n_features);
    if (val_ds.tau, val_ds.n_features) != (tau, nf) {
        return Err(usage(format!("train windows are {}x{}, validation windows {}x{}", tau, nf, val_ds.tau, val_ds.n_features)));
    }
    let train = normalized(train_ds, &stats)?;
    let validation = normalized(val_ds, &stats)?;

    if let Some(kind) = ClassicalKind::parse(&cfg.model.kind).filter(|_| cfg.model.architecture.is_none()) {
        let mut config = cfg.model.classical.clone();
        config.kind = kind;
        let model = AnyModel::Classical(fit_classical(&train, nf, &config)?);
        if !validation.is_empty() {
            print_aucs("validation", &evaluate(&model, &validation)?);
        }
        model.save(&out.join("model.json"))?;
    } else {
        let mut arch = match &cfg.model.architecture {
            Some(a) => a.clone(),
            None => {
                let kind = ArchKind::parse(&cfg.model.kind).ok_or_else(|| usage(format!("unknown model {:?}", cfg.model.kind)))?;
                ArchitectureConfig::new(kind, cfg.model.preset)
            }
        };
        if let Some(p) = cfg.model.dropout {
            arch = arch.with_dropout(p);
        }
        arch.tau = tau;
        arch.n_features = nf;
        let model = build_model(&arch, cfg.seed)?;
        eprintln!("train: {} ({} parameters) on {} windows", arch.kind.name(), model.count_parameters(), train.len());
        let outcome = train_with(model, &train, &validation, &cfg.train, |e| {
            let auc: Vec<String> = e.auc.iter().map(|a| a.map_or("-".into(), |v| format!("{:.4}", v))).collect();
            eprintln!(
                "epoch {:>3}  train {:.5}  val {}  auc {}  {:.1}s",
                e.epoch,
                e.train_loss,
                e.val_loss.map_or("-".into(), |v| format!("{:.5}", v)),
                auc.join("/"),
                e.seconds
            );
        })?;
        save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
        if let Some(best) = &outcome.best {
            save_checkpoint(&best.model, &out.join("best.ckpt"))?;
            eprintln!("train: best mean validation AUC {:.4} at epoch {}", best.mean_auc, best.epoch);
        }
        outcome.history.write_csv(&out.join("history.csv"))?;
    }
    stats.save(&out.join("normalization.json"))?;
    save_run_config(cfg, out)
}

fn print_aucs(label: &str, report: &churnforge::metrics::EvalReport) {
    for w in &report.weeks {
        match (w.auc, &w.skipped) {
            (Some(a), _) => eprintln!("{} week {}: AUC {:.4}, positive rate {:.4}", label, w.week, a, w.positive_rate),
            (None, reason) => eprintln!("{} week {}: skipped ({})", label, w.week, reason.as_deref().unwrap_or("no AUC")),
        }
    }
}

/// Loads a model and the windows to score, standardized with the model's
/// statistics, after checking that all three agree on shape.
fn scoring_inputs(model: &Path, data: &Path, stats: Option<&Path>) -> Result<(AnyModel, Vec<WindowSample>)> {
    let stats_path = match stats {
        Some(p) => p.to_path_buf(),
        None => model.parent().unwrap_or(Path::new(".")).join("normalization.json"),
    };
    if !stats_path.exists() {
        return Err(usage(format!("normalization statistics not found at {}", stats_path.display())));
    }
    let stats = NormalizationStats::load(&stats_path)?;
    let model = AnyModel::load(model)?;
    let ds = load_dataset(data)?;
    if model.n_features() != ds.n_features || model.tau().is_some_and(|t| t != ds.tau) {
        return Err(usage(format!(
            "{} model expects {}x{} windows, dataset holds {}x{}",
            model.name(),
            model.tau().map_or("any".into(), |t| t.to_string()),
            model.n_features(),
            ds.tau,
            ds.n_features
        )));
    }
    let samples = normalized(ds, &stats)?;
    Ok((model, samples))
}

fn evaluate_cmd(cfg: &RunConfig, model: &Path, data: &Path, stats: Option<&Path>, out: &Path) -> Result<()> {
    let (model, samples) = scoring_inputs(model, data, stats)?;
    let report = evaluate(&model, &samples)?;
    report.write(out)?;
    save_run_config(cfg, out)?;
    print_aucs("test", &report);
    Ok(())
}

fn predict(cfg: &RunConfig, model: &Path, data: &Path, stats: Option<&Path>, out: &Path) -> Result<()> {
    let (model, samples) = scoring_inputs(model, data, stats)?;
    let probs = model.predict(&samples)?;
    io::write_csv(&out.join("predictions.csv"), |w| {
        let mut header = vec!["user_id".to_string(), "anchor_date".to_string()];
        header.extend((1..=HORIZON_WEEKS).map(|k| format!("p_w{}", k)));
        w.write_record(&header)?;
        for (s, p) in samples.iter().zip(&probs) {
            let mut row = vec![s.user_id.to_string(), s.anchor_date.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    save_run_config(cfg, out)?;
    eprintln!("predict: scored {} windows", samples.len());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, ops_only: bool, out: Option<&Path>) -> Result<()> {
    let gc = GradCheckConfig { seed: cfg.seed, ..Default::default() };
    let mut results: Vec<(String, GradCheckReport)> = run_op_suite(cfg.seed, &gc)?;
    if !ops_only {
        results.extend(run_architecture_suite(cfg.seed, &gc)?.into_iter().map(|(n, r)| (format!("model {}", n), r)));
    }
    let passed = results.iter().filter(|(_, r)| r.passed()).count();
    for (name, r) in &results {
        println!("{} {} max relative error {:.3e}", if r.passed() { "PASS" } else { "FAIL" }, name, r.max_rel_error());
    }
    println!("gradcheck: {}/{} passed (tolerance {:e})", passed, results.len(), gc.tolerance);
    if let Some(out) = out {
        let summary: Vec<serde_json::Value> = results
            .iter()
            .map(|(n, r)| serde_json::json!({ "name": n, "passed": r.passed(), "max_rel_error": r.max_rel_error(), "entries": r.entries }))
            .collect();
        io::write_json(&out.join("gradcheck.json"), &summary)?;
        save_run_config(cfg, out)?;
    }
    if passed == results.len() {
        Ok(())
    } else {
        Err(CliError::Run(churnforge::Error::Divergence(format!("{} gradient checks failed", results.len() - passed))))
    }
}

fn report(data: &Path, out: &Path) -> Result<()> {
    let n = render_svgs(data, out)?;
    eprintln!("report: drew {} curves into {}", n, out.display());
    Ok(())
}
