use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pr_area, pr_curve, roc_auc, roc_curve, svg, PrPoint, RocPoint};
use crate::data::{WindowSample, HORIZON_WEEKS};
use crate::error::{Error, Result};
use crate::io;

/// Anything that maps windows to four weekly churn probabilities.
pub trait Scorer {
    fn predict(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>>;
}

/// Scores every window with the same probabilities.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn predict(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>> {
        Ok(vec![[self.0; HORIZON_WEEKS]; samples.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekReport {
    /// 1-based week index.
    pub week: usize,
    pub n: usize,
    pub positives: usize,
    pub positive_rate: f64,
    pub auc: Option<f64>,
    pub pr_area: Option<f64>,
    /// Why the week was not evaluated, when it was skipped.
    pub skipped: Option<String>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
    #[serde(skip)]
    pub pr: Vec<PrPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub weeks: Vec<WeekReport>,
}

impl EvalReport {
    pub fn auc(&self, week: usize) -> Option<f64> {
        self.weeks.get(week - 1).and_then(|w| w.auc)
    }

    /// Writes `report.json`, per-week curve CSVs and both SVG plots into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join("report.json"), self)?;
        for w in &self.weeks {
            if w.skipped.is_some() {
                continue;
            }
            write_roc_csv(&dir.join(format!("roc_w{}.csv", w.week)), &w.roc)?;
            write_pr_csv(&dir.join(format!("pr_w{}.csv", w.week)), &w.pr)?;
        }
        let roc: Vec<(usize, Vec<(f64, f64)>)> =
            self.weeks.iter().filter(|w| w.skipped.is_none()).map(|w| (w.week, w.roc.iter().map(|p| (p.fpr, p.tpr)).collect())).collect();
        let pr: Vec<(usize, Vec<(f64, f64)>)> =
            self.weeks.iter().filter(|w| w.skipped.is_none()).map(|w| (w.week, w.pr.iter().map(|p| (p.recall, p.precision)).collect())).collect();
        io::write_bytes(&dir.join("roc.svg"), svg::plot("ROC", "false positive rate", "true positive rate", &roc).as_bytes())?;
        io::write_bytes(&dir.join("pr.svg"), svg::plot("Precision-recall", "recall", "precision", &pr).as_bytes())
    }
}

/// Scores per-week labels; weeks with a single class are reported as skipped.
pub fn evaluate_scores(scores: &[[f64; HORIZON_WEEKS]], labels: &[[u8; HORIZON_WEEKS]]) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} samples", scores.len(), labels.len())));
    }
    let mut weeks = Vec::new();
    for w in 0..HORIZON_WEEKS {
        let s: Vec<f64> = scores.iter().map(|p| p[w]).collect();
        let y: Vec<u8> = labels.iter().map(|l| l[w]).collect();
        let positives = y.iter().filter(|v| **v == 1).count();
        let n = y.len();
        let mut rep = WeekReport {
            week: w + 1,
            n,
            positives,
            positive_rate: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
            auc: None,
            pr_area: None,
            skipped: None,
            roc: Vec::new(),
            pr: Vec::new(),
        };
        if positives == 0 || positives == n {
            rep.skipped = Some(format!("single class: {} positives among {} samples", positives, n));
        } else {
            rep.roc = roc_curve(&s, &y)?;
            rep.pr = pr_curve(&s, &y)?;
            rep.auc = Some(roc_auc(&s, &y)?);
            rep.pr_area = Some(pr_area(&rep.pr));
        }
        weeks.push(rep);
    }
    Ok(EvalReport { weeks })
}

/// Runs the scorer over `samples` and evaluates against their labels.
pub fn evaluate(scorer: &dyn Scorer, samples: &[WindowSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let scores = scorer.predict(samples)?;
    let labels: Vec<[u8; HORIZON_WEEKS]> = samples.iter().map(|s| s.y).collect();
    evaluate_scores(&scores, &labels)
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else {
        t.to_string()
    }
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(s, "{},{},{}", fmt_threshold(p.threshold), p.fpr, p.tpr).unwrap();
    }
    io::write_bytes(path, s.as_bytes())
}

pub fn write_pr_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    let mut s = String::from("threshold,recall,precision\n");
    for p in points {
        writeln!(s, "{},{},{}", fmt_threshold(p.threshold), p.recall, p.precision).unwrap();
    }
    io::write_bytes(path, s.as_bytes())
}

/// Reads a three-column curve CSV (either family) as `(x, y)` pairs, where
/// `x` is the second column and `y` the third.
pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
    let bad = |m: String| Error::Malformed(format!("{}: {}", path.display(), m));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", rec.len())));
        }
        let x: f64 = rec[1].parse().map_err(|e| bad(format!("{}", e)))?;
        let y: f64 = rec[2].parse().map_err(|e| bad(format!("{}", e)))?;
        out.push((x, y));
    }
    Ok(out)
}

/// Renders `roc.svg` and `pr.svg` into `out` from the curve CSVs present in
/// `dir`; returns the number of curves drawn.
pub fn render_svgs(dir: &Path, out: &Path) -> Result<usize> {
    let mut roc = Vec::new();
    let mut pr = Vec::new();
    for w in 1..=HORIZON_WEEKS {
        let r = dir.join(format!("roc_w{}.csv", w));
        if r.exists() {
            roc.push((w, read_curve_csv(&r)?));
        }
        let p = dir.join(format!("pr_w{}.csv", w));
        if p.exists() {
            pr.push((w, read_curve_csv(&p)?));
        }
    }
    if roc.is_empty() && pr.is_empty() {
        return Err(Error::Config(format!("no curve CSVs found in {}", dir.display())));
    }
    io::write_bytes(&out.join("roc.svg"), svg::plot("ROC", "false positive rate", "true positive rate", &roc).as_bytes())?;
    io::write_bytes(&out.join("pr.svg"), svg::plot("Precision-recall", "recall", "precision", &pr).as_bytes())?;
    Ok(roc.len() + pr.len())
}
