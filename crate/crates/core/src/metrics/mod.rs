//! Exact ROC and precision-recall curves and per-week evaluation reports.

mod curves;
mod report;
mod svg;

pub use curves::{auc, cutoffs, pr_area, pr_curve, roc_auc, roc_curve, Cutoff, PrPoint, RocPoint};
pub use report::{evaluate, evaluate_scores, read_curve_csv, render_svgs, write_pr_csv, write_roc_csv, ConstantScorer, EvalReport, Scorer, WeekReport};
