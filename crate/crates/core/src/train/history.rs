use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::HORIZON_WEEKS;
use crate::error::{Error, Result};
use crate::io;

pub const HISTORY_HEADER: [&str; 7] = ["epoch", "train_loss", "val_loss", "auc_w1", "auc_w2", "auc_w3", "auc_w4"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when there is no validation data.
    pub val_loss: Option<f64>,
    /// Validation AUC per week; absent for weeks with a single class.
    pub auc: [Option<f64>; HORIZON_WEEKS],
    /// Wall-clock seconds spent on the epoch, validation included.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Writes the history CSV. Wall-clock times are left out so that
    /// identical runs produce identical files; empty cells mark missing values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, |w| {
            w.write_record(HISTORY_HEADER)?;
            for e in &self.epochs {
                let mut row = vec![e.epoch.to_string(), e.train_loss.to_string(), cell(e.val_loss)];
                row.extend(e.auc.iter().map(|a| cell(*a)));
                w.write_record(&row)?;
            }
            Ok(())
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |e: csv::Error| Error::Format(format!("{}: {}", path.display(), e));
        let mut r = csv::Reader::from_path(path).map_err(bad)?;
        if r.headers().map_err(bad)?.iter().ne(HISTORY_HEADER) {
            return Err(Error::Format(format!("{}: not a training history file", path.display())));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Format(format!("{}: bad number {:?}", path.display(), s)))
        };
        let mut epochs = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(bad)?;
            let epoch = rec[0].parse().map_err(|_| Error::Format(format!("{}: bad epoch {:?}", path.display(), &rec[0])))?;
            let train_loss = num(&rec[1])?.ok_or_else(|| Error::Format(format!("{}: missing training loss", path.display())))?;
            let mut auc = [None; HORIZON_WEEKS];
            for (w, a) in auc.iter_mut().enumerate() {
                *a = num(&rec[3 + w])?;
            }
            epochs.push(EpochRecord { epoch, train_loss, val_loss: num(&rec[2])?, auc, seconds: 0.0 });
        }
        Ok(TrainHistory { epochs })
    }
}
