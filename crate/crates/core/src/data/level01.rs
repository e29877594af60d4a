use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

use super::{Aggregation, Day, FeatureSchema, TransactionRecord};
use crate::error::{Error, Result};
use crate::io;

/// Aggregate of one user's transactions on one UTC day.
#[derive(Clone, Debug, PartialEq)]
pub struct DailyFeatureRow {
    pub user_id: u64,
    pub date: Day,
    pub features: Vec<f64>,
    pub n_txn: u32,
}

fn fold_day(txns: &[&TransactionRecord], schema: &FeatureSchema, fields: &[usize]) -> Vec<f64> {
    schema
        .features
        .iter()
        .zip(fields)
        .map(|(f, &k)| {
            let values = txns.iter().map(|t| t.fields[k]);
            match f.rule {
                Aggregation::Sum => values.sum(),
                Aggregation::Count => values.filter(|v| *v != 0.0).count() as f64,
                Aggregation::Mean => values.sum::<f64>() / txns.len() as f64,
                Aggregation::Max => values.fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Last => values.last().unwrap_or(0.0),
                Aggregation::DistinctCount => values.filter(|v| *v != 0.0).map(f64::to_bits).collect::<HashSet<_>>().len() as f64,
            }
        })
        .collect()
}

/// Folds transactions into one row per active (user, day), sorted by
/// `(user_id, date)`. Within a day, `last` follows timestamp order with file
/// order breaking ties.
pub fn aggregate_level01(transactions: &[TransactionRecord], schema: &FeatureSchema) -> Result<Vec<DailyFeatureRow>> {
    let fields = schema.field_indices()?;
    if let Some(t) = transactions.iter().find(|t| t.fields.len() != schema.raw_fields.len()) {
        return Err(Error::Schema(format!("transaction {} has {} raw fields, schema declares {}", t.txn_id, t.fields.len(), schema.raw_fields.len())));
    }
    let mut order: Vec<&TransactionRecord> = transactions.iter().collect();
    order.par_sort_by_key(|t| (t.user_id, t.ts));

    let mut groups: Vec<&[&TransactionRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        let boundary = i == order.len() || order[i].user_id != order[start].user_id || Day::from_timestamp(order[i].ts) != Day::from_timestamp(order[start].ts);
        if boundary {
            groups.push(&order[start..i]);
            start = i;
        }
    }
    Ok(groups
        .par_iter()
        .map(|g| DailyFeatureRow { user_id: g[0].user_id, date: Day::from_timestamp(g[0].ts), features: fold_day(g, schema, &fields), n_txn: g.len() as u32 })
        .collect())
}

pub fn write_level01(path: &Path, schema: &FeatureSchema, rows: &[DailyFeatureRow]) -> Result<()> {
    io::write_csv(path, |w| {
        let mut header = vec!["user_id".to_string(), "date".into()];
        header.extend(schema.feature_names());
        header.push("n_txn".into());
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::new();
        for r in rows {
            rec.clear();
            rec.push(r.user_id.to_string());
            rec.push(r.date.to_string());
            rec.extend(r.features.iter().map(|v| v.to_string()));
            rec.push(r.n_txn.to_string());
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

pub fn read_level01(path: &Path, schema: &FeatureSchema) -> Result<Vec<DailyFeatureRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
    let n = schema.n_features();
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.len() != n + 3 {
        return Err(Error::Schema(format!("{}: {} columns for {} features", path.display(), header.len(), n)));
    }
    let bad = |e: &dyn std::fmt::Display| Error::Malformed(format!("{}: {}", path.display(), e));
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let features = (2..n + 2).map(|i| rec[i].parse::<f64>().map_err(|e| bad(&e))).collect::<Result<Vec<_>>>()?;
        rows.push(DailyFeatureRow {
            user_id: rec[0].parse().map_err(|e| bad(&e))?,
            date: rec[1].parse()?,
            features,
            n_txn: rec[n + 2].parse().map_err(|e| bad(&e))?,
        });
    }
    Ok(rows)
}
