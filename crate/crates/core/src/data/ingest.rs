use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DateRange, FeatureSchema};
use crate::error::{Error, Result};
use crate::io;

/// One raw platform transaction. `fields` follows the schema's `raw_fields`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRecord {
    pub txn_id: u64,
    pub user_id: u64,
    /// Epoch seconds, UTC.
    pub ts: i64,
    pub fields: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Abort when more than this fraction of data rows is malformed.
    pub max_malformed_fraction: f64,
    /// Rows stamped outside this range count as malformed.
    pub range: Option<DateRange>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { max_malformed_fraction: 0.01, range: None }
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub records: Vec<TransactionRecord>,
    pub total_rows: usize,
    pub malformed: usize,
    /// The first few malformed-row diagnostics, with 1-based line numbers.
    pub examples: Vec<String>,
}

/// Streams records from a transactions CSV in file order.
///
/// Each item is either a parsed record or the diagnostic of a malformed row.
/// Duplicate ids and out-of-range timestamps are reported as malformed.
pub struct TransactionStream {
    reader: csv::Reader<File>,
    record: csv::StringRecord,
    n_fields: usize,
    range: Option<DateRange>,
    seen: HashSet<u64>,
}

impl TransactionStream {
    pub fn open(path: &Path, schema: &FeatureSchema, range: Option<DateRange>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
        let header = reader.headers().map_err(|e| Error::Schema(format!("{}: unreadable header: {}", path.display(), e)))?;
        let found: Vec<&str> = header.iter().map(str::trim).collect();
        let expected = schema.transaction_header();
        if found != expected {
            return Err(Error::Schema(format!("{}: header {:?} does not match schema {:?}", path.display(), found.join(","), expected.join(","))));
        }
        Ok(TransactionStream { reader, record: csv::StringRecord::new(), n_fields: schema.raw_fields.len(), range, seen: HashSet::new() })
    }

    fn parse(&mut self) -> std::result::Result<TransactionRecord, String> {
        let r = &self.record;
        if r.len() != 3 + self.n_fields {
            return Err(format!("expected {} columns, found {}", 3 + self.n_fields, r.len()));
        }
        let int = |i: usize, name: &str| r[i].trim().parse::<u64>().map_err(|e| format!("{} {:?}: {}", name, &r[i], e));
        let txn_id = int(0, "txn_id")?;
        let user_id = int(1, "user_id")?;
        let ts: i64 = r[2].trim().parse().map_err(|e| format!("ts {:?}: {}", &r[2], e))?;
        let mut fields = Vec::with_capacity(self.n_fields);
        for i in 3..r.len() {
            let v: f64 = r[i].trim().parse().map_err(|e| format!("column {} value {:?}: {}", i + 1, &r[i], e))?;
            if !v.is_finite() {
                return Err(format!("column {} is not finite", i + 1));
            }
            fields.push(v);
        }
        if let Some(range) = self.range {
            if !range.contains_timestamp(ts) {
                return Err(format!("timestamp {} outside {}..{}", ts, range.start, range.end));
            }
        }
        if !self.seen.insert(txn_id) {
            return Err(format!("duplicate txn_id {}", txn_id));
        }
        Ok(TransactionRecord { txn_id, user_id, ts, fields })
    }
}

impl Iterator for TransactionStream {
    type Item = Result<std::result::Result<TransactionRecord, String>>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.reader.read_record(&mut self.record) {
            Ok(false) => None,
            Ok(true) => {
                let line = self.record.position().map_or(0, |p| p.line());
                Some(Ok(self.parse().map_err(|m| format!("line {}: {}", line, m))))
            }
            Err(e) if e.is_io_error() => Some(Err(Error::Malformed(e.to_string()))),
            Err(e) => Some(Ok(Err(e.to_string()))),
        }
    }
}

/// Reads a whole transactions file, skipping malformed rows and aborting if
/// they exceed the configured fraction.
pub fn ingest_transactions(path: &Path, schema: &FeatureSchema, options: &IngestOptions) -> Result<Ingested> {
    let mut out = Ingested { records: Vec::new(), total_rows: 0, malformed: 0, examples: Vec::new() };
    for item in TransactionStream::open(path, schema, options.range)? {
        out.total_rows += 1;
        match item? {
            Ok(rec) => out.records.push(rec),
            Err(msg) => {
                out.malformed += 1;
                if out.examples.len() < 5 {
                    out.examples.push(msg);
                }
            }
        }
    }
    if out.total_rows > 0 && out.malformed as f64 > options.max_malformed_fraction * out.total_rows as f64 {
        return Err(Error::Malformed(format!(
            "{}: {} of {} rows malformed ({:.2}%, threshold {:.2}%); first: {}",
            path.display(),
            out.malformed,
            out.total_rows,
            100.0 * out.malformed as f64 / out.total_rows as f64,
            100.0 * options.max_malformed_fraction,
            out.examples.join("; ")
        )));
    }
    Ok(out)
}

pub fn write_transactions(path: &Path, schema: &FeatureSchema, records: &[TransactionRecord]) -> Result<()> {
    io::write_csv(path, |w| {
        w.write_record(schema.transaction_header())?;
        let mut row: Vec<String> = Vec::new();
        for r in records {
            row.clear();
            row.push(r.txn_id.to_string());
            row.push(r.user_id.to_string());
            row.push(r.ts.to_string());
            row.extend(r.fields.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })
}
