//! Scan tables: one CSV row per grid point, floats with 9 significant digits.

use std::io::{Read, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measurement::OutcomeProbs;

pub const HEADER: [&str; 7] = ["scan_value", "p11", "p10", "p01", "p00", "n_shots", "seed"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub scan_value: f64,
    pub probs: OutcomeProbs,
    pub n_shots: u64,
    pub seed: u64,
}

#[derive(Deserialize)]
struct Record {
    scan_value: f64,
    p11: f64,
    p10: f64,
    p01: f64,
    p00: f64,
    n_shots: u64,
    seed: u64,
}

/// Probabilities may be off by rounding to 9 digits when read back.
const READ_SUM_TOL: f64 = 1e-8;

fn float(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_rows<W: Write>(out: W, rows: &[ScanRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(|e| Error::Csv(e.to_string()))?;
    for r in rows {
        let [p11, p10, p01, p00] = r.probs.as_array().map(float);
        w.write_record([float(r.scan_value), p11, p10, p01, p00, r.n_shots.to_string(), r.seed.to_string()])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Checks a row read from disk and renormalizes away the rounding.
fn row_probs(rec: &Record) -> Result<OutcomeProbs> {
    let all = [rec.p11, rec.p10, rec.p01, rec.p00];
    let sum: f64 = all.iter().sum();
    if all.iter().any(|p| !(-READ_SUM_TOL..=1.0 + READ_SUM_TOL).contains(p)) || (sum - 1.0).abs() > READ_SUM_TOL {
        return Err(Error::Csv(format!("probabilities {all:?} are not a distribution (sum {sum})")));
    }
    let [p11, p10, p01, p00] = all.map(|p| p.max(0.0) / sum);
    OutcomeProbs::new(p11, p10, p01, p00)
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ScanRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(Error::Csv(format!("expected header {}, found {}", HEADER.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<Record>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Csv(format!("line {line}: {e}")))?;
        let probs = row_probs(&rec).map_err(|e| Error::Csv(format!("line {line}: {e}")))?;
        rows.push(ScanRow { scan_value: rec.scan_value, probs, n_shots: rec.n_shots, seed: rec.seed });
    }
    if rows.is_empty() {
        return Err(Error::Csv("table has no rows".into()));
    }
    Ok(rows)
}
