//! CSV schemas exchanged between pipeline stages and written as artifacts.
//!
//! Reals are printed with six significant digits (`%g`-style), so every
//! artifact is a pure function of the values and byte-stable across runs.

use std::io::{self, Read, Write};

use ndarray::Array2;
use thiserror::Error;

use crate::complexity::ComplexityReport;
use crate::rank::RankAssignment;

pub const COMPLEXITY_HEADER: [&str; 5] = [
    "participant_id",
    "loss_entropy",
    "label_entropy",
    "gini_simpson",
    "log_data_volume",
];
pub const RANKS_HEADER: [&str; 8] = [
    "participant_id",
    "loss_entropy",
    "label_entropy",
    "gini_simpson",
    "log_data_volume",
    "closeness",
    "rank_ratio",
    "rank",
];
pub const LEARNING_CURVE_HEADER: [&str; 3] = ["round", "test_accuracy", "test_loss"];
pub const SMOOTHED_CURVE_HEADER: [&str; 2] = ["round", "smoothed_test_accuracy"];
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("record {record}: {message}")]
    Parse { record: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Six significant digits, fixed notation for exponents in `[-4, 6)` and
/// scientific otherwise, trailing zeros trimmed.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (5 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), WireError> {
    let found = rdr.headers()?.clone();
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(WireError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn parse_field(record: &csv::StringRecord, idx: usize, n: usize) -> Result<f64, WireError> {
    let raw = record.get(idx).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| WireError::Parse {
        record: n,
        message: format!("field {idx} ({raw:?}) is not a number"),
    })?;
    if !v.is_finite() {
        return Err(WireError::Parse {
            record: n,
            message: format!("field {idx} is not finite"),
        });
    }
    Ok(v)
}

pub fn write_complexity_csv<W: Write>(
    w: W,
    reports: &[ComplexityReport<f64>],
) -> Result<(), WireError> {
    let mut out = writer(w);
    out.write_record(COMPLEXITY_HEADER)?;
    for r in reports {
        out.write_record([
            r.participant_id.clone(),
            sig6(r.loss_entropy),
            sig6(r.label_entropy),
            sig6(r.gini_simpson),
            sig6(r.log_data_volume),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_complexity_csv<R: Read>(r: R) -> Result<Vec<ComplexityReport<f64>>, WireError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    check_header(&mut rdr, &COMPLEXITY_HEADER)?;
    let mut reports = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != COMPLEXITY_HEADER.len() {
            return Err(WireError::Parse {
                record: n,
                message: format!("expected 5 fields, got {}", rec.len()),
            });
        }
        let report = ComplexityReport {
            participant_id: rec[0].trim().to_string(),
            loss_entropy: parse_field(&rec, 1, n)?,
            label_entropy: parse_field(&rec, 2, n)?,
            gini_simpson: parse_field(&rec, 3, n)?,
            log_data_volume: parse_field(&rec, 4, n)?,
        };
        if report.participant_id.is_empty() {
            return Err(WireError::Parse {
                record: n,
                message: "empty participant id".into(),
            });
        }
        reports.push(report);
    }
    Ok(reports)
}

/// `reports` and `assignments` must be aligned by participant.
pub fn write_ranks_csv<W: Write>(
    w: W,
    reports: &[ComplexityReport<f64>],
    assignments: &[RankAssignment<f64>],
) -> Result<(), WireError> {
    let mut out = writer(w);
    out.write_record(RANKS_HEADER)?;
    for (r, a) in reports.iter().zip(assignments) {
        debug_assert_eq!(r.participant_id, a.participant_id);
        out.write_record([
            a.participant_id.clone(),
            sig6(r.loss_entropy),
            sig6(r.label_entropy),
            sig6(r.gini_simpson),
            sig6(r.log_data_volume),
            sig6(a.closeness),
            sig6(a.rank_ratio),
            a.rank.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rank ratio and integer rank per participant, read back from `ranks.csv`.
pub fn read_ranks_csv<R: Read>(r: R) -> Result<Vec<(String, f64, usize)>, WireError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &RANKS_HEADER)?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let rank = rec
            .get(7)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| WireError::Parse {
                record: n,
                message: "rank is not an integer".into(),
            })?;
        out.push((rec[0].to_string(), parse_field(&rec, 6, n)?, rank));
    }
    Ok(out)
}

/// N×N matrix with participant ids as header row and first column.
pub fn write_similarity_csv<W: Write>(
    w: W,
    ids: &[String],
    sim: &Array2<f64>,
) -> Result<(), WireError> {
    let mut out = writer(w);
    out.write_record(std::iter::once("participant_id".to_string()).chain(ids.iter().cloned()))?;
    for (id, row) in ids.iter().zip(sim.rows()) {
        out.write_record(std::iter::once(id.clone()).chain(row.iter().map(|&v| sig6(v))))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

pub fn write_learning_curve<W: Write>(w: W, points: &[CurvePoint]) -> Result<(), WireError> {
    let mut out = writer(w);
    out.write_record(LEARNING_CURVE_HEADER)?;
    for p in points {
        out.write_record([
            p.round.to_string(),
            sig6(p.test_accuracy),
            sig6(p.test_loss),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_learning_curve<R: Read>(r: R) -> Result<Vec<CurvePoint>, WireError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &LEARNING_CURVE_HEADER)?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let round = rec
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| WireError::Parse {
                record: n,
                message: "round is not an integer".into(),
            })?;
        out.push(CurvePoint {
            round,
            test_accuracy: parse_field(&rec, 1, n)?,
            test_loss: parse_field(&rec, 2, n)?,
        });
    }
    Ok(out)
}

/// Trailing rolling mean; the first `window - 1` entries average what is
/// available so far, so the output has one value per input.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let slice = &values[lo..=t];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

pub fn write_smoothed_curve<W: Write>(
    w: W,
    rounds: &[usize],
    smoothed: &[f64],
) -> Result<(), WireError> {
    let mut out = writer(w);
    out.write_record(SMOOTHED_CURVE_HEADER)?;
    for (r, v) in rounds.iter().zip(smoothed) {
        out.write_record([r.to_string(), sig6(*v)])?;
    }
    out.flush()?;
    Ok(())
}
