//! Report files: precision-recall curve CSVs, JSON documents and SVG figures.
//!
//! All writers are deterministic: the same input always produces the same bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::metrics::{OperatingPoint, PrCurve};

mod svg;

pub use svg::{latency_auc_svg, pr_curves_svg, LatencyAucPoint, NamedCurve};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed curve row {row}: {message}")]
    Curve { row: usize, message: String },
    #[error("nothing to plot")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub const CURVE_HEADER: [&str; 8] = ["threshold", "tp", "fp", "tn", "fn", "precision", "recall", "tnr"];

/// `threshold,tp,fp,tn,fn,precision,recall,tnr`; the sentinel threshold is written as `inf`.
pub fn write_curve_csv(writer: impl Write, curve: &PrCurve) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CURVE_HEADER)?;
    for p in &curve.points {
        w.write_record([
            p.threshold.to_string(),
            p.tp.to_string(),
            p.fp.to_string(),
            p.tn.to_string(),
            p.fn_.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
            p.tnr.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("<csv>")))?;
    Ok(())
}

pub fn read_curve_csv(reader: impl Read) -> Result<PrCurve, ReportError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CURVE_HEADER {
        return Err(ReportError::Curve {
            row: 0,
            message: format!("expected header {}", CURVE_HEADER.join(",")),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |message: String| ReportError::Curve { row, message };
        let float = |k: usize| -> Result<f64, ReportError> {
            rec[k].trim().parse::<f64>().map_err(|e| bad(format!("{}: {e}", CURVE_HEADER[k])))
        };
        let int = |k: usize| -> Result<u64, ReportError> {
            rec[k].trim().parse::<u64>().map_err(|e| bad(format!("{}: {e}", CURVE_HEADER[k])))
        };
        if rec.len() != CURVE_HEADER.len() {
            return Err(bad(format!("expected {} fields", CURVE_HEADER.len())));
        }
        let p = OperatingPoint {
            threshold: float(0)?,
            tp: int(1)?,
            fp: int(2)?,
            tn: int(3)?,
            fn_: int(4)?,
            precision: float(5)?,
            recall: float(6)?,
            tnr: float(7)?,
        };
        if !(0.0..=1.0).contains(&p.precision) || !(0.0..=1.0).contains(&p.recall) {
            return Err(bad("precision and recall must lie in [0, 1]".into()));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(PrCurve { points })
}

pub fn write_curve_csv_file(path: &Path, curve: &PrCurve) -> Result<(), ReportError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    write_curve_csv(std::io::BufWriter::new(f), curve)
}

pub fn read_curve_csv_file(path: &Path) -> Result<PrCurve, ReportError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_curve_csv(f)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    fs::write(path, to_json_string(value)).map_err(io_err(path))
}

pub fn write_text_file(path: &Path, text: &str) -> Result<(), ReportError> {
    fs::write(path, text).map_err(io_err(path))
}
