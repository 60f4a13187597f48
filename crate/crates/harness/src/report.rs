//! CSV and JSON views of a run record.
//!
//! Floats are written with 6 significant digits. Standard deviations are sample
//! (n - 1) deviations over repeats and are left empty when a cell has one repeat.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::sweep::{RunRecord, Stat};

pub const CURVES_FILE: &str = "ensemble_curves.csv";
pub const MEMBERS_FILE: &str = "members.csv";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const REGIMES_FILE: &str = "regimes.csv";
pub const RECORD_FILE: &str = "record.json";

pub const CURVES_HEADER: [&str; 10] = [
    "method",
    "lr_mult",
    "epoch_mult",
    "size",
    "acc_mean",
    "acc_std",
    "nll_mean",
    "ece_mean",
    "ood_acc_mean",
    "ood_acc_std",
];
pub const MEMBERS_HEADER: [&str; 3] = ["cell_id", "member_index", "individual_acc"];
pub const SEGMENTS_HEADER: [&str; 6] = ["cell_id", "alpha", "train_loss", "train_acc", "test_loss", "test_acc"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// `x` rounded to 6 significant digits, printed in the shortest form that
/// parses back to the rounded value.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("scientific notation parses");
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

fn mean(s: Option<&Stat>) -> String {
    opt(s.map(|s| s.mean))
}

fn std(s: Option<&Stat>) -> String {
    opt(s.and_then(|s| s.std))
}

fn curve_rows(record: &RunRecord) -> Vec<(Option<String>, Vec<String>)> {
    let mut rows = Vec::new();
    for cell in &record.cells {
        for s in &cell.sizes {
            rows.push((
                cell.label.clone(),
                vec![
                    cell.method.name().to_string(),
                    fmt_sig6(cell.lr_multiplier),
                    fmt_sig6(cell.epoch_multiplier),
                    s.size.to_string(),
                    mean(Some(&s.accuracy)),
                    std(Some(&s.accuracy)),
                    mean(Some(&s.nll)),
                    mean(Some(&s.ece)),
                    mean(s.ood_accuracy.as_ref()),
                    std(s.ood_accuracy.as_ref()),
                ],
            ));
        }
    }
    rows
}

/// Writes the report files into `out_dir` (created if missing) and returns their paths.
pub fn emit_report(record: &RunRecord, format: ReportFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    match format {
        ReportFormat::Json => {
            let path = out_dir.join(RECORD_FILE);
            fs::write(&path, serde_json::to_string_pretty(record)?)?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let mut written = Vec::new();
            let rows = curve_rows(record);

            let path = out_dir.join(CURVES_FILE);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(CURVES_HEADER)?;
            for (_, row) in &rows {
                w.write_record(row)?;
            }
            w.flush()?;
            written.push(path);

            let path = out_dir.join(MEMBERS_FILE);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(MEMBERS_HEADER)?;
            for cell in &record.cells {
                for (i, s) in cell.member_accuracy.iter().enumerate() {
                    w.write_record([cell.cell_id.to_string(), (i + 1).to_string(), fmt_sig6(s.mean)])?;
                }
            }
            w.flush()?;
            written.push(path);

            let path = out_dir.join(SEGMENTS_FILE);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(SEGMENTS_HEADER)?;
            for cell in &record.cells {
                if let Some(seg) = cell.segment() {
                    for p in &seg.curve.points {
                        w.write_record([
                            cell.cell_id.to_string(),
                            fmt_sig6(p.alpha),
                            fmt_sig6(p.train_loss),
                            fmt_sig6(p.train_acc),
                            fmt_sig6(p.test_loss),
                            fmt_sig6(p.test_acc),
                        ])?;
                    }
                }
            }
            w.flush()?;
            written.push(path);

            if rows.iter().any(|(label, _)| label.is_some()) {
                let path = out_dir.join(REGIMES_FILE);
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(std::iter::once("preset").chain(CURVES_HEADER.iter().copied().skip(1)))?;
                for (label, row) in &rows {
                    w.write_record(std::iter::once(label.as_deref().unwrap_or("")).chain(row.iter().skip(1).map(String::as_str)))?;
                }
                w.flush()?;
                written.push(path);
            }
            Ok(written)
        }
    }
}

/// One parsed row of `ensemble_curves.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub lr_mult: f64,
    pub epoch_mult: f64,
    pub size: usize,
    pub acc_mean: f64,
    pub acc_std: Option<f64>,
    pub nll_mean: f64,
    pub ece_mean: f64,
    pub ood_acc_mean: Option<f64>,
    pub ood_acc_std: Option<f64>,
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CURVES_HEADER {
        return Err(HarnessError::Plan(format!("unexpected curve header {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<Vec<CurveRow>, _>>()?)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
