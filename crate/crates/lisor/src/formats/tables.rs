//! CSV reports.

use std::path::Path;

use lisor_core::train::EpochStats;
use serde::{Deserialize, Serialize};

use super::write_text;
use crate::error::{FormatError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
}

impl From<&EpochStats> for TrainRow {
    fn from(s: &EpochStats) -> Self {
        TrainRow {
            epoch: s.epoch,
            loss: s.loss,
            train_acc: s.train_acc,
            valid_acc: s.valid_acc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub k: usize,
    pub mean_accuracy: f64,
    pub ensemble_accuracy: f64,
}

pub fn to_csv<T: Serialize>(rows: &[T], headers: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| FormatError::field("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(FormatError::from)
}

pub const TRAIN_HEADERS: &[&str] = &["epoch", "loss", "train_acc", "valid_acc"];
pub const CURVE_HEADERS: &[&str] = &["k", "accuracy"];
pub const ENSEMBLE_HEADERS: &[&str] = &["k", "mean_accuracy", "ensemble_accuracy"];

pub fn save_train(rows: &[TrainRow], path: &Path) -> Result<()> {
    write_text(path, &to_csv(rows, TRAIN_HEADERS)?)
}

pub fn save_curve(rows: &[CurveRow], path: &Path) -> Result<()> {
    write_text(path, &to_csv(rows, CURVE_HEADERS)?)
}

pub fn save_ensemble(rows: &[EnsembleRow], path: &Path) -> Result<()> {
    write_text(path, &to_csv(rows, ENSEMBLE_HEADERS)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_csv() {
        let rows = [CurveRow { k: 2, accuracy: 0.5 }, CurveRow { k: 3, accuracy: 1.0 }];
        let text = to_csv(&rows, CURVE_HEADERS).unwrap();
        assert_eq!(text, "k,accuracy\n2,0.5\n3,1.0\n");
        assert_eq!(from_csv::<CurveRow>(&text).unwrap(), rows);
    }

    #[test]
    fn empty_table_has_header() {
        assert_eq!(to_csv::<TrainRow>(&[], TRAIN_HEADERS).unwrap(), "epoch,loss,train_acc,valid_acc\n");
    }
}
