//! The wide tabular dataset and its on-disk containers.
//!
//! A [`FeatureFrame`] is rectangular: named columns, row-major `f64` cells,
//! an explicit per-cell null mask, and per-row metadata (user, timestamp,
//! optional label). Nulls are first-class — a null cell stores a `0.0`
//! placeholder in the value array and a set bit in the mask, never a
//! sentinel number.
//!
//! Two serializations exist:
//! - `frame.bin` — the `TGF1` binary container (exact, bit-preserving);
//! - a wide CSV (`user,t_ms,label,target,<columns...>`) for inspection and
//!   plotting, where an empty field is a null.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::binio;
use crate::ingest::{RowLabel, TheftTarget};
use crate::telemetry::Timestamp;

const FRAME_MAGIC: &[u8; 4] = b"TGF1";
const FRAME_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("duplicate column name: {0}")]
    DuplicateColumn(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("row has {got} values, frame has {want} columns")]
    WidthMismatch { got: usize, want: usize },
    #[error("frame has no rows")]
    Empty,
    #[error("row {row} is unlabeled")]
    UnlabeledRow { row: usize },
    #[error("row {row} is not malicious; target classes exist only for malicious rows")]
    NotMalicious { row: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed frame csv: {0}")]
    MalformedCsv(String),
}

/// Integer-coded labels plus the class-name table they index into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub ids: Vec<usize>,
    pub classes: Vec<String>,
}

impl Labels {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    columns: Vec<String>,
    col_index: HashMap<String, usize>,
    users: Vec<String>,
    timestamps: Vec<Timestamp>,
    labels: Vec<Option<RowLabel>>,
    values: Vec<f64>,
    nulls: Vec<bool>,
}

impl FeatureFrame {
    pub fn new(columns: Vec<String>) -> Result<Self, FrameError> {
        let mut col_index = HashMap::with_capacity(columns.len());
        for (i, c) in columns.iter().enumerate() {
            if col_index.insert(c.clone(), i).is_some() {
                return Err(FrameError::DuplicateColumn(c.clone()));
            }
        }
        Ok(FeatureFrame {
            columns,
            col_index,
            users: Vec::new(),
            timestamps: Vec::new(),
            labels: Vec::new(),
            values: Vec::new(),
            nulls: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.users.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.col_index.get(name).copied()
    }

    pub fn push_row(
        &mut self,
        user: String,
        t: Timestamp,
        label: Option<RowLabel>,
        row: &[Option<f64>],
    ) -> Result<(), FrameError> {
        if row.len() != self.n_cols() {
            return Err(FrameError::WidthMismatch {
                got: row.len(),
                want: self.n_cols(),
            });
        }
        self.users.push(user);
        self.timestamps.push(t);
        self.labels.push(label);
        for v in row {
            match v {
                Some(x) => {
                    self.values.push(*x);
                    self.nulls.push(false);
                }
                None => {
                    self.values.push(0.0);
                    self.nulls.push(true);
                }
            }
        }
        Ok(())
    }

    /// Cell accessor; `None` means null.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.n_cols() + col;
        if self.nulls[i] {
            None
        } else {
            Some(self.values[i])
        }
    }

    pub fn is_null(&self, row: usize, col: usize) -> bool {
        self.nulls[row * self.n_cols() + col]
    }

    pub fn user(&self, row: usize) -> &str {
        &self.users[row]
    }

    pub fn timestamp(&self, row: usize) -> Timestamp {
        self.timestamps[row]
    }

    pub fn label(&self, row: usize) -> Option<RowLabel> {
        self.labels[row]
    }

    pub fn null_fraction(&self, col: usize) -> f64 {
        if self.n_rows() == 0 {
            return 0.0;
        }
        let nulls = (0..self.n_rows())
            .filter(|&r| self.nulls[r * self.n_cols() + col])
            .count();
        nulls as f64 / self.n_rows() as f64
    }

    /// New frame holding only the named columns, in the given order.
    /// Row metadata is carried over unchanged.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureFrame, FrameError> {
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            idx.push(
                self.column_index(name)
                    .ok_or_else(|| FrameError::UnknownColumn(name.clone()))?,
            );
        }
        let mut out = FeatureFrame::new(names.to_vec())?;
        out.users = self.users.clone();
        out.timestamps = self.timestamps.clone();
        out.labels = self.labels.clone();
        out.values.reserve(self.n_rows() * idx.len());
        out.nulls.reserve(self.n_rows() * idx.len());
        for r in 0..self.n_rows() {
            let base = r * self.n_cols();
            for &c in &idx {
                out.values.push(self.values[base + c]);
                out.nulls.push(self.nulls[base + c]);
            }
        }
        Ok(out)
    }

    /// New frame holding only the given rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> FeatureFrame {
        let mut out = FeatureFrame::new(self.columns.clone()).expect("columns already unique");
        out.values.reserve(rows.len() * self.n_cols());
        out.nulls.reserve(rows.len() * self.n_cols());
        for &r in rows {
            out.users.push(self.users[r].clone());
            out.timestamps.push(self.timestamps[r]);
            out.labels.push(self.labels[r]);
            let base = r * self.n_cols();
            out.values
                .extend_from_slice(&self.values[base..base + self.n_cols()]);
            out.nulls
                .extend_from_slice(&self.nulls[base..base + self.n_cols()]);
        }
        out
    }

    /// Appends all rows of `other` (which must have identical columns).
    pub fn append(&mut self, other: &FeatureFrame) -> Result<(), FrameError> {
        if self.columns != other.columns {
            return Err(FrameError::WidthMismatch {
                got: other.n_cols(),
                want: self.n_cols(),
            });
        }
        self.users.extend_from_slice(&other.users);
        self.timestamps.extend_from_slice(&other.timestamps);
        self.labels.extend_from_slice(&other.labels);
        self.values.extend_from_slice(&other.values);
        self.nulls.extend_from_slice(&other.nulls);
        Ok(())
    }

    /// Row indices with a malicious label.
    pub fn malicious_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| matches!(self.labels[r], Some(RowLabel::Malicious(_))))
            .collect()
    }

    /// Binary benign/malicious labels (0 = benign, 1 = malicious).
    pub fn detection_labels(&self) -> Result<Labels, FrameError> {
        let mut ids = Vec::with_capacity(self.n_rows());
        for r in 0..self.n_rows() {
            match self.labels[r] {
                Some(RowLabel::Benign) => ids.push(0),
                Some(RowLabel::Malicious(_)) => ids.push(1),
                None => return Err(FrameError::UnlabeledRow { row: r }),
            }
        }
        Ok(Labels {
            ids,
            classes: vec!["benign".to_string(), "malicious".to_string()],
        })
    }

    /// Six-way theft-target labels. Every row must be malicious.
    pub fn target_labels(&self) -> Result<Labels, FrameError> {
        let mut ids = Vec::with_capacity(self.n_rows());
        for r in 0..self.n_rows() {
            match self.labels[r] {
                Some(RowLabel::Malicious(target)) => ids.push(target.index()),
                Some(RowLabel::Benign) => return Err(FrameError::NotMalicious { row: r }),
                None => return Err(FrameError::UnlabeledRow { row: r }),
            }
        }
        Ok(Labels {
            ids,
            classes: TheftTarget::ALL.iter().map(|t| t.as_str().to_string()).collect(),
        })
    }

    // ---- TGF1 binary container ----

    pub fn write_bin(&self, path: &Path) -> Result<(), FrameError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_bin_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_bin_to<W: Write>(&self, w: &mut W) -> Result<(), FrameError> {
        w.write_all(FRAME_MAGIC)?;
        binio::write_u32(w, FRAME_VERSION)?;
        binio::write_u32(w, self.n_cols() as u32)?;
        for c in &self.columns {
            binio::write_str(w, c)?;
        }
        binio::write_u64(w, self.n_rows() as u64)?;
        for r in 0..self.n_rows() {
            binio::write_str(w, &self.users[r])?;
            binio::write_i64(w, self.timestamps[r].millis())?;
            binio::write_u8(w, label_byte(self.labels[r]))?;
        }
        for v in &self.values {
            binio::write_f64(w, *v)?;
        }
        // One bit per cell, row-major, LSB first; 1 = null.
        let mut byte = 0u8;
        for (i, &null) in self.nulls.iter().enumerate() {
            if null {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                binio::write_u8(w, byte)?;
                byte = 0;
            }
        }
        if self.nulls.len() % 8 != 0 {
            binio::write_u8(w, byte)?;
        }
        Ok(())
    }

    pub fn read_bin(path: &Path) -> Result<FeatureFrame, FrameError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_bin_from(&mut r)
    }

    pub fn read_bin_from<R: Read>(r: &mut R) -> Result<FeatureFrame, FrameError> {
        binio::expect_magic(r, FRAME_MAGIC, "frame")?;
        let version = binio::read_u32(r)?;
        if version != FRAME_VERSION {
            return Err(binio::invalid(&format!("unsupported frame version {version}")).into());
        }
        let n_cols = binio::read_u32(r)? as usize;
        let mut columns = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            columns.push(binio::read_str(r)?);
        }
        let mut frame = FeatureFrame::new(columns)
            .map_err(|e| binio::invalid(&e.to_string()))?;
        let n_rows = binio::read_u64(r)? as usize;
        for _ in 0..n_rows {
            let user = binio::read_str(r)?;
            let t = Timestamp(binio::read_i64(r)?);
            let label = label_from_byte(binio::read_u8(r)?)?;
            frame.users.push(user);
            frame.timestamps.push(t);
            frame.labels.push(label);
        }
        let cells = n_rows * n_cols;
        frame.values.reserve(cells);
        for _ in 0..cells {
            frame.values.push(binio::read_f64(r)?);
        }
        frame.nulls.reserve(cells);
        let mut byte = 0u8;
        for i in 0..cells {
            if i % 8 == 0 {
                byte = binio::read_u8(r)?;
            }
            frame.nulls.push(byte & (1 << (i % 8)) != 0);
        }
        Ok(frame)
    }

    // ---- wide CSV ----

    pub fn write_csv(&self, path: &Path) -> Result<(), FrameError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "user".to_string(),
            "t_ms".to_string(),
            "label".to_string(),
            "target".to_string(),
        ];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            record.push(self.users[r].clone());
            record.push(self.timestamps[r].millis().to_string());
            match self.labels[r] {
                None => {
                    record.push(String::new());
                    record.push(String::new());
                }
                Some(RowLabel::Benign) => {
                    record.push("benign".to_string());
                    record.push(String::new());
                }
                Some(RowLabel::Malicious(target)) => {
                    record.push("malicious".to_string());
                    record.push(target.as_str().to_string());
                }
            }
            for c in 0..self.n_cols() {
                match self.get(r, c) {
                    Some(v) => record.push(format!("{v}")),
                    None => record.push(String::new()),
                }
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureFrame, FrameError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let fixed = ["user", "t_ms", "label", "target"];
        if header.len() < fixed.len()
            || header.iter().take(4).ne(fixed.iter().copied())
        {
            return Err(FrameError::MalformedCsv(
                "header must start with user,t_ms,label,target".to_string(),
            ));
        }
        let columns: Vec<String> = header.iter().skip(4).map(|s| s.to_string()).collect();
        let mut frame = FeatureFrame::new(columns)?;
        let mut row_buf: Vec<Option<f64>> = Vec::with_capacity(frame.n_cols());
        for (line, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != frame.n_cols() + 4 {
                return Err(FrameError::MalformedCsv(format!(
                    "record {line} has {} fields, expected {}",
                    record.len(),
                    frame.n_cols() + 4
                )));
            }
            let user = record[0].to_string();
            let t = record[1]
                .parse::<i64>()
                .map_err(|_| FrameError::MalformedCsv(format!("record {line}: bad t_ms")))?;
            let label = match &record[2] {
                "" => None,
                "benign" => Some(RowLabel::Benign),
                "malicious" => {
                    let target = TheftTarget::parse(&record[3]).ok_or_else(|| {
                        FrameError::MalformedCsv(format!("record {line}: bad target"))
                    })?;
                    Some(RowLabel::Malicious(target))
                }
                other => {
                    return Err(FrameError::MalformedCsv(format!(
                        "record {line}: bad label {other:?}"
                    )))
                }
            };
            row_buf.clear();
            for field in record.iter().skip(4) {
                if field.is_empty() {
                    row_buf.push(None);
                } else {
                    let v = field.parse::<f64>().map_err(|_| {
                        FrameError::MalformedCsv(format!("record {line}: bad value {field:?}"))
                    })?;
                    row_buf.push(Some(v));
                }
            }
            frame.push_row(user, Timestamp(t), label, &row_buf)?;
        }
        Ok(frame)
    }
}

fn label_byte(label: Option<RowLabel>) -> u8 {
    match label {
        None => 0,
        Some(RowLabel::Benign) => 1,
        Some(RowLabel::Malicious(target)) => 2 + target.index() as u8,
    }
}

fn label_from_byte(b: u8) -> Result<Option<RowLabel>, FrameError> {
    match b {
        0 => Ok(None),
        1 => Ok(Some(RowLabel::Benign)),
        k if (k as usize) < 2 + TheftTarget::ALL.len() => Ok(Some(RowLabel::Malicious(
            TheftTarget::ALL[(k - 2) as usize],
        ))),
        other => Err(binio::invalid(&format!("bad label byte {other}")).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_frame() -> FeatureFrame {
        let mut f = FeatureFrame::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        f.push_row(
            "u1".into(),
            Timestamp(1000),
            Some(RowLabel::Benign),
            &[Some(1.5), None, Some(-3.25)],
        )
        .unwrap();
        f.push_row(
            "u1".into(),
            Timestamp(6000),
            Some(RowLabel::Malicious(TheftTarget::Photos)),
            &[None, Some(0.1), Some(f64::MAX)],
        )
        .unwrap();
        f.push_row("u2".into(), Timestamp(1000), None, &[None, None, None])
            .unwrap();
        f
    }

    #[test]
    fn cells_and_metadata_round_trip_through_bin() {
        let f = sample_frame();
        let dir = tempdir().unwrap();
        let path = dir.path().join("frame.bin");
        f.write_bin(&path).unwrap();
        let g = FeatureFrame::read_bin(&path).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn cells_and_metadata_round_trip_through_csv() {
        let f = sample_frame();
        let dir = tempdir().unwrap();
        let path = dir.path().join("frame.csv");
        f.write_csv(&path).unwrap();
        let g = FeatureFrame::read_csv(&path).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn select_columns_projects_and_rejects_unknown() {
        let f = sample_frame();
        let g = f.select_columns(&["c".to_string(), "a".to_string()]).unwrap();
        assert_eq!(g.columns(), ["c", "a"]);
        assert_eq!(g.get(0, 0), Some(-3.25));
        assert_eq!(g.get(0, 1), Some(1.5));
        assert!(matches!(
            f.select_columns(&["nope".to_string()]),
            Err(FrameError::UnknownColumn(_))
        ));
    }

    #[test]
    fn null_fraction_counts_mask_bits() {
        let f = sample_frame();
        assert!((f.null_fraction(0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.null_fraction(2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn detection_labels_require_all_rows_labeled() {
        let f = sample_frame();
        assert!(matches!(
            f.detection_labels(),
            Err(FrameError::UnlabeledRow { row: 2 })
        ));
        let g = f.take_rows(&[0, 1]);
        let labels = g.detection_labels().unwrap();
        assert_eq!(labels.ids, vec![0, 1]);
    }

    #[test]
    fn target_labels_only_for_malicious_frames() {
        let f = sample_frame();
        let g = f.take_rows(&[1]);
        let labels = g.target_labels().unwrap();
        assert_eq!(labels.ids, vec![TheftTarget::Photos.index()]);
        assert!(f.take_rows(&[0]).target_labels().is_err());
    }
}
