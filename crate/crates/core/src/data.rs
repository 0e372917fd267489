//! The [`Dataset`] type: an immutable `n × d` matrix of finite samples.
//!
//! Datasets are reference counted so that weighted measures can alias the
//! samples they were built from without copying.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Arc<Array2<f64>>,
}

impl Dataset {
    /// Wraps a matrix; rejects empty shapes and non-finite entries.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry in row {}",
                pos / d
            )));
        }
        Ok(Self {
            points: Arc::new(points),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::invalid(format!("row {i} has length {} != {d}", rows[i].len())));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(arr)
    }

    /// One-dimensional dataset from a slice of scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let arr = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(arr)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// True when both handles share the same storage.
    pub fn aliases(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.points, &other.points)
    }

    /// Column-wise means.
    pub fn mean(&self) -> Vec<f64> {
        self.points
            .mean_axis(ndarray::Axis(0))
            .expect("non-empty dataset")
            .to_vec()
    }

    /// Largest Euclidean norm over the rows.
    pub fn max_norm(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Parses headerless CSV text: one sample per row, decimal cells.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        parse_csv(text.as_bytes())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        File::open(path)?.read_to_end(&mut buf)?;
        parse_csv(&buf[..])
    }

    /// Writes headerless CSV using the shortest round-tripping decimal form.
    pub fn store_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        for row in self.points.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                first = false;
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn parse_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut flat = Vec::new();
    let mut d = None;
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(n + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match d {
            None => d = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {d} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite cell {cell:?}"),
                });
            }
            flat.push(v);
        }
        n += 1;
    }
    let d = d.ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let arr = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::invalid(e.to_string()))?;
    Dataset::new(arr)
}
