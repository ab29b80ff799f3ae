//! Observation matrices with labelled columns and optional standardization.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column affine map between raw and standardized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn to_std(&self, col: usize, raw: f64) -> f64 {
        (raw - self.means[col]) / self.sds[col]
    }

    pub fn to_raw(&self, col: usize, std: f64) -> f64 {
        self.means[col] + self.sds[col] * std
    }
}

/// Rows are observations, columns are network nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    labels: Vec<String>,
    values: DMatrix<f64>,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::Shape(format!("{} labels for {} columns", labels.len(), values.ncols())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("data contain non-finite entries".into()));
        }
        Ok(Dataset {
            labels,
            values,
            standardization: None,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    pub fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        self.values.select_columns(cols)
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Shifts and scales every column to zero mean and unit sample standard
    /// deviation, recording the map.
    pub fn standardized(&self) -> Result<Dataset> {
        let n = self.n_obs();
        if n < 2 {
            return Err(Error::Domain("standardization needs at least two rows".into()));
        }
        let mut values = self.values.clone();
        let mut means = Vec::with_capacity(self.n_vars());
        let mut sds = Vec::with_capacity(self.n_vars());
        for j in 0..self.n_vars() {
            let col = self.values.column(j);
            let m = col.mean();
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            if !(sd > 0.0) {
                return Err(Error::Domain(format!("column {} is constant", self.labels[j])));
            }
            for i in 0..n {
                values[(i, j)] = (values[(i, j)] - m) / sd;
            }
            means.push(m);
            sds.push(sd);
        }
        // Compose with any earlier map so raw units stay recoverable.
        let standardization = match &self.standardization {
            None => Standardization { means, sds },
            Some(prev) => Standardization {
                means: (0..means.len()).map(|j| prev.to_raw(j, means[j])).collect(),
                sds: (0..sds.len()).map(|j| prev.sds[j] * sds[j]).collect(),
            },
        };
        Ok(Dataset {
            labels: self.labels.clone(),
            values,
            standardization: Some(standardization),
        })
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let labels: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut flat = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != labels.len() {
                return Err(Error::Format(format!("row {} has {} fields", rows + 1, rec.len())));
            }
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: cannot parse {field:?}", rows + 1)))?;
                flat.push(v);
            }
            rows += 1;
        }
        Dataset::new(labels.clone(), DMatrix::from_row_slice(rows, labels.len(), &flat))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.labels)?;
        for i in 0..self.n_obs() {
            w.write_record(self.values.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
