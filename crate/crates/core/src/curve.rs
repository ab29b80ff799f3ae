//! Sampled intervention curves and their on-disk formats.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::stats::{self, WeightedSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Local,
    Linear,
    Truth,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Local => "local",
            Method::Linear => "linear",
            Method::Truth => "truth",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Method::Mc),
            "local" => Ok(Method::Local),
            "linear" => Ok(Method::Linear),
            "truth" => Ok(Method::Truth),
            other => Err(Error::Domain(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub seed: u64,
    /// Number of distinct DAGs (or parent sets, for the local method) behind the draws.
    pub n_components: usize,
    pub expectation_only: bool,
}

/// Posterior draws of `E(target | do(intervened = grid[g]))` or of the target
/// itself, one row of draws per grid point.
///
/// Every draw index refers to the same sampled curve across grid points, so
/// `samples[g][d]` for fixed `d` traces one curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionCurve {
    pub method: Method,
    pub intervened: NodeSet,
    pub target: usize,
    /// `grid[g][k]` is the value assigned to the `k`-th intervened node.
    pub grid: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
    /// Normalized per-draw weights, shared across grid points.
    pub weights: Vec<f64>,
    pub dag_index: Vec<usize>,
    pub meta: CurveMeta,
}

impl InterventionCurve {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.grid.len() {
            return Err(Error::Shape(format!(
                "{} sample rows for {} grid points",
                self.samples.len(),
                self.grid.len()
            )));
        }
        let d = self.weights.len();
        if self.dag_index.len() != d || self.samples.iter().any(|row| row.len() != d) {
            return Err(Error::Shape("draw count differs between rows, weights and dag indices".into()));
        }
        if self.grid.iter().any(|g| g.len() != self.intervened.len()) {
            return Err(Error::Shape("grid point width differs from intervened set".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("negative or NaN weight".into()));
        }
        Ok(())
    }

    pub fn n_draws(&self) -> usize {
        self.weights.len()
    }

    /// Values of the first intervened node, used as the plotting axis.
    pub fn x_axis(&self) -> Vec<f64> {
        self.grid.iter().map(|g| g[0]).collect()
    }

    pub fn sample_at(&self, g: usize) -> WeightedSample {
        WeightedSample::new(self.samples[g].clone(), self.weights.clone()).expect("validated curve")
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|g| self.sample_at(g).mean()).collect()
    }

    /// Standard error of the weighted mean, `sqrt(Σ w²(x − m)²)`.
    pub fn standard_error(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|row| {
                let m: f64 = row.iter().zip(&self.weights).map(|(x, w)| x * w).sum();
                row.iter()
                    .zip(&self.weights)
                    .map(|(x, w)| (w * (x - m)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid_value", "draw_index", "value", "weight", "dag_index"])?;
        for (g, row) in self.samples.iter().enumerate() {
            let x = grid_key(&self.grid[g]);
            for (d, v) in row.iter().enumerate() {
                w.write_record([
                    x.as_str(),
                    &d.to_string(),
                    &v.to_string(),
                    &self.weights[d].to_string(),
                    &self.dag_index[d].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, level: f64) -> CurveSummary {
        let band = stats::credible_band(self, level);
        CurveSummary {
            method: self.method,
            intervened: self.intervened.clone(),
            target: self.target,
            grid: self.grid.clone(),
            mean: self.mean(),
            standard_error: self.standard_error(),
            level,
            band_lo: band.iter().map(|b| b.0).collect(),
            band_hi: band.iter().map(|b| b.1).collect(),
            n_draws: self.n_draws(),
            meta: self.meta.clone(),
        }
    }
}

/// Per-grid-point mean and Harrell–Davis credible band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub method: Method,
    pub intervened: NodeSet,
    pub target: usize,
    pub grid: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub level: f64,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    pub n_draws: usize,
    pub meta: CurveMeta,
}

/// Grid point as written in the `grid_value` column: one value per
/// intervened node, separated by `;`.
pub fn grid_key(point: &[f64]) -> String {
    point.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// `n` equispaced points spanning `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
