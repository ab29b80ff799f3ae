//! Files written and read by the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gpn_core::curve::Method;
use gpn_core::graph::NodeSet;
use gpn_core::stats::WeightedSample;
use gpn_core::Dataset;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Wall-clock seconds per command and output file. Kept apart from the
/// outputs so those stay byte-identical across runs.
pub const TIMINGS_FILE: &str = "timings.json";

pub type Timings = BTreeMap<String, BTreeMap<String, f64>>;

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_file<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("data {}: {e}", path.display())))?;
    Ok(Dataset::read_csv(BufReader::new(f))?)
}

pub fn read_timings(dir: &Path) -> CliResult<Timings> {
    let path = dir.join(TIMINGS_FILE);
    if !path.exists() {
        return Ok(Timings::new());
    }
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Replaces the entries of `command` in the directory's timings file.
pub fn record_timings(dir: &Path, command: &str, entries: BTreeMap<String, f64>) -> CliResult<()> {
    let mut all = read_timings(dir)?;
    all.insert(command.to_string(), entries);
    write_json(&dir.join(TIMINGS_FILE), &all)
}

/// `0_2` for `do(X0) → X2`, `0+1_2` for a joint intervention.
pub fn pair_name(intervened: &NodeSet, target: usize) -> String {
    let xs: Vec<String> = intervened.iter().map(|v| v.to_string()).collect();
    format!("{}_{target}", xs.join("+"))
}

pub fn curve_file(dir: &Path, method: Method, intervened: &NodeSet, target: usize) -> PathBuf {
    dir.join(format!("{}_{}.csv", method.as_str(), pair_name(intervened, target)))
}

/// Weighted draws per grid point from a curve CSV, in file order.
pub fn read_curve_draws(path: &Path) -> CliResult<Vec<(String, WeightedSample)>> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("curve {}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(BufReader::new(f));
    let mut out: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: malformed row {rec:?}", path.display())))
        };
        let (value, weight) = (parse(2)?, parse(3)?);
        let key = rec.get(0).unwrap_or_default();
        match out.last_mut() {
            Some((k, vs, ws)) if k == key => {
                vs.push(value);
                ws.push(weight);
            }
            _ => out.push((key.to_string(), vec![value], vec![weight])),
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{}: no draws", path.display())));
    }
    out.into_iter()
        .map(|(k, v, w)| Ok((k, WeightedSample::new(v, w)?)))
        .collect()
}
