//! Subcommand implementations. Each is a function of the configuration and
//! its input files; wall-clock timings go to a separate sidecar file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use gpn_core::causal_local::local_mixture;
use gpn_core::causal_mc::{
    default_grid, intervene_enumerated, intervene_known_dag, intervene_unknown_dag, FittedGpn, InterventionQuery,
};
use gpn_core::curve::{grid_key, CurveSummary, InterventionCurve, Method};
use gpn_core::gpn::{generate_fourier_gpn, simulate, true_intervention_expectation};
use gpn_core::graph::{Dag, NodeSet};
use gpn_core::linear::{intervene_linear, intervene_linear_known};
use gpn_core::rng::keyed_seed;
use gpn_core::stats::wasserstein;
use gpn_core::structure::{
    edge_probabilities, enumerate_posterior as enumerate_dag_posterior, enumerated_edge_probabilities, fill_conditionals,
    read_archive, sample_dags as run_dag_sampler, write_archive, DagSamplerConfig, FamilyCache, ScoreKind,
    WeightedDagSample,
};
use gpn_core::Dataset;
use serde::Serialize;

use crate::artifacts::{
    create_dir, curve_file, pair_name, read_curve_draws, read_dataset, read_timings, record_timings, write_file,
    write_json,
};
use crate::config::{PairSpec, RunConfig};
use crate::error::{CliError, CliResult};

/// Files written by a command and a short human-readable report.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub report: String,
}

fn pair_seed(seed: u64, intervened: &NodeSet, target: usize) -> u64 {
    keyed_seed(seed, &[intervened.mask(), target as u64])
}

/// Cartesian product of the per-node default grids, in ascending node order.
pub fn query_grid(data: &Dataset, intervened: &NodeSet, points: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![Vec::new()];
    for v in intervened.iter() {
        let axis = default_grid(data, v, points);
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    grid
}

fn build_query(cfg: &RunConfig, data: &Dataset, pair: &PairSpec) -> InterventionQuery {
    let intervened = NodeSet::new(pair.intervened.clone());
    let grid = query_grid(data, &intervened, cfg.query.grid_points);
    InterventionQuery::new(intervened, grid, pair.target)
        .with_n_mc(cfg.query.n_mc)
        .with_expectation_only(cfg.query.expectation_only)
}

fn family_cache(cfg: &RunConfig, data: Arc<Dataset>) -> FamilyCache {
    FamilyCache::new(data, cfg.structure.score.clone(), cfg.seed).with_max_parents(cfg.structure.max_parents)
}

fn write_config(cfg: &RunConfig, command: &str, out: &mut Outcome) -> CliResult<()> {
    let path = cfg.output.join(format!("{command}.config.json"));
    write_json(&path, cfg)?;
    out.files.push(path);
    Ok(())
}

#[derive(Serialize)]
struct ModelFile<'a> {
    model: &'a gpn_core::gpn::GpnModel,
    standardization: &'a gpn_core::data::Standardization,
}

/// Ground-truth model, standardized observations and ground-truth
/// expectation curves (in standardized units) for every requested pair.
pub fn generate(cfg: &RunConfig) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    create_dir(&cfg.output)?;
    let dag = cfg.generator.graph.build()?;
    if cfg.generator.n_obs < 2 {
        return Err(CliError::Usage("need at least two observations".into()));
    }
    let model = generate_fourier_gpn(&dag, cfg.seed);
    let data = simulate(&model, cfg.generator.n_obs, cfg.seed)?.standardized()?;
    let map = data.standardization().expect("standardized data carries its map");

    let data_path = cfg.output.join("data.csv");
    write_file(&data_path, |w| Ok(data.write_csv(w)?))?;
    let model_path = cfg.output.join("model.json");
    write_json(&model_path, &ModelFile { model: &model, standardization: map })?;
    let dag_path = cfg.output.join("dag.json");
    write_file(&dag_path, |w| Ok(std::io::Write::write_all(w, (dag.to_json() + "\n").as_bytes())?))?;
    out.files.extend([data_path, model_path, dag_path]);

    for pair in cfg.query.resolve(dag.n())? {
        let intervened = NodeSet::new(pair.intervened.clone());
        if intervened.contains(pair.target) {
            return Err(CliError::Usage(format!("target {} is intervened", pair.target)));
        }
        let grid = query_grid(&data, &intervened, cfg.query.grid_points);
        let raw: Vec<Vec<f64>> = grid
            .iter()
            .map(|p| intervened.iter().zip(p).map(|(v, &x)| map.to_raw(v, x)).collect())
            .collect();
        let seed = pair_seed(cfg.seed, &intervened, pair.target);
        let truth =
            true_intervention_expectation(&model, pair.target, &intervened, &raw, cfg.generator.truth_replicates, seed)?;
        let path = cfg.output.join(format!("groundtruth_{}.csv", pair_name(&intervened, pair.target)));
        let sd = map.sds[pair.target];
        write_file(&path, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["grid_value", "mean", "standard_error"])?;
            for (g, point) in grid.iter().enumerate() {
                c.write_record([
                    grid_key(point),
                    map.to_std(pair.target, truth.mean[g]).to_string(),
                    (truth.standard_error[g] / sd).to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
        out.files.push(path);
    }
    write_config(cfg, "generate", &mut out)?;
    out.report = format!("{} nodes, {} observations, {} truth curves", dag.n(), data.n_obs(), out.files.len() - 4);
    Ok(out)
}

#[derive(Serialize)]
struct SampleReport {
    m: usize,
    acceptance_rate: f64,
    unique_dags: usize,
    ess: f64,
    kish_ess: f64,
    marginal_evaluations: usize,
    edge_probabilities: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct PosteriorEntry<'a> {
    dag: &'a Dag,
    probability: f64,
}

#[derive(Serialize)]
struct PosteriorFile<'a> {
    dags: Vec<PosteriorEntry<'a>>,
    edge_probabilities: Vec<Vec<f64>>,
}

fn matrix_rows(n: usize, at: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| at(i, j)).collect()).collect()
}

fn write_posterior(cfg: &RunConfig, posterior: &[(Dag, f64)], out: &mut Outcome) -> CliResult<()> {
    let n = posterior.first().map_or(0, |(d, _)| d.n());
    let edges = enumerated_edge_probabilities(posterior);
    let file = PosteriorFile {
        dags: posterior.iter().map(|(dag, p)| PosteriorEntry { dag, probability: *p }).collect(),
        edge_probabilities: matrix_rows(n, |i, j| edges[(i, j)]),
    };
    let path = cfg.output.join("posterior.json");
    write_json(&path, &file)?;
    out.files.push(path);
    Ok(())
}

/// Weighted DAG archive from the structure sampler, or with `enumerate` the
/// exact posterior over every DAG.
pub fn sample_dags(cfg: &RunConfig, enumerate: bool) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    create_dir(&cfg.output)?;
    let data = Arc::new(read_dataset(cfg.data_path()?)?);
    let cache = family_cache(cfg, data.clone());
    let start = Instant::now();
    if enumerate {
        let posterior = enumerate_dag_posterior(&cache)?;
        write_posterior(cfg, &posterior, &mut out)?;
        out.report = format!("exact posterior over {} DAGs", posterior.len());
    } else {
        let s = &cfg.structure;
        let sampler = DagSamplerConfig {
            m: s.m,
            burn_in: s.burn_in,
            thin: s.thin,
            cache_conditionals: s.cache_conditionals,
        };
        let set = run_dag_sampler(&cache, &sampler, cfg.seed)?;
        let path = cfg.output.join("archive.jsonl");
        write_file(&path, |w| Ok(write_archive(&set.samples, w)?))?;
        out.files.push(path);
        let edges = edge_probabilities(&set.samples);
        let report = SampleReport {
            m: set.samples.len(),
            acceptance_rate: set.acceptance_rate,
            unique_dags: set.unique_dags,
            ess: set.ess(),
            kish_ess: set.kish_ess(),
            marginal_evaluations: cache.marginal_evaluations(),
            edge_probabilities: matrix_rows(data.n_vars(), |i, j| edges[(i, j)]),
        };
        let path = cfg.output.join("sample_report.json");
        write_json(&path, &report)?;
        out.files.push(path);
        out.report = format!(
            "{} DAGs ({} unique), ESS {:.1}, acceptance {:.3}",
            report.m, report.unique_dags, report.ess, report.acceptance_rate
        );
    }
    let mut t = BTreeMap::new();
    t.insert("total".to_string(), start.elapsed().as_secs_f64());
    record_timings(&cfg.output, if enumerate { "enumerate" } else { "sample-dags" }, t)?;
    write_config(cfg, "sample-dags", &mut out)?;
    Ok(out)
}

/// Exact DAG posterior plus reference intervention draws under it for every
/// requested pair.
pub fn enumerate_posterior(cfg: &RunConfig) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    create_dir(&cfg.output)?;
    if matches!(cfg.structure.score, ScoreKind::Linear) {
        return Err(CliError::Usage("reference curves need GP scoring".into()));
    }
    let data = Arc::new(read_dataset(cfg.data_path()?)?);
    let cache = family_cache(cfg, data.clone());
    let start = Instant::now();
    let posterior = enumerate_dag_posterior(&cache)?;
    write_posterior(cfg, &posterior, &mut out)?;
    for pair in cfg.query.resolve(data.n_vars())? {
        let q = build_query(cfg, &data, &pair);
        let seed = pair_seed(cfg.seed, &q.intervened, q.target);
        let curve = intervene_enumerated(&posterior, &cache, &q, cfg.reference_particles, seed)?;
        let path = curve_file(&cfg.output, Method::Truth, &q.intervened, q.target);
        write_file(&path, |w| Ok(curve.write_csv(w)?))?;
        out.files.push(path);
    }
    let mut t = BTreeMap::new();
    t.insert("total".to_string(), start.elapsed().as_secs_f64());
    record_timings(&cfg.output, "enumerate-posterior", t)?;
    write_config(cfg, "enumerate-posterior", &mut out)?;
    out.report = format!("{} DAGs, {} reference curves", posterior.len(), out.files.len() - 2);
    Ok(out)
}

enum Structure {
    Archive(Vec<WeightedDagSample>),
    Known(Dag),
}

fn load_structure(cfg: &RunConfig, data: &Dataset) -> CliResult<Structure> {
    if let Some(path) = &cfg.archive {
        let f = File::open(path).map_err(|e| CliError::Usage(format!("archive {}: {e}", path.display())))?;
        return Ok(Structure::Archive(read_archive(BufReader::new(f))?));
    }
    if let Some(path) = &cfg.dag {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("dag {}: {e}", path.display())))?;
        let dag = Dag::from_json(&text)?;
        if dag.n() != data.n_vars() {
            return Err(CliError::Usage(format!("{}-node DAG for {} columns", dag.n(), data.n_vars())));
        }
        return Ok(Structure::Known(dag));
    }
    Err(CliError::Usage("intervene needs an archive or a known DAG".into()))
}

/// Intervention curves for every requested pair with the configured method.
pub fn intervene(cfg: &RunConfig) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    create_dir(&cfg.output)?;
    let data = Arc::new(read_dataset(cfg.data_path()?)?);
    let pairs = cfg.query.resolve(data.n_vars())?;
    match cfg.method {
        Method::Truth => return Err(CliError::Usage("truth is not an estimation method".into())),
        Method::Local if pairs.iter().any(|p| NodeSet::new(p.intervened.clone()).len() != 1) => {
            return Err(CliError::Usage("the local method handles single-node interventions only".into()))
        }
        _ => {}
    }
    let start = Instant::now();
    let mut structure = load_structure(cfg, &data)?;
    let cache = family_cache(cfg, data.clone());
    if let (Method::Mc, Structure::Archive(archive)) = (cfg.method, &mut structure) {
        if archive.iter().any(|s| s.conditionals.is_none()) {
            fill_conditionals(archive, &cache)?;
        }
    }
    let known = match (&structure, cfg.method) {
        (Structure::Known(dag), Method::Mc) => Some(FittedGpn::from_cache(dag.clone(), &cache)?),
        _ => None,
    };
    let mut timings = BTreeMap::new();
    let mut summaries: Vec<CurveSummary> = Vec::new();
    for pair in &pairs {
        let t0 = Instant::now();
        let q = build_query(cfg, &data, pair);
        let seed = pair_seed(cfg.seed, &q.intervened, q.target);
        let curve: InterventionCurve = match (&structure, cfg.method) {
            (Structure::Archive(a), Method::Mc) => intervene_unknown_dag(a, &data, &q, seed)?,
            (Structure::Known(_), Method::Mc) => intervene_known_dag(known.as_ref().expect("fitted above"), &q, seed)?,
            (Structure::Archive(a), Method::Linear) => intervene_linear(a, &data, &q, seed)?,
            (Structure::Known(dag), Method::Linear) => intervene_linear_known(dag, &data, &q, seed)?,
            (s, Method::Local) => {
                let single;
                let archive = match s {
                    Structure::Archive(a) => a.as_slice(),
                    Structure::Known(dag) => {
                        single = [WeightedDagSample {
                            dag: dag.clone(),
                            log_weight: 0.0,
                            conditionals: None,
                        }];
                        &single[..]
                    }
                };
                let x = q.intervened.as_slice()[0];
                let axis: Vec<f64> = q.grid.iter().map(|p| p[0]).collect();
                let draws = cfg.query.n_mc * archive.len();
                local_mixture(&data, archive, x, q.target, &axis, draws, &cfg.local, seed)?.curve
            }
            (_, Method::Truth) => unreachable!("rejected above"),
        };
        let path = curve_file(&cfg.output, cfg.method, &q.intervened, q.target);
        write_file(&path, |w| Ok(curve.write_csv(w)?))?;
        timings.insert(path.file_name().unwrap().to_string_lossy().into_owned(), t0.elapsed().as_secs_f64());
        summaries.push(curve.summary(0.8));
        out.files.push(path);
    }
    let path = cfg.output.join(format!("{}_summary.json", cfg.method.as_str()));
    write_json(&path, &summaries)?;
    out.files.push(path);
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    record_timings(&cfg.output, &format!("intervene-{}", cfg.method.as_str()), timings)?;
    write_config(cfg, &format!("intervene-{}", cfg.method.as_str()), &mut out)?;
    out.report = format!("{} curves with method {}", pairs.len(), cfg.method.as_str());
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct RunMetrics {
    pub path: PathBuf,
    /// Mean over grid points of the Wasserstein distance to the reference.
    pub distance: f64,
    pub per_grid: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct LabelMetrics {
    pub label: String,
    pub runs: Vec<RunMetrics>,
    pub mean_distance: f64,
}

#[derive(Debug, Serialize)]
pub struct Metrics {
    pub truth: PathBuf,
    pub baseline: Option<RunMetrics>,
    pub estimates: Vec<LabelMetrics>,
}

/// Distance of one estimate file to the reference, plus the runtime recorded
/// next to it if any.
fn distance_to(truth: &[(String, gpn_core::stats::WeightedSample)], path: &Path) -> CliResult<(RunMetrics, Option<f64>)> {
    let est = read_curve_draws(path)?;
    if est.len() != truth.len() || est.iter().zip(truth).any(|(a, b)| a.0 != b.0) {
        return Err(CliError::Usage(format!("{} uses a different grid from the reference", path.display())));
    }
    let per_grid: Vec<f64> = est.iter().zip(truth).map(|(a, b)| wasserstein(&a.1, &b.1)).collect();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let runtime_seconds = read_timings(dir)?.values().find_map(|t| t.get(&name).copied());
    let metrics = RunMetrics {
        path: path.to_path_buf(),
        distance: per_grid.iter().sum::<f64>() / per_grid.len() as f64,
        per_grid,
    };
    Ok((metrics, runtime_seconds))
}

/// Wasserstein distance of each estimate to the reference draws, averaged
/// over grid points and over repeated runs sharing a label.
pub fn evaluate(cfg: &RunConfig) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let ev = &cfg.evaluation;
    let truth_path = ev.truth.as_ref().ok_or_else(|| CliError::Usage("evaluate needs a reference file".into()))?;
    if ev.estimates.is_empty() && ev.baseline.is_none() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    create_dir(&cfg.output)?;
    let truth = read_curve_draws(truth_path)?;
    let baseline = ev.baseline.as_ref().map(|p| distance_to(&truth, p).map(|r| r.0)).transpose()?;
    // Runtimes go to the timings sidecar so metrics.json stays reproducible.
    let mut runtimes = BTreeMap::new();
    let mut labels: Vec<String> = Vec::new();
    for e in &ev.estimates {
        if !labels.contains(&e.label) {
            labels.push(e.label.clone());
        }
    }
    let estimates = labels
        .into_iter()
        .map(|label| {
            let (runs, times): (Vec<_>, Vec<_>) = ev
                .estimates
                .iter()
                .filter(|e| e.label == label)
                .map(|e| distance_to(&truth, &e.path))
                .collect::<CliResult<Vec<_>>>()?
                .into_iter()
                .unzip();
            let k = runs.len() as f64;
            let mean_distance = runs.iter().map(|r| r.distance).sum::<f64>() / k;
            if let Some(total) = times.into_iter().sum::<Option<f64>>() {
                runtimes.insert(label.clone(), total / k);
            }
            Ok(LabelMetrics {
                label,
                runs,
                mean_distance,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let metrics = Metrics {
        truth: truth_path.clone(),
        baseline,
        estimates,
    };
    let path = cfg.output.join("metrics.json");
    write_json(&path, &metrics)?;
    out.files.push(path);
    if !runtimes.is_empty() {
        record_timings(&cfg.output, "evaluate-mean-runtime", runtimes)?;
    }
    out.report = metrics
        .estimates
        .iter()
        .map(|l| format!("{}: {:.4}", l.label, l.mean_distance))
        .chain(metrics.baseline.iter().map(|b| format!("floor: {:.4}", b.distance)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(out)
}
