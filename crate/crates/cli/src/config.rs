//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use gpn_core::causal_local::LocalConfig;
use gpn_core::causal_mc::{DEFAULT_GRID_POINTS, DEFAULT_N_MC};
use gpn_core::curve::Method;
use gpn_core::graph::{five_node_benchmark, four_node_benchmark, Dag};
use gpn_core::structure::{ScoreKind, DEFAULT_MAX_PARENTS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Ground-truth graph for `generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    FiveNode,
    FourNode,
    Chain { n: usize },
    Explicit { dag: Dag },
}

impl GraphSpec {
    pub fn build(&self) -> CliResult<Dag> {
        Ok(match self {
            GraphSpec::FiveNode => five_node_benchmark(),
            GraphSpec::FourNode => four_node_benchmark(),
            GraphSpec::Chain { n } => {
                if *n == 0 {
                    return Err(CliError::Usage("chain needs at least one node".into()));
                }
                let edges: Vec<(usize, usize)> = (1..*n).map(|v| (v - 1, v)).collect();
                Dag::new(*n, &edges)?
            }
            GraphSpec::Explicit { dag } => dag.clone(),
        })
    }

    /// `five-node`, `four-node`, `chain:N`, or a path to a DAG JSON file.
    pub fn parse(s: &str) -> CliResult<GraphSpec> {
        match s {
            "five-node" => Ok(GraphSpec::FiveNode),
            "four-node" => Ok(GraphSpec::FourNode),
            _ => {
                if let Some(n) = s.strip_prefix("chain:") {
                    let n = n.parse().map_err(|_| CliError::Usage(format!("bad chain length in {s:?}")))?;
                    return Ok(GraphSpec::Chain { n });
                }
                let text = std::fs::read_to_string(s).map_err(|e| CliError::Usage(format!("graph {s:?}: {e}")))?;
                Ok(GraphSpec::Explicit {
                    dag: Dag::from_json(&text)?,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub graph: GraphSpec,
    pub n_obs: usize,
    /// Forward-simulation replicates behind each ground-truth curve.
    pub truth_replicates: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            graph: GraphSpec::FiveNode,
            n_obs: 50,
            truth_replicates: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructureSpec {
    pub m: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub max_parents: usize,
    pub score: ScoreKind,
    pub cache_conditionals: bool,
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec {
            m: 200,
            burn_in: 1000,
            thin: 10,
            max_parents: DEFAULT_MAX_PARENTS,
            score: ScoreKind::Gp(Default::default()),
            cache_conditionals: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub intervened: Vec<usize>,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuerySpec {
    /// Empty means every ordered pair of distinct nodes.
    pub pairs: Vec<PairSpec>,
    /// Points per intervened node; multi-node grids are Cartesian products.
    pub grid_points: usize,
    pub n_mc: usize,
    pub expectation_only: bool,
}

impl Default for QuerySpec {
    fn default() -> Self {
        QuerySpec {
            pairs: Vec::new(),
            grid_points: DEFAULT_GRID_POINTS,
            n_mc: DEFAULT_N_MC,
            expectation_only: false,
        }
    }
}

impl QuerySpec {
    pub fn resolve(&self, n_nodes: usize) -> CliResult<Vec<PairSpec>> {
        if self.pairs.is_empty() {
            return Ok((0..n_nodes)
                .flat_map(|x| {
                    (0..n_nodes).filter(move |&y| y != x).map(move |y| PairSpec {
                        intervened: vec![x],
                        target: y,
                    })
                })
                .collect());
        }
        for p in &self.pairs {
            if p.intervened.is_empty() || p.intervened.iter().chain([&p.target]).any(|&v| v >= n_nodes) {
                return Err(CliError::Usage(format!("pair {p:?} does not fit {n_nodes} nodes")));
            }
        }
        Ok(self.pairs.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPath {
    pub label: String,
    pub path: PathBuf,
}

impl LabeledPath {
    /// `label=path`.
    pub fn parse(s: &str) -> CliResult<LabeledPath> {
        let (label, path) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected label=path, got {s:?}")))?;
        Ok(LabeledPath {
            label: label.to_string(),
            path: PathBuf::from(path),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSpec {
    /// Reference draws, usually from `enumerate-posterior`.
    pub truth: Option<PathBuf>,
    /// An independent reference realization, giving the noise floor.
    pub baseline: Option<PathBuf>,
    /// Estimates sharing a label are averaged as repeated runs.
    pub estimates: Vec<LabeledPath>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Observation CSV read by every command except `generate`.
    pub data: Option<PathBuf>,
    /// DAG archive for `intervene`; takes precedence over `dag`.
    pub archive: Option<PathBuf>,
    /// Known DAG (JSON) for `intervene`.
    pub dag: Option<PathBuf>,
    pub output: PathBuf,
    pub generator: GeneratorSpec,
    pub structure: StructureSpec,
    pub method: Method,
    pub query: QuerySpec,
    pub local: LocalConfig,
    /// Particles behind `enumerate-posterior` reference curves.
    pub reference_particles: usize,
    pub evaluation: EvaluationSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            archive: None,
            dag: None,
            output: PathBuf::from("out"),
            generator: GeneratorSpec::default(),
            structure: StructureSpec::default(),
            method: Method::Mc,
            query: QuerySpec::default(),
            local: LocalConfig::default(),
            reference_particles: 10_000,
            evaluation: EvaluationSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn data_path(&self) -> CliResult<&Path> {
        self.data.as_deref().ok_or_else(|| CliError::Usage("no data file given".into()))
    }
}
