use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpn_cli::commands::{self, Outcome};
use gpn_cli::config::{GraphSpec, LabeledPath, PairSpec, RunConfig};
use gpn_cli::{CliError, CliResult};
use gpn_core::curve::Method;
use gpn_core::structure::ScoreKind;

#[derive(Parser)]
#[command(name = "gpn", version, about = "Intervention distributions in Gaussian process networks")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, env = "GPN_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random Fourier network, simulate data and write ground-truth curves.
    Generate {
        #[command(flatten)]
        common: Common,
        /// five-node, four-node, chain:N, or a DAG JSON file.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        n_obs: Option<usize>,
        #[arg(long)]
        truth_replicates: Option<usize>,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Sample weighted DAGs from the structure posterior.
    SampleDags {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        structure: StructureArgs,
        /// Write the exact posterior over all DAGs instead (at most 4 nodes).
        #[arg(long)]
        enumerate: bool,
    },
    /// Exact DAG posterior and reference intervention draws under it.
    EnumeratePosterior {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        structure: StructureArgs,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Estimate intervention curves from an archive or a known DAG.
    Intervene {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        structure: StructureArgs,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        dag: Option<PathBuf>,
    },
    /// Wasserstein distances of estimated curves to reference draws.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// label=path; repeat a label to average repeated runs.
        #[arg(long)]
        estimate: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Intervened nodes (comma separated, zero-based).
    #[arg(long, value_delimiter = ',')]
    intervene: Vec<usize>,
    /// Target nodes, one curve each.
    #[arg(long, value_delimiter = ',')]
    target: Vec<usize>,
    /// Every ordered pair of distinct nodes.
    #[arg(long, conflicts_with_all = ["intervene", "target"])]
    all_pairs: bool,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    n_mc: Option<usize>,
    /// Draw E(target | do(...)) instead of the target itself.
    #[arg(long)]
    expectation_only: bool,
}

#[derive(Args)]
struct StructureArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    max_parents: Option<usize>,
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
    #[arg(long)]
    marginal_samples: Option<usize>,
    #[arg(long)]
    hyper_samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mc,
    Local,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Gp,
    Linear,
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn apply_query(cfg: &mut RunConfig, q: &QueryArgs) -> CliResult<()> {
    if q.all_pairs {
        cfg.query.pairs.clear();
    } else if !q.intervene.is_empty() || !q.target.is_empty() {
        if q.intervene.is_empty() || q.target.is_empty() {
            return Err(CliError::Usage("--intervene and --target go together".into()));
        }
        cfg.query.pairs = q
            .target
            .iter()
            .map(|&target| PairSpec {
                intervened: q.intervene.clone(),
                target,
            })
            .collect();
    }
    if let Some(g) = q.grid_points {
        cfg.query.grid_points = g;
    }
    if let Some(n) = q.n_mc {
        cfg.query.n_mc = n;
    }
    if q.expectation_only {
        cfg.query.expectation_only = true;
    }
    Ok(())
}

fn apply_structure(cfg: &mut RunConfig, s: &StructureArgs) -> CliResult<()> {
    let st = &mut cfg.structure;
    if let Some(v) = s.m {
        st.m = v;
    }
    if let Some(v) = s.burn_in {
        st.burn_in = v;
    }
    if let Some(v) = s.thin {
        st.thin = v;
    }
    if let Some(v) = s.max_parents {
        st.max_parents = v;
    }
    match s.score {
        Some(ScoreArg::Linear) => st.score = ScoreKind::Linear,
        Some(ScoreArg::Gp) if matches!(st.score, ScoreKind::Linear) => st.score = ScoreKind::Gp(Default::default()),
        _ => {}
    }
    if s.marginal_samples.is_some() || s.hyper_samples.is_some() {
        let ScoreKind::Gp(gp) = &mut st.score else {
            return Err(CliError::Usage("sample counts apply to GP scoring only".into()));
        };
        if let Some(v) = s.marginal_samples {
            gp.marginal_samples = v;
        }
        if let Some(v) = s.hyper_samples {
            gp.hyper_samples = v;
            cfg.local.hyper_samples = v;
        }
    }
    Ok(())
}

fn run(command: Command) -> CliResult<Outcome> {
    match command {
        Command::Generate {
            common,
            graph,
            n_obs,
            truth_replicates,
            query,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(g) = graph {
                cfg.generator.graph = GraphSpec::parse(&g)?;
            }
            if let Some(n) = n_obs {
                cfg.generator.n_obs = n;
            }
            if let Some(r) = truth_replicates {
                cfg.generator.truth_replicates = r;
            }
            apply_query(&mut cfg, &query)?;
            commands::generate(&cfg)
        }
        Command::SampleDags {
            common,
            structure,
            enumerate,
        } => {
            let mut cfg = base_config(&common)?;
            apply_structure(&mut cfg, &structure)?;
            commands::sample_dags(&cfg, enumerate)
        }
        Command::EnumeratePosterior {
            common,
            structure,
            query,
            particles,
        } => {
            let mut cfg = base_config(&common)?;
            apply_structure(&mut cfg, &structure)?;
            apply_query(&mut cfg, &query)?;
            if let Some(p) = particles {
                cfg.reference_particles = p;
            }
            commands::enumerate_posterior(&cfg)
        }
        Command::Intervene {
            common,
            structure,
            query,
            method,
            archive,
            dag,
        } => {
            let mut cfg = base_config(&common)?;
            apply_structure(&mut cfg, &structure)?;
            apply_query(&mut cfg, &query)?;
            if let Some(m) = method {
                cfg.method = match m {
                    MethodArg::Mc => Method::Mc,
                    MethodArg::Local => Method::Local,
                    MethodArg::Linear => Method::Linear,
                };
            }
            if archive.is_some() {
                cfg.archive = archive;
            }
            if dag.is_some() {
                cfg.dag = dag;
            }
            commands::intervene(&cfg)
        }
        Command::Evaluate {
            common,
            truth,
            baseline,
            estimate,
        } => {
            let mut cfg = base_config(&common)?;
            if truth.is_some() {
                cfg.evaluation.truth = truth;
            }
            if baseline.is_some() {
                cfg.evaluation.baseline = baseline;
            }
            for e in &estimate {
                cfg.evaluation.estimates.push(LabeledPath::parse(e)?);
            }
            commands::evaluate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(outcome) => {
            // A closed pipe on stdout is not a failure of the command.
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", outcome.report);
            for f in &outcome.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
