//! Command implementations behind the `nncdcl` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use nncdcl::fixtures::oracle_suite;
use nncdcl::lp::ElasticBase;
use nncdcl::nnet::{load_nnet, write_nnet};
use nncdcl::property::{parse_property, write_property};
use nncdcl::solver::{
    pgd_prefilter, stats_json, verify, BranchHeuristic, SolverConfig, SolverStats, Verdict,
};
use nncdcl::{Network, VerificationProblem};

pub const EXIT_HOLDS: i32 = 0;
pub const EXIT_VIOLATED: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "nncdcl",
    version,
    about = "Clause-learning verifier for ReLU networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Verify one property on one network.
    Verify(VerifyArgs),
    /// Verify every (net, property) row of a manifest CSV.
    Batch(BatchArgs),
    /// Write the seeded random oracle suite as NNet and property files.
    GenSuite(GenSuiteArgs),
    /// Print the dimensions of an NNet file.
    Info(InfoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaseArg {
    Relaxed,
    BoxOnly,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Wall-clock limit in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub n_solvers: usize,
    #[arg(long, default_value_t = 2)]
    pub m_analyzers: usize,
    /// The box is cut into 2^k regions along its widest dimensions.
    #[arg(long, default_value_t = 2)]
    pub split_threshold: u32,
    #[arg(long, default_value = "widest")]
    pub branch: BranchHeuristic,
    /// One solver, inline analysis, fixed seed.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BaseArg::Relaxed)]
    pub elastic_base: BaseArg,
    /// Disable clause learning.
    #[arg(long)]
    pub no_learning: bool,
    /// Apply the NNet normalization block to the property.
    #[arg(long)]
    pub normalize: bool,
}

impl SolverArgs {
    pub fn config(&self) -> Result<SolverConfig> {
        let base = if self.deterministic {
            SolverConfig::deterministic()
        } else {
            SolverConfig::default()
        };
        let timeout = match self.timeout {
            Some(t) if !(t.is_finite() && t > 0.0) => {
                bail!("timeout must be a positive number of seconds")
            }
            Some(t) => Some(Duration::from_secs_f64(t)),
            None => None,
        };
        let config = SolverConfig {
            n_solvers: if self.deterministic {
                1
            } else {
                self.n_solvers
            },
            m_analyzers: if self.deterministic {
                base.m_analyzers
            } else {
                self.m_analyzers
            },
            split_threshold: self.split_threshold,
            timeout,
            seed: self.seed,
            branch: self.branch,
            learning: !self.no_learning,
            elastic_base: match self.elastic_base {
                BaseArg::Relaxed => ElasticBase::Relaxed,
                BaseArg::BoxOnly => ElasticBase::BoxOnly,
            },
            ..base
        };
        config.validate().map_err(anyhow::Error::msg)?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub property: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Stats JSON destination.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    /// Search forest in DOT format.
    #[arg(long)]
    pub tree_out: Option<PathBuf>,
    /// Directory receiving every solved LP in CPLEX LP format.
    #[arg(long)]
    pub dump_lp: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    /// CSV with `net,property` columns; relative paths resolve against its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Attack every task first and report validated hits without search.
    #[arg(long)]
    pub pgd_prefilter: bool,
    /// Run each task a second time with learning disabled.
    #[arg(long)]
    pub ablate_clauses: bool,
}

#[derive(Args, Debug)]
pub struct GenSuiteArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[arg(long)]
    pub net: PathBuf,
}

/// One results CSV row. Column order is part of the output format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub net: String,
    pub property: String,
    /// HOLDS, VIOLATED, TIMEOUT, STALLED, or ERROR when the task failed to run.
    pub verdict: String,
    pub time_s: f64,
    pub states: u64,
    pub unsat_paths: u64,
    pub clauses_learned: u64,
    pub clauses_fetched: u64,
    pub lp_calls: u64,
    pub lp_stalls: u64,
    pub learned_path: u64,
    pub learned_bound: u64,
    pub learned_elastic: u64,
    pub learned_split: u64,
    pub prefilter: bool,
    pub states_ablated: Option<u64>,
    pub error: Option<String>,
    pub counterexample: Option<String>,
}

impl RunRecord {
    fn new(net: &str, property: &str) -> Self {
        Self {
            net: net.into(),
            property: property.into(),
            verdict: String::new(),
            time_s: 0.0,
            states: 0,
            unsat_paths: 0,
            clauses_learned: 0,
            clauses_fetched: 0,
            lp_calls: 0,
            lp_stalls: 0,
            learned_path: 0,
            learned_bound: 0,
            learned_elastic: 0,
            learned_split: 0,
            prefilter: false,
            states_ablated: None,
            error: None,
            counterexample: None,
        }
    }

    fn fill(&mut self, verdict: &Verdict, stats: &SolverStats, deterministic: bool) {
        self.verdict = verdict.label().into();
        // Wall time would break byte-identical reruns.
        self.time_s = if deterministic {
            0.0
        } else {
            stats.wall_time_s
        };
        self.states = stats.states_explored;
        self.unsat_paths = stats.unsat_paths;
        self.clauses_learned = stats.clauses_learned.total();
        self.clauses_fetched = stats.clauses_fetched;
        self.lp_calls = stats.lp_calls;
        self.lp_stalls = stats.lp_stalls;
        self.learned_path = stats.clauses_learned.path;
        self.learned_bound = stats.clauses_learned.bound;
        self.learned_elastic = stats.clauses_learned.elastic;
        self.learned_split = stats.clauses_learned.split;
        if let Verdict::Violated(c) = verdict {
            self.counterexample = Some(format_vector(&c.x, " "));
        }
    }
}

fn format_vector(v: &[f64], sep: &str) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(sep)
}

pub fn load_problem(net: &Path, property: &Path, normalize: bool) -> Result<VerificationProblem> {
    let text = fs::read_to_string(net).with_context(|| format!("reading {}", net.display()))?;
    let network = Arc::new(load_nnet(&text).with_context(|| format!("parsing {}", net.display()))?);
    let text =
        fs::read_to_string(property).with_context(|| format!("reading {}", property.display()))?;
    let spec = parse_property(&text, network.input_dim(), network.output_dim())
        .with_context(|| format!("parsing {}", property.display()))?;
    Ok(spec.into_problem(network, normalize)?)
}

fn exit_code(verdict: &Verdict) -> i32 {
    match verdict {
        Verdict::Holds => EXIT_HOLDS,
        Verdict::Violated(_) => EXIT_VIOLATED,
        Verdict::Unknown(_) => EXIT_UNKNOWN,
    }
}

/// Returns the process exit code; errors map to [`EXIT_USAGE`].
pub fn run_single(args: &VerifyArgs, out: &mut impl std::io::Write) -> Result<i32> {
    let mut config = args.solver.config()?;
    config.dump_lp = args.dump_lp.clone();
    let problem = load_problem(&args.net, &args.property, args.solver.normalize)?;
    let outcome = verify(&problem, &config).map_err(anyhow::Error::msg)?;
    writeln!(out, "{}", outcome.verdict.label())?;
    if let Verdict::Violated(c) = &outcome.verdict {
        writeln!(out, "x = [{}]", format_vector(&c.x, ", "))?;
        writeln!(out, "y = [{}]", format_vector(&c.y, ", "))?;
    }
    if let Some(path) = &args.stats_out {
        let json = stats_json(&outcome.verdict, &outcome.stats);
        fs::write(path, serde_json::to_string_pretty(&json)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.tree_out {
        fs::write(path, outcome.forest.to_dot())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(exit_code(&outcome.verdict))
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    net: String,
    property: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        rows.push((row.net, row.property));
    }
    Ok(rows)
}

fn run_task(
    net: &str,
    property: &str,
    root: &Path,
    args: &BatchArgs,
    config: &SolverConfig,
) -> Result<RunRecord> {
    let mut record = RunRecord::new(net, property);
    let problem = load_problem(&root.join(net), &root.join(property), args.solver.normalize)?;
    if args.pgd_prefilter {
        let started = Instant::now();
        if let Some(c) = pgd_prefilter(&problem, &config.pgd, config.seed) {
            record.verdict = "VIOLATED".into();
            record.prefilter = true;
            record.time_s = if config.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            };
            record.counterexample = Some(format_vector(&c.x, " "));
            return Ok(record);
        }
    }
    let outcome = verify(&problem, config).map_err(anyhow::Error::msg)?;
    record.fill(&outcome.verdict, &outcome.stats, config.deterministic);
    if args.ablate_clauses {
        let off = SolverConfig {
            learning: false,
            ..config.clone()
        };
        let ablated = verify(&problem, &off).map_err(anyhow::Error::msg)?;
        record.states_ablated = Some(ablated.stats.states_explored);
    }
    Ok(record)
}

/// Runs every manifest task in order. Exit code 0 when each task produced
/// a verdict, [`EXIT_UNKNOWN`] when some task failed and was recorded as
/// ERROR.
pub fn run_batch(args: &BatchArgs, log: &mut impl std::io::Write) -> Result<i32> {
    let config = args.solver.config()?;
    let tasks = read_manifest(&args.manifest)?;
    let root = args
        .manifest
        .parent()
        .unwrap_or(Path::new(""))
        .to_path_buf();
    let mut writer = csv::Writer::from_path(&args.results)
        .with_context(|| format!("writing {}", args.results.display()))?;
    let mut failed = 0;
    for (net, property) in &tasks {
        let record = run_task(net, property, &root, args, &config).unwrap_or_else(|e| {
            failed += 1;
            let mut r = RunRecord::new(net, property);
            r.verdict = "ERROR".into();
            r.error = Some(format!("{e:#}"));
            r
        });
        writeln!(log, "{net} {property} {}", record.verdict)?;
        writer.serialize(&record)?;
    }
    writer.flush()?;
    Ok(if failed == 0 {
        EXIT_HOLDS
    } else {
        EXIT_UNKNOWN
    })
}

pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

/// Writes `oracle_NN.nnet`, `oracle_NN.prop` and `manifest.csv` into `out`.
pub fn gen_suite(args: &GenSuiteArgs) -> Result<()> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut manifest = csv::Writer::from_path(args.out.join("manifest.csv"))?;
    manifest.write_record(["net", "property"])?;
    for inst in oracle_suite(args.seed, args.count) {
        let (net, prop) = (format!("{}.nnet", inst.name), format!("{}.prop", inst.name));
        fs::write(args.out.join(&net), write_nnet(&inst.problem.network))?;
        fs::write(args.out.join(&prop), write_property(&inst.problem))?;
        manifest.write_record([&net, &prop])?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn describe(net: &Network) -> String {
    let widths = net.hidden_widths();
    let uniform = widths.first().filter(|w| widths.iter().all(|v| v == *w));
    let mut s = format!(
        "inputs: {}\noutputs: {}\nhidden layers: {}\nhidden widths: {:?}\nhidden neurons: {}\n",
        net.input_dim(),
        net.output_dim(),
        net.num_hidden_layers(),
        widths,
        net.num_hidden_neurons()
    );
    if let Some(w) = uniform {
        s += &format!("shape: {} layers with {} neurons\n", widths.len(), w);
    }
    s += &format!(
        "normalization: {}\n",
        if net.normalization().is_some() {
            "present"
        } else {
            "absent"
        }
    );
    s
}

pub fn info(args: &InfoArgs, out: &mut impl std::io::Write) -> Result<()> {
    let text =
        fs::read_to_string(&args.net).with_context(|| format!("reading {}", args.net.display()))?;
    let net = load_nnet(&text).with_context(|| format!("parsing {}", args.net.display()))?;
    write!(out, "{}", describe(&net))?;
    Ok(())
}

/// Dispatches a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let mut stdout = std::io::stdout().lock();
    let result = match &cli.command {
        Command::Verify(a) => run_single(a, &mut stdout),
        Command::Batch(a) => run_batch(a, &mut stdout),
        Command::GenSuite(a) => gen_suite(a).map(|_| EXIT_HOLDS),
        Command::Info(a) => info(a, &mut stdout).map(|_| EXIT_HOLDS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_USAGE
    })
}
