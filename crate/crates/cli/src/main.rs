//! Command-line front end: selection on CSV data, synthetic data, and
//! Monte-Carlo benchmarks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mirror_select::ggm::{ggm_select_with, NodewiseConfig};
use mirror_select::harness::io::{read_table_path, read_vector_path, write_matrix, write_records, Table};
use mirror_select::harness::{
    generate_scenario, rep_streams, run_experiment, CvSettings, ExperimentConfig, ScenarioData,
    SPEC_VERSION, THREADS_ENV,
};
use mirror_select::mds::estimate_inclusion_rates_with;
use mirror_select::mirror::{ds_select_with, DsConfig};
use mirror_select::{mds_cutoff, ContrastFunction, Dataset, Diagnostics, Error, SplitMethod, Stream};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "mirror-select", version, about = "FDR-controlled feature selection by data splitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single data split selection on a design and response.
    Ds(SelectArgs),
    /// Multiple data splitting selection on a design and response.
    Mds(SelectArgs),
    /// Gaussian graphical model edges by nodewise regression.
    Ggm(GgmArgs),
    /// Write one synthetic data set described by an experiment config.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo experiment config.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SelectionFlags {
    /// JSON selection config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target FDR level.
    #[arg(long)]
    q: Option<f64>,
    /// Contrast function of the mirror statistic: min2, product or sum.
    #[arg(long)]
    stat: Option<ContrastFunction>,
    /// Number of MDS splits.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output JSON file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Design matrix CSV, one observation per row.
    #[arg(long)]
    x: PathBuf,
    /// Response CSV with one column.
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    flags: SelectionFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum GgmMethod {
    Ds,
    Mds,
}

#[derive(Args)]
struct GgmArgs {
    /// Data matrix CSV, one observation per row.
    #[arg(long)]
    x: PathBuf,
    #[arg(long, value_enum, default_value = "ds")]
    method: GgmMethod,
    #[command(flatten)]
    flags: SelectionFlags,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config JSON; its scenario and master seed are used.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Replication whose data set is written.
    #[arg(long, default_value_t = 0)]
    rep: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    stat: Option<ContrastFunction>,
    /// Write wall_time_ms as 0 so that repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Output directory for records.csv and summary.json; without it the
    /// records go to standard output and the summary to standard error.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_q() -> f64 {
    0.1
}
fn default_m() -> usize {
    mirror_select::mds::DEFAULT_REPLICATIONS
}
fn default_workers() -> usize {
    1
}

/// Settings of `ds`, `mds` and `ggm`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelectionConfig {
    spec_version: u32,
    #[serde(default = "default_q")]
    q: f64,
    #[serde(default = "default_m")]
    m: usize,
    #[serde(default)]
    contrast: ContrastFunction,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default)]
    cv: CvSettings,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            spec_version: SPEC_VERSION,
            q: default_q(),
            m: default_m(),
            contrast: ContrastFunction::default(),
            master_seed: 0,
            workers: default_workers(),
            cv: CvSettings::default(),
        }
    }
}

impl SelectionConfig {
    fn resolve(flags: &SelectionFlags) -> anyhow::Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => serde_json::from_str(&read_text(path)?)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
            None => Self::default(),
        };
        if cfg.spec_version != SPEC_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported spec_version {}", cfg.spec_version)).into());
        }
        cfg.q = flags.q.unwrap_or(cfg.q);
        cfg.m = flags.m.unwrap_or(cfg.m);
        cfg.contrast = flags.stat.unwrap_or(cfg.contrast);
        cfg.master_seed = flags.seed.unwrap_or(cfg.master_seed);
        cfg.workers = flags.workers.unwrap_or(cfg.workers);
        if !(cfg.q > 0.0 && cfg.q < 1.0) {
            return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {}", cfg.q)).into());
        }
        if cfg.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()).into());
        }
        Ok(cfg)
    }

    fn ds(&self) -> DsConfig {
        DsConfig { q: self.q, contrast: self.contrast, cv: self.cv.into() }
    }
}

#[derive(Serialize)]
struct SelectionOutput {
    method: &'static str,
    q: f64,
    contrast: ContrastFunction,
    master_seed: u64,
    n: usize,
    p: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    selected: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_names: Option<Vec<String>>,
    /// Mirror-statistic threshold (DS) or inclusion-rate cutoff (MDS); null
    /// when no threshold is feasible.
    cutoff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    inclusion_rates: Option<Vec<f64>>,
    diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct GraphOutput {
    method: &'static str,
    q: f64,
    contrast: ContrastFunction,
    master_seed: u64,
    n: usize,
    p: usize,
    edges: Vec<(usize, usize)>,
    neighborhoods: Vec<Vec<usize>>,
    failures: Vec<(usize, String)>,
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    config: &'a ExperimentConfig,
    summary: &'a mirror_select::harness::Summary,
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())).into())
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => Ok(r?),
        },
    }
}

/// Worker count, with the environment variable taking precedence.
fn workers(configured: usize) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(configured.max(1))
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

fn names(table: &Table, idx: &[usize]) -> Option<Vec<String>> {
    table.header.as_ref().map(|h| idx.iter().map(|&j| h[j].clone()).collect())
}

fn run_select(args: &SelectArgs, multiple: bool) -> anyhow::Result<()> {
    let cfg = SelectionConfig::resolve(&args.flags)?;
    let table = read_table_path(&args.x)?;
    let y = read_vector_path(&args.y)?;
    let data = Dataset::standardized(&table.data, &y)?;
    let stream = Stream::new(cfg.master_seed);
    let ds = cfg.ds();
    let out = if multiple {
        let rates = with_pool(workers(cfg.workers), || estimate_inclusion_rates_with(&data, &ds, cfg.m, &stream))??;
        let cut = mds_cutoff(&rates.rates, cfg.q);
        SelectionOutput {
            method: "mds",
            q: cfg.q,
            contrast: cfg.contrast,
            master_seed: cfg.master_seed,
            n: data.n(),
            p: data.p(),
            m: Some(cfg.m),
            selected_names: names(&table, &cut.selected),
            selected: cut.selected,
            cutoff: cut.cutoff,
            inclusion_rates: Some(rates.rates),
            diagnostics: Diagnostics {
                degenerate_cutoff: cut.degenerate,
                failed_replications: rates.failed,
                ..Diagnostics::default()
            },
        }
    } else {
        let res = ds_select_with(&data, &ds, &mut stream.rng())?;
        SelectionOutput {
            method: "ds",
            q: cfg.q,
            contrast: cfg.contrast,
            master_seed: cfg.master_seed,
            n: data.n(),
            p: data.p(),
            m: None,
            selected_names: names(&table, &res.selected),
            selected: res.selected,
            cutoff: res.tau,
            inclusion_rates: None,
            diagnostics: res.diagnostics,
        }
    };
    emit(args.flags.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn run_ggm(args: &GgmArgs) -> anyhow::Result<()> {
    let cfg = SelectionConfig::resolve(&args.flags)?;
    let table = read_table_path(&args.x)?;
    let (method, label) = match args.method {
        GgmMethod::Ds => (SplitMethod::Ds, "ds"),
        GgmMethod::Mds => (SplitMethod::Mds, "mds"),
    };
    let node = NodewiseConfig { method, m: cfg.m, contrast: cfg.contrast, cv: cfg.cv.into() };
    let stream = Stream::new(cfg.master_seed);
    let g = with_pool(workers(cfg.workers), || ggm_select_with(&table.data, cfg.q, &node, &stream))??;
    let out = GraphOutput {
        method: label,
        q: cfg.q,
        contrast: cfg.contrast,
        master_seed: cfg.master_seed,
        n: table.data.nrows(),
        p: table.data.ncols(),
        edges: g.edges.into_iter().collect(),
        neighborhoods: g.neighborhoods,
        failures: g.failures,
    };
    emit(args.flags.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn load_experiment(path: &Path) -> anyhow::Result<ExperimentConfig> {
    Ok(ExperimentConfig::from_json(&read_text(path)?)?)
}

fn run_simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = load_experiment(&args.config)?;
    cfg.master_seed = args.seed.unwrap_or(cfg.master_seed);
    let (data_stream, _) = rep_streams(cfg.master_seed, args.rep);
    let data = generate_scenario(&cfg.scenario, &mut data_stream.rng())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv = |name: &str| -> anyhow::Result<fs::File> {
        let path = args.out.join(name);
        fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
    };
    let truth = match &data {
        ScenarioData::Linear { data, truth } => {
            write_matrix(csv("x.csv")?, &data.x, None)?;
            let mut f = csv("y.csv")?;
            for v in &data.y {
                writeln!(f, "{v}")?;
            }
            serde_json::json!({ "s1": truth.s1, "beta_star": truth.beta_star })
        }
        ScenarioData::Ggm { x, edges } => {
            write_matrix(csv("x.csv")?, x, None)?;
            serde_json::json!({ "edges": edges })
        }
        ScenarioData::NormalMeans { x, mu, s1 } => {
            write_matrix(csv("x.csv")?, x, None)?;
            serde_json::json!({ "s1": s1, "mu": mu })
        }
    };
    fs::write(args.out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    Ok(())
}

fn run_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let mut cfg = load_experiment(&args.config)?;
    cfg.master_seed = args.seed.unwrap_or(cfg.master_seed);
    cfg.n_reps = args.reps.unwrap_or(cfg.n_reps);
    cfg.workers = args.workers.unwrap_or(cfg.workers);
    cfg.q = args.q.unwrap_or(cfg.q);
    cfg.m = args.m.unwrap_or(cfg.m);
    cfg.contrast = args.stat.unwrap_or(cfg.contrast);
    if args.no_timing {
        cfg.record_timing = false;
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    let summary = serde_json::to_string_pretty(&BenchSummary { config: &cfg, summary: &out.summary })?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_records(fs::File::create(dir.join("records.csv"))?, &out.records)?;
            fs::write(dir.join("summary.json"), summary)?;
        }
        None => {
            write_records(std::io::stdout().lock(), &out.records)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

/// Exit status for an error: numerical failures are told apart from bad
/// input and configuration.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::NotPositiveDefinite { .. }
            | Error::DidNotConverge(_)
            | Error::RankDeficient
            | Error::TooManyFeatures { .. }
            | Error::RepairFailed(_)
            | Error::ConstantColumn(_)
            | Error::EmptyScreen,
        ) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Ds(a) => run_select(a, false),
        Command::Mds(a) => run_select(a, true),
        Command::Ggm(a) => run_ggm(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Bench(a) => run_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_errors_exit_with_three() {
        let e: anyhow::Error = Error::RankDeficient.into();
        assert_eq!(exit_code(&e), EXIT_NUMERICAL);
        let e: anyhow::Error = Error::InvalidArgument("x".into()).into();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), EXIT_CONFIG);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let dir = std::env::temp_dir().join(format!("mirror-select-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sel.json");
        fs::write(&path, r#"{"spec_version": 1, "q": 0.2, "m": 7, "contrast": "product", "master_seed": 3}"#).unwrap();
        let flags = SelectionFlags {
            config: Some(path.clone()),
            q: Some(0.05),
            stat: None,
            m: None,
            seed: Some(9),
            workers: None,
            out: None,
        };
        let cfg = SelectionConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.q, cfg.m, cfg.contrast, cfg.master_seed), (0.05, 7, ContrastFunction::Product, 9));
        fs::write(&path, r#"{"spec_version": 2}"#).unwrap();
        let flags = SelectionFlags { config: Some(path), q: None, stat: None, m: None, seed: None, workers: None, out: None };
        assert!(SelectionConfig::resolve(&flags).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
