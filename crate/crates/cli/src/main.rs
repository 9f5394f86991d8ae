//! `uqstream`: run the streaming input-uncertainty experiments, check the
//! estimator properties and print MSE tables.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uqstream_core::algorithms::{AlgoConfig, Method};
use uqstream_core::estimators::WeightMode;
use uqstream_core::harness::{
    canned_experiment, default_prior, read_mse_csv, read_timing_csv, render_table, run_experiment, write_outputs,
    ExperimentConfig, ExperimentOutput, DEFAULT_BOX, TIMING_FILE,
};
use uqstream_core::models::NewsVendor;
use uqstream_core::verify::{self, Property};
use uqstream_core::UqError;

use crate::config::FileConfig;

const DEFAULT_SEED: u64 = 7;
const SEED_ENV: &str = "UQSTREAM_SEED";
const TABLE_TS: [u64; 4] = [50, 100, 150, 200];

#[derive(Debug, Parser)]
#[command(name = "uqstream", version, about = "Streaming input-uncertainty quantification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write per-replication and MSE CSVs
    Run(RunArgs),
    /// Run an experiment and rank methods by time-averaged MSE
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// First stage of the averaging window (default: min(50, T))
        #[arg(long)]
        from: Option<u64>,
        /// Last stage of the averaging window (default: T)
        #[arg(long)]
        to: Option<u64>,
    },
    /// Check estimator and accounting properties
    Verify {
        /// Property to check; repeat for several (default: all)
        #[arg(long)]
        property: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print MSE (×10⁻³) at selected stages from an MSE CSV
    Table {
        /// MSE CSV written by `run`
        input: PathBuf,
        /// Comma-separated stages
        #[arg(long, value_delimiter = ',', default_values_t = TABLE_TS)]
        t: Vec<u64>,
        /// Timing CSV (default: timing.csv next to the input, if present)
        #[arg(long)]
        timing: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Canned experiment 1-4
    #[arg(long)]
    experiment: Option<u8>,
    /// tlis1, tlis2, direct-mc, simple-is or green. With --experiment, keeps only that method
    #[arg(long)]
    method: Option<String>,
    /// Outer θ-samples per stage
    #[arg(long = "M")]
    m: Option<usize>,
    /// Inner replications per θ-sample
    #[arg(long = "N")]
    n: Option<usize>,
    /// Stages pooled in the ECDF
    #[arg(long = "K")]
    k: Option<usize>,
    /// Time horizon
    #[arg(long = "T")]
    t: Option<u64>,
    /// Macro replications
    #[arg(long = "R")]
    r: Option<usize>,
    /// Warm-up stages before CIS (tlis2)
    #[arg(long = "W")]
    w: Option<u64>,
    /// Comma-separated quantile levels
    #[arg(long)]
    alpha: Option<String>,
    /// Master seed (falls back to $UQSTREAM_SEED, then 7)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Give tlis1 and simple-is a T·M·N initial block
    #[arg(long)]
    match_budget: bool,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rate generating the data
    #[arg(long)]
    theta_c: Option<f64>,
    /// Parameter box "lo,hi" for the prior, or "none"
    #[arg(long)]
    theta_box: Option<String>,
    #[arg(long)]
    order: Option<f64>,
    #[arg(long)]
    price: Option<f64>,
    #[arg(long)]
    cost: Option<f64>,
    /// exact or likelihood
    #[arg(long)]
    weight_mode: Option<String>,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure { code: 2, message: e.to_string() }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

impl From<UqError> for Failure {
    fn from(e: UqError) -> Self {
        match e {
            UqError::Config(_) | UqError::Usage(_) => Failure::usage(e),
            _ => Failure::runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare { run, from, to } => cmd_compare(&run, from, to),
        Command::Verify { property, seed } => cmd_verify(&property, seed),
        Command::Table { input, t, timing } => cmd_table(&input, &t, timing.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<Option<T>, UqError>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

fn env_seed() -> Result<Option<u64>, UqError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| UqError::Config(format!("{SEED_ENV}='{v}': {e}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64, UqError> {
    Ok(match pick(flag, file, "seed")? {
        Some(s) => s,
        None => env_seed()?.unwrap_or(DEFAULT_SEED),
    })
}

fn parse_alphas(text: &str) -> Result<Vec<f64>, UqError> {
    text.split(',')
        .map(|a| {
            let v: f64 = a.trim().parse().map_err(|e| UqError::Config(format!("alpha '{a}': {e}")))?;
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err(UqError::Config(format!("alpha {v} outside (0, 1)")))
            }
        })
        .collect()
}

fn parse_box(text: &str) -> Result<Option<(f64, f64)>, UqError> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let bad = || UqError::Config(format!("theta box '{text}': expected 'lo,hi' or 'none'"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    Ok(Some((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)))
}

fn parse_weight_mode(text: &str) -> Result<WeightMode, UqError> {
    match text {
        "exact" => Ok(WeightMode::ExactRatio),
        "likelihood" => Ok(WeightMode::LikelihoodProduct),
        _ => Err(UqError::Config(format!("weight mode '{text}': expected exact or likelihood"))),
    }
}

/// Build the experiment from flags, the config file, the environment and defaults, in that order.
fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), UqError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = resolve_seed(args.seed, &file)?;
    let match_budget = args.match_budget || file.get::<bool>("match_budget")?.unwrap_or(false);
    let method: Option<Method> = pick(args.method.clone(), &file, "method")?.map(|m: String| m.parse()).transpose()?;
    let experiment: Option<u8> = pick(args.experiment, &file, "experiment")?;

    let mut cfg = match (experiment, method) {
        (Some(id), method) => {
            let mut cfg = canned_experiment(id, seed, match_budget)?;
            if let Some(method) = method {
                cfg.algos.retain(|a| a.method == method);
                if cfg.algos.is_empty() {
                    return Err(UqError::Config(format!("experiment {id} does not run {method}")));
                }
            }
            cfg
        }
        (None, Some(method)) => {
            let mut cfg = canned_experiment(1, seed, false)?;
            cfg.name = "custom".into();
            cfg.algos = vec![AlgoConfig::new(method, 30, 10, 20)];
            cfg
        }
        (None, None) => return Err(UqError::Config("give --experiment or --method".into())),
    };

    let m = pick(args.m, &file, "m")?;
    let n = pick(args.n, &file, "n")?;
    let k = pick(args.k, &file, "k")?;
    let w = pick(args.w, &file, "w")?;
    let weight_mode = pick(args.weight_mode.clone(), &file, "weight_mode")?.map(|s: String| parse_weight_mode(&s)).transpose()?;
    if let Some(t) = pick(args.t, &file, "t")? {
        cfg.horizon = t;
    }
    for a in &mut cfg.algos {
        a.m = m.unwrap_or(a.m);
        a.n = n.unwrap_or(a.n);
        a.k = k.unwrap_or(a.k);
        a.warmup = w.unwrap_or(a.warmup);
        a.weight_mode = weight_mode.unwrap_or(a.weight_mode);
        a.init_n = (match_budget && a.method.simulates_once()).then(|| cfg.horizon as usize * a.n);
    }
    if let Some(r) = pick(args.r, &file, "r")? {
        cfg.replications = r;
    }
    if let Some(text) = pick(args.alpha.clone(), &file, "alpha")? {
        cfg.set_alphas(&parse_alphas(&text)?);
    }
    cfg.jobs = pick(args.jobs, &file, "jobs")?.unwrap_or(0);
    cfg.seed = seed;
    if let Some(theta_c) = pick(args.theta_c, &file, "theta_c")? {
        cfg.theta_c = theta_c;
    }
    let bx = match pick(args.theta_box.clone(), &file, "theta_box")? {
        Some(text) => parse_box(&text)?,
        None => Some(DEFAULT_BOX),
    };
    cfg.prior = default_prior(bx).map_err(|e| UqError::Config(e.to_string()))?;
    let nv = NewsVendor::default();
    cfg.simulator = NewsVendor::new(
        pick(args.order, &file, "order")?.unwrap_or(nv.order()),
        pick(args.price, &file, "price")?.unwrap_or(nv.price()),
        pick(args.cost, &file, "cost")?.unwrap_or(nv.cost()),
    )?;
    let out = pick(args.out.clone(), &file, "out")?.unwrap_or_else(|| PathBuf::from("out"));
    cfg.validate()?;
    Ok((cfg, out))
}

fn print_header(cfg: &ExperimentConfig, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "# {}: T={} R={} seed={} theta_c={}",
        cfg.name, cfg.horizon, cfg.replications, cfg.seed, cfg.theta_c
    )?;
    for a in &cfg.algos {
        writeln!(
            out,
            "# {}: method={} M={} N={} K={} W={} initial N={}",
            a.label,
            a.method,
            a.m,
            a.n,
            a.effective_k(),
            a.warmup,
            a.initial_n()
        )?;
    }
    Ok(())
}

fn table_stages(horizon: u64) -> Vec<u64> {
    let ts: Vec<u64> = TABLE_TS.into_iter().filter(|&t| t <= horizon).collect();
    if ts.is_empty() {
        vec![horizon]
    } else {
        ts
    }
}

fn execute(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf, ExperimentOutput), Failure> {
    let (cfg, out) = resolve(args)?;
    let mut stdout = std::io::stdout().lock();
    print_header(&cfg, &mut stdout).map_err(Failure::runtime)?;
    let output = run_experiment(&cfg).map_err(Failure::runtime)?;
    Ok((cfg, out, output))
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, dir, output) = execute(args)?;
    let files = write_outputs(&output, &dir).map_err(Failure::runtime)?;
    let mut stdout = std::io::stdout().lock();
    render_table(&output.mse, &table_stages(cfg.horizon), output.timing.as_deref(), &mut stdout)
        .map_err(Failure::runtime)?;
    for f in files {
        writeln!(stdout, "wrote {}", f.display()).map_err(Failure::runtime)?;
    }
    Ok(())
}

fn cmd_compare(args: &RunArgs, from: Option<u64>, to: Option<u64>) -> Result<(), Failure> {
    let (cfg, dir, output) = execute(args)?;
    let to = to.unwrap_or(cfg.horizon);
    let from = from.unwrap_or(50.min(cfg.horizon));
    if from > to {
        return Err(Failure::usage(format!("empty averaging window [{from}, {to}]")));
    }
    let mut stdout = std::io::stdout().lock();
    for alpha in output.mse.alphas() {
        let mut ranked: Vec<(&str, f64)> = output
            .mse
            .methods()
            .into_iter()
            .filter_map(|m| output.mse.time_average(m, alpha, from, to).map(|v| (m, v)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        writeln!(stdout, "α = {alpha}: mean MSE over t ∈ [{from}, {to}]").map_err(Failure::runtime)?;
        for (i, (m, v)) in ranked.iter().enumerate() {
            writeln!(stdout, "  {}. {m:<16} {:.4e}", i + 1, v).map_err(Failure::runtime)?;
        }
    }
    if args.out.is_some() {
        for f in write_outputs(&output, &dir).map_err(Failure::runtime)? {
            writeln!(stdout, "wrote {}", f.display()).map_err(Failure::runtime)?;
        }
    }
    Ok(())
}

fn cmd_verify(names: &[String], seed: Option<u64>) -> Result<(), Failure> {
    let seed = resolve_seed(seed, &FileConfig::default())?;
    let properties = if names.is_empty() {
        Property::ALL.to_vec()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<Vec<Property>, _>>()?
    };
    let mut failed = 0;
    for p in properties {
        let outcome = verify::check(p, seed).map_err(Failure::runtime)?;
        println!("{} {}: {}", if outcome.passed { "PASS" } else { "FAIL" }, p, outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} propert{} failed", if failed == 1 { "y" } else { "ies" })));
    }
    Ok(())
}

fn cmd_table(input: &Path, ts: &[u64], timing: Option<&Path>) -> Result<(), Failure> {
    let mse = read_mse_csv(input).map_err(Failure::usage)?;
    let sibling = input.with_file_name(TIMING_FILE);
    let timing_path = timing.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let timing = timing_path.map(|p| read_timing_csv(&p)).transpose().map_err(Failure::usage)?;
    render_table(&mse, ts, timing.as_deref(), &mut std::io::stdout().lock()).map_err(Failure::runtime)
}
