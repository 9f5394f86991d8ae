//! Experiment orchestration: streaming data, macro replications, MSE series
//! and CSV output.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoConfig, Method, QuantReport, Quantifier};
use crate::efd::{ConjugatePosterior, InputModel, ParamBox};
use crate::error::{Result, UqError};
use crate::models::{NewsVendor, Simulator};
use crate::rng::{RngStreams, Substream};

pub const PER_REP_FILE: &str = "per_rep.csv";
pub const MSE_FILE: &str = "mse.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// Prior of the news-vendor study: shape 0.001, scale 1000.
pub const PRIOR_SHAPE: f64 = 0.001;
pub const PRIOR_RATE: f64 = 0.001;
/// Compact parameter space used by the canned experiments.
pub const DEFAULT_BOX: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub algos: Vec<AlgoConfig>,
    /// Rate of the exponential distribution generating the data.
    pub theta_c: f64,
    /// Number of data points `T`.
    pub horizon: u64,
    pub replications: usize,
    pub prior: ConjugatePosterior,
    pub simulator: NewsVendor,
    pub seed: u64,
    /// Worker threads. `0` lets rayon decide.
    pub jobs: usize,
    /// Record wall time of the last `timing_window` stages of each run.
    pub record_timing: bool,
    pub timing_window: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algos.is_empty() {
            return Err(UqError::Config("experiment has no methods".into()));
        }
        let mut labels: Vec<&str> = self.algos.iter().map(|a| a.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(UqError::Config(format!("duplicate method label '{}'", w[0])));
        }
        for a in &self.algos {
            a.validate()?;
        }
        if self.replications == 0 {
            return Err(UqError::Config("need at least one replication".into()));
        }
        if !self.simulator.input_model().in_natural_space(self.theta_c) {
            return Err(UqError::Config(format!("true parameter {} outside the parameter space", self.theta_c)));
        }
        if let Some(bx) = self.prior.truncation() {
            if !bx.contains(self.theta_c) {
                return Err(UqError::Config(format!(
                    "true parameter {} outside the prior box [{}, {}]",
                    self.theta_c,
                    bx.lower(),
                    bx.upper()
                )));
            }
        }
        Ok(())
    }

    /// Apply the same quantile levels to every method.
    pub fn set_alphas(&mut self, alphas: &[f64]) {
        for a in &mut self.algos {
            a.alphas = alphas.to_vec();
        }
    }
}

/// The news-vendor prior, restricted to `bx` when given.
pub fn default_prior(bx: Option<(f64, f64)>) -> Result<ConjugatePosterior> {
    let prior = ConjugatePosterior::gamma(PRIOR_SHAPE, PRIOR_RATE)?;
    match bx {
        Some((lo, hi)) => prior.with_truncation(ParamBox::new(lo, hi)?),
        None => Ok(prior),
    }
}

/// The four canned experiments. `match_budget` gives tlis1 and simple-is a
/// `t = 0` block of `T·M·N` runs, matching Direct MC over the horizon.
pub fn canned_experiment(id: u8, seed: u64, match_budget: bool) -> Result<ExperimentConfig> {
    let horizon = 200;
    let algos = match id {
        1 => {
            let mut algos = vec![
                AlgoConfig::new(Method::Tlis1, 30, 10, 20),
                AlgoConfig::new(Method::SimpleIs, 30, 10, 20),
                AlgoConfig::new(Method::DirectMc, 30, 10, 1),
            ];
            if match_budget {
                for a in algos.iter_mut().filter(|a| a.method.simulates_once()) {
                    a.init_n = Some(horizon as usize * a.n);
                }
            }
            algos
        }
        2 => vec![
            AlgoConfig::new(Method::Tlis2, 30, 10, 20).with_warmup(5).with_label("tlis2-warmup"),
            AlgoConfig::new(Method::Tlis2, 30, 10, 20),
            AlgoConfig::new(Method::Green, 30, 10, 20).with_label("green-n10"),
            AlgoConfig::new(Method::Green, 30, 300, 20).with_label("green-n300"),
            AlgoConfig::new(Method::DirectMc, 30, 10, 1),
        ],
        3 => [(10, 30), (30, 10), (50, 6)]
            .into_iter()
            .map(|(m, n)| AlgoConfig::new(Method::Tlis2, m, n, 20).with_warmup(5).with_label(format!("tlis2-m{m}-n{n}")))
            .collect(),
        4 => [10, 50, 100, 200]
            .into_iter()
            .map(|k| AlgoConfig::new(Method::Tlis2, 30, 1000, k).with_warmup(5).with_label(format!("tlis2-k{k}")))
            .collect(),
        _ => return Err(UqError::Config(format!("unknown experiment {id} (expected 1, 2, 3 or 4)"))),
    };
    Ok(ExperimentConfig {
        name: format!("exp{id}"),
        algos,
        theta_c: 1.0,
        horizon,
        replications: 100,
        prior: default_prior(Some(DEFAULT_BOX))?,
        simulator: NewsVendor::default(),
        seed,
        jobs: 0,
        record_timing: id == 4,
        timing_window: 100,
    })
}

/// The shared data stream `ξ_1..ξ_T` of one replication.
pub fn generate_stream(model: &InputModel, theta_c: f64, horizon: u64, streams: RngStreams, replication: u64) -> Result<Vec<f64>> {
    let mut rng = streams.stream(Substream::Data, replication, 0);
    (0..horizon).map(|_| model.sample(theta_c, &mut rng)).collect()
}

/// Reports of one method along one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub label: String,
    /// Reports for `t = 0..=T`.
    pub reports: Vec<QuantReport>,
    /// Wall time of the last `timing_window` stages.
    pub elapsed: Duration,
}

/// Run every method of `cfg` along replication `rep`, with the given simulator.
pub fn run_replication_with<S: Simulator + Clone>(cfg: &ExperimentConfig, sim: &S, rep: u64) -> Result<Vec<MethodRun>> {
    let streams = RngStreams::new(cfg.seed);
    let data = generate_stream(&sim.input_model(), cfg.theta_c, cfg.horizon, streams, rep)?;
    let timed_from = cfg.horizon.saturating_sub(cfg.timing_window) + 1;
    cfg.algos
        .iter()
        .enumerate()
        .map(|(lane, algo)| {
            let (mut q, first) =
                Quantifier::initialize(algo.clone(), cfg.prior.clone(), sim.clone(), streams.with_lane(lane as u64), rep)?;
            let mut reports = Vec::with_capacity(data.len() + 1);
            reports.push(first);
            let mut elapsed = Duration::ZERO;
            for (i, &x) in data.iter().enumerate() {
                let start = Instant::now();
                reports.push(q.step(x)?);
                if i as u64 + 1 >= timed_from {
                    elapsed += start.elapsed();
                }
            }
            Ok(MethodRun { label: algo.label.clone(), reports, elapsed })
        })
        .collect()
}

pub fn run_replication(cfg: &ExperimentConfig, rep: u64) -> Result<Vec<MethodRun>> {
    run_replication_with(cfg, &cfg.simulator, rep)
}

/// One estimate of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub method: String,
    pub alpha: f64,
    pub t: u64,
    pub rep: u64,
    pub estimate: f64,
    pub truth: f64,
    pub sq_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub method: String,
    pub alpha: f64,
    pub t: u64,
    pub mse: f64,
    /// Replications with a finite estimate.
    pub n_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub rep: u64,
    pub seconds: f64,
}

/// `MSE_t = (1/R) Σ (q̂_t^r − q_t)²` per (method, α, t), in first-seen order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MseSeries {
    rows: Vec<MseRow>,
}

impl MseSeries {
    pub fn from_rows(rows: Vec<MseRow>) -> Self {
        MseSeries { rows }
    }

    pub fn rows(&self) -> &[MseRow] {
        &self.rows
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.method.as_str()) {
                seen.push(&r.method);
            }
        }
        seen
    }

    pub fn alphas(&self) -> Vec<f64> {
        let mut seen: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.alpha) {
                seen.push(r.alpha);
            }
        }
        seen
    }

    pub fn get(&self, method: &str, alpha: f64, t: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.alpha == alpha && r.t == t)
            .map(|r| r.mse)
    }

    /// Mean of `MSE_t` over `t ∈ [from, to]`.
    pub fn time_average(&self, method: &str, alpha: f64, from: u64, to: u64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.alpha == alpha && (from..=to).contains(&r.t))
            .map(|r| r.mse)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Aggregate per-replication rows. Replications whose estimate is not finite
/// are left out of the mean and of `n_reps`.
pub fn mse_series(rows: &[RepRow]) -> MseSeries {
    let mut index: HashMap<(&str, u64, u64), usize> = HashMap::new();
    let mut acc: Vec<(MseRow, f64)> = Vec::new();
    for r in rows {
        let key = (r.method.as_str(), r.alpha.to_bits(), r.t);
        let i = *index.entry(key).or_insert_with(|| {
            acc.push((MseRow { method: r.method.clone(), alpha: r.alpha, t: r.t, mse: 0.0, n_reps: 0 }, 0.0));
            acc.len() - 1
        });
        if r.sq_err.is_finite() {
            acc[i].1 += r.sq_err;
            acc[i].0.n_reps += 1;
        }
    }
    MseSeries {
        rows: acc
            .into_iter()
            .map(|(mut row, sum)| {
                row.mse = if row.n_reps == 0 { f64::NAN } else { sum / row.n_reps as f64 };
                row
            })
            .collect(),
    }
}

fn rep_rows(runs: &[MethodRun], rep: u64, out: &mut Vec<RepRow>) -> Result<()> {
    for run in runs {
        for report in &run.reports {
            let truths = report.truths.as_ref().ok_or_else(|| {
                UqError::Unsupported(format!("{}: simulator provides no true quantiles", run.label))
            })?;
            for (&(alpha, estimate), &truth) in report.quantiles.iter().zip(truths) {
                out.push(RepRow {
                    method: run.label.clone(),
                    alpha,
                    t: report.t,
                    rep,
                    estimate,
                    truth,
                    sq_err: (estimate - truth).powi(2),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub per_rep: Vec<RepRow>,
    pub mse: MseSeries,
    pub timing: Option<Vec<TimingRow>>,
}

impl ExperimentOutput {
    /// Mean wall time per replication of each method.
    pub fn mean_seconds(&self, method: &str) -> Option<f64> {
        let rows: Vec<f64> = self.timing.as_ref()?.iter().filter(|r| r.method == method).map(|r| r.seconds).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }
}

/// Run all replications. Results do not depend on `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| UqError::Config(format!("thread pool: {e}")))?;
    let runs: Vec<Vec<MethodRun>> =
        pool.install(|| (0..cfg.replications as u64).into_par_iter().map(|rep| run_replication(cfg, rep)).collect::<Result<_>>())?;
    let mut per_rep = Vec::new();
    let mut timing = Vec::new();
    for (rep, method_runs) in runs.iter().enumerate() {
        rep_rows(method_runs, rep as u64, &mut per_rep)?;
        timing.extend(method_runs.iter().map(|r| TimingRow {
            method: r.label.clone(),
            rep: rep as u64,
            seconds: r.elapsed.as_secs_f64(),
        }));
    }
    let mse = mse_series(&per_rep);
    Ok(ExperimentOutput { per_rep, mse, timing: cfg.record_timing.then_some(timing) })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the per-replication, MSE and (when recorded) timing CSVs into `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec![dir.join(PER_REP_FILE), dir.join(MSE_FILE)];
    write_csv(&written[0], &output.per_rep)?;
    write_csv(&written[1], output.mse.rows())?;
    if let Some(timing) = &output.timing {
        let path = dir.join(TIMING_FILE);
        write_csv(&path, timing)?;
        written.push(path);
    }
    Ok(written)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let rows = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()?;
    if rows.is_empty() {
        return Err(UqError::Input(format!("{} has no data rows", path.display())));
    }
    Ok(rows)
}

pub fn read_mse_csv(path: &Path) -> Result<MseSeries> {
    read_rows(path).map(MseSeries::from_rows)
}

pub fn read_per_rep_csv(path: &Path) -> Result<Vec<RepRow>> {
    read_rows(path)
}

pub fn read_timing_csv(path: &Path) -> Result<Vec<TimingRow>> {
    read_rows(path)
}

/// Render MSE ×10⁻³ at the given stages, one row per method, the lower
/// quantile columns first. Adds a mean running time column when `timing` is given.
pub fn render_table(mse: &MseSeries, ts: &[u64], timing: Option<&[TimingRow]>, out: &mut impl Write) -> Result<()> {
    let mut alphas = mse.alphas();
    alphas.sort_by(f64::total_cmp);
    write!(out, "| method |")?;
    for a in &alphas {
        for t in ts {
            write!(out, " α={a} t={t} |")?;
        }
    }
    if timing.is_some() {
        write!(out, " running time |")?;
    }
    writeln!(out)?;
    let ncols = alphas.len() * ts.len() + 1 + usize::from(timing.is_some());
    writeln!(out, "|{}", "---|".repeat(ncols))?;
    for method in mse.methods() {
        write!(out, "| {method} |")?;
        for &a in &alphas {
            for &t in ts {
                match mse.get(method, a, t) {
                    Some(v) => write!(out, " {:.4} |", v * 1e3)?,
                    None => write!(out, " - |")?,
                }
            }
        }
        if let Some(rows) = timing {
            let secs: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.seconds).collect();
            if secs.is_empty() {
                write!(out, " - |")?;
            } else {
                write!(out, " {:.2}s |", secs.iter().sum::<f64>() / secs.len() as f64)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
