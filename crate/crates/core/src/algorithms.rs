//! Online quantification procedures as single-step state machines.
//!
//! Every method keeps the current posterior and a window of recent stages.
//! At each stage it draws (or reuses) outer θ-samples, estimates `H(θ)` for
//! each, and reads quantiles off the weighted ECDF over the window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::efd::ConjugatePosterior;
use crate::error::{Result, UqError};
use crate::estimators::{
    block_means, outer_log_weights, weight_diagnostics, weighted_cdf_log, CisProposal,
    WeightDiagnostics, WeightMode, WeightedEcdf,
};
use crate::models::{simulate_block, true_quantile, Simulator};
use crate::rng::{RngStreams, Substream};
use crate::streaming::{SimBlock, StageBuffer, StageRecord};

/// Stage key used for the random streams of a restart, kept apart from the
/// keys of regular stages.
const RESTART_STAGE_BIT: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Two-layer IS without new simulations after `t = 0`.
    Tlis1,
    /// Two-layer IS with fresh simulations at every stage.
    Tlis2,
    DirectMc,
    SimpleIs,
    Green,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Tlis1, Method::Tlis2, Method::DirectMc, Method::SimpleIs, Method::Green];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tlis1 => "tlis1",
            Method::Tlis2 => "tlis2",
            Method::DirectMc => "direct-mc",
            Method::SimpleIs => "simple-is",
            Method::Green => "green",
        }
    }

    /// Whether the method only simulates at `t = 0`.
    pub fn simulates_once(&self) -> bool {
        matches!(self, Method::Tlis1 | Method::SimpleIs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UqError::Config(format!("unknown method '{s}' (expected tlis1, tlis2, direct-mc, simple-is or green)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    /// Name used in output files. Defaults to the method tag.
    pub label: String,
    pub method: Method,
    /// Outer θ-samples per stage.
    pub m: usize,
    /// Inner replications per θ-sample.
    pub n: usize,
    /// Number of recent stages pooled in the ECDF.
    pub k: usize,
    pub alphas: Vec<f64>,
    /// Stages `t < warmup` use per-θ sample means instead of CIS (tlis2 only).
    pub warmup: u64,
    pub weight_mode: WeightMode,
    /// Replications per θ in the `t = 0` block of tlis1 and simple-is.
    /// `None` means `n`.
    pub init_n: Option<usize>,
    /// Credible interval level: `(q(c/2), q(1 − c/2))`.
    pub credible_alpha: f64,
}

impl AlgoConfig {
    pub fn new(method: Method, m: usize, n: usize, k: usize) -> Self {
        AlgoConfig {
            label: method.as_str().to_string(),
            method,
            m,
            n,
            k,
            alphas: vec![0.05, 0.95],
            warmup: 0,
            weight_mode: WeightMode::ExactRatio,
            init_n: None,
            credible_alpha: 0.1,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_alphas(mut self, alphas: Vec<f64>) -> Self {
        self.alphas = alphas;
        self
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_weight_mode(mut self, mode: WeightMode) -> Self {
        self.weight_mode = mode;
        self
    }

    pub fn with_init_n(mut self, init_n: usize) -> Self {
        self.init_n = Some(init_n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(UqError::Config(format!(
                "{}: M, N and K must be at least 1 (got M={}, N={}, K={})",
                self.label, self.m, self.n, self.k
            )));
        }
        if self.init_n == Some(0) {
            return Err(UqError::Config(format!("{}: initial replications must be at least 1", self.label)));
        }
        if self.alphas.is_empty() {
            return Err(UqError::Config(format!("{}: no quantile levels", self.label)));
        }
        if let Some(a) = self.alphas.iter().chain([&self.credible_alpha]).find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(UqError::Config(format!("{}: level {a} outside (0, 1)", self.label)));
        }
        Ok(())
    }

    /// Window length actually used.
    pub fn effective_k(&self) -> usize {
        match self.method {
            Method::DirectMc => 1,
            _ => self.k,
        }
    }

    /// Replications per θ in the first block.
    pub fn initial_n(&self) -> usize {
        if self.method.simulates_once() {
            self.init_n.unwrap_or(self.n)
        } else {
            self.n
        }
    }

    /// Simulator calls after `t` steps, as the method is specified to spend them.
    pub fn budget(&self, t: u64) -> u64 {
        let block = (self.m * self.initial_n()) as u64;
        if self.method.simulates_once() {
            block
        } else {
            block * (t + 1)
        }
    }
}

/// Output of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub t: u64,
    /// `(α, q̂_α)` for every configured level. Estimates are NaN when `error` is set.
    pub quantiles: Vec<(f64, f64)>,
    pub credible_interval: (f64, f64),
    /// True quantiles aligned with `quantiles`, when the simulator can provide them.
    pub truths: Option<Vec<f64>>,
    /// Pooled diagnostics of the window's weights.
    pub weights: Option<WeightDiagnostics>,
    /// Effective sample size of each stage in the window, oldest first.
    pub stage_ess: Vec<f64>,
    pub window: usize,
    /// Cumulative simulator calls made by this quantifier.
    pub sim_calls: u64,
    pub error: Option<String>,
}

/// State of one method along one data stream.
#[derive(Debug, Clone)]
pub struct Quantifier<S> {
    cfg: AlgoConfig,
    sim: S,
    posterior: ConjugatePosterior,
    buffer: StageBuffer,
    /// tlis1: the `t = 0` simulations every later stage is estimated against.
    pinned: Option<CisProposal>,
    /// simple-is: the `t = 0` stage every later stage reweights.
    origin: Option<StageRecord>,
    t: u64,
    sim_calls: u64,
    streams: RngStreams,
    replication: u64,
    ecdf: Option<WeightedEcdf>,
}

impl<S: Simulator> Quantifier<S> {
    /// Draw the `t = 0` θ-samples from `prior`, run the first simulation block
    /// and build the `t = 0` report.
    pub fn initialize(
        cfg: AlgoConfig,
        prior: ConjugatePosterior,
        sim: S,
        streams: RngStreams,
        replication: u64,
    ) -> Result<(Self, QuantReport)> {
        cfg.validate()?;
        if prior.input_model() != sim.input_model() {
            return Err(UqError::Config(format!(
                "prior is conjugate to {:?} but {} draws from {:?}",
                prior.input_model(),
                sim.name(),
                sim.input_model()
            )));
        }
        let buffer = StageBuffer::new(cfg.effective_k())?;
        let mut q = Quantifier {
            cfg,
            sim,
            posterior: prior,
            buffer,
            pinned: None,
            origin: None,
            t: 0,
            sim_calls: 0,
            streams,
            replication,
            ecdf: None,
        };
        q.start_epoch(0)?;
        let report = q.report();
        Ok((q, report))
    }

    /// First stage of an epoch: fresh θ-samples and a full simulation block.
    fn start_epoch(&mut self, key: u64) -> Result<()> {
        let thetas = self.draw_thetas(key)?;
        let block = self.simulate(&thetas, self.cfg.initial_n(), key)?;
        let model = self.posterior.input_model();
        let estimates = self.inner_estimates(&thetas, &block)?;
        let rec = StageRecord::new(self.t, thetas, self.posterior.clone(), estimates, Some(block))?;
        match self.cfg.method {
            Method::Tlis1 => self.pinned = Some(CisProposal::new(model, &rec)?),
            Method::SimpleIs => self.origin = Some(rec.clone()),
            _ => {}
        }
        self.buffer = StageBuffer::new(self.cfg.effective_k())?;
        self.buffer.push_stage(rec.without_sims())
    }

    fn draw_thetas(&self, key: u64) -> Result<Vec<f64>> {
        let mut rng = self.streams.stream(Substream::Theta, self.replication, key);
        self.posterior.sample(&mut rng, self.cfg.m)
    }

    fn simulate(&mut self, thetas: &[f64], n: usize, key: u64) -> Result<SimBlock> {
        let mut rng = self.streams.stream(Substream::Simulation, self.replication, key);
        let block = simulate_block(&self.sim, thetas, n, &mut rng)?;
        self.sim_calls += (thetas.len() * n) as u64;
        Ok(block)
    }

    /// Inner-layer estimates at `thetas` from the stage's own block.
    fn inner_estimates(&self, thetas: &[f64], block: &SimBlock) -> Result<Vec<f64>> {
        let use_cis = match self.cfg.method {
            Method::Tlis1 => true,
            Method::Tlis2 => self.t >= self.cfg.warmup,
            Method::DirectMc | Method::SimpleIs | Method::Green => false,
        };
        if use_cis {
            CisProposal::from_block(self.posterior.input_model(), block).estimate_all(thetas)
        } else {
            Ok(block_means(block))
        }
    }

    /// Consume one observation and produce the report for the new stage.
    pub fn step(&mut self, datum: f64) -> Result<QuantReport> {
        self.posterior = self.posterior.update(datum)?;
        self.buffer.push_datum(datum);
        self.t += 1;
        let t = self.t;
        match self.cfg.method {
            Method::Tlis1 => {
                let thetas = self.draw_thetas(t)?;
                let pinned = self.pinned.as_ref().expect("tlis1 keeps its initial block");
                let estimates = pinned.estimate_all(&thetas)?;
                self.buffer.push_stage(StageRecord::new(t, thetas, self.posterior.clone(), estimates, None)?)?;
            }
            Method::SimpleIs => {}
            Method::Tlis2 | Method::DirectMc | Method::Green => {
                let thetas = self.draw_thetas(t)?;
                let block = self.simulate(&thetas, self.cfg.n, t)?;
                let estimates = self.inner_estimates(&thetas, &block)?;
                self.buffer.push_stage(StageRecord::new(t, thetas, self.posterior.clone(), estimates, None)?)?;
            }
        }
        Ok(self.report())
    }

    /// Restart a two-layer run: draw new θ-samples from the current posterior
    /// and run a fresh initial block, discarding the window.
    pub fn reset(&mut self) -> Result<QuantReport> {
        self.start_epoch(self.t | RESTART_STAGE_BIT)?;
        Ok(self.report())
    }

    /// Stages entering the ECDF at the current time, oldest first.
    pub fn window(&self) -> Vec<&StageRecord> {
        match &self.origin {
            Some(origin) => vec![origin],
            None => self.buffer.stages().collect(),
        }
    }

    /// Estimates and log-weights of every stage in the window, oldest first.
    pub fn window_log_weights(&self) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.window()
            .into_iter()
            .map(|rec| {
                let since = match self.cfg.weight_mode {
                    WeightMode::ExactRatio => Vec::new(),
                    WeightMode::LikelihoodProduct => self.buffer.data_since(rec.stage(), self.t)?,
                };
                let lw = outer_log_weights(&self.posterior, rec, self.cfg.weight_mode, &since)?;
                Ok((rec.estimates().to_vec(), lw))
            })
            .collect()
    }

    fn build_ecdf(&self) -> Result<(WeightedEcdf, WeightDiagnostics, Vec<f64>)> {
        let per_stage = self.window_log_weights()?;
        let mut values = Vec::new();
        let mut log_w = Vec::new();
        let mut stage_ess = Vec::with_capacity(per_stage.len());
        for (v, lw) in &per_stage {
            stage_ess.push(weight_diagnostics(lw)?.ess);
            values.extend_from_slice(v);
            log_w.extend_from_slice(lw);
        }
        let ecdf = weighted_cdf_log(&values, &log_w)?;
        Ok((ecdf, weight_diagnostics(&log_w)?, stage_ess))
    }

    fn report(&mut self) -> QuantReport {
        let truths = self
            .cfg
            .alphas
            .iter()
            .map(|&a| true_quantile(&self.sim, &self.posterior, a))
            .collect::<Result<Vec<_>>>()
            .ok();
        let window = self.window().len();
        let mut report = QuantReport {
            t: self.t,
            quantiles: self.cfg.alphas.iter().map(|&a| (a, f64::NAN)).collect(),
            credible_interval: (f64::NAN, f64::NAN),
            truths,
            weights: None,
            stage_ess: Vec::new(),
            window,
            sim_calls: self.sim_calls,
            error: None,
        };
        let filled = self.build_ecdf().and_then(|(ecdf, diag, ess)| {
            for (alpha, est) in report.quantiles.iter_mut() {
                *est = ecdf.quantile(*alpha)?;
            }
            report.credible_interval = ecdf.credible_interval(self.cfg.credible_alpha)?;
            report.weights = Some(diag);
            report.stage_ess = ess;
            self.ecdf = Some(ecdf);
            Ok(())
        });
        if let Err(e) = filled {
            self.ecdf = None;
            report.error = Some(e.to_string());
        }
        report
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.cfg
    }

    pub fn simulator(&self) -> &S {
        &self.sim
    }

    pub fn posterior(&self) -> &ConjugatePosterior {
        &self.posterior
    }

    pub fn buffer(&self) -> &StageBuffer {
        &self.buffer
    }

    /// ECDF behind the latest report, if it could be built.
    pub fn ecdf(&self) -> Option<&WeightedEcdf> {
        self.ecdf.as_ref()
    }

    pub fn stage(&self) -> u64 {
        self.t
    }

    pub fn sim_calls(&self) -> u64 {
        self.sim_calls
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efd::InputModel;
    use crate::models::{CountingSimulator, LinearModel, NewsVendor, ZeroNoise};

    fn prior() -> ConjugatePosterior {
        ConjugatePosterior::gamma(2.0, 2.0).unwrap()
    }

    fn data(t: usize) -> Vec<f64> {
        (0..t).map(|i| 0.3 + 0.17 * (i % 7) as f64).collect()
    }

    fn run(cfg: AlgoConfig, lane: u64, t: usize) -> Vec<QuantReport> {
        let (mut q, first) =
            Quantifier::initialize(cfg, prior(), NewsVendor::default(), RngStreams::new(9).with_lane(lane), 0).unwrap();
        let mut out = vec![first];
        out.extend(data(t).into_iter().map(|x| q.step(x).unwrap()));
        out
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("tlis3".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AlgoConfig::new(Method::Tlis1, 0, 1, 1).validate().is_err());
        assert!(AlgoConfig::new(Method::Tlis1, 1, 1, 0).validate().is_err());
        assert!(AlgoConfig::new(Method::Tlis1, 1, 1, 1).with_alphas(vec![1.0]).validate().is_err());
        assert!(AlgoConfig::new(Method::Tlis1, 1, 1, 1).with_alphas(vec![]).validate().is_err());
        assert!(AlgoConfig::new(Method::Tlis1, 1, 1, 1).validate().is_ok());
    }

    #[test]
    fn initial_state() {
        let sim = CountingSimulator::new(NewsVendor::default());
        let cfg = AlgoConfig::new(Method::Tlis1, 30, 10, 20);
        let (q, report) = Quantifier::initialize(cfg.clone(), prior(), sim.clone(), RngStreams::new(1), 0).unwrap();
        assert_eq!(sim.calls(), 300);
        assert_eq!(q.buffer().len(), 1);
        assert_eq!(report.t, 0);
        let (q2, report2) = Quantifier::initialize(cfg, prior(), NewsVendor::default(), RngStreams::new(1), 0).unwrap();
        assert_eq!(report, QuantReport { sim_calls: report.sim_calls, ..report2 });
        assert_eq!(q.buffer().newest().unwrap().thetas(), q2.buffer().newest().unwrap().thetas());
    }

    #[test]
    fn tlis1_steps_without_simulating() {
        let sim = CountingSimulator::new(NewsVendor::default());
        let cfg = AlgoConfig::new(Method::Tlis1, 5, 4, 3);
        let (mut q, _) = Quantifier::initialize(cfg, prior(), sim.clone(), RngStreams::new(1), 0).unwrap();
        for (i, x) in data(6).into_iter().enumerate() {
            let r = q.step(x).unwrap();
            assert_eq!(sim.calls(), 20);
            assert_eq!(r.window, (i + 2).min(3));
            assert!(r.error.is_none());
        }
        q.reset().unwrap();
        assert_eq!(sim.calls(), 40);
        assert_eq!(q.buffer().len(), 1);
        assert_eq!(q.stage(), 6);
    }

    #[test]
    fn reductions_to_direct_mc() {
        let direct = run(AlgoConfig::new(Method::DirectMc, 6, 3, 1), 0, 8);
        let tlis2 = run(AlgoConfig::new(Method::Tlis2, 6, 3, 1).with_warmup(u64::MAX), 0, 8);
        let green = run(AlgoConfig::new(Method::Green, 6, 3, 1), 0, 8);
        let strip = |r: &QuantReport| (r.quantiles.clone(), r.credible_interval);
        for ((d, t), g) in direct.iter().zip(&tlis2).zip(&green) {
            assert_eq!(strip(d), strip(t));
            assert_eq!(strip(d), strip(g));
        }
        // direct-mc ignores the configured window
        assert_eq!(run(AlgoConfig::new(Method::DirectMc, 6, 3, 5), 0, 8), direct);
    }

    #[test]
    fn simple_is_reweights_initial_samples() {
        let cfg = AlgoConfig::new(Method::SimpleIs, 8, 2, 20);
        let (mut q, _) = Quantifier::initialize(cfg, prior(), NewsVendor::default(), RngStreams::new(3), 0).unwrap();
        let thetas0 = q.window()[0].thetas().to_vec();
        for x in data(5) {
            let r = q.step(x).unwrap();
            assert_eq!(r.window, 1);
            assert_eq!(q.window()[0].thetas(), thetas0.as_slice());
        }
        assert_eq!(q.sim_calls(), 16);
    }

    #[test]
    fn budgets() {
        for method in Method::ALL {
            let cfg = AlgoConfig::new(method, 3, 2, 4);
            let sim = CountingSimulator::new(NewsVendor::default());
            let (mut q, _) = Quantifier::initialize(cfg.clone(), prior(), sim.clone(), RngStreams::new(2), 0).unwrap();
            for x in data(7) {
                q.step(x).unwrap();
            }
            assert_eq!(sim.calls(), cfg.budget(7), "{method}");
            assert_eq!(q.sim_calls(), sim.calls());
        }
        assert_eq!(AlgoConfig::new(Method::Tlis1, 3, 2, 4).with_init_n(14).budget(7), 42);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = AlgoConfig::new(Method::Tlis2, 4, 3, 3).with_warmup(2);
        assert_eq!(run(cfg.clone(), 1, 6), run(cfg, 1, 6));
    }

    #[test]
    fn warmup_switches_to_cis() {
        let cfg = AlgoConfig::new(Method::Tlis2, 4, 3, 10).with_warmup(3);
        let (mut q, _) = Quantifier::initialize(cfg, prior(), NewsVendor::default(), RngStreams::new(5), 0).unwrap();
        for x in data(4) {
            q.step(x).unwrap();
        }
        let stages: Vec<_> = q.buffer().stages().collect();
        // stage 2 is the last warm-up stage; its estimates are sample means
        let means_stage = stages[2];
        let cis_stage = stages[3];
        assert_eq!(means_stage.stage(), 2);
        assert_eq!(cis_stage.stage(), 3);
        let mut rng = RngStreams::new(5).stream(Substream::Simulation, 0, 2);
        let block = simulate_block(&NewsVendor::default(), means_stage.thetas(), 3, &mut rng).unwrap();
        assert_eq!(block_means(&block), means_stage.estimates());
        let cis = CisProposal::from_block(InputModel::ExponentialRate, &block).estimate_all(means_stage.thetas()).unwrap();
        assert_ne!(cis, means_stage.estimates());
    }

    #[test]
    fn degenerate_posterior_collapses_quantiles() {
        let tight = ConjugatePosterior::normal(1.0, 1e-12, 1.0).unwrap();
        let sim = ZeroNoise(LinearModel { model: InputModel::normal(1.0).unwrap() });
        for method in Method::ALL {
            let cfg = AlgoConfig::new(method, 6, 3, 3).with_warmup(u64::MAX);
            let (mut q, _) = Quantifier::initialize(cfg, tight.clone(), sim, RngStreams::new(4), 0).unwrap();
            let r = q.step(1.0).unwrap();
            for (_, est) in r.quantiles {
                assert!((est - 1.0).abs() < 1e-4, "{method}: {est}");
            }
        }
    }

    #[test]
    fn family_mismatch_is_a_config_error() {
        let sim = LinearModel { model: InputModel::normal(1.0).unwrap() };
        let cfg = AlgoConfig::new(Method::Tlis2, 2, 2, 2);
        assert!(matches!(
            Quantifier::initialize(cfg, prior(), sim, RngStreams::new(1), 0),
            Err(UqError::Config(_))
        ));
    }

    #[test]
    fn likelihood_mode_tracks_exact_mode() {
        let exact = run(AlgoConfig::new(Method::Green, 200, 2, 4), 0, 10);
        let lik = run(AlgoConfig::new(Method::Green, 200, 2, 4).with_weight_mode(WeightMode::LikelihoodProduct), 0, 10);
        for (a, b) in exact.iter().zip(&lik) {
            assert!(b.error.is_none());
            for ((_, x), (_, y)) in a.quantiles.iter().zip(&b.quantiles) {
                assert!((x - y).abs() < 0.05, "{x} vs {y}");
            }
        }
    }
}
