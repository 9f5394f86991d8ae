//! Statistical and accounting properties checked by `uqstream verify`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algorithms::{AlgoConfig, Method, Quantifier};
use crate::efd::{ratio_second_moment, ConjugatePosterior, InputModel, SecondMoment};
use crate::error::{Result, UqError};
use crate::estimators::{weighted_cdf_log, CisProposal};
use crate::harness::{default_prior, generate_stream, DEFAULT_BOX};
use crate::models::{simulate_block, CountingSimulator, NewsVendor, Simulator, ZeroNoise};
use crate::rng::{RngStreams, Substream};

/// Band used by every mean test, in standard errors.
pub const Z_BAND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    RatioMoment,
    CdfUnbiased,
    CisUnbiased,
    OrderPreservation,
    Budget,
    VarianceExplosion,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::RatioMoment,
        Property::CdfUnbiased,
        Property::CisUnbiased,
        Property::OrderPreservation,
        Property::Budget,
        Property::VarianceExplosion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Property::RatioMoment => "ratio-moment",
            Property::CdfUnbiased => "cdf-unbiased",
            Property::CisUnbiased => "cis-unbiased",
            Property::OrderPreservation => "order-preservation",
            Property::Budget => "budget",
            Property::VarianceExplosion => "variance-explosion",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Property {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Property::ALL.iter().map(|p| p.as_str()).collect();
            UqError::Usage(format!("unknown property '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub property: Property,
    pub passed: bool,
    pub detail: String,
}

/// Sample mean of a statistic against its exact expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanTest {
    pub expected: f64,
    pub mean: f64,
    pub std_err: f64,
}

impl MeanTest {
    pub fn from_samples(expected: f64, samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        MeanTest { expected, mean, std_err: (var / n).sqrt() }
    }

    pub fn z(&self) -> f64 {
        if self.std_err == 0.0 {
            if self.mean == self.expected {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - self.expected) / self.std_err
        }
    }

    pub fn passes(&self, band: f64) -> bool {
        self.z().abs() <= band
    }
}

impl fmt::Display for MeanTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expected {:.6}, mean {:.6} ± {:.2e} (z = {:+.2})", self.expected, self.mean, self.std_err, self.z())
    }
}

/// `π_0, …, π_T` along an exponential data stream with rate `theta_c`.
pub fn stream_posteriors(prior: &ConjugatePosterior, theta_c: f64, horizon: u64, seed: u64) -> Result<Vec<ConjugatePosterior>> {
    let data = generate_stream(&InputModel::ExponentialRate, theta_c, horizon, RngStreams::new(seed), 0)?;
    let mut out = Vec::with_capacity(data.len() + 1);
    out.push(prior.clone());
    for x in data {
        let next = out.last().unwrap().update(x)?;
        out.push(next);
    }
    Ok(out)
}

/// `E[(π_t/π_{t−k})²]` for `t ≥ t_from`, `1 ≤ k ≤ k_max`, as `(t, k, moment)`.
pub fn moment_path(posteriors: &[ConjugatePosterior], k_max: usize, t_from: usize) -> Result<Vec<(usize, usize, SecondMoment)>> {
    let mut out = Vec::new();
    for t in t_from..posteriors.len() {
        for k in 1..=k_max.min(t) {
            out.push((t, k, ratio_second_moment(&posteriors[t], &posteriors[t - k])?));
        }
    }
    Ok(out)
}

fn experiment_prior() -> Result<ConjugatePosterior> {
    default_prior(Some(DEFAULT_BOX))
}

/// Closed-form ratio moments against Monte Carlo averages of `w²`.
pub fn ratio_moment_tests(seed: u64, draws: usize) -> Result<Vec<MeanTest>> {
    let posts = stream_posteriors(&experiment_prior()?, 1.0, 100, seed)?;
    let mut pairs: Vec<(ConjugatePosterior, ConjugatePosterior)> = vec![(
        ConjugatePosterior::gamma(2.0, 2.0)?,
        ConjugatePosterior::gamma(1.0, 1.0)?,
    )];
    for (t, k) in [(20, 1), (20, 5), (50, 20), (100, 20)] {
        pairs.push((posts[t].clone(), posts[t - k].clone()));
    }
    pairs.push((ConjugatePosterior::normal(0.3, 0.5, 1.0)?, ConjugatePosterior::normal(0.0, 1.0, 1.0)?));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    pairs
        .iter()
        .map(|(num, den)| {
            let exact = ratio_second_moment(num, den)?.value();
            let w2: Vec<f64> = den
                .sample(&mut rng, draws)?
                .into_iter()
                .map(|th| Ok((2.0 * (num.log_pdf(th)? - den.log_pdf(th)?)).exp()))
                .collect::<Result<_>>()?;
            Ok(MeanTest::from_samples(exact, &w2))
        })
        .collect()
}

/// Mean of the unnormalized window CDF `(1/KM) Σ w·I(H(θ) ≤ h)` with exact
/// `H`, at levels where the posterior CDF of `H(θ)` is 0.2, 0.5 and 0.8.
pub fn cdf_unbiasedness(seed: u64, m: usize, k: usize, n: usize, stage: u64, reps: usize) -> Result<Vec<MeanTest>> {
    let sim = ZeroNoise(NewsVendor::default());
    let data = generate_stream(&InputModel::ExponentialRate, 1.0, stage, RngStreams::new(seed), 0)?;
    let post = experiment_prior()?.update_many(&data)?;
    let levels = [0.2, 0.5, 0.8];
    // H decreasing: P(H(θ) ≤ H(θ_p)) = 1 − p
    let hs: Vec<f64> = levels.iter().map(|&p| sim.true_performance(post.quantile(p)?)).collect::<Result<_>>()?;
    let cfg = AlgoConfig::new(Method::Green, m, n, k);
    let mut samples = vec![Vec::with_capacity(reps); levels.len()];
    for rep in 0..reps as u64 {
        let (mut q, _) = Quantifier::initialize(cfg.clone(), experiment_prior()?, sim, RngStreams::new(seed).with_lane(1), rep)?;
        for &x in &data {
            q.step(x)?;
        }
        let ecdf = q.ecdf().ok_or_else(|| UqError::DegenerateWeights("window ECDF could not be built".into()))?;
        for (s, &h) in samples.iter_mut().zip(&hs) {
            s.push(ecdf.unnormalized_cdf(h));
        }
    }
    Ok(levels.iter().zip(&samples).map(|(&p, s)| MeanTest::from_samples(1.0 - p, s)).collect())
}

/// Mean of the CIS estimate at fixed targets against the exact `H(θ)`. Proposals
/// are `m` fresh posterior draws per replication, each run `n` times.
pub fn cis_unbiasedness(seed: u64, m: usize, n: usize, stage: u64, reps: usize) -> Result<Vec<MeanTest>> {
    let sim = NewsVendor::default();
    let data = generate_stream(&InputModel::ExponentialRate, 1.0, stage, RngStreams::new(seed), 0)?;
    let post = experiment_prior()?.update_many(&data)?;
    let targets: Vec<f64> = [0.2, 0.5, 0.8].iter().map(|&p| post.quantile(p)).collect::<Result<_>>()?;
    let streams = RngStreams::new(seed).with_lane(2);
    let mut samples = vec![Vec::with_capacity(reps); targets.len()];
    for rep in 0..reps as u64 {
        let thetas = post.sample(&mut streams.stream(Substream::Theta, rep, stage), m)?;
        let block = simulate_block(&sim, &thetas, n, &mut streams.stream(Substream::Simulation, rep, stage))?;
        let est = CisProposal::from_block(sim.input_model(), &block).estimate_all(&targets)?;
        for (s, e) in samples.iter_mut().zip(est) {
            s.push(e);
        }
    }
    targets
        .iter()
        .zip(&samples)
        .map(|(&th, s)| Ok(MeanTest::from_samples(sim.true_performance(th)?, s)))
        .collect()
}

/// With a zero-noise simulator, pipeline quantiles equal those of the ECDF
/// built from exact `H(θ)` values, bit for bit. Returns the number of
/// `(instance, level)` comparisons and the mismatches.
pub fn order_preservation(seed: u64, instances: u64) -> Result<(usize, Vec<String>)> {
    let sim = ZeroNoise(NewsVendor::default());
    let alphas = vec![0.05, 0.25, 0.5, 0.75, 0.95];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for inst in 0..instances {
        let method = [Method::Green, Method::Tlis2, Method::DirectMc][inst as usize % 3];
        let cfg = AlgoConfig::new(method, 3 + inst as usize % 6, 1 + inst as usize % 5, 1 + inst as usize % 4)
            .with_warmup(u64::MAX)
            .with_alphas(alphas.clone());
        let t = 3 + inst % 10;
        let data = generate_stream(&InputModel::ExponentialRate, 1.0, t, RngStreams::new(seed), inst)?;
        let (mut q, _) = Quantifier::initialize(cfg, experiment_prior()?, sim, RngStreams::new(seed), inst)?;
        let mut report = None;
        for &x in &data {
            report = Some(q.step(x)?);
        }
        let report = report.expect("at least one step");
        let mut values = Vec::new();
        let mut log_w = Vec::new();
        for (stage, (_, lw)) in q.window().iter().zip(q.window_log_weights()?) {
            for &th in stage.thetas() {
                values.push(sim.true_performance(th)?);
            }
            log_w.extend(lw);
        }
        let exact = weighted_cdf_log(&values, &log_w)?;
        for &(alpha, est) in &report.quantiles {
            compared += 1;
            let want = exact.quantile(alpha)?;
            if est.to_bits() != want.to_bits() {
                mismatches.push(format!("instance {inst} ({method}), α={alpha}: {est} vs {want}"));
            }
        }
    }
    Ok((compared, mismatches))
}

/// Simulator calls after every step up to `horizon`, for every method,
/// against the specified budget. Returns mismatches.
pub fn budget_mismatches(seed: u64, horizon: u64) -> Result<Vec<String>> {
    let data = generate_stream(&InputModel::ExponentialRate, 1.0, horizon, RngStreams::new(seed), 0)?;
    let mut bad = Vec::new();
    for method in Method::ALL {
        for (m, n, init_n) in [(3, 2, None), (5, 1, Some(7))] {
            let mut cfg = AlgoConfig::new(method, m, n, 4);
            cfg.init_n = init_n;
            let sim = CountingSimulator::new(NewsVendor::default());
            let (mut q, _) = Quantifier::initialize(cfg.clone(), experiment_prior()?, sim.clone(), RngStreams::new(seed), 0)?;
            let mut check = |t: u64, internal: u64| {
                let want = cfg.budget(t);
                if sim.calls() != want || internal != want {
                    bad.push(format!("{method} M={m} N={n}: t={t} counted {} (internal {internal}), expected {want}", sim.calls()));
                }
            };
            check(0, q.sim_calls());
            for (i, &x) in data.iter().enumerate() {
                q.step(x)?;
                check(i as u64 + 1, q.sim_calls());
            }
        }
    }
    Ok(bad)
}

/// `(E[(π_100/π_0)²], E[(π_400/π_0)²])` along a stream.
pub fn variance_explosion(seed: u64) -> Result<(f64, f64)> {
    let posts = stream_posteriors(&experiment_prior()?, 1.0, 400, seed)?;
    Ok((
        ratio_second_moment(&posts[100], &posts[0])?.value(),
        ratio_second_moment(&posts[400], &posts[0])?.value(),
    ))
}

fn mean_tests_outcome(property: Property, tests: &[MeanTest]) -> PropertyOutcome {
    let worst = tests.iter().map(|t| t.z().abs()).fold(0.0, f64::max);
    let detail = tests.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("; ");
    PropertyOutcome { property, passed: worst <= Z_BAND, detail: format!("max |z| = {worst:.2}: {detail}") }
}

/// Run one property with its default sizes.
pub fn check(property: Property, seed: u64) -> Result<PropertyOutcome> {
    Ok(match property {
        Property::RatioMoment => mean_tests_outcome(property, &ratio_moment_tests(seed, 100_000)?),
        Property::CdfUnbiased => mean_tests_outcome(property, &cdf_unbiasedness(seed, 8, 3, 4, 10, 2000)?),
        Property::CisUnbiased => mean_tests_outcome(property, &cis_unbiasedness(seed, 8, 4, 100, 2000)?),
        Property::OrderPreservation => {
            let (compared, bad) = order_preservation(seed, 30)?;
            PropertyOutcome {
                property,
                passed: bad.is_empty(),
                detail: format!("{} of {compared} quantiles differ{}", bad.len(), fmt_first(&bad)),
            }
        }
        Property::Budget => {
            let bad = budget_mismatches(seed, 20)?;
            PropertyOutcome {
                property,
                passed: bad.is_empty(),
                detail: format!("{} mismatches over T ≤ 20{}", bad.len(), fmt_first(&bad)),
            }
        }
        Property::VarianceExplosion => {
            let (m100, m400) = variance_explosion(seed)?;
            PropertyOutcome {
                property,
                passed: m400 > m100,
                detail: format!("E[(π_t/π_0)²]: t=100 → {m100:.4}, t=400 → {m400:.4}"),
            }
        }
    })
}

fn fmt_first(items: &[String]) -> String {
    items.first().map(|s| format!(" (first: {s})")).unwrap_or_default()
}
