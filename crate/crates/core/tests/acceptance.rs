//! Acceptance gate. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails. Runs the four canned experiments at full
//! scale, so expect it to take a while.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use uqstream_core::algorithms::{AlgoConfig, Method, Quantifier};
use uqstream_core::efd::{ConjugatePosterior, InputModel};
use uqstream_core::estimators::weighted_cdf_log;
use uqstream_core::harness::{canned_experiment, default_prior, generate_stream, run_experiment, MseSeries, DEFAULT_BOX};
use uqstream_core::models::{NewsVendor, Simulator, ZeroNoise};
use uqstream_core::rng::RngStreams;
use uqstream_core::verify::{
    budget_mismatches, cdf_unbiasedness, cis_unbiasedness, moment_path, stream_posteriors, variance_explosion,
    MeanTest, Z_BAND,
};
use uqstream_core::Result;

const SEED: u64 = 7;
const ALPHAS: [f64; 2] = [0.05, 0.95];
const TABLE_TS: [u64; 4] = [50, 100, 150, 200];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn avg(mse: &MseSeries, method: &str, alpha: f64, from: u64, to: u64) -> f64 {
    mse.time_average(method, alpha, from, to).unwrap_or(f64::NAN)
}

fn cell(mse: &MseSeries, method: &str, alpha: f64, t: u64) -> f64 {
    mse.get(method, alpha, t).unwrap_or(f64::NAN)
}

fn exp1() -> Result<Outcome> {
    let cfg = canned_experiment(1, SEED, true)?;
    let start = Instant::now();
    let out = run_experiment(&cfg)?;
    let elapsed = start.elapsed();
    let mut ok = elapsed <= Duration::from_secs(600);
    let mut parts = Vec::new();
    for a in ALPHAS {
        let (t1, si, mc) = (
            avg(&out.mse, "tlis1", a, 50, 200),
            avg(&out.mse, "simple-is", a, 50, 200),
            avg(&out.mse, "direct-mc", a, 50, 200),
        );
        ok &= t1 < si && t1 < mc && t1 < 5e-4;
        parts.push(format!("α={a}: tlis1 {t1:.2e}, simple-is {si:.2e}, direct-mc {mc:.2e}"));
    }
    parts.push(format!("runtime {:.0} s", elapsed.as_secs_f64()));
    Ok(outcome(ok, parts.join("; ")))
}

fn exp2() -> Result<Outcome> {
    let out = run_experiment(&canned_experiment(2, SEED, false)?)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for a in ALPHAS {
        let [warm, plain, g10, g300, mc] =
            ["tlis2-warmup", "tlis2", "green-n10", "green-n300", "direct-mc"].map(|m| avg(&out.mse, m, a, 20, 200));
        let similar = plain.max(g300) / plain.min(g300);
        ok &= warm < g10 && warm < mc && similar <= 3.0;
        parts.push(format!(
            "α={a}: tlis2-warmup {warm:.2e}, green-n10 {g10:.2e}, direct-mc {mc:.2e}, tlis2 {plain:.2e} vs green-n300 {g300:.2e} (×{similar:.2})"
        ));
    }
    Ok(outcome(ok, parts.join("; ")))
}

fn table1() -> Result<Outcome> {
    let out = run_experiment(&canned_experiment(3, SEED, false)?)?;
    let labels = ["tlis2-m10-n30", "tlis2-m30-n10", "tlis2-m50-n6"];
    let mut wins = 0;
    let mut in_scale = true;
    for a in ALPHAS {
        for t in TABLE_TS {
            let v = labels.map(|m| cell(&out.mse, m, a, t));
            in_scale &= v.iter().all(|x| (1e-5..=1e-3).contains(x));
            if v[2] < v[0] && v[2] < v[1] {
                wins += 1;
            }
        }
    }
    let t200: Vec<String> = labels
        .iter()
        .map(|m| format!("{m} {:.2e}/{:.2e}", cell(&out.mse, m, 0.05, 200), cell(&out.mse, m, 0.95, 200)))
        .collect();
    Ok(outcome(
        wins >= 6 && in_scale,
        format!("M=50 smallest in {wins}/8 cells; all cells within [1e-5, 1e-3]: {in_scale}; t=200: {}", t200.join(", ")),
    ))
}

fn table2() -> Result<Outcome> {
    let out = run_experiment(&canned_experiment(4, SEED, false)?)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for a in ALPHAS {
        let [k10, k100, k200] = ["tlis2-k10", "tlis2-k100", "tlis2-k200"].map(|m| cell(&out.mse, m, a, 200));
        ok &= k100 <= k10 && k100 <= 2.0 * k200;
        parts.push(format!("α={a}: K=10 {k10:.2e}, K=100 {k100:.2e}, K=200 {k200:.2e}"));
    }
    let s100 = out.mean_seconds("tlis2-k100").unwrap_or(f64::NAN);
    let s200 = out.mean_seconds("tlis2-k200").unwrap_or(f64::NAN);
    ok &= s200 >= 1.4 * s100;
    parts.push(format!("time K=200/K=100 = {:.2}", s200 / s100));
    Ok(outcome(ok, parts.join("; ")))
}

fn unbiasedness() -> Result<Outcome> {
    let cdf = cdf_unbiasedness(SEED, 8, 3, 4, 10, 2000)?;
    let cis = cis_unbiasedness(SEED, 8, 4, 10, 2000)?;
    let worst = |v: &[MeanTest]| v.iter().map(|t| t.z().abs()).fold(0.0, f64::max);
    let (zc, zi) = (worst(&cdf), worst(&cis));
    Ok(outcome(zc <= Z_BAND && zi <= Z_BAND, format!("max |z|: CDF {zc:.2}, CIS {zi:.2} (band {Z_BAND})")))
}

fn oracle() -> Result<Outcome> {
    let worst = common::max_cdf_deviation(SEED, 50);
    Ok(outcome(worst <= 1e-12, format!("largest deviation over 50 instances {worst:.2e}")))
}

fn ratio_moments() -> Result<Outcome> {
    let prior = default_prior(Some(DEFAULT_BOX))?;
    let posts = stream_posteriors(&prior, 1.0, 400, SEED)?;
    let path = moment_path(&posts, 20, 50)?;
    let values: Vec<(usize, usize, f64)> = path.iter().map(|(t, k, m)| (*t, *k, m.value())).collect();
    let outside: Vec<&(usize, usize, f64)> = values.iter().filter(|(_, _, v)| !(1.0..=2.0).contains(v)).collect();
    let at = |t: usize, k: usize| values.iter().find(|(tt, kk, _)| *tt == t && *kk == k).map(|x| x.2).unwrap_or(f64::NAN);
    let decreasing = (1..=20).all(|k| at(400, k) < at(50, k));
    let (m100, m400) = variance_explosion(SEED)?;
    let max = values.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    let first = outside.first().map(|(t, k, v)| format!(" (first: t={t}, k={k} → {v:.3})")).unwrap_or_default();
    Ok(outcome(
        outside.is_empty() && decreasing && m400 > m100,
        format!(
            "{} of {} (t, k) moments outside [1, 2]{first}, max {max:.3}; K=20 moment t=50 → {:.3}, t=400 → {:.3}; decreasing in t for every k: {decreasing}; E[(π_t/π_0)²] t=100 → {m100:.3e}, t=400 → {m400:.3e}",
            outside.len(),
            values.len(),
            at(50, 20),
            at(400, 20),
        ),
    ))
}

fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Errors `q̂ − q` at stage 50 with exact inner values, per level.
fn outer_errors(k: usize, reps: u64) -> Result<Vec<Vec<f64>>> {
    let sim = ZeroNoise(NewsVendor::default());
    let cfg = AlgoConfig::new(Method::Green, 64, 1, k).with_alphas(ALPHAS.to_vec());
    let mut errors = vec![Vec::new(); ALPHAS.len()];
    for rep in 0..reps {
        let data = generate_stream(&InputModel::ExponentialRate, 1.0, 50, RngStreams::new(SEED), rep)?;
        let (mut q, mut report) =
            Quantifier::initialize(cfg.clone(), default_prior(Some(DEFAULT_BOX))?, sim, RngStreams::new(SEED).with_lane(k as u64), rep)?;
        for &x in &data {
            report = q.step(x)?;
        }
        let truths = report.truths.expect("closed-form truths");
        for ((e, (_, est)), truth) in errors.iter_mut().zip(&report.quantiles).zip(truths) {
            e.push(est - truth);
        }
    }
    Ok(errors)
}

/// Inner errors `q̂ − q̂_exact` of a single stage at the stage-50 posterior,
/// where `q̂_exact` uses the same θ-samples with exact `H`.
fn inner_errors(method: Method, m: usize, reps: u64) -> Result<Vec<Vec<f64>>> {
    let sim = NewsVendor::default();
    let cfg = AlgoConfig::new(method, m, 4, 1).with_alphas(ALPHAS.to_vec());
    let mut errors = vec![Vec::new(); ALPHAS.len()];
    for rep in 0..reps {
        let data = generate_stream(&InputModel::ExponentialRate, 1.0, 50, RngStreams::new(SEED), rep)?;
        let post: ConjugatePosterior = default_prior(Some(DEFAULT_BOX))?.update_many(&data)?;
        let (q, report) = Quantifier::initialize(cfg.clone(), post, sim, RngStreams::new(SEED).with_lane(m as u64), rep)?;
        let thetas = q.window()[0].thetas().to_vec();
        let exact: Vec<f64> = thetas.iter().map(|&th| sim.true_performance(th)).collect::<Result<_>>()?;
        let ecdf = weighted_cdf_log(&exact, &vec![0.0; exact.len()])?;
        for (e, (a, est)) in errors.iter_mut().zip(&report.quantiles) {
            e.push(est - ecdf.quantile(*a)?);
        }
    }
    Ok(errors)
}

fn rates() -> Result<Outcome> {
    let reps = 500;
    let (k2, k8) = (outer_errors(2, reps)?, outer_errors(8, reps)?);
    let (cis16, cis64) = (inner_errors(Method::Tlis2, 16, reps)?, inner_errors(Method::Tlis2, 64, reps)?);
    let (sm16, sm64) = (inner_errors(Method::DirectMc, 16, reps)?, inner_errors(Method::DirectMc, 64, reps)?);
    let mut ok = true;
    let mut parts = Vec::new();
    for i in 0..ALPHAS.len() {
        let outer = rmse(&k2[i]) / rmse(&k8[i]);
        let cis = rmse(&cis64[i]) / rmse(&cis16[i]);
        let slope = (rmse(&sm64[i]) / rmse(&sm16[i])).ln() / 4f64.ln();
        ok &= (1.4..=2.6).contains(&outer) && (0.3..=0.7).contains(&cis) && slope.abs() <= 0.2;
        parts.push(format!(
            "α={}: zero-noise RMSE K=2/K=8 {outer:.2}, CIS inner RMSE M=64/M=16 {cis:.2}, sample-mean slope {slope:+.2}",
            ALPHAS[i]
        ));
    }
    Ok(outcome(ok, parts.join("; ")))
}

fn budget() -> Result<Outcome> {
    let bad = budget_mismatches(SEED, 20)?;
    Ok(outcome(bad.is_empty(), format!("{} mismatches{}", bad.len(), bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default())))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("unbiasedness", unbiasedness),
        ("oracle-equivalence", oracle),
        ("ratio-moments", ratio_moments),
        ("rates", rates),
        ("budget", budget),
        ("exp1-ordering", exp1),
        ("exp2-ordering", exp2),
        ("table1-trend", table1),
        ("table2-trend", table2),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "{} {name}: {detail} [{:.1} s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
