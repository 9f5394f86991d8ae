//! Brute-force evaluation of the two-layer CDF from `statrs` densities, shared
//! by the oracle test and the acceptance gate.

use std::sync::{Arc, Mutex};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Exp, Gamma};
use uqstream_core::algorithms::{AlgoConfig, Method, Quantifier};
use uqstream_core::efd::{ConjugatePosterior, InputModel, ParamBox};
use uqstream_core::models::{NewsVendor, Simulator};
use uqstream_core::rng::RngStreams;
use uqstream_core::Result;

/// Logs every `(θ, ξ, h)` the pipeline asks for.
#[derive(Clone)]
struct Recorder {
    inner: NewsVendor,
    log: Arc<Mutex<Vec<(f64, f64, f64)>>>,
}

impl Simulator for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }

    fn input_model(&self) -> InputModel {
        InputModel::ExponentialRate
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)> {
        let out = self.inner.draw(theta, rng)?;
        self.log.lock().unwrap().push((theta, out.0, out.1));
        Ok(out)
    }
}

/// Gamma posterior density, optionally truncated to `[lo, hi]`.
struct Posterior {
    shape: f64,
    rate: f64,
    bx: Option<(f64, f64)>,
}

impl Posterior {
    fn after(&self, data: &[f64]) -> Posterior {
        Posterior { shape: self.shape + data.len() as f64, rate: self.rate + data.iter().sum::<f64>(), bx: self.bx }
    }

    fn pdf(&self, theta: f64) -> f64 {
        let g = Gamma::new(self.shape, self.rate).unwrap();
        match self.bx {
            Some((lo, hi)) => g.pdf(theta) / (g.cdf(hi) - g.cdf(lo)),
            None => g.pdf(theta),
        }
    }
}

fn exp_pdf(x: f64, rate: f64) -> f64 {
    Exp::new(rate).unwrap().pdf(x)
}

/// Largest `|Ĝ_pipeline(h) − Ĝ_oracle(h)|` over `instances` random small
/// tlis2 runs (M ≤ 5, K ≤ 3, N ≤ 4), probed at every estimate and midpoint.
pub fn max_cdf_deviation(seed: u64, instances: u64) -> f64 {
    let mut meta = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let m = meta.random_range(1..=5);
        let k = meta.random_range(1..=3);
        let n = meta.random_range(1..=4);
        let steps = meta.random_range(k as u64..=k as u64 + 6);
        let (a0, b0) = (meta.random_range(1.0..4.0), meta.random_range(0.5..3.0));
        let bx = (inst % 2 == 1).then_some((0.2, 6.0));

        let mut prior = ConjugatePosterior::gamma(a0, b0).unwrap();
        if let Some((lo, hi)) = bx {
            prior = prior.with_truncation(ParamBox::new(lo, hi).unwrap()).unwrap();
        }
        let data: Vec<f64> = (0..steps).map(|_| -meta.random::<f64>().ln()).collect();

        let sim = Recorder { inner: NewsVendor::default(), log: Arc::default() };
        let cfg = AlgoConfig::new(Method::Tlis2, m, n, k);
        let (mut q, _) = Quantifier::initialize(cfg, prior, sim.clone(), RngStreams::new(inst), inst).unwrap();
        for &x in &data {
            q.step(x).unwrap();
        }
        let ecdf = q.ecdf().expect("ecdf");

        let log = sim.log.lock().unwrap().clone();
        assert_eq!(log.len() as u64, (steps + 1) * (m * n) as u64);
        let base = Posterior { shape: a0, rate: b0, bx };
        let current = base.after(&data);

        let mut values = Vec::new();
        let mut weights = Vec::new();
        for s in steps + 1 - k as u64..=steps {
            let block = &log[s as usize * m * n..(s as usize + 1) * m * n];
            let past = base.after(&data[..s as usize]);
            for i in 0..m {
                let theta = block[i * n].0;
                let mut h = 0.0;
                for l in 0..m {
                    for j in 0..n {
                        let (theta_l, x, out) = block[l * n + j];
                        h += exp_pdf(x, theta) / exp_pdf(x, theta_l) * out;
                    }
                }
                values.push(h / (m * n) as f64);
                weights.push(current.pdf(theta) / past.pdf(theta));
            }
        }
        let total: f64 = weights.iter().sum();
        let mut probes = values.clone();
        probes.sort_by(f64::total_cmp);
        let mids: Vec<f64> = probes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        probes.extend(mids);
        probes.push(probes[0] - 1.0);
        for &h in &probes {
            let want: f64 = values.iter().zip(&weights).filter(|(v, _)| **v <= h + 1e-13).map(|(_, w)| w).sum::<f64>() / total;
            let got = ecdf.cdf(h + 1e-13);
            worst = worst.max((got - want).abs());
        }
    }
    worst
}
