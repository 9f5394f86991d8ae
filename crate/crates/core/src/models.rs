//! Simulation models: the news vendor, test stubs, and wrappers that remove
//! inner noise or count simulator calls.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::efd::{ConjugatePosterior, InputModel};
use crate::error::{Result, UqError};
use crate::streaming::SimBlock;

/// Shape of `θ ↦ H(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Unknown,
}

/// A stochastic simulator driven by one input draw per replication.
pub trait Simulator: Send + Sync {
    fn name(&self) -> &str;

    fn input_model(&self) -> InputModel;

    /// One replication at `θ`: the input `ξ ~ p(·|θ)` and the output `h(ξ)`.
    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)>;

    fn simulate<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<f64> {
        self.draw(theta, rng).map(|(_, h)| h)
    }

    /// Closed-form `H(θ) = E[h(ξ) | θ]`, where one is known.
    fn true_performance(&self, theta: f64) -> Result<f64> {
        let _ = theta;
        Err(UqError::Unsupported(format!("{} has no closed-form performance", self.name())))
    }

    fn monotonicity(&self) -> Monotonicity {
        Monotonicity::Unknown
    }
}

/// Run `n` replications at every θ and cache the CIS denominators.
pub fn simulate_block<S: Simulator + ?Sized, R: Rng + ?Sized>(
    sim: &S,
    thetas: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<SimBlock> {
    let mut inputs = Vec::with_capacity(thetas.len() * n);
    let mut outputs = Vec::with_capacity(thetas.len() * n);
    for &theta in thetas {
        for _ in 0..n {
            let (x, h) = sim.draw(theta, rng)?;
            inputs.push(x);
            outputs.push(h);
        }
    }
    SimBlock::new(&sim.input_model(), thetas, n, inputs, outputs)
}

/// News vendor with exponential demand: profit `p·min(q, D) − c·q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewsVendor {
    order: f64,
    price: f64,
    cost: f64,
}

impl Default for NewsVendor {
    fn default() -> Self {
        NewsVendor { order: 0.5, price: 1.5, cost: 1.0 }
    }
}

impl NewsVendor {
    pub fn new(order: f64, price: f64, cost: f64) -> Result<Self> {
        if !(order > 0.0 && order.is_finite()) {
            return Err(UqError::Config(format!("order quantity must be positive, got {order}")));
        }
        if !(cost > 0.0 && price > cost && price.is_finite()) {
            return Err(UqError::Config(format!("need price > cost > 0, got price {price}, cost {cost}")));
        }
        Ok(NewsVendor { order, price, cost })
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn profit(&self, demand: f64) -> f64 {
        self.price * demand.min(self.order) - self.cost * self.order
    }
}

impl Simulator for NewsVendor {
    fn name(&self) -> &str {
        "news-vendor"
    }

    fn input_model(&self) -> InputModel {
        InputModel::ExponentialRate
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)> {
        let d = InputModel::ExponentialRate.sample(theta, rng)?;
        Ok((d, self.profit(d)))
    }

    /// `p(1 − e^{−θq})/θ − cq`.
    fn true_performance(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(UqError::Domain(format!("demand rate must be positive, got {theta}")));
        }
        Ok(-self.price * (-theta * self.order).exp_m1() / theta - self.cost * self.order)
    }

    fn monotonicity(&self) -> Monotonicity {
        Monotonicity::Decreasing
    }
}

/// `h ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
    pub model: InputModel,
}

impl Simulator for ConstantModel {
    fn name(&self) -> &str {
        "constant"
    }

    fn input_model(&self) -> InputModel {
        self.model
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)> {
        Ok((self.model.sample(theta, rng)?, self.value))
    }

    fn true_performance(&self, theta: f64) -> Result<f64> {
        if !self.model.in_natural_space(theta) {
            return Err(UqError::Domain(format!("θ = {theta} outside the parameter space")));
        }
        Ok(self.value)
    }
}

/// `h(ξ) = ξ`, so `H(θ)` is the input mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub model: InputModel,
}

impl Simulator for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn input_model(&self) -> InputModel {
        self.model
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)> {
        let x = self.model.sample(theta, rng)?;
        Ok((x, x))
    }

    fn true_performance(&self, theta: f64) -> Result<f64> {
        if !self.model.in_natural_space(theta) {
            return Err(UqError::Domain(format!("θ = {theta} outside the parameter space")));
        }
        Ok(match self.model {
            InputModel::ExponentialRate => 1.0 / theta,
            InputModel::NormalKnownVariance { .. } => theta,
        })
    }

    fn monotonicity(&self) -> Monotonicity {
        match self.model {
            InputModel::ExponentialRate => Monotonicity::Decreasing,
            InputModel::NormalKnownVariance { .. } => Monotonicity::Increasing,
        }
    }
}

/// Replaces every output by the exact `H(θ)` of the wrapped model. The input
/// is still drawn so random streams advance exactly as for the noisy model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroNoise<S>(pub S);

impl<S: Simulator> Simulator for ZeroNoise<S> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn input_model(&self) -> InputModel {
        self.0.input_model()
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)> {
        let (x, _) = self.0.draw(theta, rng)?;
        Ok((x, self.0.true_performance(theta)?))
    }

    fn true_performance(&self, theta: f64) -> Result<f64> {
        self.0.true_performance(theta)
    }

    fn monotonicity(&self) -> Monotonicity {
        self.0.monotonicity()
    }
}

/// Counts calls to `draw`. Clones share the counter.
#[derive(Debug, Clone)]
pub struct CountingSimulator<S> {
    inner: S,
    calls: Arc<AtomicU64>,
}

impl<S> CountingSimulator<S> {
    pub fn new(inner: S) -> Self {
        CountingSimulator { inner, calls: Arc::new(AtomicU64::new(0)) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.calls)
    }
}

impl<S: Simulator> Simulator for CountingSimulator<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn input_model(&self) -> InputModel {
        self.inner.input_model()
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<(f64, f64)> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.draw(theta, rng)
    }

    fn true_performance(&self, theta: f64) -> Result<f64> {
        self.inner.true_performance(theta)
    }

    fn monotonicity(&self) -> Monotonicity {
        self.inner.monotonicity()
    }
}

/// The α-quantile of `H(θ)` under `θ ~ post`, mapped through a monotone `H`.
pub fn true_quantile<S: Simulator + ?Sized>(sim: &S, post: &ConjugatePosterior, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(UqError::Domain(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    let level = match sim.monotonicity() {
        Monotonicity::Increasing => alpha,
        Monotonicity::Decreasing => 1.0 - alpha,
        Monotonicity::Unknown => {
            return Err(UqError::Unsupported(format!("{} does not declare a monotone H", sim.name())))
        }
    };
    sim.true_performance(post.quantile(level)?)
}
