//! Outer-layer stage weights, inner-layer cross importance sampling, and the
//! weighted empirical CDF used for quantiles and credible intervals.

use serde::{Deserialize, Serialize};

use crate::efd::{ConjugatePosterior, InputModel};
use crate::error::{Result, UqError};
use crate::streaming::{SimBlock, StageRecord};

/// How stage weights `w_{t|t−k}` are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `π_t(θ) / π_{t−k}(θ)` from closed-form posterior densities. Unbiased.
    #[default]
    ExactRatio,
    /// `∏ p(ξ_τ | θ)` over the data that arrived after the stage, rescaled so
    /// that the mean weight within the stage is one. Needs no posterior
    /// normalizers but introduces an O(1/M) bias.
    LikelihoodProduct,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `ln w_{t|t−k}^i = ln π_t(θ^i) − ln π_{t−k}(θ^i)` for every sample of `stage`.
pub fn exact_log_weights(current: &ConjugatePosterior, stage: &StageRecord) -> Result<Vec<f64>> {
    let past = stage.posterior();
    if !current.same_family(past) {
        return Err(UqError::Usage("stage posterior and current posterior differ in family".into()));
    }
    if current == past {
        return Ok(vec![0.0; stage.thetas().len()]);
    }
    stage
        .thetas()
        .iter()
        .map(|&theta| Ok(current.log_pdf(theta)? - past.log_pdf(theta)?))
        .collect()
}

/// Likelihood-product weights, shifted so the mean of `exp(·)` over the stage is one.
/// `data_since` holds the observations that arrived after the stage.
pub fn likelihood_log_weights(
    model: &InputModel,
    stage: &StageRecord,
    data_since: &[f64],
) -> Result<Vec<f64>> {
    let raw = stage
        .thetas()
        .iter()
        .map(|&theta| data_since.iter().map(|&x| model.log_pdf(x, theta)).sum::<Result<f64>>())
        .collect::<Result<Vec<_>>>()?;
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(UqError::DegenerateWeights("every likelihood product vanished".into()));
    }
    let mean_shifted = raw.iter().map(|lw| (lw - max).exp()).sum::<f64>() / raw.len() as f64;
    let shift = max + mean_shifted.ln();
    Ok(raw.into_iter().map(|lw| lw - shift).collect())
}

/// Dispatch on [`WeightMode`].
pub fn outer_log_weights(
    current: &ConjugatePosterior,
    stage: &StageRecord,
    mode: WeightMode,
    data_since: &[f64],
) -> Result<Vec<f64>> {
    match mode {
        WeightMode::ExactRatio => exact_log_weights(current, stage),
        WeightMode::LikelihoodProduct => {
            if !current.same_family(stage.posterior()) {
                return Err(UqError::Usage("stage posterior and current posterior differ in family".into()));
            }
            likelihood_log_weights(&current.input_model(), stage, data_since)
        }
    }
}

/// A proposal set prepared for cross importance sampling. Holds, per
/// simulation output, `T(ξ)`, `ln κ(ξ) − ln p(ξ | θ^l)` and `h(ξ)`, so each
/// target costs one fused multiply-add and one `exp` per output.
#[derive(Debug, Clone)]
pub struct CisProposal {
    model: InputModel,
    suff: Vec<f64>,
    offset: Vec<f64>,
    outputs: Vec<f64>,
}

impl CisProposal {
    pub fn new(model: InputModel, stage: &StageRecord) -> Result<Self> {
        let block = stage
            .sims()
            .ok_or_else(|| UqError::Usage(format!("stage {} has no simulation block", stage.stage())))?;
        Ok(Self::from_block(model, block))
    }

    /// Proposal from a block whose denominators were cached under `model`.
    pub fn from_block(model: InputModel, block: &SimBlock) -> Self {
        let suff = block.inputs().iter().map(|&x| model.sufficient_stat(x)).collect();
        let offset = block
            .inputs()
            .iter()
            .zip(block.log_densities())
            .map(|(&x, &den)| model.log_base_measure(x) - den)
            .collect();
        CisProposal { model, suff, offset, outputs: block.outputs().to_vec() }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// `Ĥ(θ) = (1/NM) Σ_{l,j} p(ξ^{l,j}|θ) / p(ξ^{l,j}|θ^l) · h(ξ^{l,j})`.
    pub fn estimate(&self, theta: f64) -> Result<f64> {
        if !self.model.in_natural_space(theta) {
            return Err(UqError::Domain(format!("CIS target θ = {theta} outside the parameter space")));
        }
        let a = self.model.log_partition(theta);
        let mut acc = CompensatedSum::default();
        for ((&s, &c), &h) in self.suff.iter().zip(&self.offset).zip(&self.outputs) {
            acc.add((theta.mul_add(s, c) - a).exp() * h);
        }
        Ok(acc.value() / self.outputs.len() as f64)
    }

    pub fn estimate_all(&self, targets: &[f64]) -> Result<Vec<f64>> {
        targets.iter().map(|&t| self.estimate(t)).collect()
    }
}

/// Cross importance sampling estimates for `targets` against the simulations of `proposal`.
pub fn cis_estimate(targets: &[f64], proposal: &StageRecord) -> Result<Vec<f64>> {
    CisProposal::new(proposal.posterior().input_model(), proposal)?.estimate_all(targets)
}

/// Per-θ sample means `H̄(θ^i) = (1/N) Σ_j h(ξ^{i,j})`.
pub fn sample_mean_estimate(stage: &StageRecord) -> Result<Vec<f64>> {
    let block = stage
        .sims()
        .ok_or_else(|| UqError::Usage(format!("stage {} has no simulation block", stage.stage())))?;
    Ok(block_means(block))
}

/// Row means of a simulation block, computed as `h₁ + mean(h − h₁)` so a
/// row of identical outputs returns that output bit for bit.
pub fn block_means(block: &SimBlock) -> Vec<f64> {
    (0..block.rows())
        .map(|i| {
            let row = block.row_outputs(i);
            let mut acc = CompensatedSum::default();
            row.iter().for_each(|&h| acc.add(h - row[0]));
            row[0] + acc.value() / row.len() as f64
        })
        .collect()
}

/// Weighted empirical CDF over distinct values (tied values have merged weights).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEcdf {
    values: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
    /// Stored weights are `exp(ln w − log_scale)`.
    log_scale: f64,
    entries: usize,
    /// Positions of the input entries after a stable sort by value.
    order: Vec<usize>,
}

/// Build `Ĝ(h) = Σ_{v_i ≤ h} w_i / Σ w_i`. Inputs are expected in
/// `(stage, sample)` order; that order is kept within ties.
pub fn weighted_cdf(values: &[f64], weights: &[f64]) -> Result<WeightedEcdf> {
    if values.len() != weights.len() {
        return Err(UqError::Usage(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if values.is_empty() {
        return Err(UqError::Usage("empty ECDF".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(UqError::Input(format!("non-finite ECDF value {v}")));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(UqError::DegenerateWeights(format!("weight {w} is not a finite nonnegative number")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut merged_values: Vec<f64> = Vec::with_capacity(values.len());
    let mut merged_weights: Vec<f64> = Vec::with_capacity(values.len());
    for &i in &order {
        match merged_values.last() {
            Some(&last) if last == values[i] => *merged_weights.last_mut().unwrap() += weights[i],
            _ => {
                merged_values.push(values[i]);
                merged_weights.push(weights[i]);
            }
        }
    }
    let mut cumulative = Vec::with_capacity(merged_weights.len());
    let mut acc = CompensatedSum::default();
    for &w in &merged_weights {
        acc.add(w);
        cumulative.push(acc.value());
    }
    let total = *cumulative.last().unwrap();
    if !(total > 0.0) {
        return Err(UqError::DegenerateWeights("total weight is zero".into()));
    }
    Ok(WeightedEcdf {
        values: merged_values,
        weights: merged_weights,
        cumulative,
        total,
        log_scale: 0.0,
        entries: values.len(),
        order,
    })
}

/// [`weighted_cdf`] from log-weights, shifted by their maximum so that
/// weights beyond the `f64` range keep their relative sizes.
pub fn weighted_cdf_log(values: &[f64], log_weights: &[f64]) -> Result<WeightedEcdf> {
    if let Some(lw) = log_weights.iter().find(|lw| lw.is_nan() || **lw == f64::INFINITY) {
        return Err(UqError::DegenerateWeights(format!("log-weight {lw}")));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(UqError::DegenerateWeights("total weight is zero".into()));
    }
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let mut ecdf = weighted_cdf(values, &weights)?;
    ecdf.log_scale = max;
    Ok(ecdf)
}

impl WeightedEcdf {
    /// Distinct values, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Merged (unnormalized) weight of each distinct value.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ w_i` on the original weight scale.
    pub fn total_weight(&self) -> f64 {
        self.total * self.log_scale.exp()
    }

    /// Number of weighted samples before ties were merged.
    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn sorted_order(&self) -> &[usize] {
        &self.order
    }

    fn mass_at_or_below(&self, h: f64) -> f64 {
        let idx = self.values.partition_point(|&v| v <= h);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Self-normalized `Ĝ(h)`.
    pub fn cdf(&self, h: f64) -> f64 {
        if h >= *self.values.last().unwrap() {
            return 1.0;
        }
        self.mass_at_or_below(h) / self.total
    }

    /// `Σ_{v_i ≤ h} w_i / (number of entries)`: the estimator divided by the
    /// nominal sample count `KM` instead of the realized weight total.
    pub fn unnormalized_cdf(&self, h: f64) -> f64 {
        (self.mass_at_or_below(h).ln() + self.log_scale).exp() / self.entries as f64
    }

    /// `inf { h : Ĝ(h) ≥ α }`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(UqError::Domain(format!("quantile level must lie in (0, 1), got {alpha}")));
        }
        let idx = self.cumulative.partition_point(|&c| c / self.total < alpha);
        Ok(self.values[idx.min(self.values.len() - 1)])
    }

    /// `(q(α/2), q(1 − α/2))`.
    pub fn credible_interval(&self, alpha: f64) -> Result<(f64, f64)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(UqError::Domain(format!("credible level α must lie in (0, 1), got {alpha}")));
        }
        Ok((self.quantile(alpha / 2.0)?, self.quantile(1.0 - alpha / 2.0)?))
    }
}

pub fn weighted_quantile(ecdf: &WeightedEcdf, alpha: f64) -> Result<f64> {
    ecdf.quantile(alpha)
}

pub fn credible_interval(ecdf: &WeightedEcdf, alpha: f64) -> Result<(f64, f64)> {
    ecdf.credible_interval(alpha)
}

/// Summary of a set of importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub count: usize,
    pub mean: f64,
    /// Population variance of the weights.
    pub variance: f64,
    /// Mean of the squared weights.
    pub second_moment: f64,
    /// `(Σw)² / Σw²`.
    pub ess: f64,
}

/// Diagnostics of `exp(log_weights)`. The effective sample size is computed
/// after a max shift, so it survives weights that would overflow.
pub fn weight_diagnostics(log_weights: &[f64]) -> Result<WeightDiagnostics> {
    if log_weights.is_empty() {
        return Err(UqError::Usage("weight diagnostics need at least one weight".into()));
    }
    let n = log_weights.len() as f64;
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ess = if max == f64::NEG_INFINITY {
        0.0
    } else {
        let (mut s1, mut s2) = (CompensatedSum::default(), CompensatedSum::default());
        for &lw in log_weights {
            let w = (lw - max).exp();
            s1.add(w);
            s2.add(w * w);
        }
        s1.value() * s1.value() / s2.value()
    };
    let (mut s1, mut s2) = (CompensatedSum::default(), CompensatedSum::default());
    for &lw in log_weights {
        let w = lw.exp();
        s1.add(w);
        s2.add(w * w);
    }
    let mean = s1.value() / n;
    let second_moment = s2.value() / n;
    Ok(WeightDiagnostics {
        count: log_weights.len(),
        mean,
        variance: (second_moment - mean * mean).max(0.0),
        second_moment,
        ess,
    })
}
