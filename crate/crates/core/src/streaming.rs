//! Rolling window of recent time stages.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::efd::{ConjugatePosterior, InputModel};
use crate::error::{Result, UqError};

/// Inner-layer simulation outputs of one stage, stored row-major as `M × N`
/// (row `i` holds the `N` replications run at `θ^i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBlock {
    m: usize,
    n: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    /// `ln p(ξ^{i,j} | θ^i)`, the CIS denominators.
    log_densities: Vec<f64>,
}

impl SimBlock {
    /// Build a block and cache the denominators for `thetas`.
    pub fn new(
        model: &InputModel,
        thetas: &[f64],
        n: usize,
        inputs: Vec<f64>,
        outputs: Vec<f64>,
    ) -> Result<Self> {
        let m = thetas.len();
        if m == 0 || n == 0 {
            return Err(UqError::Usage("simulation block must be at least 1 × 1".into()));
        }
        if inputs.len() != m * n || outputs.len() != m * n {
            return Err(UqError::Usage(format!(
                "simulation block shape mismatch: expected {m}×{n}, got {} inputs and {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if let Some(bad) = outputs.iter().find(|h| !h.is_finite()) {
            return Err(UqError::Simulation(format!("non-finite simulation output {bad}")));
        }
        let mut log_densities = Vec::with_capacity(m * n);
        for (i, &theta) in thetas.iter().enumerate() {
            for &x in &inputs[i * n..(i + 1) * n] {
                log_densities.push(model.log_pdf(x, theta)?);
            }
        }
        Ok(SimBlock { m, n, inputs, outputs, log_densities })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn replications(&self) -> usize {
        self.n
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn log_densities(&self) -> &[f64] {
        &self.log_densities
    }

    pub fn row_outputs(&self, i: usize) -> &[f64] {
        &self.outputs[i * self.n..(i + 1) * self.n]
    }

    /// Recompute every denominator and compare bit for bit.
    pub fn cache_matches(&self, model: &InputModel, thetas: &[f64]) -> bool {
        thetas.len() == self.m
            && thetas.iter().enumerate().all(|(i, &theta)| {
                (0..self.n).all(|j| {
                    let k = i * self.n + j;
                    model
                        .log_pdf(self.inputs[k], theta)
                        .is_ok_and(|v| v.to_bits() == self.log_densities[k].to_bits())
                })
            })
    }
}

/// One time stage: its θ-samples, the posterior they were drawn from, their
/// performance estimates, and optionally the simulations run at this stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    stage: u64,
    thetas: Vec<f64>,
    posterior: ConjugatePosterior,
    estimates: Vec<f64>,
    sims: Option<SimBlock>,
}

impl StageRecord {
    pub fn new(
        stage: u64,
        thetas: Vec<f64>,
        posterior: ConjugatePosterior,
        estimates: Vec<f64>,
        sims: Option<SimBlock>,
    ) -> Result<Self> {
        if thetas.is_empty() {
            return Err(UqError::Usage("a stage needs at least one θ-sample".into()));
        }
        if estimates.len() != thetas.len() {
            return Err(UqError::Usage(format!(
                "{} estimates for {} θ-samples",
                estimates.len(),
                thetas.len()
            )));
        }
        if let Some(bad) = estimates.iter().find(|h| !h.is_finite()) {
            return Err(UqError::Simulation(format!("non-finite performance estimate {bad}")));
        }
        if let Some(block) = &sims {
            if block.rows() != thetas.len() {
                return Err(UqError::Usage("simulation block rows must match θ-samples".into()));
            }
        }
        Ok(StageRecord { stage, thetas, posterior, estimates, sims })
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn posterior(&self) -> &ConjugatePosterior {
        &self.posterior
    }

    /// Performance estimates `Ĥ(θ^i)`, aligned with [`Self::thetas`].
    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn sims(&self) -> Option<&SimBlock> {
        self.sims.as_ref()
    }

    /// Drop the simulation block, keeping θ-samples and estimates.
    pub fn without_sims(mut self) -> Self {
        self.sims = None;
        self
    }
}

/// Ring of the most recent `K` stage records plus the last `K` data points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBuffer {
    capacity: usize,
    records: VecDeque<StageRecord>,
    data: VecDeque<f64>,
}

const SNAPSHOT_FORMAT: &str = "uqstream-stage-buffer";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    buffer: StageBuffer,
}

impl StageBuffer {
    /// `capacity` is the reuse window `K ≥ 1`.
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(UqError::Usage("reuse window K must be at least 1".into()));
        }
        Ok(StageBuffer { capacity, records: VecDeque::with_capacity(capacity), data: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn newest_stage(&self) -> Option<u64> {
        self.records.back().map(StageRecord::stage)
    }

    /// Append the next stage, evicting the oldest once the window is full.
    pub fn push_stage(&mut self, rec: StageRecord) -> Result<()> {
        // an empty buffer starts wherever the stream currently is
        if let Some(expected) = self.newest_stage().map(|s| s + 1) {
            if rec.stage() != expected {
                return Err(UqError::Usage(format!(
                    "stage {} pushed out of order, expected {expected}",
                    rec.stage()
                )));
            }
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(rec);
        Ok(())
    }

    /// Records oldest first, newest last.
    pub fn stages(&self) -> impl ExactSizeIterator<Item = &StageRecord> + DoubleEndedIterator {
        self.records.iter()
    }

    pub fn newest(&self) -> Option<&StageRecord> {
        self.records.back()
    }

    /// Keep the observation for diagnostics and likelihood-product weights.
    pub fn push_datum(&mut self, x: f64) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(x);
    }

    /// Retained data points, oldest first. Holds at most `K` values.
    pub fn data(&self) -> impl ExactSizeIterator<Item = &f64> {
        self.data.iter()
    }

    /// The data that arrived after `stage`, given that `current` stages have passed.
    pub fn data_since(&self, stage: u64, current: u64) -> Result<Vec<f64>> {
        let k = current.checked_sub(stage).ok_or_else(|| {
            UqError::Usage(format!("stage {stage} lies after the current stage {current}"))
        })? as usize;
        if k > self.data.len() {
            return Err(UqError::Usage(format!(
                "need {k} data points after stage {stage}, only {} retained",
                self.data.len()
            )));
        }
        Ok(self.data.iter().skip(self.data.len() - k).copied().collect())
    }

    /// Versioned, self-describing JSON snapshot.
    pub fn to_snapshot(&self) -> Result<String> {
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            buffer: self.clone(),
        };
        serde_json::to_string(&snap).map_err(|e| UqError::Snapshot(e.to_string()))
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let header: serde_json::Value =
            serde_json::from_str(text).map_err(|e| UqError::Snapshot(e.to_string()))?;
        if header.get("format").and_then(|f| f.as_str()) != Some(SNAPSHOT_FORMAT) {
            return Err(UqError::Snapshot("not a stage-buffer snapshot".into()));
        }
        match header.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SNAPSHOT_VERSION) => {}
            other => return Err(UqError::Snapshot(format!("unsupported snapshot version {other:?}"))),
        }
        let snap: Snapshot =
            serde_json::from_value(header).map_err(|e| UqError::Snapshot(e.to_string()))?;
        let buf = snap.buffer;
        if buf.capacity == 0 || buf.records.len() > buf.capacity {
            return Err(UqError::Snapshot("buffer exceeds its capacity".into()));
        }
        let consecutive = buf.records.iter().zip(buf.records.iter().skip(1)).all(|(a, b)| b.stage == a.stage + 1);
        if !consecutive {
            return Err(UqError::Snapshot("stage indices are not consecutive".into()));
        }
        Ok(buf)
    }
}
