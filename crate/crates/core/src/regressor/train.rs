//! Mini-batch training under a model-space loss.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::LossMetric;
use super::network::normalize_batch;
use super::optim::AdaDelta;
use super::state::RegressorState;
use crate::corpus::{stream_rng, CorpusShard};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: AdaDelta,
    /// Seed of the shuffled sampling order.
    pub seed: u64,
    /// Interval, in iterations, between loss-trace rows.
    pub trace_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            optimizer: AdaDelta::default(),
            seed: 5,
            trace_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.trace_every == 0 {
            return Err(Error::InvalidConfig(
                "batch size and trace interval must be positive".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// `(iteration, mean loss over the iterations since the previous row)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<(u64, f64)>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in &self.rows {
            writeln!(s, "{i},{l}").unwrap();
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Visits corpus records in a fresh seeded permutation every epoch. The
/// sample drawn at global position `k` depends only on `(seed, k, n)`, so a
/// run split into several calls matches one uninterrupted run.
struct Cursor {
    n: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
}

impl Cursor {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            epoch: u64::MAX,
            perm: Vec::new(),
        }
    }

    fn at(&mut self, k: u64) -> usize {
        let epoch = k / self.n as u64;
        if epoch != self.epoch {
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut stream_rng(self.seed, epoch, 0));
            self.epoch = epoch;
        }
        self.perm[(k % self.n as u64) as usize]
    }
}

/// One optimizer step on the given records; returns the batch loss.
pub fn train_step(
    state: &mut RegressorState,
    corpus: &CorpusShard,
    indices: &[usize],
    metric: &LossMetric,
    optimizer: &AdaDelta,
) -> Result<f64> {
    let r = state.spec().input_resolution;
    let input = normalize_batch(indices.iter().map(|&i| &corpus.records[i].image), r)?;
    let target: Vec<f32> = indices
        .iter()
        .flat_map(|&i| corpus.records[i].params.iter().copied())
        .collect();
    let (loss, grads) = state.network.gradients(input, |pred| {
        let (loss, g) = metric.batch(&pred.data, &target)?;
        Ok((loss, g.into_iter().map(|v| v as f32).collect()))
    })?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteGradient(0));
    }
    let mut weights: Vec<&mut [f32]> = state
        .network
        .params
        .iter_mut()
        .map(|p| p.data.as_mut_slice())
        .collect();
    optimizer.step(&mut weights, &grads, &mut state.accumulators)?;
    state.iteration += 1;
    Ok(loss)
}

/// Runs `iterations` optimizer steps on batches drawn from `corpus`. The trace
/// holds the mean loss of each `trace_every` window of global iterations, plus
/// a final partial window when the run stops between two boundaries.
pub fn train(
    state: &mut RegressorState,
    corpus: &CorpusShard,
    metric: &LossMetric,
    config: &TrainConfig,
    iterations: usize,
) -> Result<LossTrace> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    corpus.ensure_m(state.output_dim())?;
    if metric.dim() != state.output_dim() {
        return Err(Error::mismatch("loss metric", state.output_dim(), metric.dim()));
    }
    let b = config.batch_size;
    let mut cursor = Cursor::new(corpus.len(), config.seed);
    let mut trace = LossTrace::default();
    let (mut window_sum, mut window_len) = (0.0, 0u64);
    let mut indices = vec![0; b];
    for _ in 0..iterations {
        let start = state.iteration * b as u64;
        for (j, slot) in indices.iter_mut().enumerate() {
            *slot = cursor.at(start + j as u64);
        }
        window_sum += train_step(state, corpus, &indices, metric, &config.optimizer)?;
        window_len += 1;
        if state.iteration.is_multiple_of(config.trace_every) {
            trace.rows.push((state.iteration, window_sum / window_len as f64));
            window_sum = 0.0;
            window_len = 0;
        }
    }
    if window_len > 0 {
        trace.rows.push((state.iteration, window_sum / window_len as f64));
    }
    Ok(trace)
}
