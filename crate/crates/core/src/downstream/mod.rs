//! Downstream evaluation: train a model on optimized data, probe its
//! representations, and rank-correlate quality signals.

pub mod benchmark;
pub mod model;
pub mod probe;
pub mod spearman;

pub use benchmark::{make_synthetic_benchmark, BenchmarkSpec, EvalSet};
pub use model::{train_model, train_on_optimized, DownstreamModel, ModelConfig, TrainLoss};
pub use probe::{linear_probe, probe_inputs, probe_representations, ProbeConfig, ProbeResult};
pub use spearman::{average_ranks, spearman};

use crate::dataset::OptimizedDataset;
use crate::error::Result;

/// Trains on `data` and probes on `eval` in one step.
pub fn train_and_probe(
    data: &OptimizedDataset,
    eval: &EvalSet,
    model: &ModelConfig,
    probe: &ProbeConfig,
    train_seed: u64,
    probe_seed: u64,
) -> Result<ProbeResult> {
    let trained = train_on_optimized(data, model, model.epochs, train_seed)?;
    linear_probe(&trained, eval, probe_seed, probe)
}
