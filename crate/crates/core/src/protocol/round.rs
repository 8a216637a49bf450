use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::coordinator::{Coordinator, RosterInfo};
use super::participant::{fingerprint, Participant, ParticipantSettings};
use super::runtime::{drive_serial, drive_threaded};
use crate::alignment::{SharedSet, TransformationMatrix};
use crate::config::{ExperimentConfig, RosterEntry, ScheduleKind};
use crate::dataset::{partition, Dataset, OptimizedDataset, Shard, TargetSet};
use crate::error::{Error, Result};
use crate::priors::build_prior;
use crate::seed::{self, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub uniform_values: BTreeMap<u32, f64>,
    pub best_prior_id: u32,
    pub reference_id: Option<u32>,
    pub n: usize,
    pub merged_digest: String,
    pub probe_accuracy: Option<f64>,
    /// Squared residual of each fitted alignment on the shared set.
    pub alignment_residuals: BTreeMap<u32, f64>,
    pub phase_ms: BTreeMap<String, f64>,
}

impl RoundMetrics {
    /// One JSON object per metric: `{run_id, round, participant, metric, value}`.
    /// Timings are excluded.
    pub fn json_lines(&self, run_id: &str) -> Vec<String> {
        let line = |participant: Option<u32>, metric: &str, value: serde_json::Value| {
            json!({"run_id": run_id, "round": self.round, "participant": participant, "metric": metric, "value": value})
                .to_string()
        };
        let mut out = Vec::new();
        for (id, v) in &self.uniform_values {
            out.push(line(Some(*id), "uniform_value", json!(v)));
        }
        for (id, v) in &self.alignment_residuals {
            out.push(line(Some(*id), "alignment_residual", json!(v)));
        }
        out.push(line(None, "best_prior_id", json!(self.best_prior_id)));
        out.push(line(None, "reference_id", json!(self.reference_id)));
        out.push(line(None, "n", json!(self.n)));
        out.push(line(None, "merged_digest", json!(self.merged_digest)));
        if let Some(acc) = self.probe_accuracy {
            out.push(line(None, "probe_accuracy", json!(acc)));
        }
        out
    }

    /// Wall-clock lines, kept apart from [`Self::json_lines`] so that metric
    /// files stay byte-identical across reruns.
    pub fn timing_lines(&self, run_id: &str) -> Vec<String> {
        self.phase_ms
            .iter()
            .map(|(phase, ms)| {
                json!({"run_id": run_id, "round": self.round, "participant": null, "metric": format!("wall_ms.{phase}"), "value": ms})
                    .to_string()
            })
            .collect()
    }
}

/// Everything a finished round produced.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub merged: OptimizedDataset,
    pub metrics: RoundMetrics,
    pub shards: Vec<Shard>,
    pub shared_set: SharedSet,
    pub uploads: BTreeMap<u32, TargetSet>,
    pub transformations: BTreeMap<u32, TransformationMatrix>,
    pub roster: Vec<RosterEntry>,
}

/// A seeded subset of `round(fraction * N)` samples (at least two), in id
/// order.
pub fn select_shared_set(dataset: &Dataset, fraction: f64, seed: u64) -> Result<SharedSet> {
    let total = dataset.len();
    if total < 2 {
        return Err(Error::InsufficientData(total));
    }
    let size = ((fraction * total as f64).round() as usize).clamp(2, total);
    let mut rng = seed::rng(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, total, size).into_vec();
    picked.sort_unstable();
    SharedSet::new(picked.into_iter().map(|i| dataset.samples()[i].clone()).collect())
}

/// Runs one round with the configured roster.
pub fn run_round(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(OptimizedDataset, RoundMetrics)> {
    let roster = cfg.resolved_roster(dataset.dim());
    let out = run_round_with(cfg, dataset, &roster, 1)?;
    Ok((out.merged, out.metrics))
}

pub(crate) fn participant_settings(cfg: &ExperimentConfig) -> ParticipantSettings {
    ParticipantSettings {
        uniformity: cfg.uniformity.clone(),
        uniformity_seed: cfg.role_seed(Role::Uniformity),
        n: cfg.n,
        ridge_lambda: cfg.ridge_lambda,
        ridge_relative: cfg.ridge_relative,
        affine: cfg.affine,
        best_identity_projection: cfg.best_identity_projection,
    }
}

/// Runs one round with an explicit, already resolved roster (one entry per
/// participant). Labels in `dataset`, if any, are visible only to priors
/// that need them.
pub fn run_round_with(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    roster: &[RosterEntry],
    round: u32,
) -> Result<RoundOutcome> {
    cfg.validate()?;
    if roster.len() != cfg.k {
        return Err(Error::Config(format!("roster has {} entries for k={}", roster.len(), cfg.k)));
    }
    let shards = partition(dataset, cfg.k, cfg.role_seed(Role::Partition))?;
    let shared = select_shared_set(dataset, cfg.shared_fraction, cfg.role_seed(Role::SharedSet))?;
    let settings = participant_settings(cfg);

    let mut infos = Vec::with_capacity(cfg.k);
    let mut participants = Vec::with_capacity(cfg.k);
    for (i, entry) in roster.iter().enumerate() {
        let pseed = cfg.projection_seed(entry);
        let prior = build_prior(&entry.prior, Some(dataset))?;
        infos.push(RosterInfo {
            participant_id: i as u32,
            fingerprint: fingerprint(&entry.prior, pseed),
            out_dim: entry.prior.out_dim,
        });
        participants.push(Participant::new(&cfg.run_id, round, i as u32, entry, prior, pseed, settings.clone()));
    }

    let mut coord = Coordinator::new(
        &cfg.run_id,
        round,
        dataset.clone(),
        shards.clone(),
        shared.clone(),
        infos,
        cfg.alignment,
        cfg.n,
    )?;

    let p = &cfg.protocol;
    let participants = match p.schedule {
        ScheduleKind::Fifo => {
            drive_serial(&mut coord, &mut participants, None, p.transport)?;
            participants
        }
        ScheduleKind::Shuffled => {
            drive_serial(&mut coord, &mut participants, Some(p.schedule_seed), p.transport)?;
            participants
        }
        ScheduleKind::Threaded => {
            drive_threaded(&mut coord, participants, p.threads, p.transport, Duration::from_millis(p.timeout_ms))?
        }
    };

    let transformations: BTreeMap<u32, TransformationMatrix> =
        participants.iter().filter_map(|p| p.state().t.clone().map(|t| (p.id(), t))).collect();
    let metrics = RoundMetrics {
        round,
        uniform_values: coord.reports().iter().map(|(id, r)| (*id, r.value)).collect(),
        best_prior_id: coord.best().expect("merged round has a best prior"),
        reference_id: coord.reference(),
        n: coord.n().expect("merged round has n"),
        merged_digest: coord.merged().expect("merged").digest(),
        probe_accuracy: None,
        alignment_residuals: transformations
            .iter()
            .filter(|(_, t)| !t.is_identity())
            .map(|(id, t)| (*id, t.residual))
            .collect(),
        phase_ms: coord
            .phase_times()
            .iter()
            .map(|(ph, d)| (ph.as_str().to_string(), d.as_secs_f64() * 1e3))
            .collect(),
    };
    let uploads = coord.uploads().clone();
    Ok(RoundOutcome {
        merged: coord.into_merged().expect("merged"),
        metrics,
        shards,
        shared_set: shared,
        uploads,
        transformations,
        roster: roster.to_vec(),
    })
}
