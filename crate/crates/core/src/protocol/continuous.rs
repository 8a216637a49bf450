//! Repeated rounds in which some participants upgrade their priors and the
//! platform keeps only upgrades that lower the shared-set uniform value.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::participant::shared_uniform_value;
use super::round::{participant_settings, run_round_with, select_shared_set, RoundMetrics};
use crate::config::{ExperimentConfig, RosterEntry, UniformityFeatures};
use crate::dataset::{Dataset, OptimizedDataset};
use crate::error::Result;
use crate::priors::build_prior;
use crate::projection::sample_projection;
use crate::seed::{self, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousRound {
    pub metrics: RoundMetrics,
    /// Participants drawn to propose an upgrade this round.
    pub proposed: Vec<u32>,
    /// Proposals the platform kept.
    pub accepted: Vec<u32>,
    /// Uniform value of each participant's retained prior.
    pub retained_values: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone)]
pub struct ContinuousOutcome {
    pub rounds: Vec<ContinuousRound>,
    pub final_dataset: OptimizedDataset,
    pub final_roster: Vec<RosterEntry>,
}

/// Metric hook scored on each round's merged dataset (e.g. probe accuracy).
pub type RoundEvaluator<'a> = &'a mut dyn FnMut(&OptimizedDataset) -> Result<f64>;

/// Runs `cfg.continuous.rounds` rounds.
///
/// Every round after the first draws `ceil(p*K)` participants with a seeded
/// stream. Each proposes the next rung of the upgrade ladder; the platform
/// scores the proposal on the shared set and keeps it only if its uniform
/// value is strictly lower than the retained one. The round then re-runs
/// with the retained roster, so all targets are aligned to the current best
/// prior and retained values never increase.
pub fn run_continuous(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    mut evaluate: Option<RoundEvaluator<'_>>,
) -> Result<ContinuousOutcome> {
    cfg.validate()?;
    let c = &cfg.continuous;
    let k = cfg.k;
    let mut roster = cfg.resolved_roster(dataset.dim());
    let shared = select_shared_set(dataset, cfg.shared_fraction, cfg.role_seed(Role::SharedSet))?;
    let settings = participant_settings(cfg);
    let picks = ((c.upgrade_fraction * k as f64).ceil() as usize).min(k);

    let mut rounds = Vec::with_capacity(c.rounds);
    let mut retained: BTreeMap<u32, f64> = BTreeMap::new();
    let mut last = None;
    for r in 1..=c.rounds as u32 {
        let mut proposed = Vec::new();
        let mut accepted = Vec::new();
        if r > 1 && picks > 0 {
            let mut rng = seed::rng(seed::substream(cfg.role_seed(Role::Upgrade), u64::from(r)));
            proposed = index::sample(&mut rng, k, picks).into_iter().map(|i| i as u32).collect();
            proposed.sort_unstable();
            for &id in &proposed {
                let current = &roster[id as usize];
                let candidate = RosterEntry { prior: c.ladder.upgrade(&current.prior), ..current.clone() };
                if candidate == *current {
                    continue;
                }
                let prior = build_prior(&candidate.prior, Some(dataset))?;
                let w = match settings.uniformity.features {
                    UniformityFeatures::Projected => Some(sample_projection(
                        candidate.prior.out_dim,
                        cfg.n.expect("validated"),
                        cfg.projection_seed(&candidate),
                    )?),
                    UniformityFeatures::Raw => None,
                };
                let value = shared_uniform_value(&prior, w.as_ref(), &shared, &settings)?;
                if value < retained[&id] {
                    roster[id as usize] = candidate;
                    accepted.push(id);
                }
            }
        }

        let mut outcome = run_round_with(cfg, dataset, &roster, r)?;
        retained = outcome.metrics.uniform_values.clone();
        if let Some(eval) = evaluate.as_mut() {
            outcome.metrics.probe_accuracy = Some(eval(&outcome.merged)?);
        }
        rounds.push(ContinuousRound {
            metrics: outcome.metrics.clone(),
            proposed,
            accepted,
            retained_values: retained.clone(),
        });
        last = Some(outcome.merged);
    }
    Ok(ContinuousOutcome { rounds, final_dataset: last.expect("at least one round"), final_roster: roster })
}
