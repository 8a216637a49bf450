//! The platform: distributes shards, picks the best prior, relays the
//! reference targets and merges uploads.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::message::{Body, Endpoint, Message, Reference};
use super::Phase;
use crate::alignment::SharedSet;
use crate::config::AlignmentStrategy;
use crate::dataset::{merge, Dataset, OptimizedDataset, Shard, TargetSet};
use crate::error::{Error, Result};
use crate::uniformity::{rank_reports, select_best_prior, UniformValueReport};

/// What the platform knows about each participant before the round.
#[derive(Debug, Clone, PartialEq)]
pub struct RosterInfo {
    pub participant_id: u32,
    pub fingerprint: String,
    pub out_dim: usize,
}

/// Read-only snapshot of the platform's progress.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorState {
    pub phase: Phase,
    pub roster: Vec<RosterInfo>,
    pub pending_shard_ids: Vec<u32>,
    pub best_prior_id: Option<u32>,
    pub reference_id: Option<u32>,
    pub n: Option<usize>,
}

#[derive(Debug)]
pub struct Coordinator {
    run_id: String,
    round: u32,
    phase: Phase,
    dataset: Dataset,
    shards: Vec<Shard>,
    shared: SharedSet,
    roster: Vec<RosterInfo>,
    strategy: AlignmentStrategy,
    n_override: Option<usize>,
    reports: BTreeMap<u32, UniformValueReport>,
    best: Option<u32>,
    reference: Option<u32>,
    n: Option<usize>,
    relayed: bool,
    uploads: BTreeMap<u32, TargetSet>,
    upload_values: BTreeMap<u32, f64>,
    merged: Option<OptimizedDataset>,
    phase_started: Instant,
    phase_times: Vec<(Phase, Duration)>,
}

impl Coordinator {
    /// `shards[i]` goes to participant `i`; `roster` must list ids `0..K`.
    pub fn new(
        run_id: &str,
        round: u32,
        dataset: Dataset,
        shards: Vec<Shard>,
        shared: SharedSet,
        roster: Vec<RosterInfo>,
        strategy: AlignmentStrategy,
        n_override: Option<usize>,
    ) -> Result<Self> {
        if roster.is_empty() || roster.len() != shards.len() {
            return Err(Error::Protocol {
                phase: Phase::Distributing,
                reason: format!("{} participants for {} shards", roster.len(), shards.len()),
            });
        }
        for (i, r) in roster.iter().enumerate() {
            if r.participant_id as usize != i || shards[i].shard_id as usize != i {
                return Err(Error::Protocol {
                    phase: Phase::Distributing,
                    reason: "participants and shards must be numbered 0..K".into(),
                });
            }
        }
        Ok(Self {
            run_id: run_id.to_string(),
            round,
            phase: Phase::Distributing,
            dataset,
            shards,
            shared,
            roster,
            strategy,
            n_override,
            reports: BTreeMap::new(),
            best: None,
            reference: None,
            n: None,
            relayed: false,
            uploads: BTreeMap::new(),
            upload_values: BTreeMap::new(),
            merged: None,
            phase_started: Instant::now(),
            phase_times: Vec::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn k(&self) -> usize {
        self.roster.len()
    }

    pub fn state(&self) -> CoordinatorState {
        CoordinatorState {
            phase: self.phase,
            roster: self.roster.clone(),
            pending_shard_ids: self.pending_ids(),
            best_prior_id: self.best,
            reference_id: self.reference,
            n: self.n,
        }
    }

    /// Participants the platform is still waiting on in the current phase.
    pub fn pending_ids(&self) -> Vec<u32> {
        let done: &dyn Fn(u32) -> bool = match self.phase {
            Phase::Distributing | Phase::CollectingReports => &|id| self.reports.contains_key(&id),
            Phase::AwaitingUploads => &|id| self.uploads.contains_key(&id),
            Phase::Merged => &|_| true,
        };
        self.roster.iter().map(|r| r.participant_id).filter(|&id| !done(id)).collect()
    }

    pub fn reports(&self) -> &BTreeMap<u32, UniformValueReport> {
        &self.reports
    }

    pub fn uploads(&self) -> &BTreeMap<u32, TargetSet> {
        &self.uploads
    }

    pub fn best(&self) -> Option<u32> {
        self.best
    }

    pub fn reference(&self) -> Option<u32> {
        self.reference
    }

    pub fn n(&self) -> Option<usize> {
        self.n
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shared_set(&self) -> &SharedSet {
        &self.shared
    }

    pub fn phase_times(&self) -> &[(Phase, Duration)] {
        &self.phase_times
    }

    pub fn merged(&self) -> Option<&OptimizedDataset> {
        self.merged.as_ref()
    }

    pub fn into_merged(self) -> Option<OptimizedDataset> {
        self.merged
    }

    fn advance(&mut self, next: Phase) {
        debug_assert!(next > self.phase);
        let now = Instant::now();
        self.phase_times.push((self.phase, now - self.phase_started));
        self.phase_started = now;
        self.phase = next;
    }

    fn send(&self, to: u32, body: Body) -> Message {
        Message {
            run_id: self.run_id.clone(),
            round: self.round,
            from: Endpoint::Platform,
            to: Endpoint::Participant(to),
            body,
        }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Protocol { phase: self.phase, reason: reason.into() }
    }

    /// Opens the round: every participant gets its shard and the shared set.
    pub fn start(&mut self) -> Result<Vec<Message>> {
        if self.phase != Phase::Distributing {
            return Err(self.fail("round already started"));
        }
        let mut out = Vec::with_capacity(2 * self.k());
        for shard in &self.shards {
            out.push(self.send(shard.shard_id, Body::DistributeShard { shard: shard.clone() }));
        }
        for r in &self.roster {
            out.push(self.send(r.participant_id, Body::ShareSet { shared_set: self.shared.clone() }));
        }
        self.advance(Phase::CollectingReports);
        Ok(out)
    }

    /// Handles one message addressed to the platform.
    pub fn handle(&mut self, msg: Message) -> Result<Vec<Message>> {
        if msg.run_id != self.run_id || msg.round != self.round {
            return Err(self.fail(format!("message for run {} round {}", msg.run_id, msg.round)));
        }
        let from = match msg.from {
            Endpoint::Participant(id) if (id as usize) < self.k() => id,
            other => return Err(self.fail(format!("unknown sender {other:?}"))),
        };
        match msg.body {
            Body::ReportUniform { report } => self.on_report(from, report),
            Body::PublishSharedTargets { targets } => {
                if self.phase != Phase::AwaitingUploads || self.reference != Some(from) || self.relayed {
                    return Err(self.fail(format!("unexpected shared targets from participant {from}")));
                }
                if targets.n != self.n.unwrap_or(0) || targets.values().rows() != self.shared.len() {
                    return Err(self.fail("shared targets have the wrong shape"));
                }
                self.relayed = true;
                let reference_fp = &self.roster[from as usize].fingerprint;
                Ok(self
                    .roster
                    .iter()
                    .filter(|r| &r.fingerprint != reference_fp)
                    .map(|r| self.send(r.participant_id, Body::PublishSharedTargets { targets: targets.clone() }))
                    .collect())
            }
            Body::UploadOptimized { shard_id, targets, uniform_value_of_round } => {
                self.on_upload(from, shard_id, targets, uniform_value_of_round)
            }
            other => Err(self.fail(format!("the platform does not accept {}", other.name()))),
        }
    }

    fn on_report(&mut self, from: u32, report: UniformValueReport) -> Result<Vec<Message>> {
        if self.phase != Phase::CollectingReports {
            return Err(self.fail(format!("report from participant {from} outside collection")));
        }
        if report.participant_id != from {
            return Err(self.fail(format!("participant {from} reported as {}", report.participant_id)));
        }
        if report.shared_set_hash != self.shared.hash() {
            return Err(self.fail(format!("participant {from} reported on a different shared set")));
        }
        if self.reports.insert(from, report).is_some() {
            return Err(self.fail(format!("duplicate report from participant {from}")));
        }
        if self.reports.len() < self.k() {
            return Ok(Vec::new());
        }

        let reports: Vec<UniformValueReport> = self.reports.values().cloned().collect();
        let best = select_best_prior(&reports).map_err(|e| self.fail(e.to_string()))?;
        let ranks = rank_reports(&reports);
        let reference = match self.strategy {
            AlignmentStrategy::Best => Some(best),
            AlignmentStrategy::Median => Some(ranks[ranks.len() / 2]),
            AlignmentStrategy::Worst => Some(ranks[ranks.len() - 1]),
            AlignmentStrategy::None => None,
        };
        let n = self.n_override.unwrap_or(self.roster[best as usize].out_dim);
        self.best = Some(best);
        self.reference = reference;
        self.n = Some(n);
        self.advance(Phase::AwaitingUploads);

        let best_fingerprint = self.roster[best as usize].fingerprint.clone();
        let reference = reference.map(|id| Reference {
            participant_id: id,
            fingerprint: self.roster[id as usize].fingerprint.clone(),
        });
        Ok(self
            .roster
            .iter()
            .map(|r| {
                self.send(
                    r.participant_id,
                    Body::AnnounceBest {
                        participant_id: best,
                        n,
                        best_fingerprint: best_fingerprint.clone(),
                        reference: reference.clone(),
                    },
                )
            })
            .collect())
    }

    fn on_upload(&mut self, from: u32, shard_id: u32, targets: TargetSet, value: f64) -> Result<Vec<Message>> {
        if self.phase != Phase::AwaitingUploads {
            return Err(self.fail(format!("upload from participant {from} before the best prior was announced")));
        }
        if shard_id != from || targets.shard_id != from {
            return Err(self.fail(format!(
                "participant {from} uploaded shard {shard_id} (targets tagged {}), expected {from}",
                targets.shard_id
            )));
        }
        if !targets.aligned {
            return Err(self.fail(format!("participant {from} uploaded unaligned targets")));
        }
        if Some(targets.n) != self.n {
            return Err(self.fail(format!("participant {from} uploaded width {}, expected {:?}", targets.n, self.n)));
        }
        if self.uploads.contains_key(&from) {
            return Err(self.fail(format!("duplicate upload from participant {from}")));
        }
        self.uploads.insert(from, targets);
        self.upload_values.insert(from, value);
        if self.uploads.len() < self.k() {
            return Ok(Vec::new());
        }

        let sets: Vec<TargetSet> = self.uploads.values().cloned().collect();
        let merged = merge(&sets, &self.dataset, &self.shards).map_err(|e| self.fail(e.to_string()))?;
        let digest = merged.digest();
        self.merged = Some(merged);
        self.advance(Phase::Merged);
        Ok(self
            .roster
            .iter()
            .map(|r| self.send(r.participant_id, Body::MergeComplete { dataset_digest: digest.clone() }))
            .collect())
    }
}
