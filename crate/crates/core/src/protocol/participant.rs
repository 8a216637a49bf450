//! Participant side: extract, project, report, align, upload.

use sha2::{Digest, Sha256};

use super::message::{Body, Endpoint, Message, Reference};
use super::Phase;
use crate::alignment::{
    alignment_for_best, fit_transformation, relative_ridge_lambda, SharedSet, SharedTargets, TransformationMatrix,
};
use crate::config::{RosterEntry, UniformityConfig, UniformityFeatures};
use crate::dataset::{Shard, TargetSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::priors::{PriorModel, PriorModelSpec};
use crate::projection::{project, sample_projection, ProjectionMatrix};
use crate::uniformity::{self, UniformValueReport};

/// Identity of a participant's target space: equal fingerprints mean equal
/// priors and equal projections, hence bit-identical targets.
pub fn fingerprint(spec: &PriorModelSpec, projection_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(projection_seed.to_le_bytes());
    hex::encode(h.finalize())
}

/// Everything `participant_optimize` needs. `w`, `t` and `shard` fill in as
/// the protocol advances.
#[derive(Debug, Clone)]
pub struct ParticipantState {
    pub participant_id: u32,
    pub prior: PriorModel,
    pub w: Option<ProjectionMatrix>,
    pub t: Option<TransformationMatrix>,
    pub shard: Option<Shard>,
}

/// Rows `T·W·psi(x)` for every sample of the shard.
pub fn participant_optimize(state: &ParticipantState) -> Result<TargetSet> {
    let not_ready = |missing| Error::NotReady { participant: state.participant_id, missing };
    let shard = state.shard.as_ref().ok_or_else(|| not_ready("shard"))?;
    let w = state.w.as_ref().ok_or_else(|| not_ready("projection"))?;
    let t = state.t.as_ref().ok_or_else(|| not_ready("transformation"))?;
    let projected = project(w, &state.prior.extract(&shard.samples)?)?;
    let aligned = if t.is_identity() { projected } else { t.apply(&projected)? };
    TargetSet::from_matrix(shard.shard_id, &aligned, true)
}

/// Knobs shared by all participants of a run.
#[derive(Debug, Clone)]
pub struct ParticipantSettings {
    pub uniformity: UniformityConfig,
    pub uniformity_seed: u64,
    /// Explicit common dimension, if configured.
    pub n: Option<usize>,
    pub ridge_lambda: f64,
    pub ridge_relative: bool,
    pub affine: bool,
    pub best_identity_projection: bool,
}

/// Uniform value of `prior` on the shared set, as a participant reports it.
pub fn shared_uniform_value(
    prior: &PriorModel,
    projection: Option<&ProjectionMatrix>,
    shared: &SharedSet,
    settings: &ParticipantSettings,
) -> Result<f64> {
    let raw = prior.extract(shared.samples())?;
    let features = match (settings.uniformity.features, projection) {
        (UniformityFeatures::Projected, Some(w)) => project(w, &raw)?,
        _ => raw,
    };
    uniformity::evaluate(&features, &settings.uniformity.settings, settings.uniformity_seed)
}

#[derive(Debug)]
pub struct Participant {
    run_id: String,
    round: u32,
    state: ParticipantState,
    projection_seed: u64,
    fingerprint: String,
    settings: ParticipantSettings,
    shared: Option<SharedSet>,
    uniform_value: Option<f64>,
    reference: Option<Option<Reference>>,
    early_targets: Option<SharedTargets>,
    uploaded: bool,
    muted: bool,
    merged_digest: Option<String>,
}

impl Participant {
    pub fn new(
        run_id: &str,
        round: u32,
        participant_id: u32,
        entry: &RosterEntry,
        prior: PriorModel,
        projection_seed: u64,
        settings: ParticipantSettings,
    ) -> Self {
        Self {
            run_id: run_id.to_string(),
            round,
            state: ParticipantState { participant_id, prior, w: None, t: None, shard: None },
            projection_seed,
            fingerprint: fingerprint(&entry.prior, projection_seed),
            settings,
            shared: None,
            uniform_value: None,
            reference: None,
            early_targets: None,
            uploaded: false,
            muted: false,
            merged_digest: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.state.participant_id
    }

    pub fn state(&self) -> &ParticipantState {
        &self.state
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn uniform_value(&self) -> Option<f64> {
        self.uniform_value
    }

    pub fn merged_digest(&self) -> Option<&str> {
        self.merged_digest.as_deref()
    }

    fn send(&self, body: Body) -> Message {
        Message {
            run_id: self.run_id.clone(),
            round: self.round,
            from: Endpoint::Participant(self.id()),
            to: Endpoint::Platform,
            body,
        }
    }

    fn fail(&self, phase: Phase, reason: impl Into<String>) -> Error {
        Error::Protocol { phase, reason: format!("participant {}: {}", self.id(), reason.into()) }
    }

    /// Fault injection: a muted participant swallows every message, which
    /// lets tests exercise the straggler timeout.
    #[doc(hidden)]
    pub fn mute(&mut self) {
        self.muted = true;
    }

    fn fit_to(&mut self, targets: &SharedTargets) -> Result<Vec<Message>> {
        if self.state.t.is_some() {
            return Err(self.fail(Phase::AwaitingUploads, "received shared targets twice"));
        }
        let features = self.projected_shared()?;
        let lambda = if self.settings.ridge_relative {
            relative_ridge_lambda(&features, self.settings.ridge_lambda)
        } else {
            self.settings.ridge_lambda
        };
        self.state.t = Some(fit_transformation(self.id(), &features, targets, lambda, self.settings.affine)?);
        self.try_upload()
    }

    fn projected_shared(&self) -> Result<Matrix> {
        let shared = self.shared.as_ref().ok_or(Error::NotReady { participant: self.id(), missing: "shared set" })?;
        let w = self.state.w.as_ref().ok_or(Error::NotReady { participant: self.id(), missing: "projection" })?;
        project(w, &self.state.prior.extract(shared.samples())?)
    }

    fn try_upload(&mut self) -> Result<Vec<Message>> {
        if self.uploaded || self.state.shard.is_none() || self.state.w.is_none() || self.state.t.is_none() {
            return Ok(Vec::new());
        }
        let targets = participant_optimize(&self.state)?;
        self.uploaded = true;
        let shard_id = targets.shard_id;
        let value = self.uniform_value.unwrap_or(f64::NAN);
        Ok(vec![self.send(Body::UploadOptimized { shard_id, targets, uniform_value_of_round: value })])
    }

    /// Handles one inbound message and returns the replies.
    pub fn handle(&mut self, msg: Message) -> Result<Vec<Message>> {
        if self.muted {
            return Ok(Vec::new());
        }
        if msg.run_id != self.run_id || msg.round != self.round {
            return Err(self.fail(
                Phase::Distributing,
                format!("message for run {} round {} while in run {} round {}", msg.run_id, msg.round, self.run_id, self.round),
            ));
        }
        match msg.body {
            Body::DistributeShard { shard } => {
                if self.state.shard.is_some() {
                    return Err(self.fail(Phase::Distributing, "received a second shard"));
                }
                self.state.shard = Some(shard);
                self.try_upload()
            }
            Body::ShareSet { shared_set } => {
                if self.shared.is_some() {
                    return Err(self.fail(Phase::CollectingReports, "received a second shared set"));
                }
                if self.settings.uniformity.features == UniformityFeatures::Projected {
                    let n = self.settings.n.expect("validated: projected uniformity has n");
                    self.state.w = Some(sample_projection(self.state.prior.out_dim(), n, self.projection_seed)?);
                }
                let value = shared_uniform_value(&self.state.prior, self.state.w.as_ref(), &shared_set, &self.settings)?;
                self.uniform_value = Some(value);
                let report = UniformValueReport {
                    participant_id: self.id(),
                    value,
                    tau: self.settings.uniformity.settings.tau,
                    shared_set_hash: shared_set.hash().to_string(),
                };
                self.shared = Some(shared_set);
                Ok(vec![self.send(Body::ReportUniform { report })])
            }
            Body::AnnounceBest { participant_id: _, n, best_fingerprint, reference } => {
                if self.reference.is_some() {
                    return Err(self.fail(Phase::AwaitingUploads, "received a second announcement"));
                }
                if self.state.w.is_none() {
                    let l = self.state.prior.out_dim();
                    let same_as_best = best_fingerprint == self.fingerprint;
                    self.state.w = Some(if self.settings.best_identity_projection && same_as_best && l == n {
                        ProjectionMatrix::identity(n)?
                    } else {
                        sample_projection(l, n, self.projection_seed)?
                    });
                }
                let mut out = Vec::new();
                match &reference {
                    None => self.state.t = Some(alignment_for_best(self.id(), n)?),
                    Some(r) if r.fingerprint == self.fingerprint => {
                        self.state.t = Some(alignment_for_best(self.id(), n)?);
                        if r.participant_id == self.id() {
                            let targets = SharedTargets::from_matrix(&self.projected_shared()?)?;
                            out.push(self.send(Body::PublishSharedTargets { targets }));
                        }
                    }
                    Some(_) => {}
                }
                self.reference = Some(reference);
                match self.early_targets.take() {
                    Some(targets) => out.extend(self.fit_to(&targets)?),
                    None => out.extend(self.try_upload()?),
                }
                Ok(out)
            }
            Body::PublishSharedTargets { targets } => match &self.reference {
                // relayed targets may overtake the announcement
                None if self.early_targets.is_none() => {
                    self.early_targets = Some(targets);
                    Ok(Vec::new())
                }
                Some(Some(r)) if r.fingerprint != self.fingerprint => self.fit_to(&targets),
                _ => Err(self.fail(Phase::AwaitingUploads, "unexpected shared targets")),
            },
            Body::MergeComplete { dataset_digest } => {
                self.merged_digest = Some(dataset_digest);
                Ok(Vec::new())
            }
            other => Err(self.fail(Phase::Distributing, format!("participants do not accept {}", other.name()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::priors::{build_prior, PriorKind};

    fn linear_state(with_t: bool) -> ParticipantState {
        let spec = PriorModelSpec::new(PriorKind::Linear, 3, 4, 5, 1.0);
        let samples = vec![Sample::new(0, vec![0.0; 4]), Sample::new(7, vec![1.0, -2.0, 0.5, 3.0])];
        ParticipantState {
            participant_id: 0,
            prior: build_prior(&spec, None).unwrap(),
            w: Some(sample_projection(5, 3, 11).unwrap()),
            t: if with_t { Some(alignment_for_best(0, 3).unwrap()) } else { None },
            shard: Some(Shard::new(2, samples)),
        }
    }

    #[test]
    fn zero_sample_through_linear_prior_is_zero() {
        let ts = participant_optimize(&linear_state(true)).unwrap();
        assert!(ts.aligned);
        assert_eq!(ts.shard_id, 2);
        assert_eq!(ts.row(0), &[0.0; 3]);
        assert!(ts.row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn best_rows_equal_projection_and_recompute_is_identical() {
        let st = linear_state(true);
        let a = participant_optimize(&st).unwrap();
        let b = participant_optimize(&st).unwrap();
        assert_eq!(a, b);
        let shard = st.shard.as_ref().unwrap();
        let direct = project(st.w.as_ref().unwrap(), &st.prior.extract(&shard.samples).unwrap()).unwrap();
        assert_eq!(a, TargetSet::from_matrix(2, &direct, true).unwrap());
    }

    #[test]
    fn pending_transformation_is_not_ready() {
        let err = participant_optimize(&linear_state(false)).unwrap_err();
        assert!(matches!(err, Error::NotReady { missing: "transformation", .. }));
        let mut st = linear_state(true);
        st.shard = None;
        assert!(matches!(participant_optimize(&st), Err(Error::NotReady { missing: "shard", .. })));
    }

    #[test]
    fn fingerprint_separates_specs_and_seeds() {
        let a = PriorModelSpec::new(PriorKind::Mlp, 1, 4, 8, 0.5);
        let mut b = a.clone();
        b.quality = 0.6;
        assert_eq!(fingerprint(&a, 9), fingerprint(&a.clone(), 9));
        assert_ne!(fingerprint(&a, 9), fingerprint(&a, 10));
        assert_ne!(fingerprint(&a, 9), fingerprint(&b, 9));
    }
}
