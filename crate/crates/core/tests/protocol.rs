use std::collections::BTreeSet;
use std::time::Duration;

use coopt_core::alignment::SharedSet;
use coopt_core::config::{
    AlignmentStrategy, DatasetSource, ExperimentConfig, RosterEntry, ScheduleKind, TransportKind,
};
use coopt_core::dataset::{partition, Dataset, TargetSet};
use coopt_core::downstream::BenchmarkSpec;
use coopt_core::error::Error;
use coopt_core::experiments::prepare_data;
use coopt_core::priors::{build_prior, PriorKind, PriorModelSpec};
use coopt_core::protocol::runtime::{drive_serial, drive_threaded};
use coopt_core::protocol::{
    fingerprint, run_continuous, run_round, run_round_with, select_shared_set, Body, Coordinator, Endpoint, Message,
    Participant, Phase, RosterInfo,
};
use coopt_core::seed::Role;

fn small_config(k: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        k,
        dataset: DatasetSource::Synthetic(BenchmarkSpec { train: 400, eval: 200, ..Default::default() }),
        ..Default::default()
    };
    cfg.roster = coopt_core::config::default_roster(32, k);
    cfg
}

fn homogeneous(k: usize) -> ExperimentConfig {
    let mut cfg = small_config(k);
    cfg.roster = vec![RosterEntry::new(PriorModelSpec::new(PriorKind::Mlp, 42, 0, 24, 0.8))];
    cfg
}

#[test]
fn single_participant_emits_its_own_features() {
    let cfg = homogeneous(1);
    let (data, _) = prepare_data(&cfg).unwrap();
    let (merged, metrics) = run_round(&cfg, &data).unwrap();
    assert_eq!(metrics.best_prior_id, 0);
    assert_eq!(metrics.n, 24);
    let prior = build_prior(&cfg.resolved_roster(32)[0].prior, Some(&data)).unwrap();
    let direct = TargetSet::from_matrix(0, &prior.extract(data.samples()).unwrap(), true).unwrap();
    assert_eq!(merged.targets(), direct.values());
}

#[test]
fn homogeneous_rosters_merge_identically_for_any_k() {
    let (data, _) = prepare_data(&homogeneous(1)).unwrap();
    let reference = run_round(&homogeneous(1), &data).unwrap().0;
    for k in [2, 3, 4, 8] {
        let merged = run_round(&homogeneous(k), &data).unwrap().0;
        assert_eq!(merged, reference, "k={k}");
    }
}

#[test]
fn homogeneous_priors_with_distinct_projections_still_agree_after_alignment() {
    let mut cfg = homogeneous(3);
    cfg.roster = (0..3)
        .map(|i| RosterEntry { projection_seed: Some(100 + i), ..RosterEntry::new(cfg.roster[0].prior.clone()) })
        .collect();
    let (data, _) = prepare_data(&cfg).unwrap();
    let out = run_round_with(&cfg, &data, &cfg.resolved_roster(32), 1).unwrap();
    assert!(out.transformations.values().all(|t| t.n == 24));
    assert_eq!(out.transformations.values().filter(|t| t.is_identity()).count(), 1);
}

#[test]
fn heterogeneous_round_is_schedule_independent() {
    let cfg = small_config(4);
    let (data, _) = prepare_data(&cfg).unwrap();
    let roster = cfg.resolved_roster(32);
    let base = run_round_with(&cfg, &data, &roster, 1).unwrap();
    assert!(base.uploads.values().all(|t| t.aligned && t.n == base.metrics.n));

    let ids: Vec<u64> = base.uploads.values().flat_map(|t| {
        let shard = &base.shards[t.shard_id as usize];
        assert_eq!(t.rows(), shard.len());
        shard.sample_ids.clone()
    }).collect();
    let unique: BTreeSet<u64> = ids.iter().copied().collect();
    assert_eq!(unique.len(), ids.len());
    assert_eq!(ids.len(), data.len());

    let mut variants = Vec::new();
    for seed in 0..5 {
        let mut c = cfg.clone();
        c.protocol.schedule = ScheduleKind::Shuffled;
        c.protocol.schedule_seed = seed;
        variants.push(c);
    }
    let mut threaded = cfg.clone();
    threaded.protocol.schedule = ScheduleKind::Threaded;
    threaded.protocol.threads = 3;
    variants.push(threaded.clone());
    threaded.protocol.transport = TransportKind::Loopback;
    variants.push(threaded);
    let mut looped = cfg.clone();
    looped.protocol.transport = TransportKind::Loopback;
    variants.push(looped);
    for c in variants {
        let out = run_round_with(&c, &data, &roster, 1).unwrap();
        assert_eq!(out.metrics.merged_digest, base.metrics.merged_digest, "{:?}", c.protocol);
        assert_eq!(out.metrics.best_prior_id, base.metrics.best_prior_id);
        assert_eq!(out.merged, base.merged);
    }
}

#[test]
fn strategy_none_keeps_projected_targets() {
    let mut cfg = small_config(4);
    cfg.alignment = AlignmentStrategy::None;
    let (data, _) = prepare_data(&cfg).unwrap();
    let out = run_round_with(&cfg, &data, &cfg.resolved_roster(32), 1).unwrap();
    assert_eq!(out.metrics.reference_id, None);
    assert!(out.transformations.values().all(|t| t.is_identity()));
    assert!(out.uploads.values().all(|t| t.aligned));
}

struct Harness {
    coord: Coordinator,
    parts: Vec<Participant>,
}

fn harness(k: usize) -> Harness {
    let cfg = small_config(k);
    let (data, _) = prepare_data(&cfg).unwrap();
    let roster = cfg.resolved_roster(32);
    let shards = partition(&data, k, cfg.role_seed(Role::Partition)).unwrap();
    let shared: SharedSet = select_shared_set(&data, 0.1, 7).unwrap();
    let settings = coopt_core::protocol::ParticipantSettings {
        uniformity: cfg.uniformity.clone(),
        uniformity_seed: 1,
        n: None,
        ridge_lambda: cfg.ridge_lambda,
        ridge_relative: true,
        affine: false,
        best_identity_projection: true,
    };
    let mut infos = Vec::new();
    let mut parts = Vec::new();
    for (i, e) in roster.iter().enumerate() {
        let pseed = cfg.projection_seed(e);
        infos.push(RosterInfo { participant_id: i as u32, fingerprint: fingerprint(&e.prior, pseed), out_dim: e.prior.out_dim });
        let prior = build_prior(&e.prior, Some(&data)).unwrap();
        parts.push(Participant::new("h", 1, i as u32, e, prior, pseed, settings.clone()));
    }
    let coord =
        Coordinator::new("h", 1, data, shards, shared, infos, AlignmentStrategy::Best, None).unwrap();
    Harness { coord, parts }
}

fn upload(from: u32, shard_id: u32, n: usize) -> Message {
    Message {
        run_id: "h".into(),
        round: 1,
        from: Endpoint::Participant(from),
        to: Endpoint::Platform,
        body: Body::UploadOptimized {
            shard_id,
            targets: TargetSet::new(shard_id, n, vec![0.0; n], true).unwrap(),
            uniform_value_of_round: 0.0,
        },
    }
}

#[test]
fn upload_before_announcement_is_rejected() {
    let mut h = harness(2);
    let err = h.coord.handle(upload(0, 0, 4)).unwrap_err();
    assert!(matches!(err, Error::Protocol { phase: Phase::Distributing, .. }), "{err}");
    h.coord.start().unwrap();
    let err = h.coord.handle(upload(0, 0, 4)).unwrap_err();
    assert!(matches!(err, Error::Protocol { phase: Phase::CollectingReports, .. }), "{err}");
    assert_eq!(h.coord.state().pending_shard_ids, vec![0, 1]);
}

#[test]
fn wrong_shard_and_missing_uploads_block_the_merge() {
    let mut h = harness(2);
    let mut queue: Vec<Message> = h.coord.start().unwrap();
    // deliver everything except uploads, which we intercept
    let mut uploads = Vec::new();
    while let Some(msg) = queue.pop() {
        match (&msg.to, &msg.body) {
            (Endpoint::Platform, Body::UploadOptimized { .. }) => uploads.push(msg),
            (Endpoint::Platform, _) => queue.extend(h.coord.handle(msg).unwrap()),
            (Endpoint::Participant(id), _) => queue.extend(h.parts[*id as usize].handle(msg).unwrap()),
        }
    }
    assert_eq!(h.coord.phase(), Phase::AwaitingUploads);
    assert_eq!(uploads.len(), 2);
    let n = h.coord.n().unwrap();
    let err = h.coord.handle(upload(1, 0, n)).unwrap_err();
    assert!(err.to_string().contains("uploaded shard 0"), "{err}");

    uploads.sort_by_key(|m| m.from);
    let second = uploads.pop().unwrap();
    assert!(h.coord.handle(uploads.pop().unwrap()).unwrap().is_empty());
    assert_eq!(h.coord.phase(), Phase::AwaitingUploads);
    assert!(h.coord.merged().is_none());
    assert_eq!(h.coord.state().pending_shard_ids, vec![1]);
    let done = h.coord.handle(second).unwrap();
    assert_eq!(h.coord.phase(), Phase::Merged);
    assert!(done.iter().all(|m| matches!(m.body, Body::MergeComplete { .. })));
}

#[test]
fn silent_participant_times_out_instead_of_partial_merge() {
    let mut h = harness(3);
    h.parts[2].mute();
    let err = drive_threaded(&mut h.coord, h.parts, 2, TransportKind::InMemory, Duration::from_millis(300)).unwrap_err();
    match err {
        Error::Timeout { phase, waiting_on } => {
            assert_eq!(phase, Phase::CollectingReports);
            assert_eq!(waiting_on, "participant 2");
        }
        other => panic!("unexpected {other}"),
    }
    assert!(h.coord.merged().is_none());

    let mut h = harness(3);
    h.parts[1].mute();
    let err = drive_serial(&mut h.coord, &mut h.parts, None, TransportKind::InMemory).unwrap_err();
    assert!(matches!(err, Error::Timeout { .. }));
}

#[test]
fn participants_learn_the_merged_digest() {
    let mut h = harness(3);
    drive_serial(&mut h.coord, &mut h.parts, Some(9), TransportKind::Loopback).unwrap();
    let digest = h.coord.merged().unwrap().digest();
    assert!(h.parts.iter().all(|p| p.merged_digest() == Some(digest.as_str())));
}

#[test]
fn continuous_without_upgrades_repeats_itself() {
    let mut cfg = small_config(4);
    cfg.continuous.rounds = 3;
    cfg.continuous.upgrade_fraction = 0.0;
    let (data, _) = prepare_data(&cfg).unwrap();
    let out = run_continuous(&cfg, &data, None).unwrap();
    let first = &out.rounds[0];
    for r in &out.rounds[1..] {
        assert_eq!(r.metrics.merged_digest, first.metrics.merged_digest);
        assert_eq!(r.metrics.uniform_values, first.metrics.uniform_values);
        assert_eq!(r.retained_values, first.retained_values);
        assert!(r.proposed.is_empty());
    }
}

#[test]
fn full_upgrades_strictly_improve_retained_values() {
    let mut cfg = small_config(3);
    cfg.roster = (0..3)
        .map(|i| RosterEntry::new(PriorModelSpec::new(PriorKind::Mlp, 500 + i, 0, 16, 0.2)))
        .collect();
    cfg.continuous.rounds = 4;
    cfg.continuous.upgrade_fraction = 1.0;
    let (data, _) = prepare_data(&cfg).unwrap();
    let out = run_continuous(&cfg, &data, None).unwrap();
    for w in out.rounds.windows(2) {
        for (id, v) in &w[1].retained_values {
            let before = w[0].retained_values[id];
            if w[1].accepted.contains(id) {
                assert!(*v < before);
            } else {
                assert_eq!(*v, before);
            }
        }
    }
    assert!(out.rounds[1..].iter().any(|r| !r.accepted.is_empty()));
}

#[test]
fn file_dataset_runs_without_labels() {
    let cfg = homogeneous(2);
    let (data, _) = prepare_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.cptd");
    coopt_core::format::write_shard_file(&path, &coopt_core::dataset::Shard::new(0, data.samples().to_vec())).unwrap();
    let mut file_cfg = cfg.clone();
    file_cfg.dataset = DatasetSource::File { path };
    let (loaded, eval) = prepare_data(&file_cfg).unwrap();
    assert!(eval.is_none());
    assert_eq!(loaded.samples(), data.samples());
    let unlabeled = Dataset::new(loaded.samples().to_vec(), None).unwrap();
    let (merged, _) = run_round(&file_cfg, &unlabeled).unwrap();
    assert_eq!(merged.len(), data.len());
}
