use coopt_core::config::{ExperimentConfig, RosterEntry};
use coopt_core::dataset::{merge, Shard, TargetSet};
use coopt_core::downstream::{train_and_probe, train_model, DownstreamModel, ModelConfig};
use coopt_core::experiments::{correlate_uniformity, default_quality_levels, prepare_data, probe, run_on};
use coopt_core::priors::{PriorKind, PriorModelSpec};
use coopt_core::seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn seeded(s: u64) -> ExperimentConfig {
    ExperimentConfig { seed: s, ..Default::default() }
}

#[test]
fn optimized_targets_beat_random_targets() {
    for s in 0..3 {
        let cfg = seeded(s);
        let (data, eval) = prepare_data(&cfg).unwrap();
        let eval = eval.unwrap();
        let report = run_on(&cfg, &data, Some(&eval)).unwrap();
        let merged = &report.outcome.merged;

        let mut rng = seed::rng(700 + s);
        let n = merged.target_matrix().cols();
        let noise: Vec<f32> = (0..merged.len() * n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let whole = Shard::new(0, data.samples().to_vec());
        let random = merge(&[TargetSet::new(0, n, noise, true).unwrap()], &data, &[whole]).unwrap();
        let baseline = probe(&cfg, &random, &eval).unwrap().accuracy;
        let optimized = report.probe.unwrap().accuracy;
        assert!(optimized > baseline + 0.05, "seed {s}: optimized {optimized} vs random {baseline}");
    }
}

#[test]
fn training_loss_does_not_increase() {
    for s in 0..3 {
        let cfg = seeded(s);
        let report = coopt_core::experiments::run(&cfg).unwrap();
        let curve = report.probe.unwrap().loss_curve;
        assert_eq!(curve.len(), cfg.downstream.epochs + 1);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0], "seed {s}: loss rose: {curve:?}");
        }
    }
}

#[test]
fn training_is_deterministic_and_zero_epochs_keeps_init() {
    let cfg = seeded(1);
    let report = coopt_core::experiments::run(&cfg).unwrap();
    let merged = &report.outcome.merged;
    let n = merged.target_matrix().cols();
    let model_cfg = ModelConfig::default();
    let init = DownstreamModel::init(merged.samples()[0].dim(), n, &model_cfg, 5).unwrap();
    let mut untouched = init.clone();
    train_model(&mut untouched, merged, &model_cfg, 0).unwrap();
    assert_eq!(untouched.params(), init.params());

    let (_, eval) = prepare_data(&cfg).unwrap();
    let eval = eval.unwrap();
    let a = train_and_probe(merged, &eval, &model_cfg, &cfg.probe, 3, 4).unwrap();
    let b = train_and_probe(merged, &eval, &model_cfg, &cfg.probe, 3, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn graded_roster_accuracy_tracks_quality() {
    let levels = default_quality_levels();
    let mut mean = vec![0.0; levels.len()];
    for s in 0..3 {
        let report = correlate_uniformity(&seeded(s), &levels).unwrap();
        assert_eq!(report.rows.len(), levels.len());
        for (m, r) in mean.iter_mut().zip(&report.rows) {
            *m += r.accuracy / 3.0;
        }
    }
    let inversions = mean.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(inversions <= 1, "mean accuracies {mean:?}");
    assert!(mean.last().unwrap() - mean[0] > 0.1, "{mean:?}");
}

#[test]
fn clean_oracle_outscores_the_default_roster() {
    let base = seeded(0);
    let roster = base.resolved_roster(32);
    let mut oracle = 0.0;
    let mut others = vec![0.0; roster.len()];
    for s in 0..3 {
        let cfg = seeded(s);
        let (data, eval) = prepare_data(&cfg).unwrap();
        let eval = eval.unwrap();
        let single = |prior: PriorModelSpec| {
            let c = ExperimentConfig { k: 1, roster: vec![RosterEntry::new(prior)], ..cfg.clone() };
            run_on(&c, &data, Some(&eval)).unwrap().probe.unwrap().accuracy / 3.0
        };
        oracle += single(PriorModelSpec::new(PriorKind::Oracle, 1, 0, 16, 1.0));
        for (o, entry) in others.iter_mut().zip(&roster) {
            *o += single(entry.prior.clone());
        }
    }
    assert!(others.iter().all(|&o| oracle >= o), "oracle {oracle} vs {others:?}");
}
