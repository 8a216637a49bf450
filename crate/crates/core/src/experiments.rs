//! The runnable scenarios behind the command-line tool, plus artifact
//! writing. Every function here is deterministic given its config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{AlignmentStrategy, DatasetSource, ExperimentConfig, RosterEntry};
use crate::dataset::{Dataset, OptimizedDataset};
use crate::downstream::{make_synthetic_benchmark, spearman, train_and_probe, EvalSet, ProbeResult};
use crate::error::{Error, Result};
use crate::format;
use crate::priors::grade_roster;
use crate::protocol::{run_continuous, run_round_with, ContinuousOutcome, RoundOutcome};
use crate::seed::Role;

pub const DEFAULT_SHARED_FRACTIONS: [f64; 7] = [0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8];

/// Ten evenly spaced qualities from 0.1 to 1.0.
pub fn default_quality_levels() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Loads or generates the run's training data and, for synthetic data, the
/// labeled probe set. The benchmark seed is offset from the master seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<EvalSet>)> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = cfg.role_seed(Role::Benchmark).wrapping_add(spec.seed);
            let (d, e) = make_synthetic_benchmark(&spec)?;
            Ok((d, Some(e)))
        }
        DatasetSource::File { path } => {
            let shard = format::read_shard_file(path)?;
            Ok((Dataset::new(shard.samples, None)?, None))
        }
    }
}

/// Trains the downstream model on `data` and probes it on `eval`.
pub fn probe(cfg: &ExperimentConfig, data: &OptimizedDataset, eval: &EvalSet) -> Result<ProbeResult> {
    train_and_probe(
        data,
        eval,
        &cfg.downstream,
        &cfg.probe,
        cfg.role_seed(Role::Training),
        cfg.role_seed(Role::Probe),
    )
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: RoundOutcome,
    pub probe: Option<ProbeResult>,
}

/// One full round, probed when the dataset carries an eval set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let (data, eval) = prepare_data(cfg)?;
    run_on(cfg, &data, eval.as_ref())
}

pub fn run_on(cfg: &ExperimentConfig, data: &Dataset, eval: Option<&EvalSet>) -> Result<RunReport> {
    let roster = cfg.resolved_roster(data.dim());
    let mut outcome = run_round_with(cfg, data, &roster, 1)?;
    let probe = eval.map(|e| probe(cfg, &outcome.merged, e)).transpose()?;
    outcome.metrics.probe_accuracy = probe.as_ref().map(|p| p.accuracy);
    Ok(RunReport { outcome, probe })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharedSizeRow {
    pub fraction: f64,
    pub shared_size: usize,
    pub best_prior_id: u32,
    pub accuracy: Option<f64>,
    pub merged_digest: String,
}

/// One run per shared fraction; every other seed is held fixed.
pub fn ablate_shared_size(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<(SharedSizeRow, RunReport)>> {
    if fractions.is_empty() {
        return Err(Error::Config("no shared fractions given".into()));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("shared fractions must be strictly increasing".into()));
    }
    let (data, eval) = prepare_data(cfg)?;
    fractions
        .iter()
        .map(|&f| {
            let mut c = cfg.clone();
            c.shared_fraction = f;
            c.run_id = format!("{}/shared={f}", cfg.run_id);
            let report = run_on(&c, &data, eval.as_ref())?;
            let row = SharedSizeRow {
                fraction: f,
                shared_size: report.outcome.shared_set.len(),
                best_prior_id: report.outcome.metrics.best_prior_id,
                accuracy: report.probe.as_ref().map(|p| p.accuracy),
                merged_digest: report.outcome.metrics.merged_digest.clone(),
            };
            Ok((row, report))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub strategy: AlignmentStrategy,
    pub reference_id: Option<u32>,
    pub accuracy: Option<f64>,
    pub merged_digest: String,
}

/// One run per alignment strategy (best, median, worst, none).
pub fn ablate_alignment(cfg: &ExperimentConfig) -> Result<Vec<(AlignmentRow, RunReport)>> {
    let (data, eval) = prepare_data(cfg)?;
    AlignmentStrategy::ALL
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.alignment = s;
            c.run_id = format!("{}/align={}", cfg.run_id, s.name());
            let report = run_on(&c, &data, eval.as_ref())?;
            let row = AlignmentRow {
                strategy: s,
                reference_id: report.outcome.metrics.reference_id,
                accuracy: report.probe.as_ref().map(|p| p.accuracy),
                merged_digest: report.outcome.metrics.merged_digest.clone(),
            };
            Ok((row, report))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub level: usize,
    pub quality: f64,
    pub uniform_value: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// `None` when either ranking is entirely tied.
    pub spearman: Option<f64>,
    pub degenerate: Option<String>,
}

/// Grades the first roster entry over `levels`, runs each prior alone, and
/// rank-correlates its shared-set uniform value with probe accuracy.
pub fn correlate_uniformity(cfg: &ExperimentConfig, levels: &[f64]) -> Result<CorrelationReport> {
    if levels.len() < 2 {
        return Err(Error::Config("need at least two quality levels".into()));
    }
    let (data, eval) = prepare_data(cfg)?;
    let eval = eval.ok_or_else(|| Error::Config("correlation needs a labeled eval set".into()))?;
    let base = cfg.resolved_roster(data.dim()).remove(0);
    let specs = grade_roster(&base.prior, levels);
    let mut rows = Vec::with_capacity(specs.len());
    for (i, spec) in specs.into_iter().enumerate() {
        let mut c = cfg.clone();
        c.k = 1;
        c.run_id = format!("{}/level={i}", cfg.run_id);
        c.roster = vec![RosterEntry { prior: spec.clone(), projection_seed: base.projection_seed }];
        let report = run_on(&c, &data, Some(&eval))?;
        rows.push(CorrelationRow {
            level: i,
            quality: spec.quality,
            uniform_value: report.outcome.metrics.uniform_values[&0],
            accuracy: report.probe.expect("eval given").accuracy,
        });
    }
    let u: Vec<f64> = rows.iter().map(|r| r.uniform_value).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let (spearman, degenerate) = match spearman(&u, &a) {
        Ok(rho) => (Some(rho), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CorrelationReport { rows, spearman, degenerate })
}

/// Continuous rounds, probing each round's merged dataset when possible.
pub fn continuous(cfg: &ExperimentConfig) -> Result<ContinuousOutcome> {
    let (data, eval) = prepare_data(cfg)?;
    match eval {
        Some(e) => {
            let mut eval_fn = |d: &OptimizedDataset| probe(cfg, d, &e).map(|p| p.accuracy);
            run_continuous(cfg, &data, Some(&mut eval_fn))
        }
        None => run_continuous(cfg, &data, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files under one directory and records a digest for each, for the
/// manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self { root: root.as_ref().to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn write_lines(&mut self, name: &str, lines: &[String]) -> Result<PathBuf> {
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `manifest.json`: the command, the config echo, extra digests
    /// and every artifact written so far.
    pub fn finish(self, command: &str, cfg: &ExperimentConfig, digests: serde_json::Value) -> Result<PathBuf> {
        let manifest = serde_json::json!({
            "command": command,
            "run_id": cfg.run_id,
            "seed": cfg.seed,
            "config": cfg.to_toml_string()?,
            "digests": digests,
            "artifacts": self.entries,
        });
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
