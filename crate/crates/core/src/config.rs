//! Run configuration. A single TOML file describes a run completely; every
//! random stream is derived from `seed` (see [`crate::seed::Role`]).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::{BenchmarkSpec, ModelConfig, ProbeConfig};
use crate::error::{Error, Result};
use crate::priors::{PriorKind, PriorModelSpec};
use crate::seed::{self, Role};
use crate::uniformity::UniformitySettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Seeded Gaussian-cluster benchmark; `seed` is an offset on top of the
    /// master seed.
    Synthetic(BenchmarkSpec),
    /// Unlabeled samples from a CPTD file. Probing and oracle priors are
    /// unavailable.
    File { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(BenchmarkSpec::default())
    }
}

/// Which participant's target space the others align to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentStrategy {
    #[default]
    Best,
    Median,
    Worst,
    /// Skip alignment; every participant keeps its projected targets.
    None,
}

impl AlignmentStrategy {
    pub const ALL: [AlignmentStrategy; 4] =
        [AlignmentStrategy::Best, AlignmentStrategy::Median, AlignmentStrategy::Worst, AlignmentStrategy::None];

    pub fn name(self) -> &'static str {
        match self {
            AlignmentStrategy::Best => "best",
            AlignmentStrategy::Median => "median",
            AlignmentStrategy::Worst => "worst",
            AlignmentStrategy::None => "none",
        }
    }
}

/// Features the uniform value is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UniformityFeatures {
    /// Raw prior outputs on the shared set.
    #[default]
    Raw,
    /// Projected (`W·psi`) outputs; requires an explicit `n`.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformityConfig {
    #[serde(flatten)]
    pub settings: UniformitySettings,
    pub features: UniformityFeatures,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        Self { settings: UniformitySettings::default(), features: UniformityFeatures::Raw }
    }
}

/// One participant: its prior plus an optional explicit projection seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    #[serde(flatten)]
    pub prior: PriorModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_seed: Option<u64>,
}

impl RosterEntry {
    pub fn new(prior: PriorModelSpec) -> Self {
        Self { prior, projection_seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UpgradeLadder {
    /// Raise quality by `step`, capped at 1.
    Quality { step: f64 },
    /// Promote linear priors to MLPs; others fall back to a quality step.
    Promote { step: f64 },
}

impl Default for UpgradeLadder {
    fn default() -> Self {
        UpgradeLadder::Quality { step: 0.15 }
    }
}

impl UpgradeLadder {
    pub fn upgrade(&self, spec: &PriorModelSpec) -> PriorModelSpec {
        let mut next = spec.clone();
        match *self {
            UpgradeLadder::Promote { .. } if spec.kind == PriorKind::Linear => {
                next.kind = PriorKind::Mlp;
                next.identity = false;
            }
            UpgradeLadder::Quality { step } | UpgradeLadder::Promote { step } => {
                next.quality = (spec.quality + step).min(1.0);
            }
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousConfig {
    pub rounds: usize,
    pub upgrade_fraction: f64,
    pub ladder: UpgradeLadder,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self { rounds: 10, upgrade_fraction: 0.2, ladder: UpgradeLadder::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Messages delivered in send order on one thread.
    #[default]
    Fifo,
    /// Messages delivered in a seeded random order on one thread.
    Shuffled,
    /// Participants run on worker threads; arrival order is up to the OS.
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    #[default]
    InMemory,
    /// Every message is encoded to a length-prefixed frame and decoded on
    /// receipt.
    Loopback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub schedule: ScheduleKind,
    pub schedule_seed: u64,
    pub transport: TransportKind,
    pub threads: usize,
    pub timeout_ms: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Fifo,
            schedule_seed: 0,
            transport: TransportKind::InMemory,
            threads: 4,
            timeout_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub k: usize,
    pub shared_fraction: f64,
    /// Common target dimension; defaults to the best prior's output width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Ridge strength for alignment.
    pub ridge_lambda: f64,
    /// Scale `ridge_lambda` by the mean squared row norm of the features.
    pub ridge_relative: bool,
    pub affine: bool,
    /// Participants running the best prior skip the random projection when
    /// its width already equals `n`.
    pub best_identity_projection: bool,
    pub alignment: AlignmentStrategy,
    pub dataset: DatasetSource,
    pub uniformity: UniformityConfig,
    /// One entry per participant, or a single entry shared by all. Left
    /// empty, the heterogeneous [`default_roster`] of size `k` is used.
    #[serde(default)]
    pub roster: Vec<RosterEntry>,
    pub continuous: ContinuousConfig,
    pub downstream: ModelConfig,
    pub probe: ProbeConfig,
    pub protocol: ProtocolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let bench = BenchmarkSpec::default();
        Self {
            run_id: "run".into(),
            seed: 0,
            k: 4,
            shared_fraction: 0.1,
            n: None,
            ridge_lambda: 1e-6,
            ridge_relative: true,
            affine: false,
            best_identity_projection: true,
            alignment: AlignmentStrategy::Best,
            roster: default_roster(bench.dim, 4),
            dataset: DatasetSource::Synthetic(bench),
            uniformity: UniformityConfig::default(),
            continuous: ContinuousConfig::default(),
            downstream: ModelConfig::default(),
            probe: ProbeConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

/// A heterogeneous roster: kinds, widths and qualities cycle so that
/// participants disagree on both target dimension and fidelity.
pub fn default_roster(in_dim: usize, k: usize) -> Vec<RosterEntry> {
    let kinds = [PriorKind::Mlp, PriorKind::Linear, PriorKind::WeakMlp, PriorKind::Mlp];
    let widths = [32, 24, 48, 16];
    let qualities = [0.9, 0.6, 0.35, 0.75];
    (0..k)
        .map(|i| {
            RosterEntry::new(PriorModelSpec::new(
                kinds[i % 4],
                1000 + i as u64,
                in_dim,
                widths[i % 4],
                qualities[i % 4],
            ))
        })
        .collect()
}

impl ExperimentConfig {
    /// Defaults for continuous optimization: ten participants, a fifth of
    /// whom propose an upgrade each round, over ten rounds.
    pub fn continuous_preset() -> Self {
        let base = Self::default();
        let dim = match &base.dataset {
            DatasetSource::Synthetic(b) => b.dim,
            DatasetSource::File { .. } => 0,
        };
        Self {
            run_id: "continuous".into(),
            k: 10,
            roster: default_roster(dim, 10),
            continuous: ContinuousConfig { rounds: 10, upgrade_fraction: 0.2, ladder: UpgradeLadder::default() },
            ..base
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.shared_fraction > 0.0 && self.shared_fraction < 1.0) {
            return bad(format!("shared_fraction {} must lie in (0,1)", self.shared_fraction));
        }
        if !self.roster.is_empty() && self.roster.len() != self.k && self.roster.len() != 1 {
            return bad(format!("roster has {} entries for k={}; give k entries or one", self.roster.len(), self.k));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be finite and >= 0".into());
        }
        if self.n == Some(0) {
            return bad("n must be positive".into());
        }
        if self.uniformity.features == UniformityFeatures::Projected && self.n.is_none() {
            return bad("uniformity on projected features needs an explicit n".into());
        }
        if !(self.uniformity.settings.tau > 0.0) {
            return bad("uniformity tau must be positive".into());
        }
        let c = &self.continuous;
        if c.rounds == 0 {
            return bad("continuous.rounds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&c.upgrade_fraction) {
            return bad("continuous.upgrade_fraction must lie in [0,1]".into());
        }
        for (i, e) in self.roster.iter().enumerate() {
            let mut prior = e.prior.clone();
            if prior.in_dim == 0 {
                // filled from the dataset at run time
                prior.in_dim = prior.out_dim.max(1);
            }
            prior.validate().map_err(|err| Error::Config(format!("roster[{i}]: {err}")))?;
        }
        Ok(())
    }

    /// Roster with input widths set to the dataset dimension `m` and a
    /// single entry replicated to `k` participants.
    pub fn resolved_roster(&self, m: usize) -> Vec<RosterEntry> {
        let base: Vec<RosterEntry> = if self.roster.is_empty() {
            default_roster(m, self.k)
        } else if self.roster.len() == 1 && self.k > 1 {
            vec![self.roster[0].clone(); self.k]
        } else {
            self.roster.clone()
        };
        base.into_iter()
            .map(|mut e| {
                e.prior.in_dim = m;
                e
            })
            .collect()
    }

    pub fn role_seed(&self, role: Role) -> u64 {
        seed::derive(self.seed, role)
    }

    /// Projection seed for roster entry `entry`.
    pub fn projection_seed(&self, entry: &RosterEntry) -> u64 {
        entry
            .projection_seed
            .unwrap_or_else(|| seed::substream(self.role_seed(Role::Projection), entry.prior.seed))
    }

    pub fn ridge_for(&self, features: &crate::linalg::Matrix) -> f64 {
        if self.ridge_relative {
            crate::alignment::relative_ridge_lambda(features, self.ridge_lambda)
        } else {
            self.ridge_lambda
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            run_id = "tiny"
            seed = 3
            k = 1
            [[roster]]
            kind = "mlp"
            seed = 5
            out_dim = 8
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.shared_fraction, 0.1);
        assert_eq!(cfg.roster[0].prior.quality, 1.0);
        assert_eq!(cfg.resolved_roster(32)[0].prior.in_dim, 32);
    }

    #[test]
    fn rejects_bad_shared_fraction() {
        let cfg = ExperimentConfig { shared_fraction: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig { shared_fraction: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_roster_entry_is_replicated() {
        let mut cfg = ExperimentConfig::default();
        cfg.roster.truncate(1);
        cfg.k = 3;
        cfg.validate().unwrap();
        let r = cfg.resolved_roster(32);
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|e| e == &r[0]));
    }

    #[test]
    fn ladder_steps() {
        let spec = PriorModelSpec::new(PriorKind::Linear, 0, 4, 4, 0.9);
        assert_eq!(UpgradeLadder::Quality { step: 0.15 }.upgrade(&spec).quality, 1.0);
        let promoted = UpgradeLadder::Promote { step: 0.1 }.upgrade(&spec);
        assert_eq!((promoted.kind, promoted.quality), (PriorKind::Mlp, 0.9));
    }

    #[test]
    fn omitted_roster_follows_k() {
        let cfg = ExperimentConfig::from_toml_str("k = 3").unwrap();
        cfg.validate().unwrap();
        assert!(cfg.roster.is_empty());
        assert_eq!(cfg.resolved_roster(32), default_roster(32, 3));
    }

    #[test]
    fn continuous_preset_is_valid() {
        let cfg = ExperimentConfig::continuous_preset();
        cfg.validate().unwrap();
        assert_eq!((cfg.k, cfg.roster.len(), cfg.continuous.rounds), (10, 10, 10));
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
