//! Samples, shards, target sets, and the two platform-side data operations:
//! splitting the unlabeled set across participants and merging their
//! uploaded targets back into one optimized dataset.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed;

/// Shard id used for the platform's shared set in files and messages.
pub const SHARED_SET_SHARD_ID: u32 = 0xFFFF_FFFF;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub x: Vec<f32>,
}

impl Sample {
    pub fn new(id: u64, x: Vec<f32>) -> Self {
        Self { id, x }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    m: usize,
    labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, labels: Option<Vec<u32>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidDimension("dataset must contain at least one sample".into()));
        };
        let m = first.dim();
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.dim() != m {
                return Err(Error::InvalidDimension(format!(
                    "sample {} has dimension {}, expected {m}",
                    s.id,
                    s.dim()
                )));
            }
            if !s.x.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("sample {} has a non-finite coordinate", s.id)));
            }
            if !seen.insert(s.id) {
                return Err(Error::InvalidDimension(format!("duplicate sample id {}", s.id)));
            }
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::InvalidDimension(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(Self { samples, m, labels })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Label lookup keyed by sample id.
    pub fn label_map(&self) -> Option<BTreeMap<u64, u32>> {
        let labels = self.labels.as_ref()?;
        Some(self.samples.iter().map(|s| s.id).zip(labels.iter().copied()).collect())
    }

    /// The same samples with labels stripped, as handed to participants.
    pub fn unlabeled(&self) -> Dataset {
        Dataset { samples: self.samples.clone(), m: self.m, labels: None }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.m as u64).to_le_bytes());
        for s in &self.samples {
            h.update(s.id.to_le_bytes());
            for v in &s.x {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub shard_id: u32,
    pub sample_ids: Vec<u64>,
    pub samples: Vec<Sample>,
}

impl Shard {
    pub fn new(shard_id: u32, mut samples: Vec<Sample>) -> Self {
        samples.sort_by_key(|s| s.id);
        let sample_ids = samples.iter().map(|s| s.id).collect();
        Self { shard_id, sample_ids, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-shard soft targets in the run's common dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub shard_id: u32,
    pub n: usize,
    pub aligned: bool,
    values: Vec<f32>,
}

impl TargetSet {
    pub fn new(shard_id: u32, n: usize, values: Vec<f32>, aligned: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("target dimension must be positive".into()));
        }
        if !values.len().is_multiple_of(n) {
            return Err(Error::InvalidDimension(format!(
                "{} target values do not form rows of width {n}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("target value {v} in shard {shard_id}")));
        }
        Ok(Self { shard_id, n, aligned, values })
    }

    /// Rounds a real matrix to single precision, the storage precision of
    /// targets on disk and on the wire.
    pub fn from_matrix(shard_id: u32, m: &Matrix, aligned: bool) -> Result<Self> {
        Self::new(shard_id, m.cols(), m.as_slice().iter().map(|&v| v as f32).collect(), aligned)
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows(), self.n, self.values.iter().map(|&v| v as f64).collect())
            .expect("shape checked at construction")
    }
}

/// Samples paired with their merged targets, ordered by global sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedDataset {
    pub n: usize,
    samples: Vec<Sample>,
    targets: Vec<f32>,
}

impl OptimizedDataset {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * self.n..(i + 1) * self.n]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Sample, &[f32])> {
        self.samples.iter().zip(self.targets.chunks_exact(self.n))
    }

    pub fn target_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.n, self.targets.iter().map(|&v| v as f64).collect())
            .expect("shape checked at construction")
    }

    /// The whole optimized dataset as one target set (shard id 0).
    pub fn as_target_set(&self) -> TargetSet {
        TargetSet { shard_id: 0, n: self.n, aligned: true, values: self.targets.clone() }
    }

    /// SHA-256 over (id, target bits) in id order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for (s, t) in self.pairs() {
            h.update(s.id.to_le_bytes());
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Randomly splits `dataset` into `k` disjoint, near-equal shards.
///
/// A seeded Fisher–Yates permutation of sample positions is cut into
/// contiguous runs; the first `N mod k` shards receive one extra sample.
pub fn partition(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Shard>> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::InvalidPartition(format!("K={k} must lie in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));

    let base = n / k;
    let extra = n % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for shard_id in 0..k {
        let size = base + usize::from(shard_id < extra);
        let samples =
            order[start..start + size].iter().map(|&i| dataset.samples()[i].clone()).collect();
        shards.push(Shard::new(shard_id as u32, samples));
        start += size;
    }
    Ok(shards)
}

/// Assembles the per-shard uploads into one dataset ordered by sample id.
/// The result depends only on the set of target sets, not their order.
pub fn merge(
    target_sets: &[TargetSet],
    dataset: &Dataset,
    shards: &[Shard],
) -> Result<OptimizedDataset> {
    let merge_err = |shard: u32, reason: String| Error::Merge { shard, reason };

    let mut shard_by_id: BTreeMap<u32, &Shard> = BTreeMap::new();
    let mut owner: BTreeMap<u64, u32> = BTreeMap::new();
    for s in shards {
        if shard_by_id.insert(s.shard_id, s).is_some() {
            return Err(merge_err(s.shard_id, "shard listed twice".into()));
        }
        for &id in &s.sample_ids {
            if owner.insert(id, s.shard_id).is_some() {
                return Err(merge_err(s.shard_id, format!("sample {id} appears in two shards")));
            }
        }
    }
    for s in dataset.samples() {
        if !owner.contains_key(&s.id) {
            return Err(merge_err(u32::MAX, format!("sample {} is not covered by any shard", s.id)));
        }
    }
    if owner.len() != dataset.len() {
        let stray = owner.iter().find(|(id, _)| !dataset.samples().iter().any(|s| s.id == **id));
        let (id, shard) = stray.map(|(i, s)| (*i, *s)).unwrap_or((0, u32::MAX));
        return Err(merge_err(shard, format!("sample {id} is not in the dataset")));
    }

    let mut by_shard: BTreeMap<u32, &TargetSet> = BTreeMap::new();
    let mut n = None;
    for ts in target_sets {
        let Some(shard) = shard_by_id.get(&ts.shard_id) else {
            return Err(merge_err(ts.shard_id, "no such shard in the partition".into()));
        };
        if by_shard.insert(ts.shard_id, ts).is_some() {
            return Err(merge_err(ts.shard_id, "duplicate target set".into()));
        }
        if !ts.aligned {
            return Err(merge_err(ts.shard_id, "target set is not aligned".into()));
        }
        if *n.get_or_insert(ts.n) != ts.n {
            return Err(merge_err(
                ts.shard_id,
                format!("target dimension {} differs from {}", ts.n, n.unwrap_or_default()),
            ));
        }
        if ts.rows() != shard.len() {
            return Err(merge_err(
                ts.shard_id,
                format!("{} target rows for {} samples", ts.rows(), shard.len()),
            ));
        }
    }
    if let Some(missing) = shard_by_id.keys().find(|id| !by_shard.contains_key(id)) {
        return Err(merge_err(*missing, "missing target set".into()));
    }
    let n = n.ok_or_else(|| merge_err(u32::MAX, "no target sets supplied".into()))?;

    // (shard, row) for every id, then emit in ascending id order.
    let mut rows: Vec<(u64, u32, usize)> = Vec::with_capacity(dataset.len());
    for shard in shard_by_id.values() {
        for (r, &id) in shard.sample_ids.iter().enumerate() {
            rows.push((id, shard.shard_id, r));
        }
    }
    rows.sort_unstable_by_key(|&(id, _, _)| id);

    let mut samples = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len() * n);
    for (_, sid, r) in rows {
        let shard = shard_by_id[&sid];
        samples.push(shard.samples[r].clone());
        targets.extend_from_slice(by_shard[&sid].row(r));
    }
    Ok(OptimizedDataset { n, samples, targets })
}
