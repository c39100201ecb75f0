//! Dataset manifests: split membership, the pre-training pool, and artifact
//! paths for every image.
//!
//! A manifest is a single JSON document. Serialization is canonical (fixed
//! key order, no timestamps) and writes go through an atomic rename, so the
//! same inputs always produce the same bytes on disk.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::{to_canonical_json, write_atomic};
use crate::protocol::is_valid_image_id;

pub const SCHEMA_VERSION: u32 = 1;

/// Train/val/test sizes of the KITTI road training frames.
pub const DEFAULT_SPLIT_SIZES: SplitSizes = SplitSizes {
    train: 173,
    val: 58,
    test: 58,
};

pub const DEFAULT_POOL_MULTIPLIER: u32 = 5;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("need {needed} ids for the requested splits, got {available}")]
    InsufficientIds { needed: usize, available: usize },
    #[error("need {needed} pool candidates, got {available}")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error("candidate {0:?} is already in the manifest")]
    CandidateOverlap(String),
    #[error("pool multiplier must be at least 1")]
    InvalidMultiplier,
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("unknown artifact kind {0:?} (expected image, gt, proposals or pseudolabel)")]
    UnknownKind(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("entry {0:?} is in a labeled split but has no gt_path")]
    MissingGtPath(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
    PretrainPool,
    Unassigned,
}

impl Split {
    pub const LABELED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn is_labeled(self) -> bool {
        Self::LABELED.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::PretrainPool => "pretrain-pool",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Split::Train,
            Split::Val,
            Split::Test,
            Split::PretrainPool,
            Split::Unassigned,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| ManifestError::UnknownSplit(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Image,
    Gt,
    Proposals,
    Pseudolabel,
}

impl FromStr for ArtifactKind {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(Self::Image),
            "gt" => Ok(Self::Gt),
            "proposals" => Ok(Self::Proposals),
            "pseudolabel" => Ok(Self::Pseudolabel),
            other => Err(ManifestError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudolabel_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_hint: Option<String>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            split,
            image_path: None,
            gt_path: None,
            proposals_path: None,
            pseudolabel_path: None,
            category_hint: None,
        }
    }

    pub fn artifact(&self, kind: ArtifactKind) -> Option<&Path> {
        match kind {
            ArtifactKind::Image => self.image_path.as_deref(),
            ArtifactKind::Gt => self.gt_path.as_deref(),
            ArtifactKind::Proposals => self.proposals_path.as_deref(),
            ArtifactKind::Pseudolabel => self.pseudolabel_path.as_deref(),
        }
    }

    fn artifact_slot(&mut self, kind: ArtifactKind) -> &mut Option<PathBuf> {
        match kind {
            ArtifactKind::Image => &mut self.image_path,
            ArtifactKind::Gt => &mut self.gt_path,
            ArtifactKind::Proposals => &mut self.proposals_path,
            ArtifactKind::Pseudolabel => &mut self.pseudolabel_path,
        }
    }
}

/// Provenance of the pre-training pool: how it was drawn and from which
/// candidate list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolProvenance {
    pub seed: u64,
    pub multiplier: u32,
    pub candidate_count: usize,
    /// SHA-256 of the candidate ids joined by newlines, in the order given.
    pub candidates_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub split_seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolProvenance>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u64,
}

pub fn resolve_relative(path: &Path, base: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<(), ManifestError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !is_valid_image_id(id) {
            return Err(ManifestError::InvalidId(id.to_string()));
        }
        if !seen.insert(id) {
            return Err(ManifestError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Shuffles `ids` with a seeded generator and assigns train, val, then test;
/// whatever is left stays unassigned. Entries keep the input order.
pub fn split_dataset<S: AsRef<str>>(
    ids: &[S],
    sizes: SplitSizes,
    seed: u64,
) -> Result<DatasetManifest, ManifestError> {
    check_unique(ids.iter().map(AsRef::as_ref))?;
    if sizes.total() > ids.len() {
        return Err(ManifestError::InsufficientIds {
            needed: sizes.total(),
            available: ids.len(),
        });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut splits = vec![Split::Unassigned; ids.len()];
    let plan = [
        (Split::Train, sizes.train),
        (Split::Val, sizes.val),
        (Split::Test, sizes.test),
    ];
    let mut cursor = order.iter();
    for (split, n) in plan {
        for &i in cursor.by_ref().take(n) {
            splits[i] = split;
        }
    }

    Ok(DatasetManifest {
        schema_version: SCHEMA_VERSION,
        split_seed: seed,
        entries: ids
            .iter()
            .zip(splits)
            .map(|(id, split)| ManifestEntry::new(id.as_ref(), split))
            .collect(),
        pool: None,
    })
}

fn candidates_digest<S: AsRef<str>>(candidates: &[S]) -> String {
    let mut hasher = Sha256::new();
    for (i, c) in candidates.iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(c.as_ref().as_bytes());
    }
    hex::encode(hasher.finalize())
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn labeled_count(&self) -> usize {
        self.entries.iter().filter(|e| e.split.is_labeled()).count()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entries_in<'a>(
        &'a self,
        splits: &'a [Split],
    ) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| splits.contains(&e.split))
    }

    /// Samples `multiplier × labeled` candidates into the pre-training pool.
    /// Any previous pool is replaced. Pool entries keep the candidate order.
    pub fn build_pretrain_pool<S: AsRef<str>>(
        &self,
        candidates: &[S],
        multiplier: u32,
        seed: u64,
    ) -> Result<DatasetManifest, ManifestError> {
        if multiplier == 0 {
            return Err(ManifestError::InvalidMultiplier);
        }
        check_unique(candidates.iter().map(AsRef::as_ref))?;
        let mut base = self.clone();
        base.entries.retain(|e| e.split != Split::PretrainPool);
        let existing: HashSet<&str> = base.entries.iter().map(|e| e.id.as_str()).collect();
        if let Some(c) = candidates.iter().find(|c| existing.contains(c.as_ref())) {
            return Err(ManifestError::CandidateOverlap(c.as_ref().to_string()));
        }

        let needed = multiplier as usize * base.labeled_count();
        if needed > candidates.len() {
            return Err(ManifestError::InsufficientCandidates {
                needed,
                available: candidates.len(),
            });
        }
        let mut picked = index::sample(
            &mut ChaCha8Rng::seed_from_u64(seed),
            candidates.len(),
            needed,
        )
        .into_vec();
        picked.sort_unstable();

        base.entries.extend(
            picked
                .into_iter()
                .map(|i| ManifestEntry::new(candidates[i].as_ref(), Split::PretrainPool)),
        );
        base.pool = Some(PoolProvenance {
            seed,
            multiplier,
            candidate_count: candidates.len(),
            candidates_sha256: candidates_digest(candidates),
        });
        Ok(base)
    }

    pub fn attach_artifact(
        &mut self,
        id: &str,
        kind: ArtifactKind,
        path: impl Into<PathBuf>,
    ) -> Result<(), ManifestError> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| ManifestError::UnknownId(id.to_string()))?;
        *entry.artifact_slot(kind) = Some(path.into());
        Ok(())
    }

    /// Every invariant violation, empty when the manifest is sound.
    pub fn validate(&self) -> Vec<ManifestError> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(ManifestError::SchemaVersion {
                found: u64::from(self.schema_version),
                expected: SCHEMA_VERSION,
            });
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !is_valid_image_id(&e.id) {
                problems.push(ManifestError::InvalidId(e.id.clone()));
            }
            if !seen.insert(e.id.as_str()) {
                problems.push(ManifestError::DuplicateId(e.id.clone()));
            }
            if e.split.is_labeled() && e.gt_path.is_none() {
                problems.push(ManifestError::MissingGtPath(e.id.clone()));
            }
        }
        if let Some(pool) = &self.pool {
            let expected = pool.multiplier as usize * self.labeled_count();
            let actual = self.count(Split::PretrainPool);
            if expected != actual {
                problems.push(ManifestError::InsufficientCandidates {
                    needed: expected,
                    available: actual,
                });
            }
        }
        problems
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical_json(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))?;
        if probe.schema_version != u64::from(SCHEMA_VERSION) {
            return Err(ManifestError::SchemaVersion {
                found: probe.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
