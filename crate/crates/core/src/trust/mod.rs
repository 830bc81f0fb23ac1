//! Trust propagation over attestation snapshots.
//!
//! * [`compute_trust_scores`]: personalized PageRank from seed identities,
//!   restricted to the ball of identities within `hop_limit` attestation
//!   hops of a seed. Everything outside the ball scores exactly zero.
//! * [`social_distance`]: shortest directed attestation path length.
//! * [`detect_rings`] and [`compute_contribution_scores`]: recency-weighted
//!   contribution scoring with reciprocal-ring discounting.

mod contribution;
mod distance;
mod pagerank;
mod rings;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Digest, Fixed, MerkleTree, Value};
use crate::identity::IdentityId;

pub use contribution::{
    compute_contribution_scores, ContributionParams, ContributionScoreTable, CONTRIBUTION_SCHEMA,
};
pub use distance::{social_distance, DistanceIndex};
pub use pagerank::compute_trust_scores;
pub use rings::{detect_rings, Ring};

pub const DEFAULT_DAMPING: &str = "0.85";
pub const DEFAULT_HOP_LIMIT: u32 = 3;
pub const DEFAULT_SCORE_SCALE: i64 = 10_000;
pub const DEFAULT_MAX_ITERATIONS: u32 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("no seeds configured")]
    NoSeeds,
    #[error("seed {0:?} is not in the snapshot")]
    SeedNotInSnapshot(IdentityId),
    #[error("identity {0:?} is not in the snapshot")]
    UnknownIdentity(IdentityId),
    #[error("invalid trust configuration: {0}")]
    InvalidConfig(String),
    #[error("ring size {0} outside [2, 6]")]
    InvalidRingSize(usize),
    #[error("trust table was computed from a different snapshot")]
    SnapshotMismatch,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustConfig {
    /// Seed identity -> prior; priors are normalized to sum to one.
    pub seeds: BTreeMap<IdentityId, Fixed>,
    pub damping: Fixed,
    pub hop_limit: u32,
    pub max_iterations: u32,
    pub convergence_epsilon: Fixed,
    pub score_scale: i64,
    /// Attestation schemas that carry trust; empty means all.
    #[serde(default)]
    pub edge_schemas: BTreeSet<String>,
}

impl TrustConfig {
    /// Equal priors over `seeds` with the default constants.
    pub fn with_seeds<I: IntoIterator<Item = IdentityId>>(seeds: I) -> Self {
        TrustConfig {
            seeds: seeds.into_iter().map(|s| (s, Fixed::ONE)).collect(),
            damping: DEFAULT_DAMPING.parse().expect("constant"),
            hop_limit: DEFAULT_HOP_LIMIT,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            convergence_epsilon: Fixed::EPSILON,
            score_scale: DEFAULT_SCORE_SCALE,
            edge_schemas: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TrustError> {
        if self.seeds.is_empty() {
            return Err(TrustError::NoSeeds);
        }
        if self.damping <= Fixed::ZERO || self.damping >= Fixed::ONE {
            return Err(TrustError::InvalidConfig("damping must lie in (0, 1)".into()));
        }
        if self.hop_limit < 1 {
            return Err(TrustError::InvalidConfig("hop_limit must be at least 1".into()));
        }
        if self.convergence_epsilon <= Fixed::ZERO {
            return Err(TrustError::InvalidConfig("convergence_epsilon must be positive".into()));
        }
        if self.score_scale <= 0 {
            return Err(TrustError::InvalidConfig("score_scale must be positive".into()));
        }
        if self.seeds.values().any(|p| p.is_negative()) {
            return Err(TrustError::InvalidConfig("negative seed prior".into()));
        }
        if self.seeds.values().all(|p| p.is_zero()) {
            return Err(TrustError::InvalidConfig("seed priors sum to zero".into()));
        }
        Ok(())
    }

    pub fn accepts_schema(&self, schema: &str) -> bool {
        self.edge_schemas.is_empty() || self.edge_schemas.contains(schema)
    }
}

impl Canonical for TrustConfig {
    fn to_value(&self) -> Value {
        Value::map([
            ("seeds", self.seeds.to_value()),
            ("damping", Value::Fixed(self.damping)),
            ("hop_limit", self.hop_limit.to_value()),
            ("max_iterations", self.max_iterations.to_value()),
            ("convergence_epsilon", Value::Fixed(self.convergence_epsilon)),
            ("score_scale", Value::Int(self.score_scale)),
            ("edge_schemas", self.edge_schemas.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(TrustConfig {
            seeds: BTreeMap::from_value(v.field("seeds")?)?,
            damping: v.field("damping")?.as_fixed()?,
            hop_limit: u32::from_value(v.field("hop_limit")?)?,
            max_iterations: u32::from_value(v.field("max_iterations")?)?,
            convergence_epsilon: v.field("convergence_epsilon")?.as_fixed()?,
            score_scale: v.field("score_scale")?.as_int()?,
            edge_schemas: BTreeSet::from_value(v.field("edge_schemas")?)?,
        })
    }
}

/// Seed priors that change over epochs, for progressive bootstrapping: early
/// epochs lean on genesis attestors, later ones widen the seed set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSchedule {
    /// (first epoch, seeds) in ascending epoch order.
    pub phases: Vec<(u64, BTreeMap<IdentityId, Fixed>)>,
}

impl SeedSchedule {
    pub fn seeds_at(&self, epoch: u64) -> Option<&BTreeMap<IdentityId, Fixed>> {
        self.phases
            .iter()
            .rev()
            .find(|(start, _)| *start <= epoch)
            .map(|(_, seeds)| seeds)
    }

    pub fn config_at(&self, base: &TrustConfig, epoch: u64) -> TrustConfig {
        let mut cfg = base.clone();
        if let Some(seeds) = self.seeds_at(epoch) {
            cfg.seeds = seeds.clone();
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrustScoreTable {
    pub snapshot_id: u64,
    pub snapshot_digest: Digest,
    pub config_digest: Digest,
    /// Every snapshot identity; sums to exactly one.
    pub scores: BTreeMap<IdentityId, Fixed>,
    pub scaled: BTreeMap<IdentityId, i64>,
    pub iterations: u32,
    /// Final L1 change between the last two iterates.
    pub residual: Fixed,
    /// False when `max_iterations` ran out before the residual dropped
    /// below the convergence epsilon.
    pub converged: bool,
}

impl TrustScoreTable {
    pub fn score(&self, id: &IdentityId) -> Fixed {
        self.scores.get(id).copied().unwrap_or(Fixed::ZERO)
    }

    /// Merkle root over `identity -> canonical score`; the value operators
    /// agree on when trust scoring runs as a settled task.
    pub fn root(&self) -> Digest {
        if self.scores.is_empty() {
            return crate::codec::empty_root();
        }
        MerkleTree::build(
            self.scores
                .iter()
                .map(|(id, s)| (id.as_bytes().to_vec(), Value::Fixed(*s).encode()))
                .collect(),
        )
        .expect("identities are unique")
        .root()
    }
}

impl Canonical for TrustScoreTable {
    fn to_value(&self) -> Value {
        Value::map([
            ("snapshot_id", self.snapshot_id.to_value()),
            ("snapshot_digest", Value::Digest(self.snapshot_digest)),
            ("config_digest", Value::Digest(self.config_digest)),
            ("scores", self.scores.to_value()),
            ("scaled", self.scaled.to_value()),
            ("iterations", self.iterations.to_value()),
            ("residual", Value::Fixed(self.residual)),
            ("converged", Value::Bool(self.converged)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(TrustScoreTable {
            snapshot_id: v.field("snapshot_id")?.as_u64()?,
            snapshot_digest: v.field("snapshot_digest")?.as_digest()?,
            config_digest: v.field("config_digest")?.as_digest()?,
            scores: BTreeMap::from_value(v.field("scores")?)?,
            scaled: BTreeMap::from_value(v.field("scaled")?)?,
            iterations: u32::from_value(v.field("iterations")?)?,
            residual: v.field("residual")?.as_fixed()?,
            converged: v.field("converged")?.as_bool()?,
        })
    }
}
