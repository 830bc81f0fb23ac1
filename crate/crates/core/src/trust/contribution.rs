use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::attestation::GraphSnapshot;
use crate::codec::math::exp2_neg;
use crate::codec::{sum_sorted_pairwise, Canonical, CodecError, Digest, Fixed, Value};
use crate::identity::IdentityId;

use super::{detect_rings, Ring, TrustError, TrustScoreTable};

pub const CONTRIBUTION_SCHEMA: &str = "contribution";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributionParams {
    pub schema: String,
    /// Ticks after which a contribution counts half.
    pub half_life: u64,
    /// Multiplier applied to attestations that sit on a detected ring.
    pub ring_discount: Fixed,
    pub max_ring_size: usize,
}

impl Default for ContributionParams {
    fn default() -> Self {
        ContributionParams {
            schema: CONTRIBUTION_SCHEMA.into(),
            half_life: 30,
            ring_discount: "0.1".parse().expect("constant"),
            max_ring_size: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContributionScoreTable {
    pub snapshot_id: u64,
    pub epoch: u64,
    pub scores: BTreeMap<IdentityId, Fixed>,
    pub rings: Vec<Ring>,
    /// Uids of every attestation that received the ring discount.
    pub discounted: BTreeSet<Digest>,
}

impl ContributionScoreTable {
    pub fn score(&self, id: &IdentityId) -> Fixed {
        self.scores.get(id).copied().unwrap_or(Fixed::ZERO)
    }
}

impl Canonical for ContributionScoreTable {
    fn to_value(&self) -> Value {
        Value::map([
            ("snapshot_id", self.snapshot_id.to_value()),
            ("epoch", self.epoch.to_value()),
            ("scores", self.scores.to_value()),
            ("rings", self.rings.to_value()),
            ("discounted", self.discounted.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(ContributionScoreTable {
            snapshot_id: v.field("snapshot_id")?.as_u64()?,
            epoch: v.field("epoch")?.as_u64()?,
            scores: BTreeMap::from_value(v.field("scores")?)?,
            rings: Vec::from_value(v.field("rings")?)?,
            discounted: BTreeSet::from_value(v.field("discounted")?)?,
        })
    }
}

/// `score(s) = sum over contribution attestations a -> s of
/// confidence * 2^(-age / half_life) * trust(a)`, with ring edges scaled by
/// the ring discount. Scores depend only on incoming attestations.
pub fn compute_contribution_scores(
    snapshot: &GraphSnapshot,
    trust: &TrustScoreTable,
    epoch: u64,
    params: &ContributionParams,
) -> Result<ContributionScoreTable, TrustError> {
    if trust.snapshot_id != snapshot.at || trust.snapshot_digest != snapshot.digest() {
        return Err(TrustError::SnapshotMismatch);
    }
    if params.half_life == 0 {
        return Err(TrustError::InvalidConfig("half_life must be positive".into()));
    }
    let rings = detect_rings(snapshot, &params.schema, params.max_ring_size)?;
    let discounted: BTreeSet<Digest> = rings.iter().flat_map(|r| r.uids().copied()).collect();

    let mut terms: BTreeMap<IdentityId, Vec<(Digest, Fixed)>> = BTreeMap::new();
    for (uid, att) in snapshot.attestations_of(Some(&params.schema)) {
        if att.attestor() == att.subject() {
            continue;
        }
        let age = epoch.saturating_sub(att.body.issued_at);
        let exponent = Fixed::from_ratio(
            i64::try_from(age).map_err(|_| CodecError::Overflow)?,
            i64::try_from(params.half_life).map_err(|_| CodecError::Overflow)?,
        )?;
        let mut term = att
            .body
            .confidence
            .checked_mul(exp2_neg(exponent)?)?
            .checked_mul(trust.score(&att.attestor()))?;
        if discounted.contains(uid) {
            term = term.checked_mul(params.ring_discount)?;
        }
        terms.entry(att.subject()).or_default().push((*uid, term));
    }

    let mut scores: BTreeMap<IdentityId, Fixed> =
        snapshot.identities.iter().map(|id| (*id, Fixed::ZERO)).collect();
    for (subject, entries) in terms {
        scores.insert(subject, sum_sorted_pairwise(entries)?);
    }
    Ok(ContributionScoreTable {
        snapshot_id: snapshot.at,
        epoch,
        scores,
        rings,
        discounted,
    })
}
