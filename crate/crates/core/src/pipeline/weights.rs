use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attestation::GraphSnapshot;
use crate::codec::{apportion, Canonical, CodecError, Fixed, Value};
use crate::identity::IdentityId;
use crate::trust::TrustScoreTable;

use super::PipelineError;

/// Mixing coefficients for token balance, trust score, and domain expertise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMix {
    pub token: Fixed,
    pub attestation: Fixed,
    pub expertise: Fixed,
}

impl Default for WeightMix {
    fn default() -> Self {
        let third = Fixed::from_raw(333_333_333);
        WeightMix {
            token: third,
            attestation: third,
            expertise: Fixed::from_raw(333_333_334),
        }
    }
}

impl Canonical for WeightMix {
    fn to_value(&self) -> Value {
        Value::map([
            ("token", Value::Fixed(self.token)),
            ("attestation", Value::Fixed(self.attestation)),
            ("expertise", Value::Fixed(self.expertise)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(WeightMix {
            token: v.field("token")?.as_fixed()?,
            attestation: v.field("attestation")?.as_fixed()?,
            expertise: v.field("expertise")?.as_fixed()?,
        })
    }
}

/// `w_t * balance share + w_a * trust + w_e * [holds domain schema]`,
/// renormalized so the weights sum to exactly one. The balance share is
/// apportioned exactly; with no domain schema the expertise term is zero.
pub fn compute_voter_weights(
    snapshot: &GraphSnapshot,
    trust: &TrustScoreTable,
    mix: &WeightMix,
    domain_schema: Option<&str>,
) -> Result<BTreeMap<IdentityId, Fixed>, PipelineError> {
    if trust.snapshot_id != snapshot.at || trust.snapshot_digest != snapshot.digest() {
        return Err(PipelineError::SnapshotMismatch);
    }
    if [mix.token, mix.attestation, mix.expertise].iter().any(|w| w.is_negative()) {
        return Err(PipelineError::InvalidConfig("negative weight coefficient".into()));
    }
    let ids: Vec<IdentityId> = snapshot.identities.iter().copied().collect();
    if ids.is_empty() {
        return Ok(BTreeMap::new());
    }
    let balances: Vec<Fixed> = ids.iter().map(|id| snapshot.balance(id).max(Fixed::ZERO)).collect();
    let token_share = if balances.iter().all(|b| b.is_zero()) {
        vec![Fixed::ZERO; ids.len()]
    } else {
        apportion(mix.token, &balances)?
    };
    let experts: Option<std::collections::BTreeSet<IdentityId>> = domain_schema.map(|schema| {
        snapshot
            .attestations_of(Some(schema))
            .map(|(_, a)| a.subject())
            .collect()
    });
    let mut raw = Vec::with_capacity(ids.len());
    for (id, share) in ids.iter().zip(token_share) {
        let mut w = share.checked_add(mix.attestation.checked_mul(trust.score(id))?)?;
        if experts.as_ref().is_some_and(|e| e.contains(id)) {
            w = w.checked_add(mix.expertise)?;
        }
        raw.push(w);
    }
    if raw.iter().all(|w| w.is_zero()) {
        return Err(PipelineError::InvalidConfig(
            "weight mix gives every voter zero weight".into(),
        ));
    }
    let normalized = apportion(Fixed::ONE, &raw)?;
    Ok(ids.into_iter().zip(normalized).collect())
}
