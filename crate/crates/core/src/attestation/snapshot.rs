use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_decode, sha256, Canonical, CodecError, Digest, Fixed, Value};
use crate::identity::IdentityId;

use super::{Attestation, AttestationError};

/// Immutable view of the attestation graph at one logical timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphSnapshot {
    /// Snapshot id; totally orders snapshots.
    pub at: u64,
    pub attestations: BTreeMap<Digest, Attestation>,
    pub identities: BTreeSet<IdentityId>,
    pub balances: BTreeMap<IdentityId, Fixed>,
}

impl GraphSnapshot {
    pub fn empty(at: u64) -> Self {
        GraphSnapshot {
            at,
            attestations: BTreeMap::new(),
            identities: BTreeSet::new(),
            balances: BTreeMap::new(),
        }
    }

    pub fn contains(&self, id: &IdentityId) -> bool {
        self.identities.contains(id)
    }

    pub fn balance(&self, id: &IdentityId) -> Fixed {
        self.balances.get(id).copied().unwrap_or(Fixed::ZERO)
    }

    /// Active attestations, optionally restricted to one schema, in uid order.
    pub fn attestations_of<'a>(
        &'a self,
        schema: Option<&'a str>,
    ) -> impl Iterator<Item = (&'a Digest, &'a Attestation)> + 'a {
        self.attestations
            .iter()
            .filter(move |(_, a)| schema.is_none_or(|s| a.body.schema == s))
    }

    /// True when `subject` holds at least one active attestation of `schema`.
    pub fn holds_schema(&self, subject: &IdentityId, schema: &str) -> bool {
        self.attestations
            .values()
            .any(|a| a.body.subject == *subject && a.body.schema == schema)
    }

    pub fn verify_signatures(&self) -> Result<(), AttestationError> {
        for (uid, a) in &self.attestations {
            if a.uid() != *uid || !a.verify_signature() {
                return Err(AttestationError::BadSignature);
            }
        }
        Ok(())
    }
}

impl Canonical for GraphSnapshot {
    fn to_value(&self) -> Value {
        Value::map([
            ("at", self.at.to_value()),
            ("attestations", self.attestations.to_value()),
            ("identities", self.identities.to_value()),
            ("balances", self.balances.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(GraphSnapshot {
            at: v.field("at")?.as_u64()?,
            attestations: BTreeMap::from_value(v.field("attestations")?)?,
            identities: BTreeSet::from_value(v.field("identities")?)?,
            balances: BTreeMap::from_value(v.field("balances")?)?,
        })
    }
}

/// Sidecar written next to an exported snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format: String,
    pub snapshot_id: u64,
    pub digest: Digest,
    pub attestations: usize,
    pub identities: usize,
}

pub const SNAPSHOT_FORMAT: &str = "gov-snapshot/1";

pub fn export_snapshot(snapshot: &GraphSnapshot) -> (Vec<u8>, SnapshotManifest) {
    let bytes = snapshot.canonical_bytes();
    let manifest = SnapshotManifest {
        format: SNAPSHOT_FORMAT.into(),
        snapshot_id: snapshot.at,
        digest: sha256(&bytes),
        attestations: snapshot.attestations.len(),
        identities: snapshot.identities.len(),
    };
    (bytes, manifest)
}

/// Decodes an exported snapshot, checking the sidecar digest and every
/// attestation signature.
pub fn import_snapshot(
    bytes: &[u8],
    manifest: &SnapshotManifest,
) -> Result<GraphSnapshot, AttestationError> {
    if sha256(bytes) != manifest.digest {
        return Err(AttestationError::DigestMismatch);
    }
    let snapshot: GraphSnapshot = canonical_decode(bytes)?;
    if snapshot.at != manifest.snapshot_id {
        return Err(AttestationError::DigestMismatch);
    }
    snapshot.verify_signatures()?;
    Ok(snapshot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{AttestationStore, Schema};
    use crate::identity::Keypair;

    #[test]
    fn export_import_round_trip_and_tamper() {
        let mut store = AttestationStore::new();
        store.register_schema(Schema::new("trust", true)).unwrap();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        store
            .submit_attestation(Attestation::issue(&a, "trust", b.id(), Fixed::ONE, BTreeMap::new(), 1, None))
            .unwrap();
        store.set_balance(a.id(), Fixed::from_int(3).unwrap(), 1).unwrap();
        let snap = store.take_snapshot(1).unwrap();
        let (bytes, manifest) = export_snapshot(&snap);
        assert_eq!(import_snapshot(&bytes, &manifest).unwrap(), snap);
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert_eq!(import_snapshot(&bad, &manifest), Err(AttestationError::DigestMismatch));
    }
}
