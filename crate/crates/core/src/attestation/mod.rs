//! Schema-typed, signed, time-bounded, revocable attestations.
//!
//! The [`AttestationStore`] is append-only: revocations and balance updates
//! are new records. [`AttestationStore::take_snapshot`] produces an immutable
//! [`GraphSnapshot`] that every downstream computation takes as its only
//! input. Timestamps are logical ticks; expiry and revocation take effect at
//! their timestamp, so a record revoked at `t` is absent from `snapshot(t)`.

mod schema;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::{Canonical, CodecError, Digest, Fixed, Value};
use crate::identity::{verify_signer, IdentityId, Keypair, PublicKey, Signature};

pub use schema::{FieldType, Schema};
pub use snapshot::{export_snapshot, import_snapshot, GraphSnapshot, SnapshotManifest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestationError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("unknown schema {0:?}")]
    UnknownSchema(String),
    #[error("schema {0:?} already registered")]
    DuplicateSchema(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(Fixed),
    #[error("expiry {expires_at} not after issue time {issued_at}")]
    InvalidExpiry { issued_at: u64, expires_at: u64 },
    #[error("only the original attestor may revoke")]
    NotAttestor,
    #[error("schema {0:?} is not revocable")]
    NotRevocable(String),
    #[error("no attestation with uid {0}")]
    UnknownTarget(Digest),
    #[error("attestation {0} already revoked")]
    AlreadyRevoked(Digest),
    #[error("snapshot at {at} is ahead of the store clock {clock}")]
    FutureTimestamp { at: u64, clock: u64 },
    #[error("timestamp {ts} falls inside an already snapshotted range (sealed through {sealed})")]
    SealedTimestamp { ts: u64, sealed: u64 },
    #[error("snapshot digest mismatch")]
    DigestMismatch,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// The signed part of an attestation; `uid` is the digest of its encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationBody {
    pub schema: String,
    pub attestor: IdentityId,
    pub attestor_key: PublicKey,
    pub subject: IdentityId,
    pub confidence: Fixed,
    pub payload: BTreeMap<String, Value>,
    pub issued_at: u64,
    pub expires_at: Option<u64>,
}

impl Canonical for AttestationBody {
    fn to_value(&self) -> Value {
        Value::map([
            ("type", Value::str("attestation")),
            ("schema", Value::str(&self.schema)),
            ("attestor", self.attestor.to_value()),
            ("attestor_key", self.attestor_key.to_value()),
            ("subject", self.subject.to_value()),
            ("confidence", Value::Fixed(self.confidence)),
            ("payload", self.payload.to_value()),
            ("issued_at", self.issued_at.to_value()),
            ("expires_at", self.expires_at.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        if v.field("type")?.as_str()? != "attestation" {
            return Err(CodecError::Shape("not an attestation body".into()));
        }
        Ok(AttestationBody {
            schema: String::from_value(v.field("schema")?)?,
            attestor: IdentityId::from_value(v.field("attestor")?)?,
            attestor_key: PublicKey::from_value(v.field("attestor_key")?)?,
            subject: IdentityId::from_value(v.field("subject")?)?,
            confidence: v.field("confidence")?.as_fixed()?,
            payload: BTreeMap::from_value(v.field("payload")?)?,
            issued_at: v.field("issued_at")?.as_u64()?,
            expires_at: Option::from_value(v.field("expires_at")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub body: AttestationBody,
    pub signature: Signature,
}

impl Attestation {
    pub fn issue(
        attestor: &Keypair,
        schema: &str,
        subject: IdentityId,
        confidence: Fixed,
        payload: BTreeMap<String, Value>,
        issued_at: u64,
        expires_at: Option<u64>,
    ) -> Self {
        let body = AttestationBody {
            schema: schema.to_owned(),
            attestor: attestor.id(),
            attestor_key: attestor.public(),
            subject,
            confidence,
            payload,
            issued_at,
            expires_at,
        };
        let signature = attestor.sign(&body.canonical_bytes());
        Attestation { body, signature }
    }

    pub fn uid(&self) -> Digest {
        self.body.digest()
    }

    pub fn verify_signature(&self) -> bool {
        verify_signer(
            &self.body.attestor,
            &self.body.attestor_key,
            &self.body.canonical_bytes(),
            &self.signature,
        )
    }

    /// Valid (issued, unexpired) at `at`; revocation is checked separately.
    pub fn live_at(&self, at: u64) -> bool {
        self.body.issued_at <= at && self.body.expires_at.is_none_or(|e| at < e)
    }

    pub fn attestor(&self) -> IdentityId {
        self.body.attestor
    }

    pub fn subject(&self) -> IdentityId {
        self.body.subject
    }
}

impl Canonical for Attestation {
    fn to_value(&self) -> Value {
        Value::map([
            ("body", self.body.to_value()),
            ("signature", self.signature.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Attestation {
            body: AttestationBody::from_value(v.field("body")?)?,
            signature: Signature::from_value(v.field("signature")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Revocation {
    pub target: Digest,
    pub attestor: IdentityId,
    pub attestor_key: PublicKey,
    pub revoked_at: u64,
    pub signature: Signature,
}

impl Revocation {
    fn body_value(
        target: &Digest,
        attestor: &IdentityId,
        key: &PublicKey,
        revoked_at: u64,
    ) -> Value {
        Value::map([
            ("type", Value::str("revocation")),
            ("target", Value::Digest(*target)),
            ("attestor", attestor.to_value()),
            ("attestor_key", key.to_value()),
            ("revoked_at", revoked_at.to_value()),
        ])
    }

    pub fn sign(attestor: &Keypair, target: Digest, revoked_at: u64) -> Self {
        let body = Self::body_value(&target, &attestor.id(), &attestor.public(), revoked_at);
        Revocation {
            target,
            attestor: attestor.id(),
            attestor_key: attestor.public(),
            revoked_at,
            signature: attestor.sign(&body.encode()),
        }
    }

    pub fn verify_signature(&self) -> bool {
        let body = Self::body_value(&self.target, &self.attestor, &self.attestor_key, self.revoked_at);
        verify_signer(&self.attestor, &self.attestor_key, &body.encode(), &self.signature)
    }
}

impl Canonical for Revocation {
    fn to_value(&self) -> Value {
        let mut v = Self::body_value(&self.target, &self.attestor, &self.attestor_key, self.revoked_at);
        if let Value::Map(m) = &mut v {
            m.insert(b"signature".to_vec(), self.signature.to_value());
        }
        v
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Revocation {
            target: v.field("target")?.as_digest()?,
            attestor: IdentityId::from_value(v.field("attestor")?)?,
            attestor_key: PublicKey::from_value(v.field("attestor_key")?)?,
            revoked_at: v.field("revoked_at")?.as_u64()?,
            signature: Signature::from_value(v.field("signature")?)?,
        })
    }
}

/// Append-only attestation store (single writer).
#[derive(Clone, Debug, Default)]
pub struct AttestationStore {
    schemas: BTreeMap<String, Schema>,
    attestations: BTreeMap<Digest, Attestation>,
    revocations: BTreeMap<Digest, Revocation>,
    /// Balance history per identity, ascending by timestamp.
    balances: BTreeMap<IdentityId, Vec<(u64, Fixed)>>,
    clock: u64,
    sealed: Option<u64>,
}

impl AttestationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.attestations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attestations.is_empty()
    }

    pub fn schemas(&self) -> impl Iterator<Item = &Schema> {
        self.schemas.values()
    }

    pub fn attestations(&self) -> impl Iterator<Item = &Attestation> {
        self.attestations.values()
    }

    pub fn revocations(&self) -> impl Iterator<Item = &Revocation> {
        self.revocations.values()
    }

    pub fn get(&self, uid: &Digest) -> Option<&Attestation> {
        self.attestations.get(uid)
    }

    pub fn register_schema(&mut self, schema: Schema) -> Result<(), AttestationError> {
        match self.schemas.get(&schema.id) {
            Some(existing) if *existing == schema => Ok(()),
            Some(_) => Err(AttestationError::DuplicateSchema(schema.id)),
            None => {
                self.schemas.insert(schema.id.clone(), schema);
                Ok(())
            }
        }
    }

    pub fn advance_clock(&mut self, to: u64) {
        self.clock = self.clock.max(to);
    }

    fn check_unsealed(&self, ts: u64) -> Result<(), AttestationError> {
        match self.sealed {
            Some(sealed) if ts <= sealed => Err(AttestationError::SealedTimestamp { ts, sealed }),
            _ => Ok(()),
        }
    }

    pub fn submit_attestation(&mut self, att: Attestation) -> Result<Digest, AttestationError> {
        let uid = att.uid();
        if self.attestations.contains_key(&uid) {
            return Ok(uid);
        }
        let schema = self
            .schemas
            .get(&att.body.schema)
            .ok_or_else(|| AttestationError::UnknownSchema(att.body.schema.clone()))?;
        if att.body.confidence < Fixed::ZERO || att.body.confidence > Fixed::ONE {
            return Err(AttestationError::ConfidenceOutOfRange(att.body.confidence));
        }
        if let Some(exp) = att.body.expires_at {
            if exp <= att.body.issued_at {
                return Err(AttestationError::InvalidExpiry {
                    issued_at: att.body.issued_at,
                    expires_at: exp,
                });
            }
        }
        schema.check_payload(&att.body.payload)?;
        if !att.verify_signature() {
            return Err(AttestationError::BadSignature);
        }
        self.check_unsealed(att.body.issued_at)?;
        self.advance_clock(att.body.issued_at);
        self.attestations.insert(uid, att);
        Ok(uid)
    }

    pub fn revoke(&mut self, rev: Revocation) -> Result<(), AttestationError> {
        let target = self
            .attestations
            .get(&rev.target)
            .ok_or(AttestationError::UnknownTarget(rev.target))?;
        if target.body.attestor != rev.attestor {
            return Err(AttestationError::NotAttestor);
        }
        if !rev.verify_signature() {
            return Err(AttestationError::BadSignature);
        }
        let revocable = self
            .schemas
            .get(&target.body.schema)
            .is_some_and(|s| s.revocable);
        if !revocable {
            return Err(AttestationError::NotRevocable(target.body.schema.clone()));
        }
        if let Some(existing) = self.revocations.get(&rev.target) {
            return if *existing == rev {
                Ok(())
            } else {
                Err(AttestationError::AlreadyRevoked(rev.target))
            };
        }
        self.check_unsealed(rev.revoked_at)?;
        self.advance_clock(rev.revoked_at);
        self.revocations.insert(rev.target, rev);
        Ok(())
    }

    /// Records a token balance effective from `at`. Setting a zero balance
    /// is how identities without attestations are registered.
    pub fn set_balance(&mut self, id: IdentityId, amount: Fixed, at: u64) -> Result<(), AttestationError> {
        if amount.is_negative() {
            return Err(AttestationError::SchemaViolation("negative balance".into()));
        }
        self.check_unsealed(at)?;
        self.advance_clock(at);
        let history = self.balances.entry(id).or_default();
        match history.last_mut() {
            Some((t, v)) if *t == at => *v = amount,
            _ => history.push((at, amount)),
        }
        history.sort_by_key(|(t, _)| *t);
        Ok(())
    }

    pub fn take_snapshot(&mut self, at: u64) -> Result<GraphSnapshot, AttestationError> {
        if at > self.clock {
            return Err(AttestationError::FutureTimestamp { at, clock: self.clock });
        }
        self.sealed = Some(self.sealed.map_or(at, |s| s.max(at)));
        Ok(self.snapshot_view(at))
    }

    /// Snapshot contents without sealing the store; identical to what
    /// `take_snapshot` returns for the same `at`.
    pub fn snapshot_view(&self, at: u64) -> GraphSnapshot {
        let attestations: BTreeMap<Digest, Attestation> = self
            .attestations
            .iter()
            .filter(|(uid, a)| {
                a.live_at(at)
                    && self
                        .revocations
                        .get(*uid)
                        .is_none_or(|r| at < r.revoked_at)
            })
            .map(|(uid, a)| (*uid, a.clone()))
            .collect();
        let balances: BTreeMap<IdentityId, Fixed> = self
            .balances
            .iter()
            .filter_map(|(id, hist)| {
                hist.iter()
                    .rev()
                    .find(|(t, _)| *t <= at)
                    .map(|(_, v)| (*id, *v))
            })
            .collect();
        let mut identities: BTreeSet<IdentityId> = balances.keys().copied().collect();
        for a in attestations.values() {
            identities.insert(a.attestor());
            identities.insert(a.subject());
        }
        GraphSnapshot {
            at,
            attestations,
            identities,
            balances,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_schemas() -> AttestationStore {
        let mut s = AttestationStore::new();
        s.register_schema(Schema::new("expertise", true).with_field("domain", FieldType::Str))
            .unwrap();
        s.register_schema(Schema::new("membership", false)).unwrap();
        s
    }

    fn expertise(by: &Keypair, to: IdentityId, conf: &str, at: u64, exp: Option<u64>) -> Attestation {
        let payload = BTreeMap::from([("domain".to_string(), Value::str("defi"))]);
        Attestation::issue(by, "expertise", to, conf.parse().unwrap(), payload, at, exp)
    }

    #[test]
    fn submit_returns_body_digest_and_is_idempotent() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        let att = expertise(&a, b.id(), "1", 1, None);
        let uid = s.submit_attestation(att.clone()).unwrap();
        assert_eq!(uid, crate::codec::sha256(&att.body.canonical_bytes()));
        assert_eq!(s.submit_attestation(att).unwrap(), uid);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        assert!(matches!(
            s.submit_attestation(expertise(&a, b.id(), "1.2", 1, None)),
            Err(AttestationError::ConfidenceOutOfRange(_))
        ));
        let unknown = Attestation::issue(&a, "nope", b.id(), Fixed::ONE, BTreeMap::new(), 1, None);
        assert!(matches!(s.submit_attestation(unknown), Err(AttestationError::UnknownSchema(_))));
        let wrong = Attestation::issue(&a, "expertise", b.id(), Fixed::ONE, BTreeMap::new(), 1, None);
        assert!(matches!(s.submit_attestation(wrong), Err(AttestationError::SchemaViolation(_))));
        let mut forged = expertise(&a, b.id(), "0.5", 1, None);
        forged.body.confidence = Fixed::ONE;
        assert_eq!(s.submit_attestation(forged), Err(AttestationError::BadSignature));
        assert!(matches!(
            s.submit_attestation(expertise(&a, b.id(), "1", 5, Some(5))),
            Err(AttestationError::InvalidExpiry { .. })
        ));
    }

    #[test]
    fn revocation_boundary() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        let uid = s.submit_attestation(expertise(&a, b.id(), "1", 1, None)).unwrap();
        assert_eq!(
            s.revoke(Revocation::sign(&b, uid, 5)),
            Err(AttestationError::NotAttestor)
        );
        s.revoke(Revocation::sign(&a, uid, 5)).unwrap();
        assert!(s.take_snapshot(4).unwrap().attestations.contains_key(&uid));
        assert!(!s.take_snapshot(5).unwrap().attestations.contains_key(&uid));
    }

    #[test]
    fn non_revocable_schema() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        let att = Attestation::issue(&a, "membership", b.id(), Fixed::ONE, BTreeMap::new(), 1, None);
        let uid = s.submit_attestation(att).unwrap();
        assert!(matches!(
            s.revoke(Revocation::sign(&a, uid, 2)),
            Err(AttestationError::NotRevocable(_))
        ));
        assert!(matches!(
            s.revoke(Revocation::sign(&a, Digest::default(), 2)),
            Err(AttestationError::UnknownTarget(_))
        ));
    }

    #[test]
    fn resubmission_after_revocation_gets_new_uid() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        let first = s.submit_attestation(expertise(&a, b.id(), "1", 1, None)).unwrap();
        s.revoke(Revocation::sign(&a, first, 3)).unwrap();
        let second = s.submit_attestation(expertise(&a, b.id(), "1", 4, None)).unwrap();
        assert_ne!(first, second);
        let snap = s.take_snapshot(4).unwrap();
        assert!(snap.attestations.contains_key(&second));
        assert!(!snap.attestations.contains_key(&first));
    }

    #[test]
    fn expiry_boundary_and_future_snapshot() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        let uid = s.submit_attestation(expertise(&a, b.id(), "1", 1, Some(10))).unwrap();
        assert_eq!(
            s.take_snapshot(2),
            Err(AttestationError::FutureTimestamp { at: 2, clock: 1 })
        );
        s.advance_clock(10);
        assert!(s.take_snapshot(9).unwrap().attestations.contains_key(&uid));
        assert!(s.take_snapshot(10).unwrap().attestations.is_empty());
    }

    #[test]
    fn empty_store_snapshot() {
        let mut s = AttestationStore::new();
        let snap = s.take_snapshot(0).unwrap();
        assert!(snap.attestations.is_empty());
        assert!(snap.identities.is_empty());
    }

    #[test]
    fn sealed_history_cannot_change() {
        let mut s = store_with_schemas();
        let a = Keypair::from_seed("a");
        let b = Keypair::from_seed("b");
        s.advance_clock(5);
        s.take_snapshot(5).unwrap();
        assert!(matches!(
            s.submit_attestation(expertise(&a, b.id(), "1", 5, None)),
            Err(AttestationError::SealedTimestamp { .. })
        ));
        s.submit_attestation(expertise(&a, b.id(), "1", 6, None)).unwrap();
    }

    #[test]
    fn balances_follow_history() {
        let mut s = AttestationStore::new();
        let a = Keypair::from_seed("a").id();
        s.set_balance(a, Fixed::from_int(10).unwrap(), 1).unwrap();
        s.set_balance(a, Fixed::from_int(20).unwrap(), 3).unwrap();
        assert!(s.snapshot_view(0).balances.is_empty());
        assert_eq!(s.snapshot_view(2).balances[&a], Fixed::from_int(10).unwrap());
        assert_eq!(s.snapshot_view(3).balances[&a], Fixed::from_int(20).unwrap());
    }
}
