//! Liquid-democracy delegation resolution.
//!
//! Each identity follows its scope-matching delegation (topic match first,
//! then `global`) as long as every hop satisfies its constraints. A chain
//! stops at the first identity without a valid outgoing hop; that terminal
//! receives the balances of everyone whose chain ends there. Identities on
//! a delegation cycle keep their own balance and are reported as forfeited;
//! chains that run into a cycle end at the first cycle member reached.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::GraphSnapshot;
use crate::codec::{empty_root, Canonical, CodecError, Digest, Fixed, MerkleProof, MerkleTree, Value};
use crate::identity::{verify_signer, IdentityId, Keypair, PublicKey, Signature};
use crate::par;
use crate::trust::{DistanceIndex, TrustScoreTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DelegationError {
    #[error("identity {0:?} is not in the snapshot")]
    UnknownIdentity(IdentityId),
    #[error("trust table was computed from a different snapshot")]
    SnapshotMismatch,
    #[error("invalid delegation record from {delegator:?}: {reason}")]
    InvalidRecord { delegator: IdentityId, reason: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Global,
    Topic(String),
}

impl Canonical for Scope {
    fn to_value(&self) -> Value {
        match self {
            Scope::Global => Value::Null,
            Scope::Topic(t) => Value::str(t),
        }
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        match v {
            Value::Null => Ok(Scope::Global),
            other => Ok(Scope::Topic(other.as_str()?.to_owned())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    /// Delegate must be within this many attestation hops of the delegator.
    pub max_distance: Option<u32>,
    /// Delegate must be the subject of an active attestation of this schema.
    pub required_schema: Option<String>,
}

impl Canonical for Constraints {
    fn to_value(&self) -> Value {
        Value::map([
            ("max_distance", self.max_distance.to_value()),
            ("required_schema", self.required_schema.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Constraints {
            max_distance: Option::from_value(v.field("max_distance")?)?,
            required_schema: Option::from_value(v.field("required_schema")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelegationRecord {
    pub delegator: IdentityId,
    pub delegator_key: PublicKey,
    pub delegate: IdentityId,
    pub scope: Scope,
    pub constraints: Constraints,
    pub issued_at: u64,
    pub signature: Signature,
}

impl DelegationRecord {
    fn body_value(&self) -> Value {
        Value::map([
            ("type", Value::str("delegation")),
            ("delegator", self.delegator.to_value()),
            ("delegator_key", self.delegator_key.to_value()),
            ("delegate", self.delegate.to_value()),
            ("scope", self.scope.to_value()),
            ("constraints", self.constraints.to_value()),
            ("issued_at", self.issued_at.to_value()),
        ])
    }

    pub fn sign(
        delegator: &Keypair,
        delegate: IdentityId,
        scope: Scope,
        constraints: Constraints,
        issued_at: u64,
    ) -> Self {
        let mut rec = DelegationRecord {
            delegator: delegator.id(),
            delegator_key: delegator.public(),
            delegate,
            scope,
            constraints,
            issued_at,
            signature: Signature([0; 64]),
        };
        rec.signature = delegator.sign(&rec.body_value().encode());
        rec
    }

    pub fn verify_signature(&self) -> bool {
        verify_signer(
            &self.delegator,
            &self.delegator_key,
            &self.body_value().encode(),
            &self.signature,
        )
    }
}

impl Canonical for DelegationRecord {
    fn to_value(&self) -> Value {
        let mut v = self.body_value();
        if let Value::Map(m) = &mut v {
            m.insert(b"signature".to_vec(), self.signature.to_value());
        }
        v
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        if v.field("type")?.as_str()? != "delegation" {
            return Err(CodecError::Shape("not a delegation record".into()));
        }
        Ok(DelegationRecord {
            delegator: IdentityId::from_value(v.field("delegator")?)?,
            delegator_key: PublicKey::from_value(v.field("delegator_key")?)?,
            delegate: IdentityId::from_value(v.field("delegate")?)?,
            scope: Scope::from_value(v.field("scope")?)?,
            constraints: Constraints::from_value(v.field("constraints")?)?,
            issued_at: v.field("issued_at")?.as_u64()?,
            signature: Signature::from_value(v.field("signature")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRef {
    pub id: String,
    pub topic: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedWeights {
    pub snapshot_id: u64,
    pub proposal_id: String,
    /// Every snapshot identity, including those left at zero.
    pub weights: BTreeMap<IdentityId, Fixed>,
    pub forfeited: BTreeSet<IdentityId>,
    pub root: Digest,
}

impl ResolvedWeights {
    pub fn weight(&self, id: &IdentityId) -> Fixed {
        self.weights.get(id).copied().unwrap_or(Fixed::ZERO)
    }
}

impl Canonical for ResolvedWeights {
    fn to_value(&self) -> Value {
        Value::map([
            ("snapshot_id", self.snapshot_id.to_value()),
            ("proposal_id", Value::str(&self.proposal_id)),
            ("weights", self.weights.to_value()),
            ("forfeited", self.forfeited.to_value()),
            ("root", Value::Digest(self.root)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(ResolvedWeights {
            snapshot_id: v.field("snapshot_id")?.as_u64()?,
            proposal_id: v.field("proposal_id")?.as_str()?.to_owned(),
            weights: BTreeMap::from_value(v.field("weights")?)?,
            forfeited: BTreeSet::from_value(v.field("forfeited")?)?,
            root: v.field("root")?.as_digest()?,
        })
    }
}

/// Merkle commitment over resolved weights; yields a proof per identity.
#[derive(Clone, Debug)]
pub struct WeightCommitment {
    tree: Option<MerkleTree>,
}

impl WeightCommitment {
    pub fn root(&self) -> Digest {
        self.tree.as_ref().map_or_else(empty_root, MerkleTree::root)
    }

    pub fn prove(&self, id: &IdentityId) -> Result<MerkleProof, CodecError> {
        match &self.tree {
            Some(tree) => tree.prove(id.as_bytes()),
            None => Err(CodecError::KeyNotFound(id.to_string())),
        }
    }
}

/// Leaf layout: identity id bytes -> canonical fixed-point weight.
pub fn weight_leaf(id: &IdentityId, weight: Fixed) -> (Vec<u8>, Vec<u8>) {
    (id.as_bytes().to_vec(), Value::Fixed(weight).encode())
}

fn commit_map(weights: &BTreeMap<IdentityId, Fixed>) -> WeightCommitment {
    if weights.is_empty() {
        return WeightCommitment { tree: None };
    }
    let leaves = weights.iter().map(|(id, w)| weight_leaf(id, *w)).collect();
    WeightCommitment {
        tree: Some(MerkleTree::build(leaves).expect("identity keys are unique")),
    }
}

pub fn commit(weights: &ResolvedWeights) -> WeightCommitment {
    commit_map(&weights.weights)
}

/// Picks the active record per (delegator, scope): latest `issued_at`, ties
/// broken by lowest record digest.
fn active_records(records: &[DelegationRecord]) -> BTreeMap<(IdentityId, Scope), &DelegationRecord> {
    let mut active: BTreeMap<(IdentityId, Scope), (&DelegationRecord, Digest)> = BTreeMap::new();
    for rec in records {
        let key = (rec.delegator, rec.scope.clone());
        let digest = rec.digest();
        match active.get(&key) {
            Some((cur, cur_digest))
                if (cur.issued_at, std::cmp::Reverse(*cur_digest))
                    >= (rec.issued_at, std::cmp::Reverse(digest)) => {}
            _ => {
                active.insert(key, (rec, digest));
            }
        }
    }
    active.into_iter().map(|(k, (r, _))| (k, r)).collect()
}

pub fn resolve(
    snapshot: &GraphSnapshot,
    delegations: &[DelegationRecord],
    proposal: &ProposalRef,
    trust: &TrustScoreTable,
) -> Result<ResolvedWeights, DelegationError> {
    if trust.snapshot_id != snapshot.at || trust.snapshot_digest != snapshot.digest() {
        return Err(DelegationError::SnapshotMismatch);
    }
    for rec in delegations {
        for id in [&rec.delegator, &rec.delegate] {
            if !snapshot.contains(id) {
                return Err(DelegationError::UnknownIdentity(*id));
            }
        }
        if rec.delegator == rec.delegate {
            return Err(DelegationError::InvalidRecord {
                delegator: rec.delegator,
                reason: "self-delegation".into(),
            });
        }
    }
    let sig_ok = par::map(delegations, DelegationRecord::verify_signature);
    if let Some(i) = sig_ok.iter().position(|ok| !ok) {
        return Err(DelegationError::InvalidRecord {
            delegator: delegations[i].delegator,
            reason: "bad signature".into(),
        });
    }

    let active = active_records(delegations);
    let topic = Scope::Topic(proposal.topic.clone());
    let chosen: Vec<&DelegationRecord> = snapshot
        .identities
        .iter()
        .filter_map(|id| {
            active
                .get(&(*id, topic.clone()))
                .or_else(|| active.get(&(*id, Scope::Global)))
                .copied()
        })
        .collect();

    let needs_distance = chosen.iter().any(|r| r.constraints.max_distance.is_some());
    let distances = needs_distance.then(|| DistanceIndex::new(snapshot));
    let mut schema_holders: BTreeMap<&str, BTreeSet<IdentityId>> = BTreeMap::new();
    for rec in &chosen {
        if let Some(schema) = rec.constraints.required_schema.as_deref() {
            schema_holders.entry(schema).or_insert_with(|| {
                snapshot
                    .attestations_of(Some(schema))
                    .map(|(_, a)| a.subject())
                    .collect()
            });
        }
    }
    let valid = par::map(&chosen, |rec| -> Result<bool, DelegationError> {
        if let Some(schema) = rec.constraints.required_schema.as_deref() {
            if !schema_holders[schema].contains(&rec.delegate) {
                return Ok(false);
            }
        }
        if let Some(max) = rec.constraints.max_distance {
            let index = distances.as_ref().expect("built when needed");
            let d = index
                .bounded_distance(&rec.delegator, &rec.delegate, max)
                .map_err(|_| DelegationError::UnknownIdentity(rec.delegator))?;
            if d.is_none() {
                return Ok(false);
            }
        }
        Ok(true)
    });

    let ids: Vec<IdentityId> = snapshot.identities.iter().copied().collect();
    let index: BTreeMap<IdentityId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut next: Vec<Option<usize>> = vec![None; ids.len()];
    for (rec, ok) in chosen.iter().zip(valid) {
        if ok? {
            next[index[&rec.delegator]] = Some(index[&rec.delegate]);
        }
    }

    let (terminal, on_cycle) = resolve_terminals(&next);
    let mut acc = vec![Fixed::ZERO; ids.len()];
    for (i, id) in ids.iter().enumerate() {
        let t = terminal[i];
        acc[t] = acc[t].checked_add(snapshot.balance(id))?;
    }
    let weights: BTreeMap<IdentityId, Fixed> = ids.iter().copied().zip(acc).collect();
    let forfeited = ids
        .iter()
        .zip(&on_cycle)
        .filter(|(_, c)| **c)
        .map(|(id, _)| *id)
        .collect();
    let root = commit_map(&weights).root();
    Ok(ResolvedWeights {
        snapshot_id: snapshot.at,
        proposal_id: proposal.id.clone(),
        weights,
        forfeited,
        root,
    })
}

/// Terminal node per node of a functional graph, plus cycle membership.
fn resolve_terminals(next: &[Option<usize>]) -> (Vec<usize>, Vec<bool>) {
    const UNSEEN: u8 = 0;
    const ON_PATH: u8 = 1;
    const DONE: u8 = 2;
    let n = next.len();
    let mut state = vec![UNSEEN; n];
    let mut terminal = vec![usize::MAX; n];
    let mut on_cycle = vec![false; n];
    let mut path: Vec<usize> = Vec::new();
    for start in 0..n {
        if state[start] == DONE {
            continue;
        }
        path.clear();
        let mut cur = start;
        let end = loop {
            match state[cur] {
                DONE => break terminal[cur],
                ON_PATH => {
                    let pos = path.iter().position(|&p| p == cur).expect("on path");
                    for &c in &path[pos..] {
                        on_cycle[c] = true;
                        terminal[c] = c;
                        state[c] = DONE;
                    }
                    path.truncate(pos);
                    break cur;
                }
                _ => {
                    state[cur] = ON_PATH;
                    path.push(cur);
                    match next[cur] {
                        Some(nx) => cur = nx,
                        None => {
                            path.pop();
                            terminal[cur] = cur;
                            state[cur] = DONE;
                            break cur;
                        }
                    }
                }
            }
        };
        for &p in &path {
            terminal[p] = end;
            state[p] = DONE;
        }
    }
    (terminal, on_cycle)
}
