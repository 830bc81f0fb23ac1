use std::collections::{BTreeMap, BTreeSet};

use crate::attestation::GraphSnapshot;
use crate::codec::{Canonical, CodecError, Digest, Value};
use crate::identity::IdentityId;

use super::TrustError;

/// A directed attestation cycle, rotated so the smallest identity comes
/// first. `edges[i]` holds the uids attesting `members[i] -> members[i+1]`
/// (wrapping around).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ring {
    pub members: Vec<IdentityId>,
    pub edges: Vec<BTreeSet<Digest>>,
}

impl Ring {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn uids(&self) -> impl Iterator<Item = &Digest> {
        self.edges.iter().flatten()
    }
}

impl Canonical for Ring {
    fn to_value(&self) -> Value {
        Value::map([
            ("members", self.members.to_value()),
            ("edges", self.edges.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Ring {
            members: Vec::from_value(v.field("members")?)?,
            edges: Vec::from_value(v.field("edges")?)?,
        })
    }
}

/// Every simple directed cycle of length `2..=max_ring_size` among
/// attestations of `schema`, each reported once.
pub fn detect_rings(
    snapshot: &GraphSnapshot,
    schema: &str,
    max_ring_size: usize,
) -> Result<Vec<Ring>, TrustError> {
    if !(2..=6).contains(&max_ring_size) {
        return Err(TrustError::InvalidRingSize(max_ring_size));
    }
    let mut edge_uids: BTreeMap<(IdentityId, IdentityId), BTreeSet<Digest>> = BTreeMap::new();
    for (uid, att) in snapshot.attestations_of(Some(schema)) {
        if att.attestor() != att.subject() {
            edge_uids
                .entry((att.attestor(), att.subject()))
                .or_default()
                .insert(*uid);
        }
    }
    let mut out: BTreeMap<IdentityId, Vec<IdentityId>> = BTreeMap::new();
    for (u, v) in edge_uids.keys() {
        out.entry(*u).or_default().push(*v);
    }

    let mut rings = Vec::new();
    let mut path = Vec::with_capacity(max_ring_size);
    for &start in out.keys() {
        path.clear();
        path.push(start);
        extend(&out, start, max_ring_size, &mut path, &mut |cycle| {
            let edges = (0..cycle.len())
                .map(|i| edge_uids[&(cycle[i], cycle[(i + 1) % cycle.len()])].clone())
                .collect();
            rings.push(Ring {
                members: cycle.to_vec(),
                edges,
            });
        });
    }
    rings.sort();
    Ok(rings)
}

/// Depth-first extension of `path` through identities larger than `start`,
/// so each cycle is discovered only from its smallest member.
fn extend(
    out: &BTreeMap<IdentityId, Vec<IdentityId>>,
    start: IdentityId,
    max_len: usize,
    path: &mut Vec<IdentityId>,
    emit: &mut dyn FnMut(&[IdentityId]),
) {
    let last = *path.last().expect("non-empty");
    let Some(next) = out.get(&last) else {
        return;
    };
    for &v in next {
        if v == start && path.len() >= 2 {
            emit(path);
        } else if v > start && path.len() < max_len && !path.contains(&v) {
            path.push(v);
            extend(out, start, max_len, path, emit);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{Attestation, AttestationStore, Schema};
    use crate::codec::Fixed;
    use crate::identity::Keypair;

    fn snapshot(edges: &[(usize, usize)]) -> (GraphSnapshot, Vec<IdentityId>) {
        let k: Vec<Keypair> = (0..4).map(|i| Keypair::from_seed(&format!("r{i}"))).collect();
        let mut store = AttestationStore::new();
        store.register_schema(Schema::new("contribution", true)).unwrap();
        for &(a, b) in edges {
            let att = Attestation::issue(&k[a], "contribution", k[b].id(), Fixed::ONE, Default::default(), 0, None);
            store.submit_attestation(att).unwrap();
        }
        (store.take_snapshot(0).unwrap(), k.iter().map(Keypair::id).collect())
    }

    #[test]
    fn two_ring() {
        let (snap, ids) = snapshot(&[(0, 1), (1, 0)]);
        let rings = detect_rings(&snap, "contribution", 2).unwrap();
        assert_eq!(rings.len(), 1);
        let mut members = rings[0].members.clone();
        members.sort();
        let mut expect = vec![ids[0], ids[1]];
        expect.sort();
        assert_eq!(members, expect);
        assert_eq!(rings[0].uids().count(), 2);
    }

    #[test]
    fn acyclic_chain_and_bounds() {
        let (snap, _) = snapshot(&[(0, 1), (1, 2), (2, 3)]);
        assert!(detect_rings(&snap, "contribution", 6).unwrap().is_empty());
        assert_eq!(detect_rings(&snap, "contribution", 1), Err(TrustError::InvalidRingSize(1)));
        assert_eq!(detect_rings(&snap, "contribution", 7), Err(TrustError::InvalidRingSize(7)));
    }

    #[test]
    fn size_limit_respected() {
        let (snap, _) = snapshot(&[(0, 1), (1, 2), (2, 0)]);
        assert!(detect_rings(&snap, "contribution", 2).unwrap().is_empty());
        assert_eq!(detect_rings(&snap, "contribution", 3).unwrap().len(), 1);
    }
}
