use std::collections::{BTreeMap, VecDeque};

use crate::attestation::GraphSnapshot;
use crate::identity::IdentityId;

use super::TrustError;

/// Directed adjacency over every active attestation in a snapshot, built
/// once and reused for many distance queries.
#[derive(Clone, Debug)]
pub struct DistanceIndex {
    ids: Vec<IdentityId>,
    out: Vec<Vec<u32>>,
}

impl DistanceIndex {
    pub fn new(snapshot: &GraphSnapshot) -> Self {
        let ids: Vec<IdentityId> = snapshot.identities.iter().copied().collect();
        let index: BTreeMap<IdentityId, u32> =
            ids.iter().enumerate().map(|(i, id)| (*id, i as u32)).collect();
        let mut out = vec![Vec::new(); ids.len()];
        for att in snapshot.attestations.values() {
            let (u, v) = (index[&att.attestor()], index[&att.subject()]);
            if u != v {
                out[u as usize].push(v);
            }
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
        DistanceIndex { ids, out }
    }

    fn idx(&self, id: &IdentityId) -> Result<usize, TrustError> {
        self.ids
            .binary_search(id)
            .map_err(|_| TrustError::UnknownIdentity(*id))
    }

    /// Shortest path length, or `None` when unreachable.
    pub fn distance(&self, from: &IdentityId, to: &IdentityId) -> Result<Option<u32>, TrustError> {
        self.bounded_distance(from, to, u32::MAX)
    }

    /// Shortest path length if it is at most `max`; the search never
    /// expands past depth `max`.
    pub fn bounded_distance(
        &self,
        from: &IdentityId,
        to: &IdentityId,
        max: u32,
    ) -> Result<Option<u32>, TrustError> {
        let s = self.idx(from)?;
        let t = self.idx(to)?;
        if s == t {
            return Ok(Some(0));
        }
        let mut dist: BTreeMap<usize, u32> = BTreeMap::from([(s, 0)]);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d >= max {
                continue;
            }
            for &v in &self.out[u] {
                let v = v as usize;
                if dist.contains_key(&v) {
                    continue;
                }
                if v == t {
                    return Ok(Some(d + 1));
                }
                dist.insert(v, d + 1);
                queue.push_back(v);
            }
        }
        Ok(None)
    }
}

pub fn social_distance(
    snapshot: &GraphSnapshot,
    from: &IdentityId,
    to: &IdentityId,
) -> Result<Option<u32>, TrustError> {
    DistanceIndex::new(snapshot).distance(from, to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{Attestation, AttestationStore, Schema};
    use crate::codec::Fixed;
    use crate::identity::Keypair;

    #[test]
    fn basic_distances() {
        let k: Vec<Keypair> = (0..4).map(|i| Keypair::from_seed(&format!("d{i}"))).collect();
        let mut store = AttestationStore::new();
        store.register_schema(Schema::new("trust", true)).unwrap();
        for (a, b) in [(0, 1), (1, 2)] {
            let att = Attestation::issue(&k[a], "trust", k[b].id(), Fixed::ONE, Default::default(), 0, None);
            store.submit_attestation(att).unwrap();
        }
        store.set_balance(k[3].id(), Fixed::ZERO, 0).unwrap();
        let snap = store.take_snapshot(0).unwrap();
        let id = |i: usize| k[i].id();
        assert_eq!(social_distance(&snap, &id(0), &id(0)).unwrap(), Some(0));
        assert_eq!(social_distance(&snap, &id(0), &id(1)).unwrap(), Some(1));
        assert_eq!(social_distance(&snap, &id(0), &id(2)).unwrap(), Some(2));
        assert_eq!(social_distance(&snap, &id(2), &id(0)).unwrap(), None);
        assert_eq!(social_distance(&snap, &id(0), &id(3)).unwrap(), None);
        let idx = DistanceIndex::new(&snap);
        assert_eq!(idx.bounded_distance(&id(0), &id(2), 1).unwrap(), None);
        let stranger = Keypair::from_seed("x").id();
        assert_eq!(
            social_distance(&snap, &stranger, &id(0)),
            Err(TrustError::UnknownIdentity(stranger))
        );
    }
}
