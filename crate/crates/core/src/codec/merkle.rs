//! Sorted-leaf merkle tree with domain-separated SHA-256.
//!
//! Leaves are `(key, value)` pairs sorted by key; the leaf bytes are the
//! canonical encoding of the list `[key bytes, value bytes]`.
//! `leaf = H(0x00 || leaf bytes)`, `node = H(0x01 || left || right)`, and an
//! odd node at the end of a level is promoted unchanged.

use super::value::Value;
use super::{sha256, Canonical, CodecError, Digest};

pub const LEAF_PREFIX: u8 = 0x00;
pub const NODE_PREFIX: u8 = 0x01;

/// Root reported for an empty result set (SHA-256 of the empty string).
/// `merkle_root` itself rejects empty input; callers that allow empty
/// outputs use this sentinel explicitly.
pub fn empty_root() -> Digest {
    sha256(&[])
}

pub fn leaf_bytes(key: &[u8], value: &[u8]) -> Vec<u8> {
    Value::List(vec![Value::Bytes(key.to_vec()), Value::Bytes(value.to_vec())]).encode()
}

pub fn hash_leaf(leaf: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(leaf.len() + 1);
    buf.push(LEAF_PREFIX);
    buf.extend_from_slice(leaf);
    sha256(&buf)
}

pub fn hash_node(left: &Digest, right: &Digest) -> Digest {
    let mut buf = [0u8; 65];
    buf[0] = NODE_PREFIX;
    buf[1..33].copy_from_slice(left.as_bytes());
    buf[33..].copy_from_slice(right.as_bytes());
    sha256(&buf)
}

/// Which side of the running hash a proof sibling sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub path: Vec<(Digest, Side)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    leaves: Vec<(Vec<u8>, Vec<u8>)>,
    /// levels[0] are leaf hashes; the last level holds the root alone.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(mut leaves: Vec<(Vec<u8>, Vec<u8>)>) -> Result<Self, CodecError> {
        if leaves.is_empty() {
            return Err(CodecError::EmptyLeafSet);
        }
        leaves.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = leaves.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(CodecError::DuplicateKey(hex::encode(&w[0].0)));
        }
        let mut levels = vec![leaves
            .iter()
            .map(|(k, v)| hash_leaf(&leaf_bytes(k, v)))
            .collect::<Vec<_>>()];
        while levels.last().expect("non-empty").len() > 1 {
            let prev = levels.last().expect("non-empty");
            let next = prev
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => hash_node(l, r),
                    [only] => *only,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { leaves, levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.leaves
    }

    pub fn prove(&self, key: &[u8]) -> Result<MerkleProof, CodecError> {
        let mut idx = self
            .leaves
            .binary_search_by(|(k, _)| k.as_slice().cmp(key))
            .map_err(|_| CodecError::KeyNotFound(hex::encode(key)))?;
        let (k, v) = &self.leaves[idx];
        let mut path = Vec::with_capacity(self.depth());
        for level in &self.levels[..self.levels.len() - 1] {
            if idx % 2 == 1 {
                path.push((level[idx - 1], Side::Left));
            } else if idx + 1 < level.len() {
                path.push((level[idx + 1], Side::Right));
            }
            idx /= 2;
        }
        Ok(MerkleProof {
            key: k.clone(),
            value: v.clone(),
            path,
        })
    }
}

pub fn merkle_root(leaves: Vec<(Vec<u8>, Vec<u8>)>) -> Result<Digest, CodecError> {
    MerkleTree::build(leaves).map(|t| t.root())
}

pub fn merkle_verify(root: &Digest, key: &[u8], value: &[u8], path: &[(Digest, Side)]) -> bool {
    let mut acc = hash_leaf(&leaf_bytes(key, value));
    for (sibling, side) in path {
        acc = match side {
            Side::Left => hash_node(sibling, &acc),
            Side::Right => hash_node(&acc, sibling),
        };
    }
    acc == *root
}

impl MerkleProof {
    pub fn verify(&self, root: &Digest) -> bool {
        merkle_verify(root, &self.key, &self.value, &self.path)
    }
}

impl Canonical for MerkleProof {
    fn to_value(&self) -> Value {
        Value::map([
            ("key", Value::Bytes(self.key.clone())),
            ("value", Value::Bytes(self.value.clone())),
            (
                "path",
                Value::List(
                    self.path
                        .iter()
                        .map(|(d, side)| {
                            Value::List(vec![Value::Digest(*d), Value::Bool(*side == Side::Right)])
                        })
                        .collect(),
                ),
            ),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let path = v
            .field("path")?
            .as_list()?
            .iter()
            .map(|step| match step.as_list()? {
                [d, side] => Ok((
                    d.as_digest()?,
                    if side.as_bool()? { Side::Right } else { Side::Left },
                )),
                _ => Err(CodecError::Shape("proof step must be a pair".into())),
            })
            .collect::<Result<_, _>>()?;
        Ok(MerkleProof {
            key: v.field("key")?.as_bytes()?.to_vec(),
            value: v.field("value")?.as_bytes()?.to_vec(),
            path,
        })
    }
}
