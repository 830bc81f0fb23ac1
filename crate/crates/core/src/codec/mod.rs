//! Canonical encoding, fixed-point numerics and merkle commitments.
//!
//! Everything that crosses an operator boundary is first turned into a
//! [`Value`] and encoded with [`Value::encode`]; digests are always taken over
//! those bytes.

mod fixed;
pub(crate) use fixed::div_round_half_even;
pub mod math;
pub mod merkle;
mod value;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use fixed::{apportion, checked_sum, sum_sorted_pairwise, Fixed, SCALE};
pub use merkle::{empty_root, merkle_root, merkle_verify, MerkleProof, MerkleTree, Side};
pub use value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unencodable value: {0}")]
    Unencodable(String),
    #[error("decode error at byte {pos}: {reason}")]
    Decode { pos: usize, reason: String },
    #[error("unexpected shape: {0}")]
    Shape(String),
    #[error("fixed-point overflow")]
    Overflow,
    #[error("division by zero")]
    DivisionByZero,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate merkle key {0}")]
    DuplicateKey(String),
    #[error("empty leaf set")]
    EmptyLeafSet,
    #[error("key not found: {0}")]
    KeyNotFound(String),
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        let raw = hex::decode(s).map_err(|e| CodecError::Parse(e.to_string()))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| CodecError::Parse("digest must be 32 bytes".into()))?;
        Ok(Digest(arr))
    }

    /// First four bytes in hex; for human-readable tables.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CodecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Types with a canonical [`Value`] representation.
pub trait Canonical: Sized {
    fn to_value(&self) -> Value;
    fn from_value(v: &Value) -> Result<Self, CodecError>;

    fn canonical_bytes(&self) -> Vec<u8> {
        self.to_value().encode()
    }

    fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}

pub fn canonical_encode<T: Canonical>(v: &T) -> Vec<u8> {
    v.canonical_bytes()
}

pub fn canonical_decode<T: Canonical>(bytes: &[u8]) -> Result<T, CodecError> {
    T::from_value(&Value::decode(bytes)?)
}

/// Map key bytes for types used as canonical map keys.
pub trait KeyBytes: Sized {
    fn key_bytes(&self) -> Vec<u8>;
    fn from_key_bytes(b: &[u8]) -> Result<Self, CodecError>;
}

impl KeyBytes for String {
    fn key_bytes(&self) -> Vec<u8> {
        self.as_bytes().to_vec()
    }
    fn from_key_bytes(b: &[u8]) -> Result<Self, CodecError> {
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::Shape("map key is not utf-8".into()))
    }
}

impl KeyBytes for Digest {
    fn key_bytes(&self) -> Vec<u8> {
        self.0.to_vec()
    }
    fn from_key_bytes(b: &[u8]) -> Result<Self, CodecError> {
        b.try_into()
            .map(Digest)
            .map_err(|_| CodecError::Shape("digest key must be 32 bytes".into()))
    }
}

impl Canonical for Value {
    fn to_value(&self) -> Value {
        self.clone()
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(v.clone())
    }
}

impl Canonical for Fixed {
    fn to_value(&self) -> Value {
        Value::Fixed(*self)
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_fixed()
    }
}

impl Canonical for i64 {
    fn to_value(&self) -> Value {
        Value::Int(*self)
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_int()
    }
}

impl Canonical for u64 {
    fn to_value(&self) -> Value {
        Value::Int(i64::try_from(*self).expect("u64 value beyond i64 range"))
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_u64()
    }
}

impl Canonical for u32 {
    fn to_value(&self) -> Value {
        Value::Int(i64::from(*self))
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        u32::try_from(v.as_int()?).map_err(|_| CodecError::Shape("u32 out of range".into()))
    }
}

impl Canonical for bool {
    fn to_value(&self) -> Value {
        Value::Bool(*self)
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_bool()
    }
}

impl Canonical for String {
    fn to_value(&self) -> Value {
        Value::Str(self.clone())
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_str().map(str::to_owned)
    }
}

impl Canonical for Digest {
    fn to_value(&self) -> Value {
        Value::Digest(*self)
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_digest()
    }
}

impl<T: Canonical> Canonical for Option<T> {
    fn to_value(&self) -> Value {
        match self {
            Some(v) => v.to_value(),
            None => Value::Null,
        }
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        match v {
            Value::Null => Ok(None),
            other => T::from_value(other).map(Some),
        }
    }
}

impl<T: Canonical> Canonical for Vec<T> {
    fn to_value(&self) -> Value {
        Value::List(self.iter().map(Canonical::to_value).collect())
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_list()?.iter().map(T::from_value).collect()
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn to_value(&self) -> Value {
        Value::List(vec![self.0.to_value(), self.1.to_value()])
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        match v.as_list()? {
            [a, b] => Ok((A::from_value(a)?, B::from_value(b)?)),
            _ => Err(CodecError::Shape("expected a pair".into())),
        }
    }
}

impl<T: Canonical + Ord> Canonical for BTreeSet<T> {
    fn to_value(&self) -> Value {
        Value::List(self.iter().map(Canonical::to_value).collect())
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let items = v.as_list()?;
        let mut out = BTreeSet::new();
        for item in items {
            if !out.insert(T::from_value(item)?) {
                return Err(CodecError::Shape("duplicate set element".into()));
            }
        }
        Ok(out)
    }
}

impl<K: KeyBytes + Ord, V: Canonical> Canonical for BTreeMap<K, V> {
    fn to_value(&self) -> Value {
        Value::Map(self.iter().map(|(k, v)| (k.key_bytes(), v.to_value())).collect())
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_map()?
            .iter()
            .map(|(k, v)| Ok((K::from_key_bytes(k)?, V::from_value(v)?)))
            .collect()
    }
}

/// Hex-per-line container used for every line-delimited record file.
pub fn encode_lines<T: Canonical>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&hex::encode(r.canonical_bytes()));
        out.push('\n');
    }
    out
}

pub fn decode_lines<T: Canonical>(text: &str) -> Result<Vec<T>, CodecError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let raw = hex::decode(line.trim())
                .map_err(|e| CodecError::Parse(format!("line {}: {e}", i + 1)))?;
            canonical_decode(&raw)
        })
        .collect()
}
