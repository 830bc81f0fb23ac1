//! Identities and Ed25519 signing over canonical bytes.

use std::fmt;

use ed25519_dalek::{Signature as DalekSignature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Canonical, CodecError, Digest, KeyBytes, Value};

/// 32-byte identity: SHA-256 of the Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityId(pub Digest);

impl IdentityId {
    pub fn of_key(key: &PublicKey) -> Self {
        IdentityId(sha256(&key.0))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn short(&self) -> String {
        self.0.short()
    }
}

impl fmt::Debug for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "id:{}", self.0.short())
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Canonical for IdentityId {
    fn to_value(&self) -> Value {
        Value::Digest(self.0)
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_digest().map(IdentityId)
    }
}

impl KeyBytes for IdentityId {
    fn key_bytes(&self) -> Vec<u8> {
        self.0.key_bytes()
    }
    fn from_key_bytes(b: &[u8]) -> Result<Self, CodecError> {
        Digest::from_key_bytes(b).map(IdentityId)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{}", hex::encode(&self.0[..4]))
    }
}

impl Canonical for PublicKey {
    fn to_value(&self) -> Value {
        Value::Bytes(self.0.to_vec())
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_bytes()?
            .try_into()
            .map(PublicKey)
            .map_err(|_| CodecError::Shape("public key must be 32 bytes".into()))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", hex::encode(&self.0[..4]))
    }
}

impl Canonical for Signature {
    fn to_value(&self) -> Value {
        Value::Bytes(self.0.to_vec())
    }
    fn from_value(v: &Value) -> Result<Self, CodecError> {
        v.as_bytes()?
            .try_into()
            .map(Signature)
            .map_err(|_| CodecError::Shape("signature must be 64 bytes".into()))
    }
}

/// A signing identity. Keys are derived from a seed label so fixtures and
/// simulated operators are reproducible.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
    public: PublicKey,
    id: IdentityId,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("id", &self.id).finish()
    }
}

impl Keypair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let public = PublicKey(signing.verifying_key().to_bytes());
        let id = IdentityId::of_key(&public);
        Keypair { signing, public, id }
    }

    pub fn from_seed(label: &str) -> Self {
        let mut pre = b"gov-keypair:".to_vec();
        pre.extend_from_slice(label.as_bytes());
        Keypair::from_secret(sha256(&pre).0)
    }

    pub fn id(&self) -> IdentityId {
        self.id
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

pub fn verify(key: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    vk.verify(msg, &DalekSignature::from_bytes(&sig.0)).is_ok()
}

/// Checks that `key` belongs to `signer` and that `sig` covers `msg`.
pub fn verify_signer(signer: &IdentityId, key: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    IdentityId::of_key(key) == *signer && verify(key, msg, sig)
}
