//! Deterministic off-chain governance engine.
//!
//! Attestation graphs feed hop-limited trust propagation; delegation
//! resolution and preference aggregation consume the resulting scores; a
//! simulated operator network settles every computation by threshold
//! agreement on merkle roots; and policies turn results into bounded,
//! timelocked action plans. Every artifact is canonical bytes, so any two
//! runs over the same inputs agree bit for bit.

pub mod attestation;
pub mod codec;
pub mod delegation;
pub mod identity;
pub mod pipeline;
pub mod policy;
pub mod sim;
pub mod store;
pub mod trust;
pub mod workload;

mod par;

pub use codec::{Canonical, Digest, Fixed};
pub use identity::{IdentityId, Keypair};
