//! Core of the certified module registry.
//!
//! Modules enter through intake vetting, pass quorum review and sandboxed
//! validation, and are certified into assurance tiers. Every certification,
//! signing and revocation event lands in a Merkle transparency log, and
//! consumers compose modules only through contract- and provenance-checked
//! resolution.

pub mod certify;
pub mod compose;
pub mod contracts;
pub mod digests;
pub mod encoding;
pub mod provenance;
pub mod registry;
pub mod signing;
pub mod store;
pub mod time;
pub mod translog;
