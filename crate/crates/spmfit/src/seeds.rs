//! Deterministic seed derivation for independent RNG streams.
//!
//! Every stochastic stage — task sampling, meta-evolution, inverse restarts —
//! draws its seed from one master seed through a SHA-256 based derivation
//! keyed by a stream label and an index. Streams are therefore pairwise
//! independent for all practical purposes, stable across platforms and
//! versions (the digest is bit-specified, unlike hasher internals), and a
//! whole pipeline run reproduces from a single integer.

use sha2::{Digest, Sha256};

/// Derive a child seed from `(master, stream, index)`.
///
/// The digest input is the little-endian master seed, the UTF-8 stream
/// label, and the little-endian index, in that order; the child seed is the
/// first eight digest bytes read little-endian. Distinct labels or indices
/// give unrelated streams.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stream.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("SHA-256 digest has 32 bytes"))
}
