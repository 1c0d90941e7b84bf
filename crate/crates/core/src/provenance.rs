//! Provenance block embedded in every emitted artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// Hashes the canonical JSON of `config`.
    pub fn for_config<T: Serialize>(config: &T, seed: u64) -> Self {
        Provenance::new(config_hash(config), seed)
    }
}

/// SHA-256 (hex) of the compact JSON rendering of `value`. Struct fields
/// serialize in declaration order, so the hash is stable for a given type.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&serde_json::json!({"lr": 0.001}));
        assert_eq!(a, config_hash(&serde_json::json!({"lr": 0.001})));
        assert_ne!(a, config_hash(&serde_json::json!({"lr": 0.002})));
        assert_eq!(a.len(), 64);
    }
}
