use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    /// Head replaced, not yet trained on the target.
    FinetuneStart,
    Finetune,
    /// Snapshot taken at the end of cycle `k` (1-based).
    Cycle(usize),
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub phase: Phase,
    pub source_seed: u64,
    pub finetune_seed: Option<u64>,
    /// Hash chain over every configuration applied since initialization.
    pub config_digest: String,
    /// [`Checkpoint::params_digest`] of the checkpoint training started from.
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub provenance: Provenance,
}

/// Short hex SHA-256 of arbitrary bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}

/// Digest of `prior` chained with the canonical JSON form of `config`.
pub fn chain_digest<T: Serialize>(prior: &str, config: &T) -> String {
    let json = serde_json::to_value(config)
        .and_then(|v| serde_json::to_string(&v))
        .expect("configs serialize to JSON");
    let mut bytes = prior.as_bytes().to_vec();
    bytes.push(b'|');
    bytes.extend_from_slice(json.as_bytes());
    digest_bytes(&bytes)
}

impl Checkpoint {
    /// Hash of the architecture and exact parameter bits.
    pub fn params_digest(&self) -> String {
        let mut bytes = serde_json::to_vec(self.params.arch()).expect("arch serializes");
        for v in self.params.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        digest_bytes(&bytes)
    }
}
