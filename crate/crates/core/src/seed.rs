use sha2::{Digest, Sha256};

/// Derives an independent sub-seed for a named stage from the run seed.
///
/// Streams for different stage names never share state, so adding a stage
/// leaves every other stage's random draws unchanged.
pub fn derive_seed(root: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Lowercase hex SHA-256 digest.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
