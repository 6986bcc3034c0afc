use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the exact bit patterns of several sequences, length-prefixed so
/// moving a value between sequences changes the result.
pub fn hash_f64s(parts: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        for v in *p {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Refuses when an upstream artifact's recorded hash is not the one found.
pub fn expect_match(what: &str, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LabError::Fingerprint {
            what: what.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sequence_boundaries_matter() {
        assert_ne!(hash_f64s(&[&[1.0, 2.0], &[]]), hash_f64s(&[&[1.0], &[2.0]]));
        assert_ne!(hash_f64s(&[&[0.0]]), hash_f64s(&[&[-0.0]]));
    }
}
