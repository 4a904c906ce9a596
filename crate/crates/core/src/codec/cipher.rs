//! Pluggable payload ciphers for type-'1' frames.
//!
//! Confidential frames are encrypted with preshared keys. The cipher
//! interface is deliberately narrow: deterministic byte-sequence in,
//! byte-sequence out, with `decrypt(encrypt(x)) = x`. Key distribution is
//! out of scope; keys are named entries in a keyring file.

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// A preshared-key cipher for frame payloads.
///
/// `decrypt(encrypt(x)) = x` must hold for all byte sequences. `decrypt`
/// returns `None` only when the ciphertext is structurally invalid for this
/// key; stream ciphers that cannot detect a wrong key return garbage instead,
/// which the decoder rejects when the inner compressed stream fails to parse.
pub trait Cipher: Send + Sync {
    fn key_id(&self) -> &str;
    fn encrypt(&self, plaintext: &[u8]) -> Vec<u8>;
    fn decrypt(&self, ciphertext: &[u8]) -> Option<Vec<u8>>;
}

/// Deterministic keyed stream cipher used as the reference implementation:
/// XOR with a SHA-256 keystream in counter mode. Encryption and decryption
/// are the same involution.
pub struct XorStreamCipher {
    key_id: String,
    key: [u8; 32],
}

impl XorStreamCipher {
    pub fn from_secret(key_id: impl Into<String>, secret: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"mdsrob-key-v1\0");
        hasher.update(secret.as_bytes());
        XorStreamCipher {
            key_id: key_id.into(),
            key: hasher.finalize().into(),
        }
    }

    fn apply_keystream(&self, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(data.len());
        for (block_index, chunk) in data.chunks(32).enumerate() {
            let mut hasher = Sha256::new();
            hasher.update(self.key);
            hasher.update((block_index as u64).to_be_bytes());
            let block = hasher.finalize();
            out.extend(chunk.iter().zip(block.iter()).map(|(d, k)| d ^ k));
        }
        out
    }
}

impl Cipher for XorStreamCipher {
    fn key_id(&self) -> &str {
        &self.key_id
    }

    fn encrypt(&self, plaintext: &[u8]) -> Vec<u8> {
        self.apply_keystream(plaintext)
    }

    fn decrypt(&self, ciphertext: &[u8]) -> Option<Vec<u8>> {
        Some(self.apply_keystream(ciphertext))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyringError {
    #[error("line {line}: expected `key_id<TAB>secret`")]
    MissingSeparator { line: usize },
    #[error("line {line}: empty key id")]
    EmptyKeyId { line: usize },
    #[error("line {line}: duplicate key id {key_id:?}")]
    DuplicateKeyId { line: usize, key_id: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Parses a keyring document: one `key_id<TAB>secret` per line, `#` comments
/// and blank lines ignored.
pub fn parse_keyring(source: &str) -> Result<Vec<Arc<dyn Cipher>>, KeyringError> {
    let mut ciphers: Vec<Arc<dyn Cipher>> = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let (key_id, secret) = trimmed
            .split_once('\t')
            .ok_or(KeyringError::MissingSeparator { line })?;
        if key_id.is_empty() {
            return Err(KeyringError::EmptyKeyId { line });
        }
        if ciphers.iter().any(|c| c.key_id() == key_id) {
            return Err(KeyringError::DuplicateKeyId {
                line,
                key_id: key_id.to_string(),
            });
        }
        ciphers.push(Arc::new(XorStreamCipher::from_secret(key_id, secret)));
    }
    Ok(ciphers)
}

/// Reads and parses a keyring file.
pub fn load_keyring(path: impl AsRef<Path>) -> Result<Vec<Arc<dyn Cipher>>, KeyringError> {
    let path = path.as_ref();
    let source = std::fs::read_to_string(path).map_err(|e| KeyringError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_keyring(&source)
}
