//! The AEAD envelope every layer uses: 32-byte key, 12-byte nonce, 16-byte tag.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// Bytes one onion layer adds: its nonce plus its tag.
pub const LAYER_OVERHEAD: usize = NONCE_LEN + TAG_LEN;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("authentication failed")]
pub struct IntegrityError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherSuite {
    #[default]
    ChaCha20Poly1305,
    /// Identity transform with a SHA-256 checksum tag. Keyed, so a wrong key
    /// still fails, but offers no confidentiality. For golden wire vectors.
    Null,
}

impl CipherSuite {
    pub fn seal(&self, key: &[u8; KEY_LEN], nonce: &[u8; NONCE_LEN], ad: &[u8], pt: &[u8]) -> Vec<u8> {
        match self {
            CipherSuite::ChaCha20Poly1305 => ChaCha20Poly1305::new(Key::from_slice(key))
                .encrypt(Nonce::from_slice(nonce), Payload { msg: pt, aad: ad })
                .expect("chacha20poly1305 encryption is infallible for in-range lengths"),
            CipherSuite::Null => {
                let mut out = pt.to_vec();
                out.extend_from_slice(&null_tag(key, nonce, ad, pt));
                out
            }
        }
    }

    pub fn open(
        &self,
        key: &[u8; KEY_LEN],
        nonce: &[u8; NONCE_LEN],
        ad: &[u8],
        ct: &[u8],
    ) -> Result<Vec<u8>, IntegrityError> {
        if ct.len() < TAG_LEN {
            return Err(IntegrityError);
        }
        match self {
            CipherSuite::ChaCha20Poly1305 => ChaCha20Poly1305::new(Key::from_slice(key))
                .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: ad })
                .map_err(|_| IntegrityError),
            CipherSuite::Null => {
                let (pt, tag) = ct.split_at(ct.len() - TAG_LEN);
                if null_tag(key, nonce, ad, pt) == tag {
                    Ok(pt.to_vec())
                } else {
                    Err(IntegrityError)
                }
            }
        }
    }
}

fn null_tag(key: &[u8], nonce: &[u8], ad: &[u8], pt: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    for part in [key, nonce, ad, pt] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    let digest = h.finalize();
    digest[..TAG_LEN].try_into().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_suites_roundtrip_and_reject_tamper() {
        for suite in [CipherSuite::ChaCha20Poly1305, CipherSuite::Null] {
            let key = [7u8; 32];
            let nonce = [1u8; 12];
            let ct = suite.seal(&key, &nonce, b"ad", b"hello");
            assert_eq!(ct.len(), 5 + TAG_LEN);
            assert_eq!(suite.open(&key, &nonce, b"ad", &ct).unwrap(), b"hello");
            let mut bad = ct.clone();
            bad[0] ^= 1;
            assert_eq!(suite.open(&key, &nonce, b"ad", &bad), Err(IntegrityError));
            assert!(suite.open(&[8u8; 32], &nonce, b"ad", &ct).is_err());
            assert!(suite.open(&key, &nonce, b"xx", &ct).is_err());
        }
    }
}
