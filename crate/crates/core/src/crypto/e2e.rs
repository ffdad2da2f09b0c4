//! End-to-end payload sealing between client and server.
//!
//! Output is `nonce:12 | ciphertext | tag:16`. The nonce is derived from a
//! domain byte (what kind of payload), a direction byte, and a sequence
//! number, so it never repeats for a given key as long as sequence numbers
//! are unique per domain and direction. [`E2eSealer`] enforces that.

use super::cipher::{CipherSuite, IntegrityError, NONCE_LEN, TAG_LEN};
use super::keys::SymmetricKey;
use std::collections::BTreeSet;
use thiserror::Error;

pub const E2E_OVERHEAD: usize = NONCE_LEN + TAG_LEN;

/// Nonce domains.
pub mod domain {
    pub const DATA: u8 = 0xd0;
    pub const REQUEST: u8 = 0xd1;
    pub const CONTROL: u8 = 0xc0;
    pub const BULK: u8 = 0xb0;
}

/// `domain | direction | 0 | 0 | seq:8`
pub fn e2e_nonce(domain: u8, direction: u8, seq: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[0] = domain;
    n[1] = direction;
    n[4..].copy_from_slice(&seq.to_be_bytes());
    n
}

pub fn e2e_encrypt(suite: CipherSuite, key: &SymmetricKey, nonce: [u8; NONCE_LEN], payload: &[u8]) -> Vec<u8> {
    let ct = suite.seal(&key.key_bytes, &nonce, &nonce[..2], payload);
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

/// Returns the nonce the sender used and the plaintext.
pub fn e2e_decrypt(
    suite: CipherSuite,
    key: &SymmetricKey,
    bytes: &[u8],
) -> Result<([u8; NONCE_LEN], Vec<u8>), IntegrityError> {
    if bytes.len() < E2E_OVERHEAD {
        return Err(IntegrityError);
    }
    let nonce: [u8; NONCE_LEN] = bytes[..NONCE_LEN].try_into().unwrap();
    let pt = suite.open(&key.key_bytes, &nonce, &nonce[..2], &bytes[NONCE_LEN..])?;
    Ok((nonce, pt))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum E2eError {
    #[error("sequence number {0} already used in this domain")]
    SeqReused(u64),
}

/// Sender-side sealing that refuses to reuse a sequence number.
#[derive(Debug, Clone)]
pub struct E2eSealer {
    suite: CipherSuite,
    key: SymmetricKey,
    direction: u8,
    used: BTreeSet<(u8, u64)>,
}

impl E2eSealer {
    pub fn new(suite: CipherSuite, key: SymmetricKey, direction: u8) -> Self {
        E2eSealer {
            suite,
            key,
            direction,
            used: BTreeSet::new(),
        }
    }

    pub fn key(&self) -> &SymmetricKey {
        &self.key
    }

    pub fn seal(&mut self, domain: u8, seq: u64, payload: &[u8]) -> Result<Vec<u8>, E2eError> {
        if !self.used.insert((domain, seq)) {
            return Err(E2eError::SeqReused(seq));
        }
        Ok(e2e_encrypt(
            self.suite,
            &self.key,
            e2e_nonce(domain, self.direction, seq),
            payload,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SymmetricKey {
        SymmetricKey::new([0x42; 32], 0)
    }

    #[test]
    fn roundtrip_and_tamper() {
        let suite = CipherSuite::default();
        let ct = e2e_encrypt(suite, &key(), e2e_nonce(domain::DATA, 0, 7), b"chunk");
        assert_eq!(ct.len(), 5 + E2E_OVERHEAD);
        let (nonce, pt) = e2e_decrypt(suite, &key(), &ct).unwrap();
        assert_eq!(pt, b"chunk");
        assert_eq!(nonce, e2e_nonce(domain::DATA, 0, 7));
        for i in 0..ct.len() {
            let mut bad = ct.clone();
            bad[i] ^= 1;
            assert!(e2e_decrypt(suite, &key(), &bad).is_err(), "flip at {i}");
        }
        assert!(e2e_decrypt(suite, &SymmetricKey::new([1; 32], 0), &ct).is_err());
    }

    #[test]
    fn sealer_rejects_reuse() {
        let mut s = E2eSealer::new(CipherSuite::default(), key(), 1);
        s.seal(domain::DATA, 3, b"a").unwrap();
        s.seal(domain::REQUEST, 3, b"a").unwrap();
        assert_eq!(s.seal(domain::DATA, 3, b"b"), Err(E2eError::SeqReused(3)));
    }
}
