use super::cipher::KEY_LEN;
use rand::RngCore;
use std::fmt;
use thiserror::Error;

/// A per-relay (or end-to-end) symmetric key.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    pub key_bytes: [u8; KEY_LEN],
    pub key_id: u32,
}

impl SymmetricKey {
    pub fn new(key_bytes: [u8; KEY_LEN], key_id: u32) -> Self {
        SymmetricKey { key_bytes, key_id }
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R, key_id: u32) -> Self {
        let mut key_bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut key_bytes);
        SymmetricKey { key_bytes, key_id }
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SymmetricKey(id={}, {:02x}{:02x}..)",
            self.key_id, self.key_bytes[0], self.key_bytes[1]
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeySetError {
    #[error("expected {expected} relay keys, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("end-to-end key equals relay key {0}")]
    E2eCollision(usize),
}

/// Relay keys of one path, owner-nearest first, plus the end-to-end key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerKeySet {
    keys: Vec<SymmetricKey>,
    e2e_key: SymmetricKey,
}

impl LayerKeySet {
    pub fn new(keys: Vec<SymmetricKey>, e2e_key: SymmetricKey, expected_len: usize) -> Result<Self, KeySetError> {
        if keys.len() != expected_len {
            return Err(KeySetError::WrongLength {
                expected: expected_len,
                got: keys.len(),
            });
        }
        if let Some(i) = keys.iter().position(|k| k.key_bytes == e2e_key.key_bytes) {
            return Err(KeySetError::E2eCollision(i));
        }
        Ok(LayerKeySet { keys, e2e_key })
    }

    pub fn relay_keys(&self) -> &[SymmetricKey] {
        &self.keys
    }

    pub fn e2e_key(&self) -> &SymmetricKey {
        &self.e2e_key
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sets() {
        let k = |b: u8| SymmetricKey::new([b; 32], b as u32);
        assert!(LayerKeySet::new(vec![k(1), k(2), k(3)], k(4), 3).is_ok());
        assert_eq!(
            LayerKeySet::new(vec![k(1), k(2)], k(4), 3),
            Err(KeySetError::WrongLength { expected: 3, got: 2 })
        );
        assert_eq!(
            LayerKeySet::new(vec![k(1), k(2), k(3)], k(2), 3),
            Err(KeySetError::E2eCollision(1))
        );
    }
}
