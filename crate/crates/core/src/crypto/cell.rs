//! Sealed cells and onion layering.
//!
//! Wire layout (big-endian): `circuit_id:4 | layer_count_hint:1 | body`.
//! With one or more layers the body is `nonce:12 | ciphertext`, and opening
//! the ciphertext yields the body of the cell one layer down. A cell with zero
//! layers carries its payload as the body. Each layer therefore costs exactly
//! [`LAYER_OVERHEAD`] bytes, whichever side adds it.
//!
//! Associated data for a layer is `circuit_id | layer_count` of the cell the
//! layer produces, so cells cannot be moved between circuits or depths.

use super::cipher::{CipherSuite, IntegrityError, LAYER_OVERHEAD, NONCE_LEN};
use super::keys::SymmetricKey;
use thiserror::Error;

pub const CELL_HEADER_LEN: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CellError {
    #[error("cell truncated ({0} bytes)")]
    Truncated(usize),
    #[error("cell has no layer to remove")]
    NoLayer,
    #[error("layer count overflow")]
    TooManyLayers,
    #[error("expected {expected} layers, found {found}")]
    LayerMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedCell {
    pub circuit_id: u32,
    layers: u8,
    body: Vec<u8>,
}

/// Which way a layer's nonce was minted. Keeps relay-added and
/// owner-wrapped nonces in disjoint spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonceDir {
    Outbound = 0,
    Inbound = 1,
}

/// `direction | position | 0 | 0 | counter:8`
pub fn layer_nonce(dir: NonceDir, position: u8, counter: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[0] = dir as u8;
    n[1] = position;
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n
}

impl SealedCell {
    pub fn bare(circuit_id: u32, payload: Vec<u8>) -> Self {
        SealedCell {
            circuit_id,
            layers: 0,
            body: payload,
        }
    }

    pub fn with_circuit_id(mut self, circuit_id: u32) -> Self {
        self.circuit_id = circuit_id;
        self
    }

    pub fn layers(&self) -> u8 {
        self.layers
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }

    pub fn into_body(self) -> Vec<u8> {
        self.body
    }

    /// The outermost layer's nonce, if any.
    pub fn nonce(&self) -> Option<&[u8]> {
        (self.layers > 0).then(|| &self.body[..NONCE_LEN])
    }

    pub fn wire_len(&self) -> usize {
        CELL_HEADER_LEN + self.body.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.circuit_id.to_be_bytes());
        out.push(self.layers);
        out.extend_from_slice(&self.body);
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CellError> {
        if buf.len() < CELL_HEADER_LEN {
            return Err(CellError::Truncated(buf.len()));
        }
        let circuit_id = u32::from_be_bytes(buf[..4].try_into().unwrap());
        let layers = buf[4];
        let body = buf[CELL_HEADER_LEN..].to_vec();
        if layers > 0 && body.len() < LAYER_OVERHEAD {
            return Err(CellError::Truncated(buf.len()));
        }
        Ok(SealedCell {
            circuit_id,
            layers,
            body,
        })
    }

    fn ad(circuit_id: u32, layers: u8) -> [u8; 5] {
        let c = circuit_id.to_be_bytes();
        [c[0], c[1], c[2], c[3], layers]
    }

    /// Adds one layer under `key`.
    pub fn add_layer(
        self,
        suite: CipherSuite,
        key: &SymmetricKey,
        nonce: [u8; NONCE_LEN],
    ) -> Result<SealedCell, CellError> {
        let layers = self.layers.checked_add(1).ok_or(CellError::TooManyLayers)?;
        let ct = suite.seal(&key.key_bytes, &nonce, &Self::ad(self.circuit_id, layers), &self.body);
        let mut body = Vec::with_capacity(NONCE_LEN + ct.len());
        body.extend_from_slice(&nonce);
        body.extend_from_slice(&ct);
        Ok(SealedCell {
            circuit_id: self.circuit_id,
            layers,
            body,
        })
    }

    /// Removes the outermost layer. When it was the last one the result is a
    /// bare cell whose body is the payload.
    pub fn peel(self, suite: CipherSuite, key: &SymmetricKey) -> Result<SealedCell, CellError> {
        if self.layers == 0 {
            return Err(CellError::NoLayer);
        }
        let (nonce, ct) = self.body.split_at(NONCE_LEN);
        let nonce: [u8; NONCE_LEN] = nonce.try_into().unwrap();
        let inner = suite.open(&key.key_bytes, &nonce, &Self::ad(self.circuit_id, self.layers), ct)?;
        let layers = self.layers - 1;
        if layers > 0 && inner.len() < LAYER_OVERHEAD {
            return Err(CellError::Truncated(inner.len()));
        }
        Ok(SealedCell {
            circuit_id: self.circuit_id,
            layers,
            body: inner,
        })
    }
}

/// Wraps `payload` so that `keys[0]` is the outermost layer: relays peel in
/// path order `keys[0], keys[1], ...`. `nonce_for(i)` supplies the nonce for
/// the layer under `keys[i]`.
pub fn onion_wrap(
    suite: CipherSuite,
    payload: Vec<u8>,
    keys: &[SymmetricKey],
    circuit_id: u32,
    mut nonce_for: impl FnMut(usize) -> [u8; NONCE_LEN],
) -> Result<SealedCell, CellError> {
    let mut cell = SealedCell::bare(circuit_id, payload);
    for (i, key) in keys.iter().enumerate().rev() {
        cell = cell.add_layer(suite, key, nonce_for(i))?;
    }
    Ok(cell)
}

/// Owner-side removal of every layer relays added on the way in (outermost
/// first, i.e. `keys[0]` is the owner-nearest relay).
pub fn unwrap_all(suite: CipherSuite, cell: SealedCell, keys: &[SymmetricKey]) -> Result<Vec<u8>, CellError> {
    if cell.layers() as usize != keys.len() {
        return Err(CellError::LayerMismatch {
            expected: keys.len(),
            found: cell.layers() as usize,
        });
    }
    let mut cell = cell;
    for key in keys {
        cell = cell.peel(suite, key)?;
    }
    Ok(cell.into_body())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys() -> Vec<SymmetricKey> {
        (1..=3u8).map(|b| SymmetricKey::new([b; 32], b as u32)).collect()
    }

    #[test]
    fn wrap_then_peel_in_order() {
        let ks = keys();
        let cell = onion_wrap(CipherSuite::default(), b"payload".to_vec(), &ks, 77, |i| {
            layer_nonce(NonceDir::Outbound, i as u8, 1)
        })
        .unwrap();
        assert_eq!(cell.layers(), 3);
        assert_eq!(cell.wire_len(), CELL_HEADER_LEN + 7 + 3 * LAYER_OVERHEAD);
        let c1 = cell.peel(CipherSuite::default(), &ks[0]).unwrap();
        let c2 = c1.peel(CipherSuite::default(), &ks[1]).unwrap();
        let c3 = c2.peel(CipherSuite::default(), &ks[2]).unwrap();
        assert_eq!(c3.layers(), 0);
        assert_eq!(c3.body(), b"payload");
    }

    #[test]
    fn wrong_key_fails_at_any_layer() {
        let ks = keys();
        let suite = CipherSuite::default();
        let cell = onion_wrap(suite, vec![9; 40], &ks, 1, |i| {
            layer_nonce(NonceDir::Outbound, i as u8, 0)
        })
        .unwrap();
        assert!(cell.clone().peel(suite, &ks[1]).is_err());
        let c1 = cell.peel(suite, &ks[0]).unwrap();
        assert!(c1.clone().peel(suite, &ks[0]).is_err());
        let c2 = c1.peel(suite, &ks[1]).unwrap();
        assert!(matches!(c2.peel(suite, &ks[0]), Err(CellError::Integrity(_))));
    }

    #[test]
    fn inbound_add_then_unwrap_all() {
        let ks = keys();
        let suite = CipherSuite::default();
        // farthest relay adds first
        let mut cell = SealedCell::bare(5, b"data".to_vec());
        for (i, k) in ks.iter().enumerate().rev() {
            cell = cell
                .add_layer(suite, k, layer_nonce(NonceDir::Inbound, i as u8, 0))
                .unwrap();
        }
        assert_eq!(unwrap_all(suite, cell.clone(), &ks).unwrap(), b"data");
        let reversed: Vec<_> = ks.iter().rev().cloned().collect();
        assert!(unwrap_all(suite, cell, &reversed).is_err());
    }

    #[test]
    fn cells_cannot_move_between_circuits() {
        let ks = keys();
        let suite = CipherSuite::default();
        let cell = onion_wrap(suite, vec![1; 20], &ks, 10, |_| [0; 12]).unwrap();
        let mut moved = SealedCell::decode(&cell.encode()).unwrap();
        moved.circuit_id = 11;
        assert!(moved.peel(suite, &ks[0]).is_err());
    }

    #[test]
    fn decode_rejects_short_input() {
        assert_eq!(SealedCell::decode(&[0, 0, 0]), Err(CellError::Truncated(3)));
        assert!(SealedCell::decode(&[0, 0, 0, 1, 1, 0, 0]).is_err());
        let bare = SealedCell::decode(&[0, 0, 0, 1, 0]).unwrap();
        assert_eq!(bare.layers(), 0);
        assert!(bare.body().is_empty());
    }
}
