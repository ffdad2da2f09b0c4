//! Circuit key delivery.
//!
//! Relays hold long-term x25519 keys published in a [`Directory`]. The path
//! owner generates each relay's layer key itself and seals it to the relay:
//! `eph_pub:32 | AEAD(k, 0, eph_pub | relay_pub, info)` where
//! `k = HKDF-SHA256(x25519(eph, relay), "darkhorse create")`. The relay
//! answers with a 16-byte confirmation tag computed under the layer key.

use super::cipher::{CipherSuite, IntegrityError, KEY_LEN, NONCE_LEN, TAG_LEN};
use super::keys::SymmetricKey;
use crate::overlay::NodeId;
use hkdf::Hkdf;
use rand::RngCore;
use sha2::Sha256;
use std::collections::BTreeMap;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

pub const PUBKEY_LEN: usize = 32;
const INFO_LEN: usize = KEY_LEN + 4 + 1 + 1 + 4;
pub const CREATE_BLOB_LEN: usize = PUBKEY_LEN + INFO_LEN + TAG_LEN;
pub const CONFIRM_LEN: usize = TAG_LEN;

/// HKDF-SHA256 expand of `ikm` to a 32-byte key under `info`.
pub fn derive_key(ikm: &[u8], info: &[u8]) -> [u8; KEY_LEN] {
    let hk = Hkdf::<Sha256>::new(None, ikm);
    let mut out = [0u8; KEY_LEN];
    hk.expand(info, &mut out).expect("32 bytes is a valid HKDF length");
    out
}

/// Which way a relay moves layers for cells travelling away from the owner
/// (`PeelForward`) or toward it (`AddForward`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerDirection {
    PeelForward,
    AddForward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreateInfo {
    pub key: SymmetricKey,
    pub direction: LayerDirection,
    /// Set on a rendezvous join: the circuit this one is spliced onto.
    pub splice: Option<u32>,
}

impl CreateInfo {
    fn encode(&self) -> [u8; INFO_LEN] {
        let mut b = [0u8; INFO_LEN];
        b[..KEY_LEN].copy_from_slice(&self.key.key_bytes);
        b[KEY_LEN..KEY_LEN + 4].copy_from_slice(&self.key.key_id.to_be_bytes());
        b[KEY_LEN + 4] = match self.direction {
            LayerDirection::PeelForward => 0,
            LayerDirection::AddForward => 1,
        };
        if let Some(s) = self.splice {
            b[KEY_LEN + 5] = 1;
            b[KEY_LEN + 6..].copy_from_slice(&s.to_be_bytes());
        }
        b
    }

    fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != INFO_LEN {
            return None;
        }
        let key = SymmetricKey::new(
            b[..KEY_LEN].try_into().unwrap(),
            u32::from_be_bytes(b[KEY_LEN..KEY_LEN + 4].try_into().unwrap()),
        );
        let direction = match b[KEY_LEN + 4] {
            0 => LayerDirection::PeelForward,
            1 => LayerDirection::AddForward,
            _ => return None,
        };
        let splice = match b[KEY_LEN + 5] {
            0 => None,
            1 => Some(u32::from_be_bytes(b[KEY_LEN + 6..].try_into().unwrap())),
            _ => return None,
        };
        Some(CreateInfo { key, direction, splice })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("create blob has wrong length {0}")]
    BadLength(usize),
    #[error("create blob failed to authenticate")]
    Integrity,
    #[error("create blob content malformed")]
    Malformed,
}

impl From<IntegrityError> for HandshakeError {
    fn from(_: IntegrityError) -> Self {
        HandshakeError::Integrity
    }
}

pub struct RelayIdentity {
    secret: StaticSecret,
    public: PublicKey,
}

impl RelayIdentity {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        let secret = StaticSecret::from(b);
        let public = PublicKey::from(&secret);
        RelayIdentity { secret, public }
    }

    pub fn public(&self) -> [u8; PUBKEY_LEN] {
        self.public.to_bytes()
    }

    pub fn open_create(&self, suite: CipherSuite, blob: &[u8]) -> Result<CreateInfo, HandshakeError> {
        if blob.len() != CREATE_BLOB_LEN {
            return Err(HandshakeError::BadLength(blob.len()));
        }
        let eph: [u8; PUBKEY_LEN] = blob[..PUBKEY_LEN].try_into().unwrap();
        let shared = self.secret.diffie_hellman(&PublicKey::from(eph));
        let k = derive_key(shared.as_bytes(), b"darkhorse create");
        let ad = create_ad(&eph, &self.public());
        let info = suite.open(&k, &[0u8; NONCE_LEN], &ad, &blob[PUBKEY_LEN..])?;
        CreateInfo::decode(&info).ok_or(HandshakeError::Malformed)
    }
}

impl std::fmt::Debug for RelayIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RelayIdentity({:02x?})", &self.public()[..4])
    }
}

fn create_ad(eph: &[u8; PUBKEY_LEN], relay: &[u8; PUBKEY_LEN]) -> [u8; 2 * PUBKEY_LEN] {
    let mut ad = [0u8; 2 * PUBKEY_LEN];
    ad[..PUBKEY_LEN].copy_from_slice(eph);
    ad[PUBKEY_LEN..].copy_from_slice(relay);
    ad
}

/// Owner side: seals `info` to the relay whose public key is `relay_pub`.
pub fn seal_create<R: RngCore + ?Sized>(
    suite: CipherSuite,
    rng: &mut R,
    relay_pub: &[u8; PUBKEY_LEN],
    info: &CreateInfo,
) -> Vec<u8> {
    let eph = RelayIdentity::generate(rng);
    let shared = eph.secret.diffie_hellman(&PublicKey::from(*relay_pub));
    let k = derive_key(shared.as_bytes(), b"darkhorse create");
    let eph_pub = eph.public();
    let ct = suite.seal(&k, &[0u8; NONCE_LEN], &create_ad(&eph_pub, relay_pub), &info.encode());
    let mut blob = Vec::with_capacity(CREATE_BLOB_LEN);
    blob.extend_from_slice(&eph_pub);
    blob.extend_from_slice(&ct);
    blob
}

/// Tag proving the relay recovered `key` from the blob it was sent.
pub fn confirmation(suite: CipherSuite, key: &SymmetricKey, blob: &[u8]) -> [u8; CONFIRM_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[0] = 0xcc;
    let tag = suite.seal(&key.key_bytes, &nonce, &blob[..PUBKEY_LEN.min(blob.len())], &[]);
    tag.try_into().expect("empty plaintext seals to a bare tag")
}

/// Long-term relay public keys by node.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    keys: BTreeMap<NodeId, [u8; PUBKEY_LEN]>,
}

impl Directory {
    pub fn register(&mut self, node: NodeId, public: [u8; PUBKEY_LEN]) {
        self.keys.insert(node, public);
    }

    pub fn lookup(&self, node: NodeId) -> Option<&[u8; PUBKEY_LEN]> {
        self.keys.get(&node)
    }

    pub fn relays(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.keys.keys().copied()
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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn create_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let relay = RelayIdentity::generate(&mut rng);
        let other = RelayIdentity::generate(&mut rng);
        let info = CreateInfo {
            key: SymmetricKey::random(&mut rng, 9),
            direction: LayerDirection::AddForward,
            splice: Some(0xdead),
        };
        for suite in [CipherSuite::ChaCha20Poly1305, CipherSuite::Null] {
            let blob = seal_create(suite, &mut rng, &relay.public(), &info);
            assert_eq!(blob.len(), CREATE_BLOB_LEN);
            assert_eq!(relay.open_create(suite, &blob).unwrap(), info);
            if suite == CipherSuite::ChaCha20Poly1305 {
                assert_eq!(other.open_create(suite, &blob), Err(HandshakeError::Integrity));
            }
            let c = confirmation(suite, &info.key, &blob);
            assert_eq!(c, confirmation(suite, &info.key, &blob));
            assert_ne!(c, confirmation(suite, &SymmetricKey::new([0; 32], 9), &blob));
        }
        assert_eq!(
            relay.open_create(CipherSuite::default(), &[0; 3]),
            Err(HandshakeError::BadLength(3))
        );
    }
}
