//! Onion layering, end-to-end sealing, and circuit key delivery.

pub mod cell;
pub mod cipher;
pub mod e2e;
pub mod handshake;
pub mod keys;

pub use cell::{layer_nonce, onion_wrap, unwrap_all, CellError, NonceDir, SealedCell, CELL_HEADER_LEN};
pub use cipher::{CipherSuite, IntegrityError, KEY_LEN, LAYER_OVERHEAD, NONCE_LEN, TAG_LEN};
pub use e2e::{e2e_decrypt, e2e_encrypt, e2e_nonce, E2eError, E2eSealer, E2E_OVERHEAD};
pub use handshake::{derive_key, seal_create, CreateInfo, Directory, HandshakeError, LayerDirection, RelayIdentity};
pub use keys::{KeySetError, LayerKeySet, SymmetricKey};
