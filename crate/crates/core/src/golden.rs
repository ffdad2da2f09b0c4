//! Fixed wire vectors: onion cells under both suites, every control message
//! variant, and data packets. Regenerating must reproduce the shipped file
//! byte for byte.

use crate::control::{ControlMessage, Direction, Metadata, PROTO_VERSION};
use crate::crypto::{e2e_encrypt, e2e_nonce, layer_nonce, onion_wrap, CipherSuite, NonceDir, SymmetricKey};
use crate::data::DataPacket;
use crate::overlay::OverlayAddress;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellVector {
    pub name: String,
    pub suite: CipherSuite,
    pub circuit_id: u32,
    /// Outermost layer first.
    pub keys: Vec<String>,
    pub nonces: Vec<String>,
    pub payload: String,
    pub wire: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct E2eVector {
    pub suite: CipherSuite,
    pub key: String,
    pub domain: u8,
    pub direction: u8,
    pub seq: u64,
    pub payload: String,
    pub sealed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageVector {
    pub name: String,
    pub wire: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketVector {
    pub seq: u32,
    pub seq_bytes: u8,
    pub chunk: String,
    pub wire: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenVectors {
    pub cells: Vec<CellVector>,
    pub e2e: Vec<E2eVector>,
    pub messages: Vec<MessageVector>,
    pub packets: Vec<PacketVector>,
}

fn key(i: u8) -> SymmetricKey {
    SymmetricKey::new([i.wrapping_mul(17).wrapping_add(1); 32], u32::from(i))
}

/// One message of each variant, with edge-case field values.
pub fn sample_messages() -> Vec<(&'static str, ControlMessage)> {
    vec![
        (
            "hello",
            ControlMessage::Hello {
                session_id: u64::MAX,
                e2e_key_material: [7; 32],
                proto_version: PROTO_VERSION,
            },
        ),
        (
            "channel_binding",
            ControlMessage::ChannelBinding {
                direction: Direction::S2c,
                last_relay_addr: OverlayAddress::new(12, 0),
                temp_src_addr: OverlayAddress::new(0xf001, 0),
                circuit_id: 0xdead_beef,
            },
        ),
        (
            "request",
            ControlMessage::Request {
                transfer_id: 0,
                resource_id: 1,
                size_hint: 1 << 20,
            },
        ),
        (
            "metadata",
            ControlMessage::Metadata(Metadata {
                transfer_id: 1,
                total_packets: 1024,
                packet_size: 1028,
                seq_bytes: 4,
                chunk_size: 1024,
                data_len: 1 << 20,
            }),
        ),
        (
            "transfer_complete",
            ControlMessage::TransferComplete {
                transfer_id: 1,
                packets_sent: 1024,
            },
        ),
        (
            "loss_report_empty",
            ControlMessage::loss_report(1, vec![]).expect("sorted"),
        ),
        (
            "loss_report",
            ControlMessage::loss_report(1, vec![0, 5, u32::MAX]).expect("sorted"),
        ),
        ("teardown", ControlMessage::Teardown { session_id: 42 }),
        (
            "stream_ack",
            ControlMessage::StreamAck {
                transfer_id: 2,
                received: 64,
            },
        ),
    ]
}

pub fn generate() -> GoldenVectors {
    let mut cells = Vec::new();
    for suite in [CipherSuite::Null, CipherSuite::ChaCha20Poly1305] {
        for n in 0..=3u8 {
            let keys: Vec<SymmetricKey> = (0..n).map(key).collect();
            let nonces: Vec<[u8; 12]> = (0..n).map(|i| layer_nonce(NonceDir::Outbound, i, 7)).collect();
            let payload: Vec<u8> = (0..32u8).collect();
            let cell = onion_wrap(suite, payload.clone(), &keys, 0x0102_0304, |i| nonces[i]).expect("few layers");
            cells.push(CellVector {
                name: format!("{}_{n}_layers", suite_name(suite)),
                suite,
                circuit_id: 0x0102_0304,
                keys: keys.iter().map(|k| hex::encode(k.key_bytes)).collect(),
                nonces: nonces.iter().map(hex::encode).collect(),
                payload: hex::encode(&payload),
                wire: hex::encode(cell.encode()),
            });
        }
    }
    let e2e = [CipherSuite::Null, CipherSuite::ChaCha20Poly1305]
        .into_iter()
        .map(|suite| {
            let k = key(9);
            let payload = b"end to end".to_vec();
            let sealed = e2e_encrypt(suite, &k, e2e_nonce(1, 1, 3), &payload);
            E2eVector {
                suite,
                key: hex::encode(k.key_bytes),
                domain: 1,
                direction: 1,
                seq: 3,
                payload: hex::encode(payload),
                sealed: hex::encode(sealed),
            }
        })
        .collect();
    let messages = sample_messages()
        .into_iter()
        .map(|(name, m)| MessageVector {
            name: name.to_string(),
            wire: hex::encode(m.encode()),
        })
        .collect();
    let packets = [
        (0u32, 4u8, vec![0xaa; 4]),
        (0xff, 1, vec![1, 2, 3]),
        (0x0102_0304, 4, vec![]),
    ]
    .into_iter()
    .map(|(seq, seq_bytes, chunk)| {
        let p = DataPacket { seq, chunk };
        PacketVector {
            seq,
            seq_bytes,
            chunk: hex::encode(&p.chunk),
            wire: hex::encode(p.encode(seq_bytes)),
        }
    })
    .collect();
    GoldenVectors {
        cells,
        e2e,
        messages,
        packets,
    }
}

fn suite_name(s: CipherSuite) -> &'static str {
    match s {
        CipherSuite::Null => "null",
        CipherSuite::ChaCha20Poly1305 => "chacha20poly1305",
    }
}

/// Canonical JSON text of the vectors.
pub fn to_json(v: &GoldenVectors) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("vectors serialize");
    s.push('\n');
    s
}
