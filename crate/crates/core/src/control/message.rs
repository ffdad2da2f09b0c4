//! Control messages and their wire format.
//!
//! Every message is `length:4 | tag:1 | body`, big-endian, where `length`
//! counts the tag and body.
//!
//! | tag | message          | body                                                        |
//! |-----|------------------|-------------------------------------------------------------|
//! | 1   | Hello            | `session_id:8 key_material:32 proto_version:1`              |
//! | 2   | ChannelBinding   | `direction:1 last_relay:4 temp_src:4 circuit_id:4`          |
//! | 3   | Request          | `transfer_id:4 resource_id:8 size_hint:8`                   |
//! | 4   | Metadata         | `transfer_id:4 total:4 packet_size:4 seq_bytes:1 chunk:4 data_len:8` |
//! | 5   | TransferComplete | `transfer_id:4 packets_sent:4`                              |
//! | 6   | LossReport       | `transfer_id:4 count:4 seq:4*count`                         |
//! | 7   | Teardown         | `session_id:8`                                              |
//! | 8   | StreamAck        | `transfer_id:4 received:4`                                  |
//!
//! Addresses are `node:2 port:2`.

use crate::overlay::OverlayAddress;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const PROTO_VERSION: u8 = 1;
pub const MAX_MESSAGE_LEN: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    C2s,
    S2c,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::C2s => Direction::S2c,
            Direction::S2c => Direction::C2s,
        }
    }

    pub(crate) fn byte(self) -> u8 {
        match self {
            Direction::C2s => 0,
            Direction::S2c => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Direction::C2s),
            1 => Some(Direction::S2c),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::C2s => "c2s",
            Direction::S2c => "s2c",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("message length {0} exceeds limit")]
    TooLong(usize),
    #[error("trailing bytes after message body")]
    Trailing,
    #[error("loss report sequence numbers must be strictly increasing")]
    UnsortedLossReport,
    #[error("loss report lists seq {seq} but transfer has {total} packets")]
    SeqOutOfRange { seq: u32, total: u32 },
    #[error("metadata inconsistent: {0}")]
    BadMetadata(&'static str),
    #[error("invalid field value")]
    BadField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub transfer_id: u32,
    pub total_packets: u32,
    pub packet_size: u32,
    pub seq_bytes: u8,
    pub chunk_size: u32,
    pub data_len: u64,
}

impl Metadata {
    pub fn validate(&self) -> Result<(), MessageError> {
        if self.chunk_size == 0 {
            return Err(MessageError::BadMetadata("chunk_size is zero"));
        }
        if !(1..=4).contains(&self.seq_bytes) {
            return Err(MessageError::BadMetadata("seq_bytes outside 1..=4"));
        }
        if u64::from(self.total_packets) != self.data_len.div_ceil(u64::from(self.chunk_size)) {
            return Err(MessageError::BadMetadata(
                "total_packets != ceil(data_len / chunk_size)",
            ));
        }
        if self.packet_size != u32::from(self.seq_bytes) + self.chunk_size {
            return Err(MessageError::BadMetadata("packet_size != seq_bytes + chunk_size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMessage {
    Hello {
        session_id: u64,
        e2e_key_material: [u8; 32],
        proto_version: u8,
    },
    ChannelBinding {
        direction: Direction,
        last_relay_addr: OverlayAddress,
        temp_src_addr: OverlayAddress,
        circuit_id: u32,
    },
    Request {
        transfer_id: u32,
        resource_id: u64,
        size_hint: u64,
    },
    Metadata(Metadata),
    TransferComplete {
        transfer_id: u32,
        packets_sent: u32,
    },
    LossReport {
        transfer_id: u32,
        missing_seqs: Vec<u32>,
    },
    Teardown {
        session_id: u64,
    },
    /// Baseline stream flow control: the receiver holds `received` packets
    /// of the transfer.
    StreamAck {
        transfer_id: u32,
        received: u32,
    },
}

fn check_sorted(seqs: &[u32]) -> Result<(), MessageError> {
    if seqs.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(MessageError::UnsortedLossReport)
    }
}

impl ControlMessage {
    /// Builds a loss report, rejecting seqs that are not strictly increasing.
    pub fn loss_report(transfer_id: u32, missing_seqs: Vec<u32>) -> Result<Self, MessageError> {
        check_sorted(&missing_seqs)?;
        Ok(ControlMessage::LossReport {
            transfer_id,
            missing_seqs,
        })
    }

    /// Checks a loss report against the transfer's packet count.
    pub fn check_loss_report(&self, total: u32) -> Result<(), MessageError> {
        if let ControlMessage::LossReport { missing_seqs, .. } = self {
            check_sorted(missing_seqs)?;
            if let Some(&seq) = missing_seqs.iter().find(|&&s| s >= total) {
                return Err(MessageError::SeqOutOfRange { seq, total });
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> u8 {
        match self {
            ControlMessage::Hello { .. } => 1,
            ControlMessage::ChannelBinding { .. } => 2,
            ControlMessage::Request { .. } => 3,
            ControlMessage::Metadata(_) => 4,
            ControlMessage::TransferComplete { .. } => 5,
            ControlMessage::LossReport { .. } => 6,
            ControlMessage::Teardown { .. } => 7,
            ControlMessage::StreamAck { .. } => 8,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; 4];
        b.push(self.tag());
        match self {
            ControlMessage::Hello {
                session_id,
                e2e_key_material,
                proto_version,
            } => {
                b.extend_from_slice(&session_id.to_be_bytes());
                b.extend_from_slice(e2e_key_material);
                b.push(*proto_version);
            }
            ControlMessage::ChannelBinding {
                direction,
                last_relay_addr,
                temp_src_addr,
                circuit_id,
            } => {
                b.push(direction.byte());
                b.extend_from_slice(&last_relay_addr.to_bytes());
                b.extend_from_slice(&temp_src_addr.to_bytes());
                b.extend_from_slice(&circuit_id.to_be_bytes());
            }
            ControlMessage::Request {
                transfer_id,
                resource_id,
                size_hint,
            } => {
                b.extend_from_slice(&transfer_id.to_be_bytes());
                b.extend_from_slice(&resource_id.to_be_bytes());
                b.extend_from_slice(&size_hint.to_be_bytes());
            }
            ControlMessage::Metadata(m) => {
                b.extend_from_slice(&m.transfer_id.to_be_bytes());
                b.extend_from_slice(&m.total_packets.to_be_bytes());
                b.extend_from_slice(&m.packet_size.to_be_bytes());
                b.push(m.seq_bytes);
                b.extend_from_slice(&m.chunk_size.to_be_bytes());
                b.extend_from_slice(&m.data_len.to_be_bytes());
            }
            ControlMessage::TransferComplete {
                transfer_id,
                packets_sent,
            } => {
                b.extend_from_slice(&transfer_id.to_be_bytes());
                b.extend_from_slice(&packets_sent.to_be_bytes());
            }
            ControlMessage::LossReport {
                transfer_id,
                missing_seqs,
            } => {
                b.extend_from_slice(&transfer_id.to_be_bytes());
                b.extend_from_slice(&(missing_seqs.len() as u32).to_be_bytes());
                for s in missing_seqs {
                    b.extend_from_slice(&s.to_be_bytes());
                }
            }
            ControlMessage::Teardown { session_id } => b.extend_from_slice(&session_id.to_be_bytes()),
            ControlMessage::StreamAck { transfer_id, received } => {
                b.extend_from_slice(&transfer_id.to_be_bytes());
                b.extend_from_slice(&received.to_be_bytes());
            }
        }
        let len = (b.len() - 4) as u32;
        b[..4].copy_from_slice(&len.to_be_bytes());
        b
    }

    /// Decodes one complete message (length prefix included).
    pub fn decode(buf: &[u8]) -> Result<Self, MessageError> {
        let len = u32::from_be_bytes(buf.get(..4).ok_or(MessageError::Truncated)?.try_into().unwrap()) as usize;
        if len > MAX_MESSAGE_LEN {
            return Err(MessageError::TooLong(len));
        }
        let frame = buf.get(4..4 + len).ok_or(MessageError::Truncated)?;
        if buf.len() != 4 + len {
            return Err(MessageError::Trailing);
        }
        let (&tag, body) = frame.split_first().ok_or(MessageError::Truncated)?;
        let mut r = Reader(body);
        let m = match tag {
            1 => ControlMessage::Hello {
                session_id: r.u64()?,
                e2e_key_material: r.bytes::<32>()?,
                proto_version: r.u8()?,
            },
            2 => ControlMessage::ChannelBinding {
                direction: Direction::from_byte(r.u8()?).ok_or(MessageError::BadField)?,
                last_relay_addr: r.addr()?,
                temp_src_addr: r.addr()?,
                circuit_id: r.u32()?,
            },
            3 => ControlMessage::Request {
                transfer_id: r.u32()?,
                resource_id: r.u64()?,
                size_hint: r.u64()?,
            },
            4 => {
                let m = Metadata {
                    transfer_id: r.u32()?,
                    total_packets: r.u32()?,
                    packet_size: r.u32()?,
                    seq_bytes: r.u8()?,
                    chunk_size: r.u32()?,
                    data_len: r.u64()?,
                };
                m.validate()?;
                ControlMessage::Metadata(m)
            }
            5 => ControlMessage::TransferComplete {
                transfer_id: r.u32()?,
                packets_sent: r.u32()?,
            },
            6 => {
                let transfer_id = r.u32()?;
                let n = r.u32()? as usize;
                if n > r.0.len() / 4 {
                    return Err(MessageError::Truncated);
                }
                let seqs = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
                ControlMessage::loss_report(transfer_id, seqs)?
            }
            7 => ControlMessage::Teardown { session_id: r.u64()? },
            8 => ControlMessage::StreamAck {
                transfer_id: r.u32()?,
                received: r.u32()?,
            },
            t => return Err(MessageError::UnknownTag(t)),
        };
        if !r.0.is_empty() {
            return Err(MessageError::Trailing);
        }
        Ok(m)
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], MessageError> {
        let b = self.0.get(..N).ok_or(MessageError::Truncated)?;
        self.0 = &self.0[N..];
        Ok(b.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, MessageError> {
        Ok(u32::from_be_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, MessageError> {
        Ok(u64::from_be_bytes(self.bytes()?))
    }

    fn addr(&mut self) -> Result<OverlayAddress, MessageError> {
        OverlayAddress::from_bytes(&self.bytes::<4>()?).ok_or(MessageError::BadField)
    }
}

/// Reassembles length-prefixed messages from a byte stream.
#[derive(Debug, Default)]
pub struct MessageStream {
    buf: Vec<u8>,
}

impl MessageStream {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Pops the next complete message, if one is buffered.
    pub fn next_message(&mut self) -> Option<Result<ControlMessage, MessageError>> {
        let len = u32::from_be_bytes(self.buf.get(..4)?.try_into().unwrap()) as usize;
        if len > MAX_MESSAGE_LEN {
            self.buf.clear();
            return Some(Err(MessageError::TooLong(len)));
        }
        if self.buf.len() < 4 + len {
            return None;
        }
        let rest = self.buf.split_off(4 + len);
        let frame = std::mem::replace(&mut self.buf, rest);
        Some(ControlMessage::decode(&frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn samples() -> Vec<ControlMessage> {
        vec![
            ControlMessage::Hello {
                session_id: u64::MAX,
                e2e_key_material: [7; 32],
                proto_version: PROTO_VERSION,
            },
            ControlMessage::ChannelBinding {
                direction: Direction::S2c,
                last_relay_addr: OverlayAddress::new(12, 0),
                temp_src_addr: OverlayAddress::new(0xf001, 0),
                circuit_id: 0xdead_beef,
            },
            ControlMessage::Request {
                transfer_id: 0,
                resource_id: 1,
                size_hint: 0,
            },
            ControlMessage::Metadata(Metadata {
                transfer_id: 1,
                total_packets: u32::MAX,
                packet_size: 1028,
                seq_bytes: 4,
                chunk_size: 1024,
                data_len: u64::from(u32::MAX) * 1024,
            }),
            ControlMessage::TransferComplete {
                transfer_id: 1,
                packets_sent: 0,
            },
            ControlMessage::loss_report(1, vec![]).unwrap(),
            ControlMessage::loss_report(1, vec![0, 5, u32::MAX]).unwrap(),
            ControlMessage::Teardown { session_id: 0 },
            ControlMessage::StreamAck {
                transfer_id: 2,
                received: 64,
            },
        ]
    }

    #[test]
    fn every_variant_roundtrips() {
        for m in samples() {
            let b = m.encode();
            assert_eq!(ControlMessage::decode(&b).unwrap(), m);
            assert_eq!(u32::from_be_bytes(b[..4].try_into().unwrap()) as usize, b.len() - 4);
        }
    }

    #[test]
    fn loss_report_invariants() {
        assert_eq!(
            ControlMessage::loss_report(1, vec![3, 1]),
            Err(MessageError::UnsortedLossReport)
        );
        assert_eq!(
            ControlMessage::loss_report(1, vec![1, 1]),
            Err(MessageError::UnsortedLossReport)
        );
        let r = ControlMessage::loss_report(1, vec![1, 4]).unwrap();
        assert_eq!(r.check_loss_report(5), Ok(()));
        assert_eq!(
            r.check_loss_report(4),
            Err(MessageError::SeqOutOfRange { seq: 4, total: 4 })
        );
        let mut raw = ControlMessage::loss_report(1, vec![1, 2]).unwrap().encode();
        raw[13..17].copy_from_slice(&9u32.to_be_bytes());
        assert_eq!(ControlMessage::decode(&raw), Err(MessageError::UnsortedLossReport));
    }

    #[test]
    fn metadata_must_be_consistent() {
        let good = Metadata {
            transfer_id: 0,
            total_packets: 3,
            packet_size: 8,
            seq_bytes: 4,
            chunk_size: 4,
            data_len: 10,
        };
        assert!(good.validate().is_ok());
        let bad = Metadata {
            total_packets: 2,
            ..good
        };
        let b = ControlMessage::Metadata(bad).encode();
        assert!(matches!(ControlMessage::decode(&b), Err(MessageError::BadMetadata(_))));
    }

    #[test]
    fn stream_splits_and_joins() {
        let msgs = samples();
        let bytes: Vec<u8> = msgs.iter().flat_map(|m| m.encode()).collect();
        let mut s = MessageStream::default();
        let mut got = Vec::new();
        for chunk in bytes.chunks(7) {
            s.push(chunk);
            while let Some(m) = s.next_message() {
                got.push(m.unwrap());
            }
        }
        assert_eq!(got, msgs);
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(
            ControlMessage::decode(&[0, 0, 0, 1, 99]),
            Err(MessageError::UnknownTag(99))
        );
        assert_eq!(ControlMessage::decode(&[0, 0, 0, 5, 7]), Err(MessageError::Truncated));
        assert_eq!(ControlMessage::decode(&[0, 0, 0, 1, 7]), Err(MessageError::Truncated));
    }
}
