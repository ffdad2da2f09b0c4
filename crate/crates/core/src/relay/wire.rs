//! Cell framing on links.
//!
//! A UDP datagram carrying a cell is `0x10 | cmd:1 | SealedCell`. On a
//! reliable hop each segment payload is `cmd:1 | SealedCell`.
//!
//! Bodies of the construction commands (all at layer count 0):
//!
//! | cmd           | body                                       |
//! |---------------|--------------------------------------------|
//! | CREATE        | `reply_mode:1 reply_addr:4 create_blob`    |
//! | CREATED       | `confirmation:16`                          |
//! | CREATE_FAILED | `reason:1`                                 |
//!
//! RELAY_FWD / RELAY_BACK carry a relay command once every layer is off:
//! `EXTEND mode:1 next_addr:4 create_blob`, `EXTENDED confirmation:16`,
//! `EXTEND_FAILED reason:1`, `JOINED`.

use crate::overlay::OverlayAddress;

pub const F_CELL: u8 = 0x10;

pub mod cmd {
    pub const CREATE: u8 = 0x01;
    pub const CREATED: u8 = 0x02;
    pub const CREATE_FAILED: u8 = 0x03;
    pub const RELAY_FWD: u8 = 0x04;
    pub const RELAY_BACK: u8 = 0x05;
    pub const STREAM_FWD: u8 = 0x06;
    pub const STREAM_BACK: u8 = 0x07;
    pub const DATA: u8 = 0x08;
    pub const DESTROY: u8 = 0x09;
}

pub mod relay_cmd {
    pub const EXTEND: u8 = 0x01;
    pub const EXTENDED: u8 = 0x02;
    pub const EXTEND_FAILED: u8 = 0x03;
    pub const JOINED: u8 = 0x04;
}

pub mod reason {
    pub const DUPLICATE_ID: u8 = 1;
    pub const BAD_BLOB: u8 = 2;
    pub const NO_SPLICE_TARGET: u8 = 3;
    pub const ALREADY_EXTENDED: u8 = 4;
    pub const UNREACHABLE: u8 = 5;
}

/// How the next hop of a circuit is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkMode {
    Udp = 0,
    Reliable = 1,
}

impl LinkMode {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(LinkMode::Udp),
            1 => Some(LinkMode::Reliable),
            _ => None,
        }
    }
}

/// One side of a circuit hop as seen from a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Udp(OverlayAddress),
    Conn(u32),
    /// Rendezvous splice onto another circuit at the same relay.
    Splice(u32),
}

pub fn encode_create(mode: LinkMode, reply: OverlayAddress, blob: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(5 + blob.len());
    b.push(mode as u8);
    b.extend_from_slice(&reply.to_bytes());
    b.extend_from_slice(blob);
    b
}

pub fn decode_create(body: &[u8]) -> Option<(LinkMode, OverlayAddress, &[u8])> {
    let mode = LinkMode::from_byte(*body.first()?)?;
    let reply = OverlayAddress::from_bytes(body.get(1..5)?)?;
    Some((mode, reply, &body[5..]))
}

pub fn encode_extend(mode: LinkMode, next: OverlayAddress, blob: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(6 + blob.len());
    b.push(relay_cmd::EXTEND);
    b.extend_from_slice(&encode_create(mode, next, blob));
    b
}

pub fn udp_cell_frame(cmd: u8, cell: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(2 + cell.len());
    b.push(F_CELL);
    b.push(cmd);
    b.extend_from_slice(cell);
    b
}

pub fn conn_cell_payload(cmd: u8, cell: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(1 + cell.len());
    b.push(cmd);
    b.extend_from_slice(cell);
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_body_roundtrip() {
        let a = OverlayAddress::new(4, 9);
        let b = encode_create(LinkMode::Reliable, a, &[7, 8]);
        assert_eq!(decode_create(&b), Some((LinkMode::Reliable, a, &[7u8, 8][..])));
        assert_eq!(decode_create(&[5, 0, 0, 0, 0]), None);
        let e = encode_extend(LinkMode::Udp, a, &[1]);
        assert_eq!(e[0], relay_cmd::EXTEND);
        assert_eq!(decode_create(&e[1..]), Some((LinkMode::Udp, a, &[1u8][..])));
    }
}
