//! The control channel: a client circuit and a server circuit over reliable
//! hops, spliced at a rendezvous relay (the client circuit's last hop).
//!
//! Each cell on the channel carries a fixed-size end-to-end sealed payload.
//! Message-stream cells hold `len:2 | bytes | zero padding`; bulk cells hold
//! one packet (`seq | chunk`). The nonce domain tells them apart.

use super::message::{ControlMessage, MessageError, MessageStream};
use crate::crypto::e2e::{domain, e2e_decrypt, E2eSealer};
use crate::crypto::{derive_key, CipherSuite, LayerDirection, SymmetricKey};
use crate::overlay::NodeId;
use crate::path::{self, BuildError, BuildOptions, OwnedCircuit};
use crate::relay::arq::HopState;
use crate::relay::wire::{cmd, Link};
use crate::runtime::SimHandle;
use crate::time::SimTime;
use std::collections::VecDeque;
use std::future::poll_fn;
use std::task::Poll;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ControlError {
    #[error("insufficient relays: need 6, have {0}")]
    InsufficientRelays(usize),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("rendezvous join was never confirmed")]
    NotJoined,
    #[error("control channel closed")]
    Closed,
    #[error("unexpected control message: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Message(#[from] MessageError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlEvent {
    Msg(ControlMessage),
    /// One bulk packet (`seq | chunk`), with its arrival time.
    Bulk {
        packet: Vec<u8>,
        at: SimTime,
    },
}

/// Which end of the channel an endpoint is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

/// Keys for both directions of the channel, from the shared secret both
/// ends get through introduction.
pub fn channel_keys(secret: &[u8; 32]) -> (SymmetricKey, SymmetricKey) {
    (
        SymmetricKey::new(derive_key(secret, b"darkhorse control c2s"), 0),
        SymmetricKey::new(derive_key(secret, b"darkhorse control s2c"), 1),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlCounters {
    pub cells_sent: u64,
    pub cells_received: u64,
    pub bulk_sent: u64,
    pub bulk_received: u64,
    pub decrypt_failures: u64,
}

#[derive(Debug)]
pub struct ControlEndpoint {
    pub circ: OwnedCircuit,
    pub side: Side,
    suite: CipherSuite,
    sealer: E2eSealer,
    recv_key: SymmetricKey,
    cell_plain_len: usize,
    ctrl_seq: u64,
    bulk_seq: u64,
    stream: MessageStream,
    pending: VecDeque<ControlEvent>,
    pub counters: ControlCounters,
}

impl ControlEndpoint {
    pub fn new(h: &SimHandle, circ: OwnedCircuit, side: Side, secret: &[u8; 32], cell_plain_len: usize) -> Self {
        assert!(cell_plain_len > 2, "stream cells need room for a length prefix");
        let suite = h.with(|w| w.net.suite);
        let (c2s, s2c) = channel_keys(secret);
        let (send, recv, dir) = match side {
            Side::Client => (c2s, s2c, 0),
            Side::Server => (s2c, c2s, 1),
        };
        ControlEndpoint {
            circ,
            side,
            suite,
            sealer: E2eSealer::new(suite, send, dir),
            recv_key: recv,
            cell_plain_len,
            ctrl_seq: 0,
            bulk_seq: 0,
            stream: MessageStream::default(),
            pending: VecDeque::new(),
            counters: ControlCounters::default(),
        }
    }

    pub fn cell_plain_len(&self) -> usize {
        self.cell_plain_len
    }

    fn send_sealed(&mut self, h: &SimHandle, sealed: Vec<u8>) {
        let cell = self.circ.wrap(h, sealed);
        self.circ.send(h, cmd::STREAM_FWD, &cell);
        self.counters.cells_sent += 1;
    }

    /// Queues `m` for reliable in-order delivery to the other end.
    pub fn send_msg(&mut self, h: &SimHandle, m: &ControlMessage) {
        let bytes = m.encode();
        let room = self.cell_plain_len - 2;
        for part in bytes.chunks(room) {
            let mut pt = Vec::with_capacity(self.cell_plain_len);
            pt.extend_from_slice(&(part.len() as u16).to_be_bytes());
            pt.extend_from_slice(part);
            pt.resize(self.cell_plain_len, 0);
            self.ctrl_seq += 1;
            let sealed = self
                .sealer
                .seal(domain::CONTROL, self.ctrl_seq, &pt)
                .expect("control seqs increase monotonically");
            self.send_sealed(h, sealed);
        }
    }

    /// Sends one packet as a bulk cell. `packet` must be exactly
    /// `cell_plain_len` bytes.
    pub fn send_bulk(&mut self, h: &SimHandle, packet: &[u8]) {
        assert_eq!(packet.len(), self.cell_plain_len, "bulk packets are fixed size");
        self.bulk_seq += 1;
        let sealed = self
            .sealer
            .seal(domain::BULK, self.bulk_seq, packet)
            .expect("bulk seqs increase monotonically");
        self.send_sealed(h, sealed);
        self.counters.bulk_sent += 1;
    }

    /// Cells queued on the first hop and not yet acknowledged.
    pub fn first_hop_backlog(&self, h: &SimHandle) -> usize {
        let Link::Conn(c) = self.circ.first else { return 0 };
        let owner = self.circ.owner;
        h.with(|w| w.net.conn_endpoint(owner, c).map_or(0, |e| e.backlog()))
    }

    /// Waits until the first hop has fewer than `limit` cells outstanding.
    pub async fn writable(&self, h: &SimHandle, limit: usize) {
        let Link::Conn(c) = self.circ.first else { return };
        let owner = self.circ.owner;
        poll_fn(|cx| {
            h.with(|w| match w.net.conn_endpoint(owner, c) {
                Some(e) if e.backlog() >= limit && e.state() == HopState::Established => {
                    w.net.wait_conn(owner, c, cx.waker());
                    Poll::Pending
                }
                _ => Poll::Ready(()),
            })
        })
        .await
    }

    /// Next message or bulk packet from the other end.
    pub async fn recv(&mut self, h: &SimHandle) -> Option<ControlEvent> {
        loop {
            if let Some(e) = self.pending.pop_front() {
                return Some(e);
            }
            let m = path::recv_cell(h, self.circ.owner, self.circ.id).await?;
            if m.cmd != cmd::STREAM_BACK {
                continue;
            }
            self.counters.cells_received += 1;
            let Ok(sealed) = self.circ.unwrap(h, &m.cell) else {
                self.counters.decrypt_failures += 1;
                continue;
            };
            let Ok((nonce, pt)) = e2e_decrypt(self.suite, &self.recv_key, &sealed) else {
                self.counters.decrypt_failures += 1;
                continue;
            };
            match nonce[0] {
                domain::CONTROL => {
                    let len = u16::from_be_bytes([pt[0], pt[1]]) as usize;
                    self.stream.push(&pt[2..(2 + len).min(pt.len())]);
                    while let Some(r) = self.stream.next_message() {
                        match r {
                            Ok(msg) => self.pending.push_back(ControlEvent::Msg(msg)),
                            Err(e) => tracing::warn!(error = %e, "bad control message"),
                        }
                    }
                }
                domain::BULK => {
                    self.counters.bulk_received += 1;
                    self.pending.push_back(ControlEvent::Bulk { packet: pt, at: m.at });
                }
                _ => self.counters.decrypt_failures += 1,
            }
        }
    }

    /// Next control message; bulk packets arriving meanwhile are dropped.
    pub async fn recv_msg(&mut self, h: &SimHandle) -> Result<ControlMessage, ControlError> {
        loop {
            match self.recv(h).await {
                Some(ControlEvent::Msg(m)) => return Ok(m),
                Some(ControlEvent::Bulk { .. }) => continue,
                None => return Err(ControlError::Closed),
            }
        }
    }

    pub fn close(&self, h: &SimHandle) {
        self.circ.close(h);
    }
}

fn encode_intro(rp: NodeId, circuit: u32) -> Vec<u8> {
    let mut b = rp.0.to_be_bytes().to_vec();
    b.extend_from_slice(&circuit.to_be_bytes());
    b
}

fn decode_intro(b: &[u8]) -> Option<(NodeId, u32)> {
    Some((
        NodeId(u16::from_be_bytes(b.get(..2)?.try_into().ok()?)),
        u32::from_be_bytes(b.get(2..6)?.try_into().ok()?),
    ))
}

/// Client half: builds the circuit ending at the rendezvous relay, publishes
/// it through the introduction board, and waits for the join.
pub async fn client_open(
    h: &SimHandle,
    client: NodeId,
    relays: &[NodeId],
    intro: u64,
) -> Result<OwnedCircuit, ControlError> {
    let circ = path::build_circuit(h, client, relays, BuildOptions::reliable(LayerDirection::PeelForward)).await?;
    let note = encode_intro(circ.last_relay(), circ.id);
    h.with(|w| w.board(intro).push(note));
    if path::wait_joined(h, &circ).await {
        Ok(circ)
    } else {
        Err(ControlError::NotJoined)
    }
}

/// Server half: builds its own circuit, learns the rendezvous point from the
/// introduction board, and joins onto the client's circuit there.
pub async fn server_open(
    h: &SimHandle,
    server: NodeId,
    relays: &[NodeId],
    intro: u64,
) -> Result<OwnedCircuit, ControlError> {
    let opts = BuildOptions::reliable(LayerDirection::PeelForward);
    let mut circ = path::build_circuit(h, server, relays, opts).await?;
    let note = poll_fn(|cx| {
        h.with(|w| {
            let b = w.board(intro);
            match b.pop() {
                Some(n) => Poll::Ready(n),
                None => {
                    b.set_waker(cx.waker());
                    Poll::Pending
                }
            }
        })
    })
    .await;
    let (rp, target) = decode_intro(&note).ok_or(ControlError::NotJoined)?;
    path::extend(h, &mut circ, rp, Some(target), &opts).await?;
    Ok(circ)
}
