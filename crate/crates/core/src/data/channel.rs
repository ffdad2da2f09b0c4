//! A data channel: a 3-relay UDP circuit owned by the receiver. Relays add a
//! layer on the way in; the sender stamps a temporary source address and
//! knows only the last relay.

use crate::control::{ControlMessage, Direction};
use crate::crypto::e2e::{domain, e2e_decrypt, E2eSealer};
use crate::crypto::{derive_key, CipherSuite, LayerDirection, SealedCell, SymmetricKey};
use crate::overlay::{ChannelTag, Datagram, FabricError, NodeId, OverlayAddress};
use crate::path::{self, BuildError, BuildOptions, OwnedCircuit};
use crate::relay::wire::{cmd, udp_cell_frame};
use crate::runtime::SimHandle;
use crate::time::SimTime;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

/// End-to-end key for data sent in `dir`.
pub fn data_key(secret: &[u8; 32], dir: Direction) -> SymmetricKey {
    let info: &[u8] = match dir {
        Direction::C2s => b"darkhorse data c2s",
        Direction::S2c => b"darkhorse data s2c",
    };
    SymmetricKey::new(derive_key(secret, info), 0x10 + u32::from(dir.byte()))
}

/// What the sender learns about a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding {
    pub direction: Direction,
    pub last_relay_addr: OverlayAddress,
    pub temp_src_addr: OverlayAddress,
    pub circuit_id: u32,
}

impl Binding {
    pub fn message(&self) -> ControlMessage {
        ControlMessage::ChannelBinding {
            direction: self.direction,
            last_relay_addr: self.last_relay_addr,
            temp_src_addr: self.temp_src_addr,
            circuit_id: self.circuit_id,
        }
    }
}

/// The receiver's view of a data channel.
#[derive(Debug)]
pub struct ChannelHandle {
    pub direction: Direction,
    pub circ: OwnedCircuit,
    pub binding: Option<Binding>,
    pub build_time: std::time::Duration,
}

/// Builds the receiver-owned path for `direction` through `relays`
/// (owner-nearest first).
pub async fn build_data_path(
    h: &SimHandle,
    owner: NodeId,
    relays: &[NodeId],
    direction: Direction,
) -> Result<ChannelHandle, BuildError> {
    let start = h.now();
    let circ = path::build_circuit(h, owner, relays, BuildOptions::udp(LayerDirection::AddForward)).await?;
    Ok(ChannelHandle {
        direction,
        circ,
        binding: None,
        build_time: h.now().saturating_since(start),
    })
}

/// Draws a temporary source address from the fabric's reserved pool.
pub fn allocate_temp(h: &SimHandle) -> Result<OverlayAddress, FabricError> {
    h.with(|w| {
        let net = &mut w.net;
        net.fabric.allocate_temp_address(&mut net.rng)
    })
}

impl ChannelHandle {
    /// Fixes the binding for this channel; the caller sends
    /// `binding.message()` over the control channel.
    pub fn bind(&mut self, temp_src_addr: OverlayAddress) -> Binding {
        let b = Binding {
            direction: self.direction,
            last_relay_addr: OverlayAddress::of(self.circ.last_relay(), 0),
            temp_src_addr,
            circuit_id: self.circ.id,
        };
        self.binding = Some(b);
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("temporary address {0} already bound in this session")]
    DuplicateTemp(OverlayAddress),
    #[error("a binding for {0} already exists")]
    DuplicateDirection(Direction),
    #[error("not a channel binding")]
    NotBinding,
}

/// Sender-side record of the bindings received in one session.
#[derive(Debug, Default)]
pub struct BindingTable {
    temps: BTreeSet<OverlayAddress>,
    by_dir: HashMap<Direction, Binding>,
}

impl BindingTable {
    pub fn accept(&mut self, m: &ControlMessage) -> Result<Binding, BindError> {
        let ControlMessage::ChannelBinding {
            direction,
            last_relay_addr,
            temp_src_addr,
            circuit_id,
        } = *m
        else {
            return Err(BindError::NotBinding);
        };
        if self.temps.contains(&temp_src_addr) {
            return Err(BindError::DuplicateTemp(temp_src_addr));
        }
        if self.by_dir.contains_key(&direction) {
            return Err(BindError::DuplicateDirection(direction));
        }
        let b = Binding {
            direction,
            last_relay_addr,
            temp_src_addr,
            circuit_id,
        };
        self.temps.insert(temp_src_addr);
        self.by_dir.insert(direction, b);
        Ok(b)
    }

    pub fn get(&self, dir: Direction) -> Option<&Binding> {
        self.by_dir.get(&dir)
    }
}

/// Sending end of a bound channel.
#[derive(Debug)]
pub struct DataSender {
    pub node: NodeId,
    pub binding: Binding,
    sealer: E2eSealer,
    nonce_seq: u64,
    cache: HashMap<u32, Vec<u8>>,
    pub datagrams_sent: u64,
}

impl DataSender {
    pub fn new(h: &SimHandle, node: NodeId, binding: Binding, secret: &[u8; 32]) -> Self {
        let suite = h.with(|w| w.net.suite);
        let key = data_key(secret, binding.direction);
        DataSender {
            node,
            binding,
            sealer: E2eSealer::new(suite, key, binding.direction.byte()),
            nonce_seq: 0,
            cache: HashMap::new(),
            datagrams_sent: 0,
        }
    }

    /// Starts transfer `transfer_id`. Nonce seqs carry the id in their high
    /// half, so ids must increase per channel.
    pub fn begin(&mut self, transfer_id: u32) {
        self.nonce_seq = self.nonce_seq.max(u64::from(transfer_id) << 32);
        self.cache.clear();
    }

    fn seal(&mut self, dom: u8, pt: &[u8]) -> Vec<u8> {
        self.nonce_seq += 1;
        self.sealer
            .seal(dom, self.nonce_seq, pt)
            .expect("nonce seqs increase monotonically")
    }

    fn transmit(&mut self, h: &SimHandle, sealed: &[u8]) {
        let cell = SealedCell::bare(self.binding.circuit_id, sealed.to_vec()).encode();
        let d = Datagram::new(
            self.binding.temp_src_addr,
            self.binding.last_relay_addr,
            udp_cell_frame(cmd::DATA, &cell),
        )
        .with_channel(ChannelTag::Data);
        let node = self.node;
        h.with(|w| w.net.send_raw(node, d));
        self.datagrams_sent += 1;
    }

    /// Seals and sends packet `seq`, caching the ciphertext so a
    /// retransmission resends identical bytes.
    pub fn send_packet(&mut self, h: &SimHandle, seq: u32, packet: &[u8]) {
        let sealed = match self.cache.get(&seq) {
            Some(s) => s.clone(),
            None => {
                let s = self.seal(domain::DATA, packet);
                self.cache.insert(seq, s.clone());
                s
            }
        };
        self.transmit(h, &sealed);
    }

    /// Sends a request on the data channel (unreliable).
    pub fn send_request(&mut self, h: &SimHandle, body: &[u8]) {
        let sealed = self.seal(domain::REQUEST, body);
        self.transmit(h, &sealed);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataEvent {
    Packet {
        transfer: u32,
        packet: Vec<u8>,
        at: SimTime,
    },
    Request {
        transfer: u32,
        body: Vec<u8>,
        at: SimTime,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverCounters {
    pub cells: u64,
    pub integrity_fail: u64,
}

/// Receiving end: the owner of the channel circuit.
#[derive(Debug)]
pub struct DataReceiver {
    pub handle: ChannelHandle,
    suite: CipherSuite,
    key: SymmetricKey,
    pub counters: ReceiverCounters,
}

impl DataReceiver {
    pub fn new(h: &SimHandle, handle: ChannelHandle, secret: &[u8; 32]) -> Self {
        let suite = h.with(|w| w.net.suite);
        let key = data_key(secret, handle.direction);
        DataReceiver {
            handle,
            suite,
            key,
            counters: ReceiverCounters::default(),
        }
    }

    /// Next authenticated packet or request; `None` once the circuit is gone.
    pub async fn recv(&mut self, h: &SimHandle) -> Option<DataEvent> {
        let circ = &self.handle.circ;
        loop {
            let m = path::recv_cell(h, circ.owner, circ.id).await?;
            if m.cmd != cmd::DATA {
                continue;
            }
            self.counters.cells += 1;
            let Ok(sealed) = circ.unwrap(h, &m.cell) else {
                self.counters.integrity_fail += 1;
                continue;
            };
            let Ok((nonce, pt)) = e2e_decrypt(self.suite, &self.key, &sealed) else {
                self.counters.integrity_fail += 1;
                continue;
            };
            let transfer = u32::from_be_bytes(nonce[4..8].try_into().expect("nonce seq is 8 bytes"));
            match nonce[0] {
                domain::DATA => {
                    return Some(DataEvent::Packet {
                        transfer,
                        packet: pt,
                        at: m.at,
                    })
                }
                domain::REQUEST => {
                    return Some(DataEvent::Request {
                        transfer,
                        body: pt,
                        at: m.at,
                    })
                }
                _ => self.counters.integrity_fail += 1,
            }
        }
    }

    pub fn close(&self, h: &SimHandle) {
        self.handle.circ.close(h);
    }
}
