use super::exec::WakeSlot;
use crate::crypto::{CipherSuite, Directory, RelayIdentity};
use crate::overlay::{
    ChannelTag, Datagram, EgressConfig, Event, Fabric, FabricConfig, FabricError, NodeId, OverlayAddress,
};
use crate::relay::arq::{is_hop_frame, HopEndpoint, HopFrame, HopOut, HopParams, HopState, F_HOP_SEG};
use crate::relay::wire::{cmd, conn_cell_payload, udp_cell_frame, Link, F_CELL};
use crate::relay::{Relay, RelayConfig, RelayIo};
use crate::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet, VecDeque};
use std::task::Waker;

/// A queue a task can wait on.
#[derive(Debug)]
pub struct Mailbox<T> {
    queue: VecDeque<T>,
    waker: Option<Waker>,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Mailbox {
            queue: VecDeque::new(),
            waker: None,
        }
    }
}

impl<T> Mailbox<T> {
    pub fn push(&mut self, v: T) {
        self.queue.push_back(v);
        if let Some(w) = self.waker.take() {
            w.wake();
        }
    }

    pub fn pop(&mut self) -> Option<T> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn set_waker(&mut self, w: &Waker) {
        self.waker = Some(w.clone());
    }
}

/// A cell delivered to a host for one of its circuits.
#[derive(Debug, Clone)]
pub struct CellMsg {
    pub cmd: u8,
    pub cell: Vec<u8>,
    pub at: SimTime,
}

#[derive(Debug, Default)]
pub struct Host {
    circuits: HashMap<u32, Mailbox<CellMsg>>,
    pub unclaimed: u64,
}

impl Host {
    pub fn mailbox(&mut self, circuit: u32) -> Option<&mut Mailbox<CellMsg>> {
        self.circuits.get_mut(&circuit)
    }
}

// Relays far outnumber hosts, so boxing the large variant would only add a hop.
#[allow(clippy::large_enum_variant)]
#[derive(Debug)]
pub enum NodeRole {
    Relay(Relay),
    Host(Host),
}

enum Action {
    Emit {
        from: NodeId,
        link: Link,
        cmd: u8,
        cell: Vec<u8>,
    },
    Wake(WakeSlot),
    Hop {
        node: NodeId,
        conn: u32,
    },
}

enum Inbound {
    Payload { node: NodeId, conn: u32, payload: Vec<u8> },
}

/// Everything below the protocol logic: the fabric, reliable hops, timers.
pub struct Net {
    pub fabric: Fabric,
    pub suite: CipherSuite,
    pub hop_params: HopParams,
    /// Protocol randomness (ids, keys, path selection). Separate from the
    /// fabric's loss generator.
    pub rng: ChaCha8Rng,
    conns: HashMap<(NodeId, u32), HopEndpoint>,
    conn_ids: HashSet<u32>,
    circuit_ids: HashSet<u32>,
    pairs: HashMap<(NodeId, NodeId), u32>,
    conn_waiters: HashMap<(NodeId, u32), Vec<Waker>>,
    actions: HashMap<u64, Action>,
    next_token: u64,
    inbox: VecDeque<Inbound>,
    scratch: Vec<HopOut>,
    pub send_errors: u64,
}

fn tag_for_cmd(c: u8) -> ChannelTag {
    match c {
        cmd::DATA => ChannelTag::Data,
        cmd::STREAM_FWD | cmd::STREAM_BACK => ChannelTag::Control,
        _ => ChannelTag::Setup,
    }
}

impl Net {
    /// A circuit id no host in this world has used yet.
    pub fn fresh_circuit_id(&mut self) -> u32 {
        loop {
            let id: u32 = self.rng.gen();
            if id != 0 && self.circuit_ids.insert(id) {
                return id;
            }
        }
    }

    pub fn now(&self) -> SimTime {
        self.fabric.now()
    }

    fn token(&mut self, action: Action) -> u64 {
        let t = self.next_token;
        self.next_token += 1;
        self.actions.insert(t, action);
        t
    }

    pub fn wake_at(&mut self, at: SimTime, slot: WakeSlot) {
        let t = self.token(Action::Wake(slot));
        // Timers are not tied to a node; node 0 always exists once anything runs.
        self.fabric.schedule_timer(NodeId(0), at, t);
    }

    pub fn send_raw(&mut self, from: NodeId, d: Datagram) {
        if let Err(e) = self.fabric.send_datagram(from, d) {
            tracing::warn!(%from, error = %e, "datagram rejected");
            self.send_errors += 1;
        }
    }

    /// Sends a cell from `from` on `link` at `at`.
    pub fn emit_cell(&mut self, from: NodeId, link: Link, c: u8, cell: Vec<u8>, at: SimTime) {
        if at > self.now() {
            let t = self.token(Action::Emit {
                from,
                link,
                cmd: c,
                cell,
            });
            self.fabric.schedule_timer(from, at, t);
            return;
        }
        match link {
            Link::Udp(dst) => {
                let d = Datagram::new(OverlayAddress::of(from, 0), dst, udp_cell_frame(c, &cell))
                    .with_channel(tag_for_cmd(c));
                self.send_raw(from, d);
            }
            Link::Conn(conn) => {
                let now = self.now();
                let payload = conn_cell_payload(c, &cell);
                self.run_hop(from, conn, |ep, out| ep.send(payload, now, out));
            }
            Link::Splice(_) => self.send_errors += 1,
        }
    }

    fn run_hop(&mut self, node: NodeId, conn: u32, f: impl FnOnce(&mut HopEndpoint, &mut Vec<HopOut>)) {
        let mut out = std::mem::take(&mut self.scratch);
        let Some(ep) = self.conns.get_mut(&(node, conn)) else {
            self.scratch = out;
            return;
        };
        f(ep, &mut out);
        let peer = ep.peer();
        if !out.is_empty() {
            if let Some(ws) = self.conn_waiters.remove(&(node, conn)) {
                ws.into_iter().for_each(Waker::wake);
            }
        }
        for o in out.drain(..) {
            match o {
                HopOut::Transmit(frame) => {
                    let tag = if frame[0] == F_HOP_SEG {
                        frame.get(9).map_or(ChannelTag::Control, |&c| tag_for_cmd(c))
                    } else {
                        ChannelTag::Control
                    };
                    let d = Datagram::new(OverlayAddress::of(node, 0), peer, frame).with_channel(tag);
                    self.send_raw(node, d);
                }
                HopOut::ArmTimer(at) => {
                    let t = self.token(Action::Hop { node, conn });
                    self.fabric.schedule_timer(node, at, t);
                }
                HopOut::Deliver(payload) => self.inbox.push_back(Inbound::Payload { node, conn, payload }),
                HopOut::Established | HopOut::Failed(_) => {}
            }
        }
        self.scratch = out;
    }

    fn fresh_conn_id(&mut self) -> u32 {
        loop {
            let id: u32 = self.rng.gen();
            if id != 0 && self.conn_ids.insert(id) {
                return id;
            }
        }
    }

    /// Returns a usable reliable hop from `from` to `to`, opening one if none
    /// exists (or the existing one failed).
    pub fn open_conn(&mut self, from: NodeId, to: OverlayAddress) -> u32 {
        if let Some(&c) = self.pairs.get(&(from, to.node())) {
            if !matches!(self.conn_state(from, c), Some(HopState::Failed(_)) | None) {
                return c;
            }
        }
        let conn = self.fresh_conn_id();
        let now = self.now();
        let mut out = std::mem::take(&mut self.scratch);
        let ep = HopEndpoint::connect(conn, OverlayAddress::of(from, 0), to, self.hop_params, now, &mut out);
        self.conns.insert((from, conn), ep);
        self.pairs.insert((from, to.node()), conn);
        // Replay the connect output through run_hop's plumbing.
        let pending: Vec<HopOut> = std::mem::take(&mut out);
        self.scratch = out;
        self.run_hop(from, conn, |_, o| o.extend(pending));
        conn
    }

    pub fn conn_state(&self, node: NodeId, conn: u32) -> Option<HopState> {
        self.conns.get(&(node, conn)).map(|e| e.state())
    }

    pub fn conn_endpoint(&self, node: NodeId, conn: u32) -> Option<&HopEndpoint> {
        self.conns.get(&(node, conn))
    }

    pub fn conns(&self) -> impl Iterator<Item = (&(NodeId, u32), &HopEndpoint)> {
        self.conns.iter()
    }

    /// Wakes `w` the next time the endpoint does anything (state change,
    /// ack, delivery).
    pub fn wait_conn(&mut self, node: NodeId, conn: u32, w: &Waker) {
        self.conn_waiters.entry((node, conn)).or_default().push(w.clone());
    }

    fn on_hop_frame(&mut self, node: NodeId, frame: HopFrame) {
        let conn = frame.conn();
        if !self.conns.contains_key(&(node, conn)) {
            let HopFrame::Syn { initiator, .. } = frame else { return };
            let ep = HopEndpoint::accept(conn, OverlayAddress::of(node, 0), initiator, self.hop_params);
            self.conns.insert((node, conn), ep);
            self.pairs.entry((node, initiator.node())).or_insert(conn);
        }
        let now = self.now();
        self.run_hop(node, conn, |ep, out| ep.on_frame(frame, now, out));
    }
}

impl RelayIo for Net {
    fn now(&self) -> SimTime {
        self.fabric.now()
    }

    fn suite(&self) -> CipherSuite {
        self.suite
    }

    fn emit(&mut self, from: NodeId, link: Link, c: u8, cell: Vec<u8>, at: SimTime) {
        self.emit_cell(from, link, c, cell, at);
    }

    fn open_conn(&mut self, from: NodeId, to: OverlayAddress) -> u32 {
        Net::open_conn(self, from, to)
    }
}

/// Static parameters of a world.
#[derive(Debug, Clone, Copy, Default)]
pub struct WorldParams {
    pub suite: CipherSuite,
    pub hop: HopParams,
    pub relay: RelayConfig,
    /// Seed for protocol randomness; the fabric has its own.
    pub seed: u64,
}

pub struct World {
    pub net: Net,
    nodes: Vec<NodeRole>,
    directory: Directory,
    relay_config: RelayConfig,
    board: HashMap<u64, Mailbox<Vec<u8>>>,
}

impl World {
    pub fn new(fabric: FabricConfig, params: WorldParams) -> Result<Self, FabricError> {
        Ok(World {
            net: Net {
                fabric: Fabric::new(fabric)?,
                suite: params.suite,
                hop_params: params.hop,
                rng: ChaCha8Rng::seed_from_u64(params.seed),
                conns: HashMap::new(),
                conn_ids: HashSet::new(),
                circuit_ids: HashSet::new(),
                pairs: HashMap::new(),
                conn_waiters: HashMap::new(),
                actions: HashMap::new(),
                next_token: 0,
                inbox: VecDeque::new(),
                scratch: Vec::new(),
                send_errors: 0,
            },
            nodes: Vec::new(),
            directory: Directory::default(),
            relay_config: params.relay,
            board: HashMap::new(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.net.fabric.now()
    }

    pub fn add_relay(&mut self, egress: EgressConfig) -> Result<NodeId, FabricError> {
        let cfg = self.relay_config;
        self.add_relay_with(egress, cfg)
    }

    pub fn add_relay_with(&mut self, egress: EgressConfig, cfg: RelayConfig) -> Result<NodeId, FabricError> {
        let node = self.net.fabric.add_node(egress)?;
        let identity = RelayIdentity::generate(&mut self.net.rng);
        let relay = Relay::new(node, identity, cfg);
        self.directory.register(node, relay.public_key());
        self.nodes.push(NodeRole::Relay(relay));
        Ok(node)
    }

    pub fn add_host(&mut self, egress: EgressConfig) -> Result<NodeId, FabricError> {
        let node = self.net.fabric.add_node(egress)?;
        self.nodes.push(NodeRole::Host(Host::default()));
        Ok(node)
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn relay(&self, node: NodeId) -> Option<&Relay> {
        match self.nodes.get(node.index()) {
            Some(NodeRole::Relay(r)) => Some(r),
            _ => None,
        }
    }

    pub fn relays(&self) -> impl Iterator<Item = &Relay> {
        self.nodes.iter().filter_map(|n| match n {
            NodeRole::Relay(r) => Some(r),
            _ => None,
        })
    }

    pub fn relay_ids(&self) -> Vec<NodeId> {
        self.relays().map(|r| r.node()).collect()
    }

    pub fn host_mut(&mut self, node: NodeId) -> Option<&mut Host> {
        match self.nodes.get_mut(node.index()) {
            Some(NodeRole::Host(h)) => Some(h),
            _ => None,
        }
    }

    /// Routes cells for `circuit` arriving at host `node` into a mailbox.
    pub fn register_circuit(&mut self, node: NodeId, circuit: u32) {
        if let Some(h) = self.host_mut(node) {
            h.circuits.entry(circuit).or_default();
        }
    }

    pub fn unregister_circuit(&mut self, node: NodeId, circuit: u32) {
        if let Some(h) = self.host_mut(node) {
            h.circuits.remove(&circuit);
        }
    }

    /// Out-of-band mailbox keyed by an arbitrary id. Models coordination the
    /// simulation does not put on the wire (e.g. onion-service introduction).
    pub fn board(&mut self, key: u64) -> &mut Mailbox<Vec<u8>> {
        self.board.entry(key).or_default()
    }

    /// Dispatches the next fabric event. Returns false when none is left.
    pub fn step(&mut self) -> bool {
        let Some(ev) = self.net.fabric.pop_next() else {
            return false;
        };
        match ev {
            Event::Deliver { node, datagram, .. } => self.on_datagram(node, datagram),
            Event::Timer { token, .. } => match self.net.actions.remove(&token) {
                Some(Action::Emit { from, link, cmd, cell }) => {
                    let now = self.now();
                    self.net.emit_cell(from, link, cmd, cell, now);
                }
                Some(Action::Wake(slot)) => {
                    if let Some(w) = slot.borrow_mut().take() {
                        w.wake();
                    }
                }
                Some(Action::Hop { node, conn }) => {
                    let now = self.now();
                    self.net.run_hop(node, conn, |ep, out| ep.on_timer(now, out));
                }
                None => {}
            },
        }
        self.drain();
        true
    }

    /// Hands reliable-hop deliveries to their nodes until none is pending.
    pub fn drain(&mut self) {
        while let Some(Inbound::Payload { node, conn, payload }) = self.net.inbox.pop_front() {
            if let Some((&c, cell)) = payload.split_first() {
                self.on_cell(node, c, cell, Some(conn));
            }
        }
    }

    fn on_datagram(&mut self, node: NodeId, d: Datagram) {
        let p = &d.payload;
        if p.len() >= 2 && p[0] == F_CELL {
            self.on_cell(node, p[1], &p[2..], None);
        } else if is_hop_frame(p) {
            if let Some(f) = HopFrame::decode(p) {
                self.net.on_hop_frame(node, f);
            }
        }
    }

    fn on_cell(&mut self, node: NodeId, c: u8, cell: &[u8], from_conn: Option<u32>) {
        let now = self.now();
        match self.nodes.get_mut(node.index()) {
            Some(NodeRole::Relay(r)) => r.handle_cell(&mut self.net, c, cell, from_conn),
            Some(NodeRole::Host(h)) => {
                let Some(id) = cell.get(..4).map(|b| u32::from_be_bytes(b.try_into().unwrap())) else {
                    h.unclaimed += 1;
                    return;
                };
                match h.circuits.get_mut(&id) {
                    Some(mb) => mb.push(CellMsg {
                        cmd: c,
                        cell: cell.to_vec(),
                        at: now,
                    }),
                    None => h.unclaimed += 1,
                }
            }
            None => {}
        }
    }
}
