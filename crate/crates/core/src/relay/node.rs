use super::circuit::{CircuitEntry, CircuitTable, DEFAULT_IDLE_TIMEOUT};
use super::wire::{self, cmd, reason, relay_cmd, Link, LinkMode};
use crate::crypto::handshake::{confirmation, PUBKEY_LEN};
use crate::crypto::{layer_nonce, CipherSuite, LayerDirection, NonceDir, RelayIdentity, SealedCell};
use crate::overlay::{NodeId, OverlayAddress};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// What a relay needs from the network it sits in.
pub trait RelayIo {
    fn now(&self) -> SimTime;
    fn suite(&self) -> CipherSuite;
    /// Sends a cell on `link` at time `at` (not before now).
    fn emit(&mut self, from: NodeId, link: Link, cmd: u8, cell: Vec<u8>, at: SimTime);
    /// Returns a reliable hop to `to`, opening one if needed.
    fn open_conn(&mut self, from: NodeId, to: OverlayAddress) -> u32;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelayConfig {
    #[serde(with = "crate::time::serde_nanos")]
    pub crypto_cost_per_layer: Duration,
    #[serde(with = "crate::time::serde_nanos")]
    pub create_cost: Duration,
    #[serde(with = "crate::time::serde_nanos")]
    pub idle_timeout: Duration,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            crypto_cost_per_layer: Duration::ZERO,
            create_cost: Duration::ZERO,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RelayStats {
    pub forwarded: u64,
    pub unknown_circuit: u64,
    pub integrity_fail: u64,
    pub malformed: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub layer_ops: u64,
}

#[derive(Debug)]
pub struct Relay {
    node: NodeId,
    identity: RelayIdentity,
    config: RelayConfig,
    table: CircuitTable,
    stats: RelayStats,
    cpu_free: SimTime,
}

impl Relay {
    pub fn new(node: NodeId, identity: RelayIdentity, config: RelayConfig) -> Self {
        let idle = (!config.idle_timeout.is_zero()).then_some(config.idle_timeout);
        Relay {
            node,
            identity,
            config,
            table: CircuitTable::new(idle),
            stats: RelayStats::default(),
            cpu_free: SimTime::ZERO,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn addr(&self) -> OverlayAddress {
        OverlayAddress::of(self.node, 0)
    }

    pub fn public_key(&self) -> [u8; PUBKEY_LEN] {
        self.identity.public()
    }

    pub fn stats(&self) -> RelayStats {
        self.stats
    }

    pub fn table(&self) -> &CircuitTable {
        &self.table
    }

    pub fn config(&self) -> RelayConfig {
        self.config
    }

    /// Reserves the relay CPU for `ops` layer operations starting now and
    /// returns when the work is done.
    fn cpu(&mut self, now: SimTime, ops: u32, per_op: Duration) -> SimTime {
        if ops == 0 || per_op.is_zero() {
            return now;
        }
        let done = now.max(self.cpu_free) + per_op * ops;
        self.cpu_free = done;
        done
    }

    fn send(&mut self, io: &mut dyn RelayIo, link: Link, c: u8, cell: SealedCell, at: SimTime) {
        let bytes = cell.encode();
        self.stats.bytes_out += bytes.len() as u64;
        io.emit(self.node, link, c, bytes, at);
    }

    /// Handles one cell. `from_conn` is the reliable hop it arrived on, if
    /// any; the datagram source address is never consulted.
    pub fn handle_cell(&mut self, io: &mut dyn RelayIo, c: u8, bytes: &[u8], from_conn: Option<u32>) {
        self.stats.bytes_in += bytes.len() as u64;
        let Ok(cell) = SealedCell::decode(bytes) else {
            self.stats.malformed += 1;
            return;
        };
        let now = io.now();
        self.table.expire(now);
        if c != cmd::CREATE {
            match self.table.get_mut(cell.circuit_id) {
                Some(e) => e.last_used = now,
                None => {
                    self.stats.unknown_circuit += 1;
                    return;
                }
            }
        }
        match c {
            cmd::CREATE => self.on_create(io, cell, from_conn),
            cmd::CREATED | cmd::CREATE_FAILED => self.on_created(io, c, cell),
            cmd::RELAY_FWD | cmd::STREAM_FWD => self.outbound(io, c, cell.circuit_id, cell),
            cmd::RELAY_BACK | cmd::STREAM_BACK => self.inbound(io, c, cell.circuit_id, cell, now),
            cmd::DATA => {
                let dir = self.table.get(cell.circuit_id).map(|e| e.direction);
                match dir {
                    Some(LayerDirection::AddForward) => self.inbound(io, c, cell.circuit_id, cell, now),
                    _ => self.outbound(io, c, cell.circuit_id, cell),
                }
            }
            cmd::DESTROY => self.on_destroy(io, cell.circuit_id),
            _ => self.stats.malformed += 1,
        }
    }

    fn on_create(&mut self, io: &mut dyn RelayIo, cell: SealedCell, from_conn: Option<u32>) {
        let id = cell.circuit_id;
        let Some((mode, reply, blob)) = (cell.layers() == 0).then(|| wire::decode_create(cell.body())).flatten() else {
            self.stats.malformed += 1;
            return;
        };
        let toward_owner = match (mode, from_conn) {
            (LinkMode::Udp, _) => Link::Udp(reply),
            (LinkMode::Reliable, Some(c)) => Link::Conn(c),
            _ => {
                self.stats.malformed += 1;
                return;
            }
        };
        let suite = io.suite();
        let fail = |me: &mut Self, io: &mut dyn RelayIo, why: u8| {
            me.stats.malformed += 1;
            let now = io.now();
            me.send(
                io,
                toward_owner,
                cmd::CREATE_FAILED,
                SealedCell::bare(id, vec![why]),
                now,
            );
        };
        let info = match self.identity.open_create(suite, blob) {
            Ok(i) => i,
            Err(_) => {
                self.stats.integrity_fail += 1;
                return fail(self, io, reason::BAD_BLOB);
            }
        };
        let eph: [u8; 32] = blob[..32].try_into().unwrap();
        if let Some(existing) = self.table.get(id) {
            if existing.create_eph == eph {
                let conf = confirmation(suite, &existing.key, blob);
                let link = existing.toward_owner;
                let at = io.now();
                return self.send(io, link, cmd::CREATED, SealedCell::bare(id, conf.to_vec()), at);
            }
            return fail(self, io, reason::DUPLICATE_ID);
        }
        if let Some(target) = info.splice {
            if target == id || !self.table.get(target).is_some_and(|t| t.away.is_none() && t.layered) {
                return fail(self, io, reason::NO_SPLICE_TARGET);
            }
        }
        let now = io.now();
        let conf = confirmation(suite, &info.key, blob);
        self.table.insert(CircuitEntry {
            circuit_id: id,
            key: info.key,
            layered: info.splice.is_none(),
            toward_owner,
            away: info.splice.map(Link::Splice),
            direction: info.direction,
            created_at: now,
            last_used: now,
            create_eph: eph,
            pending_extend: None,
            extend_eph: None,
            add_counter: 0,
        });
        let at = self.cpu(now, 1, self.config.create_cost);
        self.send(io, toward_owner, cmd::CREATED, SealedCell::bare(id, conf.to_vec()), at);
        if let Some(target) = info.splice {
            self.table.get_mut(target).unwrap().away = Some(Link::Splice(id));
            self.relay_back(io, target, vec![relay_cmd::JOINED]);
        }
    }

    fn on_created(&mut self, io: &mut dyn RelayIo, c: u8, cell: SealedCell) {
        let id = cell.circuit_id;
        let e = self.table.get_mut(id).unwrap();
        let Some(next) = e.pending_extend.take() else {
            self.stats.malformed += 1;
            return;
        };
        let reply = if c == cmd::CREATED {
            e.away = Some(next);
            let mut r = vec![relay_cmd::EXTENDED];
            r.extend_from_slice(cell.body());
            r
        } else {
            vec![relay_cmd::EXTEND_FAILED, cell.body().first().copied().unwrap_or(0)]
        };
        self.relay_back(io, id, reply);
    }

    /// Sends a relay command toward the owner of `id`, under this relay's layer.
    fn relay_back(&mut self, io: &mut dyn RelayIo, id: u32, payload: Vec<u8>) {
        let now = io.now();
        self.inbound(io, cmd::RELAY_BACK, id, SealedCell::bare(id, payload), now);
    }

    /// A cell travelling away from the circuit owner: remove our layer and
    /// pass it on, or act on it if it was addressed to us.
    fn outbound(&mut self, io: &mut dyn RelayIo, c: u8, id: u32, cell: SealedCell) {
        let now = io.now();
        let e = self.table.get(id).unwrap();
        let (layered, away) = (e.layered, e.away);
        let (cell, done) = if layered {
            let key = e.key.clone();
            match cell.peel(io.suite(), &key) {
                Ok(inner) => {
                    self.stats.layer_ops += 1;
                    (inner, self.cpu(now, 1, self.config.crypto_cost_per_layer))
                }
                Err(_) => {
                    self.stats.integrity_fail += 1;
                    return;
                }
            }
        } else {
            (cell, now)
        };
        if c == cmd::RELAY_FWD && cell.layers() == 0 {
            return self.on_relay_command(io, id, cell.into_body());
        }
        match (c, away) {
            (cmd::RELAY_FWD, Some(Link::Splice(_))) | (_, None) => self.stats.malformed += 1,
            (_, Some(Link::Splice(other))) => {
                let cell = SealedCell::bare(other, cell.into_body());
                self.inbound(io, cmd::STREAM_BACK, other, cell, done);
            }
            (_, Some(link)) => {
                self.stats.forwarded += 1;
                self.send(io, link, c, cell, done);
            }
        }
    }

    /// A cell travelling toward the circuit owner: add our layer and pass it
    /// on. `ready` is when the cell became available here.
    fn inbound(&mut self, io: &mut dyn RelayIo, c: u8, id: u32, cell: SealedCell, ready: SimTime) {
        let Some(e) = self.table.get_mut(id) else {
            self.stats.unknown_circuit += 1;
            return;
        };
        let link = e.toward_owner;
        let cell = cell.with_circuit_id(id);
        let (cell, ops) = if e.layered {
            e.add_counter += 1;
            let nonce = layer_nonce(NonceDir::Inbound, 0, e.add_counter);
            let key = e.key.clone();
            match cell.add_layer(io.suite(), &key, nonce) {
                Ok(c) => (c, 1),
                Err(_) => {
                    self.stats.malformed += 1;
                    return;
                }
            }
        } else {
            (cell, 0)
        };
        self.stats.layer_ops += ops as u64;
        let at = self.cpu(ready, ops, self.config.crypto_cost_per_layer);
        if c != cmd::RELAY_BACK {
            self.stats.forwarded += 1;
        }
        self.send(io, link, c, cell, at);
    }

    fn on_relay_command(&mut self, io: &mut dyn RelayIo, id: u32, body: Vec<u8>) {
        match body.first() {
            Some(&relay_cmd::EXTEND) => {
                let Some((mode, next, blob)) = wire::decode_create(&body[1..]) else {
                    self.stats.malformed += 1;
                    return;
                };
                let eph: Option<[u8; 32]> = blob.get(..32).and_then(|b| b.try_into().ok());
                let e = self.table.get(id).unwrap();
                let link = match (e.extend_eph, e.pending_extend.or(e.away)) {
                    (None, None) => match mode {
                        LinkMode::Udp => Link::Udp(next),
                        LinkMode::Reliable => Link::Conn(io.open_conn(self.node, next)),
                    },
                    (Some(prev), Some(link)) if Some(prev) == eph => link,
                    _ => {
                        return self.relay_back(io, id, vec![relay_cmd::EXTEND_FAILED, reason::ALREADY_EXTENDED]);
                    }
                };
                let create = wire::encode_create(mode, self.addr(), blob);
                let e = self.table.get_mut(id).unwrap();
                e.pending_extend = Some(link);
                e.extend_eph = eph;
                let now = io.now();
                self.send(io, link, cmd::CREATE, SealedCell::bare(id, create), now);
            }
            _ => self.stats.malformed += 1,
        }
    }

    fn on_destroy(&mut self, io: &mut dyn RelayIo, id: u32) {
        let Some(e) = self.table.remove(id) else { return };
        let now = io.now();
        match e.away {
            Some(Link::Splice(other)) => {
                if let Some(o) = self.table.remove(other) {
                    self.send(io, o.toward_owner, cmd::DESTROY, SealedCell::bare(other, vec![]), now);
                }
            }
            Some(link) => self.send(io, link, cmd::DESTROY, SealedCell::bare(id, vec![]), now),
            None => {}
        }
    }
}
