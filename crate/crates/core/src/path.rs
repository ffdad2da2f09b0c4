//! Owner-side circuit construction and cell I/O.
//!
//! Construction is telescoping: CREATE to the first relay, then one EXTEND
//! per further relay, each acknowledged before the next. Every step is
//! retried after `hop_timeout`, up to `retries` times.

use crate::crypto::handshake::{confirmation, seal_create};
use crate::crypto::{
    layer_nonce, onion_wrap, unwrap_all, CellError, CreateInfo, LayerDirection, NonceDir, SealedCell, SymmetricKey,
};
use crate::overlay::{NodeId, OverlayAddress};
use crate::relay::arq::HopState;
use crate::relay::wire::{self, cmd, relay_cmd, Link, LinkMode};
use crate::runtime::{CellMsg, SimHandle};
use rand::seq::index::sample;
use std::collections::BTreeSet;
use std::fmt;
use std::future::poll_fn;
use std::task::Poll;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub mode: LinkMode,
    pub direction: LayerDirection,
    pub hop_timeout: Duration,
    pub retries: u32,
}

impl BuildOptions {
    pub fn udp(direction: LayerDirection) -> Self {
        BuildOptions {
            mode: LinkMode::Udp,
            direction,
            hop_timeout: Duration::from_secs(2),
            retries: 3,
        }
    }

    pub fn reliable(direction: LayerDirection) -> Self {
        BuildOptions {
            mode: LinkMode::Reliable,
            ..Self::udp(direction)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopErrorKind {
    Timeout,
    Rejected(u8),
    BadConfirmation,
    LinkFailed,
}

impl fmt::Display for HopErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HopErrorKind::Timeout => f.write_str("timed out"),
            HopErrorKind::Rejected(r) => write!(f, "rejected (reason {r})"),
            HopErrorKind::BadConfirmation => f.write_str("bad key confirmation"),
            HopErrorKind::LinkFailed => f.write_str("link failed"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("insufficient relays: need {need}, have {have}")]
    InsufficientRelays { need: usize, have: usize },
    #[error("no directory entry for relay {0}")]
    UnknownRelay(NodeId),
    /// `hop` is 1-based along the path.
    #[error("circuit build failed at hop {hop}: {kind}")]
    Hop { hop: usize, kind: HopErrorKind },
}

/// Picks `n` distinct relays from `pool` minus `exclude`.
pub fn select_relays<R: rand::Rng + ?Sized>(
    rng: &mut R,
    pool: &[NodeId],
    n: usize,
    exclude: &BTreeSet<NodeId>,
) -> Result<Vec<NodeId>, BuildError> {
    let avail: Vec<NodeId> = pool.iter().copied().filter(|r| !exclude.contains(r)).collect();
    if avail.len() < n {
        return Err(BuildError::InsufficientRelays {
            need: n,
            have: avail.len(),
        });
    }
    Ok(sample(rng, avail.len(), n).into_iter().map(|i| avail[i]).collect())
}

/// A circuit as held by its owner.
#[derive(Debug, Clone)]
pub struct OwnedCircuit {
    pub id: u32,
    pub owner: NodeId,
    /// Relays in path order, owner-nearest first (includes a spliced
    /// rendezvous relay, which holds no layer key).
    pub relays: Vec<NodeId>,
    keys: Vec<SymmetricKey>,
    pub first: Link,
    pub mode: LinkMode,
    out_counter: u64,
}

impl OwnedCircuit {
    pub fn keys(&self) -> &[SymmetricKey] {
        &self.keys
    }

    pub fn last_relay(&self) -> NodeId {
        *self.relays.last().expect("built circuits have at least one relay")
    }

    /// Wraps `payload` under every layer key (first relay outermost).
    pub fn wrap(&mut self, h: &SimHandle, payload: Vec<u8>) -> SealedCell {
        self.wrap_prefix(h, payload, self.keys.len())
    }

    fn wrap_prefix(&mut self, h: &SimHandle, payload: Vec<u8>, n: usize) -> SealedCell {
        self.out_counter += 1;
        let ctr = self.out_counter;
        let suite = h.with(|w| w.net.suite);
        onion_wrap(suite, payload, &self.keys[..n], self.id, |i| {
            layer_nonce(NonceDir::Outbound, i as u8, ctr)
        })
        .expect("layer count fits in a byte")
    }

    /// Removes the layers relays added on the way to the owner.
    pub fn unwrap(&self, h: &SimHandle, cell: &[u8]) -> Result<Vec<u8>, CellError> {
        let suite = h.with(|w| w.net.suite);
        unwrap_all(suite, SealedCell::decode(cell)?, &self.keys)
    }

    /// Sends an already-sealed cell on the first hop.
    pub fn send(&self, h: &SimHandle, c: u8, cell: &SealedCell) {
        let (owner, first, bytes) = (self.owner, self.first, cell.encode());
        h.with(|w| {
            let now = w.now();
            w.net.emit_cell(owner, first, c, bytes, now)
        });
    }

    pub fn close(&self, h: &SimHandle) {
        self.send(h, cmd::DESTROY, &SealedCell::bare(self.id, vec![]));
        h.with(|w| w.unregister_circuit(self.owner, self.id));
    }
}

/// Waits for the next cell on `circuit` at host `node`.
pub async fn recv_cell(h: &SimHandle, node: NodeId, circuit: u32) -> Option<CellMsg> {
    poll_fn(|cx| {
        h.with(|w| {
            let Some(host) = w.host_mut(node) else {
                return Poll::Ready(None);
            };
            match host.mailbox(circuit) {
                None => Poll::Ready(None),
                Some(mb) => match mb.pop() {
                    Some(m) => Poll::Ready(Some(m)),
                    None => {
                        mb.set_waker(cx.waker());
                        Poll::Pending
                    }
                },
            }
        })
    })
    .await
}

/// Opens (or reuses) a reliable hop and waits until it is usable.
pub async fn connect_hop(h: &SimHandle, node: NodeId, to: NodeId) -> Result<u32, HopErrorKind> {
    let conn = h.with(|w| w.net.open_conn(node, OverlayAddress::of(to, 0)));
    poll_fn(|cx| {
        h.with(|w| match w.net.conn_state(node, conn) {
            Some(HopState::Established) => Poll::Ready(Ok(conn)),
            Some(HopState::Connecting { .. }) => {
                w.net.wait_conn(node, conn, cx.waker());
                Poll::Pending
            }
            _ => Poll::Ready(Err(HopErrorKind::LinkFailed)),
        })
    })
    .await
}

fn fresh_circuit_id(h: &SimHandle) -> u32 {
    h.with(|w| w.net.fresh_circuit_id())
}

enum Reply {
    Created([u8; 16]),
    Extended([u8; 16]),
    Joined,
    Failed(u8),
}

fn parse_reply(circ: &OwnedCircuit, h: &SimHandle, m: &CellMsg, layers: usize) -> Option<Reply> {
    match m.cmd {
        cmd::CREATED | cmd::CREATE_FAILED if layers == 0 => {
            let c = SealedCell::decode(&m.cell).ok()?;
            if c.layers() != 0 {
                return None;
            }
            if m.cmd == cmd::CREATED {
                Some(Reply::Created(c.body().try_into().ok()?))
            } else {
                Some(Reply::Failed(c.body().first().copied().unwrap_or(0)))
            }
        }
        cmd::RELAY_BACK => {
            let suite = h.with(|w| w.net.suite);
            let cell = SealedCell::decode(&m.cell).ok()?;
            let body = unwrap_all(suite, cell, &circ.keys[..layers]).ok()?;
            match body.split_first()? {
                (&relay_cmd::EXTENDED, conf) => Some(Reply::Extended(conf.try_into().ok()?)),
                (&relay_cmd::EXTEND_FAILED, rest) => Some(Reply::Failed(rest.first().copied().unwrap_or(0))),
                (&relay_cmd::JOINED, _) => Some(Reply::Joined),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Sends `cell` and waits for the construction reply at depth `layers`,
/// resending on timeout.
async fn request(
    h: &SimHandle,
    circ: &OwnedCircuit,
    c: u8,
    cell: &SealedCell,
    layers: usize,
    opts: &BuildOptions,
) -> Result<Reply, HopErrorKind> {
    for _ in 0..=opts.retries {
        circ.send(h, c, cell);
        let deadline = h.now() + opts.hop_timeout;
        loop {
            let left = deadline.saturating_since(h.now());
            if left.is_zero() {
                break;
            }
            match h.timeout(left, recv_cell(h, circ.owner, circ.id)).await {
                None => break,
                Some(None) => return Err(HopErrorKind::LinkFailed),
                Some(Some(m)) => match parse_reply(circ, h, &m, layers) {
                    Some(Reply::Joined) | None => continue,
                    Some(r) => return Ok(r),
                },
            }
        }
    }
    Err(HopErrorKind::Timeout)
}

fn create_blob(h: &SimHandle, relay: NodeId, info: &CreateInfo) -> Result<Vec<u8>, BuildError> {
    h.with(|w| {
        let pk = *w.directory().lookup(relay).ok_or(BuildError::UnknownRelay(relay))?;
        let suite = w.net.suite;
        Ok(seal_create(suite, &mut w.net.rng, &pk, info))
    })
}

/// Builds a circuit from `node` through `relays` in order.
pub async fn build_circuit(
    h: &SimHandle,
    node: NodeId,
    relays: &[NodeId],
    opts: BuildOptions,
) -> Result<OwnedCircuit, BuildError> {
    if relays.is_empty() {
        return Err(BuildError::InsufficientRelays { need: 1, have: 0 });
    }
    let id = fresh_circuit_id(h);
    h.with(|w| w.register_circuit(node, id));
    let first = match opts.mode {
        LinkMode::Udp => Link::Udp(OverlayAddress::of(relays[0], 0)),
        LinkMode::Reliable => Link::Conn(
            connect_hop(h, node, relays[0])
                .await
                .map_err(|kind| BuildError::Hop { hop: 1, kind })?,
        ),
    };
    let mut circ = OwnedCircuit {
        id,
        owner: node,
        relays: Vec::new(),
        keys: Vec::new(),
        first,
        mode: opts.mode,
        out_counter: 0,
    };
    for (i, &relay) in relays.iter().enumerate() {
        if let Err(e) = extend(h, &mut circ, relay, None, &opts).await {
            h.with(|w| w.unregister_circuit(node, id));
            if i > 0 {
                circ.close(h);
            }
            return Err(e);
        }
    }
    Ok(circ)
}

/// Extends `circ` to `relay`. With `splice = Some(target)` the relay joins
/// this circuit onto its circuit `target` without adding a layer.
pub async fn extend(
    h: &SimHandle,
    circ: &mut OwnedCircuit,
    relay: NodeId,
    splice: Option<u32>,
    opts: &BuildOptions,
) -> Result<(), BuildError> {
    let hop = circ.relays.len() + 1;
    let key = h.with(|w| SymmetricKey::random(&mut w.net.rng, hop as u32));
    let info = CreateInfo {
        key: key.clone(),
        direction: opts.direction,
        splice,
    };
    let blob = create_blob(h, relay, &info)?;
    let me = OverlayAddress::of(circ.owner, 0);
    let next = OverlayAddress::of(relay, 0);
    let layers = circ.keys.len();
    let (c, cell) = if circ.relays.is_empty() {
        (
            cmd::CREATE,
            SealedCell::bare(circ.id, wire::encode_create(opts.mode, me, &blob)),
        )
    } else {
        let payload = wire::encode_extend(opts.mode, next, &blob);
        (cmd::RELAY_FWD, circ.wrap_prefix(h, payload, layers))
    };
    let suite = h.with(|w| w.net.suite);
    let err = |kind| BuildError::Hop { hop, kind };
    match request(h, circ, c, &cell, layers, opts).await.map_err(err)? {
        Reply::Created(conf) | Reply::Extended(conf) => {
            if conf != confirmation(suite, &key, &blob) {
                return Err(err(HopErrorKind::BadConfirmation));
            }
        }
        Reply::Failed(r) => return Err(err(HopErrorKind::Rejected(r))),
        Reply::Joined => unreachable!("filtered in request"),
    }
    circ.relays.push(relay);
    if splice.is_none() {
        circ.keys.push(key);
    }
    Ok(())
}

/// Waits for the rendezvous relay to report that `circ` was joined.
pub async fn wait_joined(h: &SimHandle, circ: &OwnedCircuit) -> bool {
    while let Some(m) = recv_cell(h, circ.owner, circ.id).await {
        if let Some(Reply::Joined) = parse_reply(circ, h, &m, circ.keys.len()) {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Datagram, EgressConfig, FabricConfig, LinkConfig};
    use crate::relay::wire::udp_cell_frame;
    use crate::runtime::{Sim, World, WorldParams};
    use crate::time::SimTime;

    fn world(relays: usize) -> (Sim, NodeId, Vec<NodeId>) {
        let fc = FabricConfig {
            default_link: LinkConfig::with_latency(Duration::from_millis(20)),
            ..FabricConfig::default()
        };
        let mut w = World::new(fc, WorldParams::default()).unwrap();
        let owner = w.add_host(EgressConfig::default()).unwrap();
        let rs = (0..relays)
            .map(|_| w.add_relay(EgressConfig::default()).unwrap())
            .collect();
        (Sim::new(w), owner, rs)
    }

    #[test]
    fn udp_build_then_inbound_data() {
        let (mut sim, owner, rs) = world(3);
        let h = sim.handle();
        let rs2 = rs.clone();
        let (circ, built_at) = sim
            .run(async move {
                let c = build_circuit(&h, owner, &rs2, BuildOptions::udp(LayerDirection::AddForward))
                    .await
                    .unwrap();
                (c, h.now())
            })
            .unwrap();
        // CREATE round trip, then two EXTEND round trips of growing length.
        assert_eq!(built_at, SimTime::from_millis(40 + 80 + 120));
        assert_eq!(circ.keys().len(), 3);
        for r in &rs {
            assert_eq!(sim.world().relay(*r).unwrap().table().len(), 1);
        }
        let sender = sim.world_mut().add_host(EgressConfig::default()).unwrap();
        let h = sim.handle();
        let last = circ.last_relay();
        let got = sim
            .run(async move {
                let spoofed = OverlayAddress::new(0xf00d, 0);
                let cell = SealedCell::bare(circ.id, b"hello".to_vec()).encode();
                h.with(|w| {
                    let d = Datagram::new(spoofed, OverlayAddress::of(last, 0), udp_cell_frame(cmd::DATA, &cell));
                    w.net.send_raw(sender, d);
                });
                let m = recv_cell(&h, owner, circ.id).await.unwrap();
                (circ.unwrap(&h, &m.cell).unwrap(), m.at)
            })
            .unwrap();
        assert_eq!(got.0, b"hello");
        assert_eq!(got.1, SimTime::from_millis(240 + 80));
    }

    #[test]
    fn unreachable_second_relay_reports_hop_two() {
        let (mut sim, owner, rs) = world(3);
        sim.world_mut().net.fabric.set_node_down(rs[1], true);
        let h = sim.handle();
        let err = sim
            .run(async move { build_circuit(&h, owner, &rs, BuildOptions::udp(LayerDirection::AddForward)).await })
            .unwrap()
            .unwrap_err();
        assert_eq!(
            err,
            BuildError::Hop {
                hop: 2,
                kind: HopErrorKind::Timeout
            }
        );
    }

    #[test]
    fn reliable_build_pays_link_handshakes() {
        let (mut sim, owner, rs) = world(3);
        let h = sim.handle();
        let t = sim
            .run(async move {
                build_circuit(&h, owner, &rs, BuildOptions::reliable(LayerDirection::PeelForward))
                    .await
                    .unwrap();
                h.now()
            })
            .unwrap();
        // Per hop: 3 handshake round trips on the new link, plus the
        // CREATE/EXTEND exchange back to the owner.
        let l = 20;
        let expect = (3 * 2 * l + 2 * l) + (3 * 2 * l + 4 * l) + (3 * 2 * l + 6 * l);
        assert_eq!(t, SimTime::from_millis(expect));
    }
}
