//! Deterministic discrete-event datagram fabric.
//!
//! Every routable send draws exactly one `f64` from the fabric's
//! `ChaCha8Rng::seed_from_u64(seed)` stream and is lost when the draw is below
//! the link's loss rate. Unroutable sends draw nothing. Latency spreads are
//! derived by hashing `(seed, node pair)` so they never perturb that stream.

use super::temp::{AllocError, TempAddrMode, TempAddressPool, TempPoolRange};
use super::{ChannelTag, Datagram, NodeId, OverlayAddress};
use crate::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_MAX_DATAGRAM: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    #[serde(with = "crate::time::serde_nanos")]
    pub latency: Duration,
    pub loss_rate: f64,
    /// Bytes per virtual second, 0 = unlimited.
    pub bandwidth: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            latency: Duration::ZERO,
            loss_rate: 0.0,
            bandwidth: 0,
        }
    }
}

impl LinkConfig {
    pub fn with_latency(latency: Duration) -> Self {
        LinkConfig {
            latency,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(FabricError::InvalidLossRate(self.loss_rate));
        }
        Ok(())
    }

    /// Time to clock `bytes` onto the link, rounded up to the next nanosecond.
    pub fn serialization(&self, bytes: usize) -> Duration {
        serialization_delay(bytes, self.bandwidth)
    }
}

pub fn serialization_delay(bytes: usize, bandwidth: u64) -> Duration {
    if bandwidth == 0 {
        return Duration::ZERO;
    }
    let ns = (bytes as u128 * 1_000_000_000).div_ceil(bandwidth as u128);
    Duration::from_nanos(ns as u64)
}

/// Shared transmitter of one node: all of its outgoing datagrams go through a
/// single FIFO clocked at `bandwidth`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EgressConfig {
    /// Bytes per virtual second, 0 = use the link bandwidth.
    pub bandwidth: u64,
    /// Drop-tail limit on queueing delay in the FIFO.
    #[serde(default, with = "opt_nanos")]
    pub queue_limit: Option<Duration>,
}

mod opt_nanos {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&crate::time::duration_nanos(*d)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_nanos))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub seed: u64,
    pub default_link: LinkConfig,
    /// When set, links without an explicit config get a latency drawn
    /// uniformly from this inclusive range, fixed per unordered node pair.
    pub latency_spread: Option<(u64, u64)>,
    pub max_datagram: usize,
    pub temp_pool: TempPoolRange,
    pub temp_mode: TempAddrMode,
    pub trace: bool,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            seed: 0,
            default_link: LinkConfig::default(),
            latency_spread: None,
            max_datagram: DEFAULT_MAX_DATAGRAM,
            temp_pool: TempPoolRange::default(),
            temp_mode: TempAddrMode::default(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FabricError {
    #[error("loss rate {0} outside [0, 1]")]
    InvalidLossRate(f64),
    #[error("datagram of {len} bytes exceeds maximum {max}")]
    Oversize { len: usize, max: usize },
    #[error("unknown sending node {0}")]
    UnknownNode(NodeId),
    #[error("fabric is finalized")]
    Finalized,
    #[error("cannot schedule at {at} before current time {now}")]
    InThePast { at: SimTime, now: SimTime },
    #[error("node index {0} collides with the temporary address pool")]
    PoolCollision(u16),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    DroppedLoss,
    DroppedUnroutable,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Delivered => "delivered",
            Outcome::DroppedLoss => "dropped_loss",
            Outcome::DroppedUnroutable => "dropped_unroutable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Scheduled { deliver_at: SimTime },
    DroppedLoss,
    DroppedQueue,
    DroppedUnroutable,
}

impl SendOutcome {
    pub fn is_scheduled(&self) -> bool {
        matches!(self, SendOutcome::Scheduled { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_ns: u64,
    pub src: String,
    pub dst: String,
    pub bytes: usize,
    pub outcome: Outcome,
    pub channel: ChannelTag,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    pub sent_packets: u64,
    pub sent_bytes: u64,
    pub received_packets: u64,
    pub received_bytes: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_queue: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Deliver {
        at: SimTime,
        node: NodeId,
        datagram: Datagram,
    },
    Timer {
        at: SimTime,
        node: NodeId,
        token: u64,
    },
}

impl Event {
    pub fn at(&self) -> SimTime {
        match self {
            Event::Deliver { at, .. } | Event::Timer { at, .. } => *at,
        }
    }
}

/// Result of [`Fabric::advance`].
#[derive(Debug, Default)]
pub struct Advanced {
    pub deliveries: BTreeMap<NodeId, Vec<Datagram>>,
    pub timers: Vec<(SimTime, NodeId, u64)>,
}

enum Pending {
    Deliver {
        node: NodeId,
        from: NodeId,
        datagram: Datagram,
    },
    Timer {
        node: NodeId,
        token: u64,
    },
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    what: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct NodeSlot {
    egress: EgressConfig,
    tx_free: SimTime,
    down: bool,
    counters: NodeCounters,
}

pub struct Fabric {
    config: FabricConfig,
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: Vec<NodeSlot>,
    links: HashMap<(NodeId, NodeId), LinkConfig>,
    link_counters: BTreeMap<(NodeId, NodeId), LinkCounters>,
    rng: ChaCha8Rng,
    temp_pool: TempAddressPool,
    temp_bindings: HashMap<OverlayAddress, NodeId>,
    dropped_unroutable: u64,
    trace: Option<Vec<TraceRow>>,
    finalized: bool,
}

impl fmt::Debug for Fabric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fabric")
            .field("now", &self.now)
            .field("nodes", &self.nodes.len())
            .field("pending", &self.queue.len())
            .finish()
    }
}

impl Fabric {
    pub fn new(config: FabricConfig) -> Result<Self, FabricError> {
        config.default_link.validate()?;
        Ok(Fabric {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            temp_pool: TempAddressPool::new(config.temp_pool, config.temp_mode),
            trace: config.trace.then(Vec::new),
            config,
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            links: HashMap::new(),
            link_counters: BTreeMap::new(),
            temp_bindings: HashMap::new(),
            dropped_unroutable: 0,
            finalized: false,
        })
    }

    pub fn config(&self) -> &FabricConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn max_datagram(&self) -> usize {
        self.config.max_datagram
    }

    pub fn add_node(&mut self, egress: EgressConfig) -> Result<NodeId, FabricError> {
        let idx = u16::try_from(self.nodes.len()).map_err(|_| FabricError::PoolCollision(u16::MAX))?;
        if self
            .config
            .temp_pool
            .contains(OverlayAddress::new(idx, self.config.temp_pool.port))
        {
            return Err(FabricError::PoolCollision(idx));
        }
        self.nodes.push(NodeSlot {
            egress,
            tx_free: SimTime::ZERO,
            down: false,
            counters: NodeCounters::default(),
        });
        Ok(NodeId(idx))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn set_egress(&mut self, node: NodeId, egress: EgressConfig) {
        if let Some(slot) = self.nodes.get_mut(node.index()) {
            slot.egress = egress;
        }
    }

    /// A down node neither sends nor receives; its traffic counts as loss.
    pub fn set_node_down(&mut self, node: NodeId, down: bool) {
        if let Some(slot) = self.nodes.get_mut(node.index()) {
            slot.down = down;
        }
    }

    /// Configures the directed link `from -> to`.
    pub fn set_link(&mut self, from: NodeId, to: NodeId, cfg: LinkConfig) -> Result<(), FabricError> {
        cfg.validate()?;
        self.links.insert((from, to), cfg);
        Ok(())
    }

    pub fn set_link_symmetric(&mut self, a: NodeId, b: NodeId, cfg: LinkConfig) -> Result<(), FabricError> {
        self.set_link(a, b, cfg)?;
        self.set_link(b, a, cfg)
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> LinkConfig {
        if let Some(cfg) = self.links.get(&(from, to)) {
            return *cfg;
        }
        let mut cfg = self.config.default_link;
        if let Some((lo, hi)) = self.config.latency_spread {
            let (a, b) = if from <= to { (from, to) } else { (to, from) };
            let h = splitmix64(self.config.seed ^ ((a.0 as u64) << 32 | b.0 as u64).rotate_left(17));
            let span = hi.saturating_sub(lo) + 1;
            cfg.latency = Duration::from_nanos(lo + h % span);
        }
        cfg
    }

    pub fn allocate_temp_address<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<OverlayAddress, FabricError> {
        Ok(self.temp_pool.allocate(rng)?)
    }

    pub fn temp_pool(&self) -> &TempAddressPool {
        &self.temp_pool
    }

    /// Makes a pool address routable to `node` (MTD-style binding).
    pub fn bind_temp_address(&mut self, addr: OverlayAddress, node: NodeId) {
        self.temp_bindings.insert(addr, node);
    }

    pub fn resolve(&self, addr: OverlayAddress) -> Option<NodeId> {
        if (addr.node_index as usize) < self.nodes.len() {
            return Some(addr.node());
        }
        self.temp_bindings.get(&addr).copied()
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    pub fn send_datagram(&mut self, from: NodeId, d: Datagram) -> Result<SendOutcome, FabricError> {
        let now = self.now;
        self.send_datagram_at(from, d, now)
    }

    /// Hands `d` to `from`'s transmitter at time `at` (not earlier than now).
    pub fn send_datagram_at(&mut self, from: NodeId, mut d: Datagram, at: SimTime) -> Result<SendOutcome, FabricError> {
        if self.finalized {
            return Err(FabricError::Finalized);
        }
        if at < self.now {
            return Err(FabricError::InThePast { at, now: self.now });
        }
        if d.payload.len() > self.config.max_datagram {
            return Err(FabricError::Oversize {
                len: d.payload.len(),
                max: self.config.max_datagram,
            });
        }
        if from.index() >= self.nodes.len() {
            return Err(FabricError::UnknownNode(from));
        }
        d.send_time = at;
        let len = d.payload.len();
        {
            let c = &mut self.nodes[from.index()].counters;
            c.sent_packets += 1;
            c.sent_bytes += len as u64;
        }

        let Some(to) = self.resolve(d.dst) else {
            self.dropped_unroutable += 1;
            self.count_drop(from, len);
            self.record(at, &d, Outcome::DroppedUnroutable);
            return Ok(SendOutcome::DroppedUnroutable);
        };

        let link = self.link(from, to);
        let draw: f64 = self.rng.gen();
        let lost = draw < link.loss_rate || self.nodes[from.index()].down || self.nodes[to.index()].down;
        let counters = self.link_counters.entry((from, to)).or_default();
        counters.sent += 1;
        if lost {
            counters.dropped_loss += 1;
            self.count_drop(from, len);
            self.record(at, &d, Outcome::DroppedLoss);
            return Ok(SendOutcome::DroppedLoss);
        }

        let slot = &self.nodes[from.index()];
        let bandwidth = match (slot.egress.bandwidth, link.bandwidth) {
            (0, b) | (b, 0) => b,
            (a, b) => a.min(b),
        };
        let start = at.max(slot.tx_free);
        if let Some(limit) = slot.egress.queue_limit {
            if start.saturating_since(at) > limit {
                counters.dropped_queue += 1;
                self.count_drop(from, len);
                self.record(at, &d, Outcome::DroppedLoss);
                return Ok(SendOutcome::DroppedQueue);
            }
        }
        let done = start + serialization_delay(len, bandwidth);
        self.nodes[from.index()].tx_free = done;
        let deliver_at = done + link.latency;
        self.push(
            deliver_at,
            Pending::Deliver {
                node: to,
                from,
                datagram: d,
            },
        );
        Ok(SendOutcome::Scheduled { deliver_at })
    }

    pub fn schedule_timer(&mut self, node: NodeId, at: SimTime, token: u64) {
        let at = at.max(self.now);
        self.push(at, Pending::Timer { node, token });
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(s)| s.at)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Pops the next event and moves the clock to its timestamp.
    pub fn pop_next(&mut self) -> Option<Event> {
        let Reverse(s) = self.queue.pop()?;
        self.now = s.at;
        Some(match s.what {
            Pending::Timer { node, token } => Event::Timer { at: s.at, node, token },
            Pending::Deliver { node, from, datagram } => {
                let len = datagram.payload.len() as u64;
                let c = &mut self.nodes[node.index()].counters;
                c.received_packets += 1;
                c.received_bytes += len;
                self.link_counters.entry((from, node)).or_default().delivered += 1;
                self.record(s.at, &datagram, Outcome::Delivered);
                Event::Deliver {
                    at: s.at,
                    node,
                    datagram,
                }
            }
        })
    }

    /// Processes every event at or before `until`, then sets the clock to `until`.
    pub fn advance(&mut self, until: SimTime) -> Advanced {
        let mut out = Advanced::default();
        while self.peek_time().is_some_and(|t| t <= until) {
            match self.pop_next() {
                Some(Event::Deliver { node, datagram, .. }) => out.deliveries.entry(node).or_default().push(datagram),
                Some(Event::Timer { at, node, token }) => out.timers.push((at, node, token)),
                None => break,
            }
        }
        self.now = self.now.max(until);
        out
    }

    pub fn node_counters(&self, node: NodeId) -> NodeCounters {
        self.nodes.get(node.index()).map(|s| s.counters).unwrap_or_default()
    }

    pub fn link_counters(&self) -> &BTreeMap<(NodeId, NodeId), LinkCounters> {
        &self.link_counters
    }

    pub fn dropped_unroutable(&self) -> u64 {
        self.dropped_unroutable
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn push(&mut self, at: SimTime, what: Pending) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq, what }));
    }

    fn count_drop(&mut self, from: NodeId, len: usize) {
        let c = &mut self.nodes[from.index()].counters;
        c.dropped_packets += 1;
        c.dropped_bytes += len as u64;
    }

    fn record(&mut self, at: SimTime, d: &Datagram, outcome: Outcome) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow {
                time_ns: at.as_nanos(),
                src: d.src.to_string(),
                dst: d.dst.to_string(),
                bytes: d.payload.len(),
                outcome,
                channel: d.channel,
            });
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Convenience for latency fields expressed in milliseconds.
pub fn millis(ms: u64) -> Duration {
    Duration::from_millis(ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fabric(seed: u64, link: LinkConfig, nodes: usize) -> (Fabric, Vec<NodeId>) {
        let mut f = Fabric::new(FabricConfig {
            seed,
            default_link: link,
            ..Default::default()
        })
        .unwrap();
        let ids = (0..nodes)
            .map(|_| f.add_node(EgressConfig::default()).unwrap())
            .collect();
        (f, ids)
    }

    fn dg(from: NodeId, to: NodeId, len: usize) -> Datagram {
        Datagram::new(OverlayAddress::of(from, 1), OverlayAddress::of(to, 1), vec![0xab; len])
    }

    #[test]
    fn zero_loss_delivers_after_latency() {
        let (mut f, n) = fabric(1, LinkConfig::with_latency(millis(20)), 2);
        let out = f.send_datagram(n[0], dg(n[0], n[1], 512)).unwrap();
        assert_eq!(
            out,
            SendOutcome::Scheduled {
                deliver_at: SimTime::from_millis(20)
            }
        );
        let adv = f.advance(SimTime::from_millis(19));
        assert!(adv.deliveries.is_empty());
        let adv = f.advance(SimTime::from_millis(20));
        assert_eq!(adv.deliveries[&n[1]].len(), 1);
        assert_eq!(f.now(), SimTime::from_millis(20));
    }

    #[test]
    fn certain_loss_never_delivers() {
        let (mut f, n) = fabric(
            1,
            LinkConfig {
                loss_rate: 1.0,
                ..Default::default()
            },
            2,
        );
        for _ in 0..500 {
            assert_eq!(
                f.send_datagram(n[0], dg(n[0], n[1], 10)).unwrap(),
                SendOutcome::DroppedLoss
            );
        }
        assert!(f.advance(SimTime::from_millis(1000)).deliveries.is_empty());
        assert_eq!(f.node_counters(n[0]).sent_bytes, 5000);
        assert_eq!(f.node_counters(n[0]).dropped_packets, 500);
    }

    #[test]
    fn loss_draws_match_generator_replay() {
        let (mut f, n) = fabric(
            42,
            LinkConfig {
                loss_rate: 0.1,
                ..Default::default()
            },
            2,
        );
        let mut delivered = 0;
        for _ in 0..10_000 {
            if f.send_datagram(n[0], dg(n[0], n[1], 8)).unwrap().is_scheduled() {
                delivered += 1;
            }
        }
        // independent replay of the documented draw sequence
        let mut oracle = ChaCha8Rng::seed_from_u64(42);
        let expected = (0..10_000).filter(|_| oracle.gen::<f64>() >= 0.1).count();
        assert_eq!(delivered, expected);
        let got: usize = f.advance(SimTime::MAX).deliveries.values().map(Vec::len).sum();
        assert_eq!(got, expected);
    }

    #[test]
    fn deliveries_are_time_ordered() {
        let (mut f, n) = fabric(1, LinkConfig::default(), 3);
        f.set_link(n[0], n[2], LinkConfig::with_latency(millis(5))).unwrap();
        f.set_link(n[1], n[2], LinkConfig::with_latency(millis(3))).unwrap();
        let mut a = dg(n[0], n[2], 1);
        a.payload = vec![5];
        let mut b = dg(n[1], n[2], 1);
        b.payload = vec![3];
        f.send_datagram(n[0], a).unwrap();
        f.send_datagram(n[1], b).unwrap();
        let got: Vec<u8> = f.advance(SimTime::MAX).deliveries[&n[2]]
            .iter()
            .map(|d| d.payload[0])
            .collect();
        assert_eq!(got, vec![3, 5]);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let (mut f, _) = fabric(1, LinkConfig::default(), 1);
        let adv = f.advance(SimTime::from_millis(7));
        assert!(adv.deliveries.is_empty() && adv.timers.is_empty());
        assert_eq!(f.now(), SimTime::from_millis(7));
    }

    #[test]
    fn ties_are_fifo() {
        let (mut f, n) = fabric(1, LinkConfig::with_latency(millis(1)), 2);
        for i in 0..10u8 {
            let mut d = dg(n[0], n[1], 1);
            d.payload = vec![i];
            f.send_datagram(n[0], d).unwrap();
        }
        let got: Vec<u8> = f.advance(SimTime::MAX).deliveries[&n[1]]
            .iter()
            .map(|d| d.payload[0])
            .collect();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_destination_is_counted_unroutable() {
        let (mut f, n) = fabric(1, LinkConfig::default(), 1);
        let d = Datagram::new(OverlayAddress::of(n[0], 1), OverlayAddress::new(0xf001, 0), vec![1]);
        assert_eq!(f.send_datagram(n[0], d).unwrap(), SendOutcome::DroppedUnroutable);
        assert_eq!(f.dropped_unroutable(), 1);
    }

    #[test]
    fn serialization_uses_node_fifo() {
        let (mut f, n) = fabric(
            1,
            LinkConfig {
                latency: millis(10),
                bandwidth: 1000,
                loss_rate: 0.0,
            },
            2,
        );
        // 100 bytes at 1000 B/s = 100 ms each, queued back to back
        let a = f.send_datagram(n[0], dg(n[0], n[1], 100)).unwrap();
        let b = f.send_datagram(n[0], dg(n[0], n[1], 100)).unwrap();
        assert_eq!(
            a,
            SendOutcome::Scheduled {
                deliver_at: SimTime::from_millis(110)
            }
        );
        assert_eq!(
            b,
            SendOutcome::Scheduled {
                deliver_at: SimTime::from_millis(210)
            }
        );
    }

    #[test]
    fn queue_limit_drops_tail() {
        let (mut f, n) = fabric(
            1,
            LinkConfig {
                latency: millis(1),
                bandwidth: 1000,
                loss_rate: 0.0,
            },
            2,
        );
        f.set_egress(
            n[0],
            EgressConfig {
                bandwidth: 0,
                queue_limit: Some(millis(150)),
            },
        );
        let outs: Vec<_> = (0..4)
            .map(|_| f.send_datagram(n[0], dg(n[0], n[1], 100)).unwrap())
            .collect();
        assert!(outs[0].is_scheduled() && outs[1].is_scheduled());
        assert_eq!(outs[3], SendOutcome::DroppedQueue);
    }

    #[test]
    fn oversize_rejected() {
        let (mut f, n) = fabric(1, LinkConfig::default(), 2);
        let err = f.send_datagram(n[0], dg(n[0], n[1], 1501)).unwrap_err();
        assert_eq!(err, FabricError::Oversize { len: 1501, max: 1500 });
    }

    #[test]
    fn latency_spread_is_symmetric_and_bounded() {
        let mut f = Fabric::new(FabricConfig {
            seed: 9,
            latency_spread: Some((10_000_000, 60_000_000)),
            ..Default::default()
        })
        .unwrap();
        let n: Vec<_> = (0..20).map(|_| f.add_node(EgressConfig::default()).unwrap()).collect();
        for &a in &n {
            for &b in &n {
                let l = f.link(a, b).latency;
                assert_eq!(l, f.link(b, a).latency);
                assert!(l >= millis(10) && l <= millis(60));
            }
        }
    }

    #[test]
    fn conservation_per_link() {
        let (mut f, n) = fabric(
            5,
            LinkConfig {
                loss_rate: 0.3,
                latency: millis(2),
                bandwidth: 0,
            },
            3,
        );
        for i in 0..3000 {
            let (a, b) = (n[i % 3], n[(i + 1) % 3]);
            f.send_datagram(a, dg(a, b, 4)).unwrap();
        }
        f.advance(SimTime::MAX);
        for c in f.link_counters().values() {
            assert_eq!(c.delivered + c.dropped_loss + c.dropped_queue, c.sent);
        }
    }
}
