//! Per-hop reliable link: sliding-window ARQ with cumulative acks.
//!
//! The endpoint is a plain state machine. Callers feed it frames, timer
//! expiries and payloads to send, and act on the [`HopOut`] items it emits.
//!
//! Frames (first byte is the type):
//!
//! | type   | layout                                     |
//! |--------|--------------------------------------------|
//! | SYN    | `0x20 conn:4 round:1 initiator_addr:4`     |
//! | SYNACK | `0x21 conn:4 round:1`                      |
//! | SEG    | `0x22 conn:4 seq:4 payload`                |
//! | ACK    | `0x23 conn:4 next_expected:4`              |
//!
//! Connection setup takes `handshake_rtts` SYN/SYNACK round trips (transport
//! plus link-security negotiation). Retransmission uses a fixed RTO, fast
//! retransmit on the third duplicate ack, and retransmits each further hole
//! on partial acks until the recovery point is acknowledged.

use crate::overlay::OverlayAddress;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

pub const F_HOP_SYN: u8 = 0x20;
pub const F_HOP_SYNACK: u8 = 0x21;
pub const F_HOP_SEG: u8 = 0x22;
pub const F_HOP_ACK: u8 = 0x23;
pub const SEG_HEADER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HopParams {
    pub window: u32,
    #[serde(with = "crate::time::serde_nanos")]
    pub rto: Duration,
    pub max_retries: u32,
    pub handshake_rtts: u32,
}

impl Default for HopParams {
    fn default() -> Self {
        HopParams {
            window: 32,
            rto: Duration::from_millis(200),
            max_retries: 8,
            handshake_rtts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HopFrame {
    Syn {
        conn: u32,
        round: u8,
        initiator: OverlayAddress,
    },
    SynAck {
        conn: u32,
        round: u8,
    },
    Seg {
        conn: u32,
        seq: u32,
        payload: Vec<u8>,
    },
    Ack {
        conn: u32,
        next: u32,
    },
}

impl HopFrame {
    pub fn conn(&self) -> u32 {
        match self {
            HopFrame::Syn { conn, .. }
            | HopFrame::SynAck { conn, .. }
            | HopFrame::Seg { conn, .. }
            | HopFrame::Ack { conn, .. } => *conn,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            HopFrame::Syn { conn, round, initiator } => {
                out.push(F_HOP_SYN);
                out.extend_from_slice(&conn.to_be_bytes());
                out.push(*round);
                out.extend_from_slice(&initiator.to_bytes());
            }
            HopFrame::SynAck { conn, round } => {
                out.push(F_HOP_SYNACK);
                out.extend_from_slice(&conn.to_be_bytes());
                out.push(*round);
            }
            HopFrame::Seg { conn, seq, payload } => {
                out.reserve(SEG_HEADER_LEN + payload.len());
                out.push(F_HOP_SEG);
                out.extend_from_slice(&conn.to_be_bytes());
                out.extend_from_slice(&seq.to_be_bytes());
                out.extend_from_slice(payload);
            }
            HopFrame::Ack { conn, next } => {
                out.push(F_HOP_ACK);
                out.extend_from_slice(&conn.to_be_bytes());
                out.extend_from_slice(&next.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Option<HopFrame> {
        let (&kind, rest) = buf.split_first()?;
        let conn = u32::from_be_bytes(rest.get(..4)?.try_into().ok()?);
        let rest = &rest[4..];
        let u32_at = |b: &[u8]| -> Option<u32> { Some(u32::from_be_bytes(b.get(..4)?.try_into().ok()?)) };
        match kind {
            F_HOP_SYN if rest.len() == 5 => Some(HopFrame::Syn {
                conn,
                round: rest[0],
                initiator: OverlayAddress::from_bytes(&rest[1..5])?,
            }),
            F_HOP_SYNACK if rest.len() == 1 => Some(HopFrame::SynAck { conn, round: rest[0] }),
            F_HOP_SEG => Some(HopFrame::Seg {
                conn,
                seq: u32_at(rest)?,
                payload: rest[4..].to_vec(),
            }),
            F_HOP_ACK if rest.len() == 4 => Some(HopFrame::Ack {
                conn,
                next: u32_at(rest)?,
            }),
            _ => None,
        }
    }
}

pub fn is_hop_frame(buf: &[u8]) -> bool {
    matches!(buf.first(), Some(&(F_HOP_SYN..=F_HOP_ACK)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopFailure {
    HandshakeTimeout,
    RetriesExhausted { seq: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HopOut {
    Transmit(Vec<u8>),
    Deliver(Vec<u8>),
    /// Wake the endpoint at this time via [`HopEndpoint::on_timer`].
    ArmTimer(SimTime),
    Established,
    Failed(HopFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopState {
    Connecting { round: u8 },
    Established,
    Failed(HopFailure),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HopStats {
    pub segments_sent: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub delivered: u64,
}

#[derive(Debug)]
struct InFlight {
    seq: u32,
    frame: Vec<u8>,
}

#[derive(Debug)]
pub struct HopEndpoint {
    conn: u32,
    local: OverlayAddress,
    peer: OverlayAddress,
    params: HopParams,
    state: HopState,
    next_seq: u32,
    unsent: VecDeque<Vec<u8>>,
    inflight: VecDeque<InFlight>,
    deadline: Option<SimTime>,
    armed_at: Option<SimTime>,
    consecutive_timeouts: u32,
    dup_acks: u32,
    recover: Option<u32>,
    expected: u32,
    reorder: BTreeMap<u32, Vec<u8>>,
    stats: HopStats,
}

impl HopEndpoint {
    /// Creates the initiating side and emits the first SYN.
    pub fn connect(
        conn: u32,
        local: OverlayAddress,
        peer: OverlayAddress,
        params: HopParams,
        now: SimTime,
        out: &mut Vec<HopOut>,
    ) -> Self {
        let mut ep = Self::blank(conn, local, peer, params);
        if params.handshake_rtts == 0 {
            ep.state = HopState::Established;
            out.push(HopOut::Established);
        } else {
            ep.state = HopState::Connecting { round: 0 };
            ep.send_syn(now, out);
        }
        ep
    }

    /// Creates the responding side for an incoming SYN.
    pub fn accept(conn: u32, local: OverlayAddress, initiator: OverlayAddress, params: HopParams) -> Self {
        let mut ep = Self::blank(conn, local, initiator, params);
        ep.state = HopState::Established;
        ep
    }

    fn blank(conn: u32, local: OverlayAddress, peer: OverlayAddress, params: HopParams) -> Self {
        HopEndpoint {
            conn,
            local,
            peer,
            params,
            state: HopState::Established,
            next_seq: 0,
            unsent: VecDeque::new(),
            inflight: VecDeque::new(),
            deadline: None,
            armed_at: None,
            consecutive_timeouts: 0,
            dup_acks: 0,
            recover: None,
            expected: 0,
            reorder: BTreeMap::new(),
            stats: HopStats::default(),
        }
    }

    pub fn conn(&self) -> u32 {
        self.conn
    }

    pub fn peer(&self) -> OverlayAddress {
        self.peer
    }

    pub fn state(&self) -> HopState {
        self.state
    }

    pub fn stats(&self) -> HopStats {
        self.stats
    }

    /// Segments queued or unacknowledged.
    pub fn backlog(&self) -> usize {
        self.unsent.len() + self.inflight.len()
    }

    fn send_syn(&mut self, now: SimTime, out: &mut Vec<HopOut>) {
        if let HopState::Connecting { round } = self.state {
            let f = HopFrame::Syn {
                conn: self.conn,
                round,
                initiator: self.local,
            };
            out.push(HopOut::Transmit(f.encode()));
            self.set_deadline(Some(now + self.params.rto), out);
        }
    }

    fn set_deadline(&mut self, d: Option<SimTime>, out: &mut Vec<HopOut>) {
        self.deadline = d;
        if let Some(d) = d {
            if self.armed_at.is_none_or(|a| a > d) {
                self.armed_at = Some(d);
                out.push(HopOut::ArmTimer(d));
            }
        }
    }

    /// Queues one payload for in-order delivery to the peer.
    pub fn send(&mut self, payload: Vec<u8>, now: SimTime, out: &mut Vec<HopOut>) {
        if matches!(self.state, HopState::Failed(_)) {
            return;
        }
        self.unsent.push_back(payload);
        self.pump(now, out);
    }

    fn pump(&mut self, now: SimTime, out: &mut Vec<HopOut>) {
        if self.state != HopState::Established {
            return;
        }
        while (self.inflight.len() as u32) < self.params.window {
            let Some(payload) = self.unsent.pop_front() else { break };
            let seq = self.next_seq;
            self.next_seq += 1;
            let frame = HopFrame::Seg {
                conn: self.conn,
                seq,
                payload,
            }
            .encode();
            out.push(HopOut::Transmit(frame.clone()));
            self.stats.segments_sent += 1;
            self.inflight.push_back(InFlight { seq, frame });
            if self.deadline.is_none() {
                self.set_deadline(Some(now + self.params.rto), out);
            }
        }
    }

    fn retransmit_oldest(&mut self, out: &mut Vec<HopOut>) {
        if let Some(f) = self.inflight.front() {
            out.push(HopOut::Transmit(f.frame.clone()));
            self.stats.segments_sent += 1;
            self.stats.retransmissions += 1;
        }
    }

    fn fail(&mut self, why: HopFailure, out: &mut Vec<HopOut>) {
        self.state = HopState::Failed(why);
        self.deadline = None;
        self.unsent.clear();
        self.inflight.clear();
        out.push(HopOut::Failed(why));
    }

    pub fn on_timer(&mut self, now: SimTime, out: &mut Vec<HopOut>) {
        if self.armed_at.is_some_and(|a| a <= now) {
            self.armed_at = None;
        }
        match self.deadline {
            Some(d) if d <= now => {}
            Some(d) => {
                self.set_deadline(Some(d), out);
                return;
            }
            None => return,
        }
        self.stats.timeouts += 1;
        self.consecutive_timeouts += 1;
        match self.state {
            HopState::Connecting { .. } => {
                if self.consecutive_timeouts >= self.params.max_retries {
                    self.fail(HopFailure::HandshakeTimeout, out);
                } else {
                    self.send_syn(now, out);
                }
            }
            HopState::Established => {
                let Some(oldest) = self.inflight.front().map(|f| f.seq) else {
                    self.deadline = None;
                    return;
                };
                if self.consecutive_timeouts >= self.params.max_retries {
                    self.fail(HopFailure::RetriesExhausted { seq: oldest }, out);
                    return;
                }
                self.retransmit_oldest(out);
                self.recover = Some(self.next_seq.saturating_sub(1));
                self.dup_acks = 0;
                self.set_deadline(Some(now + self.params.rto), out);
            }
            HopState::Failed(_) => {}
        }
    }

    pub fn on_frame(&mut self, frame: HopFrame, now: SimTime, out: &mut Vec<HopOut>) {
        if matches!(self.state, HopState::Failed(_)) {
            return;
        }
        match frame {
            HopFrame::Syn { round, .. } => {
                out.push(HopOut::Transmit(HopFrame::SynAck { conn: self.conn, round }.encode()));
            }
            HopFrame::SynAck { round: r, .. } => {
                if let HopState::Connecting { round } = self.state {
                    if r == round {
                        self.consecutive_timeouts = 0;
                        let next = round + 1;
                        if u32::from(next) >= self.params.handshake_rtts {
                            self.state = HopState::Established;
                            self.deadline = None;
                            out.push(HopOut::Established);
                            self.pump(now, out);
                        } else {
                            self.state = HopState::Connecting { round: next };
                            self.send_syn(now, out);
                        }
                    }
                }
            }
            HopFrame::Seg { seq, payload, .. } => {
                if seq == self.expected {
                    self.expected += 1;
                    self.stats.delivered += 1;
                    out.push(HopOut::Deliver(payload));
                    while let Some(p) = self.reorder.remove(&self.expected) {
                        self.expected += 1;
                        self.stats.delivered += 1;
                        out.push(HopOut::Deliver(p));
                    }
                } else if seq > self.expected {
                    self.reorder.entry(seq).or_insert(payload);
                }
                out.push(HopOut::Transmit(
                    HopFrame::Ack {
                        conn: self.conn,
                        next: self.expected,
                    }
                    .encode(),
                ));
            }
            HopFrame::Ack { next, .. } => self.on_ack(next, now, out),
        }
    }

    fn on_ack(&mut self, next: u32, now: SimTime, out: &mut Vec<HopOut>) {
        let base = match self.inflight.front() {
            Some(f) => f.seq,
            None => return,
        };
        if next > base {
            while self.inflight.front().is_some_and(|f| f.seq < next) {
                self.inflight.pop_front();
            }
            self.consecutive_timeouts = 0;
            self.dup_acks = 0;
            match self.recover {
                Some(r) if next <= r => self.retransmit_oldest(out),
                _ => self.recover = None,
            }
            let d = (!self.inflight.is_empty()).then(|| now + self.params.rto);
            self.deadline = None;
            self.set_deadline(d, out);
            self.pump(now, out);
        } else if next == base {
            self.dup_acks += 1;
            if self.dup_acks == 3 && self.recover.is_none() {
                self.retransmit_oldest(out);
                self.recover = Some(self.next_seq.saturating_sub(1));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let frames = [
            HopFrame::Syn {
                conn: 7,
                round: 2,
                initiator: OverlayAddress::new(3, 4),
            },
            HopFrame::SynAck { conn: 7, round: 1 },
            HopFrame::Seg {
                conn: 9,
                seq: 12,
                payload: vec![1, 2, 3],
            },
            HopFrame::Ack { conn: 9, next: 13 },
        ];
        for f in frames {
            let b = f.encode();
            assert!(is_hop_frame(&b));
            assert_eq!(HopFrame::decode(&b), Some(f));
        }
        assert_eq!(HopFrame::decode(&[F_HOP_ACK, 0, 0]), None);
    }

    fn t(ms: u64) -> SimTime {
        SimTime::from_millis(ms)
    }

    fn transmitted(out: &[HopOut]) -> Vec<HopFrame> {
        out.iter()
            .filter_map(|o| match o {
                HopOut::Transmit(b) => HopFrame::decode(b),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn handshake_rounds_then_data() {
        let params = HopParams {
            handshake_rtts: 2,
            ..HopParams::default()
        };
        let a_addr = OverlayAddress::new(1, 0);
        let b_addr = OverlayAddress::new(2, 0);
        let mut out = Vec::new();
        let mut a = HopEndpoint::connect(5, a_addr, b_addr, params, t(0), &mut out);
        a.send(b"x".to_vec(), t(0), &mut out);
        let syn = transmitted(&out);
        assert_eq!(syn.len(), 1);
        let mut b = HopEndpoint::accept(5, b_addr, a_addr, params);
        let mut o2 = Vec::new();
        b.on_frame(syn[0].clone(), t(1), &mut o2);
        out.clear();
        a.on_frame(transmitted(&o2)[0].clone(), t(2), &mut out);
        assert!(matches!(a.state(), HopState::Connecting { round: 1 }));
        o2.clear();
        b.on_frame(transmitted(&out)[0].clone(), t(3), &mut o2);
        out.clear();
        a.on_frame(transmitted(&o2)[0].clone(), t(4), &mut out);
        assert_eq!(a.state(), HopState::Established);
        assert!(out.contains(&HopOut::Established));
        let seg = transmitted(&out).pop().unwrap();
        o2.clear();
        b.on_frame(seg, t(5), &mut o2);
        assert!(o2.contains(&HopOut::Deliver(b"x".to_vec())));
    }

    #[test]
    fn total_loss_fails_after_max_retries() {
        let params = HopParams {
            handshake_rtts: 0,
            ..HopParams::default()
        };
        let mut out = Vec::new();
        let mut a = HopEndpoint::connect(
            1,
            OverlayAddress::new(1, 0),
            OverlayAddress::new(2, 0),
            params,
            t(0),
            &mut out,
        );
        a.send(vec![0], t(0), &mut out);
        let mut now = t(0);
        let mut timeouts = 0;
        loop {
            now += params.rto;
            out.clear();
            a.on_timer(now, &mut out);
            timeouts += 1;
            if out.iter().any(|o| matches!(o, HopOut::Failed(_))) {
                break;
            }
            assert!(timeouts < 100);
        }
        assert_eq!(timeouts, params.max_retries);
        assert_eq!(a.stats().retransmissions, u64::from(params.max_retries) - 1);
    }

    #[test]
    fn receiver_reorders_and_acks_cumulatively() {
        let mut b = HopEndpoint::accept(
            1,
            OverlayAddress::new(2, 0),
            OverlayAddress::new(1, 0),
            HopParams::default(),
        );
        let mut out = Vec::new();
        for seq in [1u32, 2, 0] {
            b.on_frame(
                HopFrame::Seg {
                    conn: 1,
                    seq,
                    payload: vec![seq as u8],
                },
                t(0),
                &mut out,
            );
        }
        let delivered: Vec<u8> = out
            .iter()
            .filter_map(|o| match o {
                HopOut::Deliver(p) => Some(p[0]),
                _ => None,
            })
            .collect();
        assert_eq!(delivered, vec![0, 1, 2]);
        assert_eq!(transmitted(&out).last(), Some(&HopFrame::Ack { conn: 1, next: 3 }));
    }
}
