use super::{AtStage, FailureKind, Peer, RequestMode, Session, SessionConfig, SessionError, SessionState, Stage};
use crate::control::{ControlEndpoint, ControlEvent, ControlMessage, Direction, Metadata};
use crate::crypto::{CELL_HEADER_LEN, E2E_OVERHEAD, LAYER_OVERHEAD};
use crate::data::{packetize, Accept, DataEvent, DataPacket, DataReceiver, DataSender, Pacer, ReceiveState};
use crate::metrics::compute_overhead;
use crate::runtime::SimHandle;
use crate::time::{serde_nanos, serde_nanos_vec, SimTime};
use futures::{pin_mut, select_biased, FutureExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Darkhorse,
    Vanilla,
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            System::Darkhorse => "darkhorse",
            System::Vanilla => "vanilla",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub system: System,
    pub direction: Direction,
    pub transfer_id: u32,
    pub data_len: u64,
    /// From the receiver's request until it holds every packet (or gives up).
    #[serde(with = "serde_nanos")]
    pub transfer_time: Duration,
    pub completed: bool,
    /// Packets in the initial send.
    pub packets_sent: u64,
    /// Packets missing after the initial send.
    pub packets_lost: u64,
    pub packets_retx: u64,
    pub retx_data: u64,
    pub retx_control: u64,
    pub recovery_rounds: u32,
    /// Missing count after each loss report.
    pub residual_missing: Vec<u64>,
    /// Sender handoff to receiver arrival, for packets delivered by the
    /// initial send.
    #[serde(with = "serde_nanos_vec")]
    pub per_packet_delays: Vec<Duration>,
    pub on_wire_packet_size: u64,
    /// The overhead metric: packets times on-wire size times relays crossed.
    pub bytes_on_wire: u64,
    /// Every byte every node put on the fabric during the transfer.
    pub fabric_bytes: u64,
    /// Hex SHA-256 of the bytes the receiver rebuilt, when it completed.
    pub received_sha256: Option<String>,
}

impl TransferResult {
    pub fn loss_fraction(&self) -> f64 {
        if self.packets_sent == 0 {
            0.0
        } else {
            self.packets_lost as f64 / self.packets_sent as f64
        }
    }
}

/// Size of a fully layered data cell: command byte, cell header, end-to-end
/// envelope and one layer per path relay.
pub fn on_wire_packet_size(cfg: &SessionConfig) -> u64 {
    let layers = super::DATA_PATH_LEN.max(cfg.n_client_relays).max(cfg.n_server_relays);
    (1 + CELL_HEADER_LEN + E2E_OVERHEAD + cfg.packet_size() + layers * LAYER_OVERHEAD) as u64
}

pub(crate) fn fabric_bytes(h: &SimHandle) -> u64 {
    h.with(|w| {
        let f = &w.net.fabric;
        (0..f.node_count())
            .map(|i| f.node_counters(crate::overlay::NodeId(i as u16)).sent_bytes)
            .sum()
    })
}

pub(crate) fn transfer_err(reason: impl Into<String>) -> SessionError {
    SessionError {
        stage: Stage::Transfer,
        kind: FailureKind::Protocol(reason.into()),
    }
}

enum Ev {
    Ctrl(Option<ControlEvent>),
    Data(Option<DataEvent>),
    Timer,
}

/// Next event on either channel, or `Timer` at `deadline`. Data events win
/// ties so packets that arrived with a control message are counted first.
async fn next_event(h: &SimHandle, ctrl: &mut ControlEndpoint, rx: &mut DataReceiver, deadline: Option<SimTime>) -> Ev {
    let d = rx.recv(h).fuse();
    let c = ctrl.recv(h).fuse();
    let t = async {
        match deadline {
            Some(at) => h.sleep_until(at).await,
            None => futures::future::pending().await,
        }
    }
    .fuse();
    pin_mut!(d, c, t);
    select_biased! {
        e = d => Ev::Data(e),
        e = c => Ev::Ctrl(e),
        _ = t => Ev::Timer,
    }
}

/// Receiver-side record of one transfer.
#[derive(Debug)]
pub(crate) struct Received {
    pub t0: SimTime,
    pub end: SimTime,
    pub state: Option<ReceiveState>,
    /// Arrival of each packet delivered before the first loss report.
    pub first_arrival: Vec<Option<SimTime>>,
    pub lost_initial: u64,
    pub residual: Vec<u64>,
}

impl Received {
    pub fn new_at(t0: SimTime) -> Self {
        Received {
            t0,
            end: t0,
            state: None,
            first_arrival: Vec::new(),
            lost_initial: 0,
            residual: Vec::new(),
        }
    }

    pub fn completed(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.is_complete())
    }

    pub fn finish_time(&self) -> SimTime {
        self.state.as_ref().and_then(|s| s.completed_at).unwrap_or(self.end)
    }

    /// Installs `m`; returns false if it does not belong to `tid`.
    pub fn on_metadata(&mut self, tid: u32, m: Metadata) -> Result<bool, SessionError> {
        if m.transfer_id != tid || self.state.is_some() {
            return Ok(false);
        }
        m.validate().at(Stage::Transfer)?;
        self.first_arrival = vec![None; m.total_packets as usize];
        self.state = Some(ReceiveState::new(m));
        Ok(true)
    }

    pub fn on_packet(&mut self, bytes: &[u8], at: SimTime, initial: bool) {
        let Some(st) = self.state.as_mut() else { return };
        let Some(p) = DataPacket::decode(bytes, st.metadata.seq_bytes) else {
            return;
        };
        if st.accept(p.seq, &p.chunk, at) == Accept::New && initial {
            self.first_arrival[p.seq as usize] = Some(at);
        }
    }
}

fn send_request(
    h: &SimHandle,
    ctrl: &mut ControlEndpoint,
    tx: Option<&mut DataSender>,
    req: &ControlMessage,
    via_data: bool,
) {
    match (via_data, tx) {
        (true, Some(tx)) => tx.send_request(h, &req.encode()),
        _ => ctrl.send_msg(h, req),
    }
}

async fn receive(
    h: &SimHandle,
    peer: &mut Peer,
    tid: u32,
    size_hint: u64,
    cfg: &SessionConfig,
) -> Result<Received, SessionError> {
    let policy = cfg.retransmit;
    let mut out = Received::new_at(h.now());
    let Peer {
        ctrl,
        rx,
        tx,
        rtt_estimate,
        ..
    } = peer;
    let rx = rx.as_mut().ok_or_else(|| transfer_err("no data channel"))?;
    if let Some(tx) = tx.as_mut() {
        tx.begin(tid);
    }
    let req = ControlMessage::Request {
        transfer_id: tid,
        resource_id: u64::from(tid),
        size_hint,
    };
    let data_mode = cfg.request_mode == RequestMode::Data && tx.is_some();
    send_request(h, ctrl, tx.as_mut(), &req, data_mode);
    let resend_after = *rtt_estimate * 2;
    let mut deadline = data_mode.then(|| h.now() + resend_after);
    let mut resends = 0;
    let mut early: Vec<(Vec<u8>, SimTime)> = Vec::new();
    let mut reports = 0u32;
    loop {
        match next_event(h, ctrl, rx, deadline).await {
            Ev::Timer => {
                resends += 1;
                let via_data = resends == 1;
                send_request(h, ctrl, tx.as_mut(), &req, via_data);
                deadline = via_data.then(|| h.now() + resend_after);
            }
            Ev::Data(None) | Ev::Ctrl(None) => return Err(transfer_err("channel closed mid-transfer")),
            Ev::Data(Some(DataEvent::Packet { transfer, packet, at })) if transfer == tid => {
                if out.state.is_none() {
                    early.push((packet, at));
                } else {
                    out.on_packet(&packet, at, reports == 0);
                }
            }
            Ev::Data(Some(_)) => {}
            Ev::Ctrl(Some(ControlEvent::Bulk { packet, at })) => out.on_packet(&packet, at, false),
            Ev::Ctrl(Some(ControlEvent::Msg(m))) => match m {
                ControlMessage::Metadata(meta) => {
                    if out.on_metadata(tid, meta)? {
                        deadline = None;
                        for (p, at) in early.drain(..) {
                            out.on_packet(&p, at, true);
                        }
                    }
                }
                ControlMessage::TransferComplete { transfer_id, .. } if transfer_id == tid => {
                    let st = out
                        .state
                        .as_ref()
                        .ok_or_else(|| transfer_err("completion before metadata"))?;
                    let missing = st.compute_missing();
                    if reports == 0 {
                        out.lost_initial = missing.len() as u64;
                    }
                    out.residual.push(missing.len() as u64);
                    reports += 1;
                    let done = missing.is_empty() || (!policy.control_fallback() && reports > policy.data_rounds());
                    ctrl.send_msg(h, &ControlMessage::loss_report(tid, missing).at(Stage::Transfer)?);
                    if done {
                        out.end = h.now();
                        return Ok(out);
                    }
                }
                _ => {}
            },
        }
    }
}

/// Sender-side record of one transfer.
#[derive(Debug, Default)]
pub(crate) struct Sent {
    /// First handoff of each packet to the network.
    pub send_times: Vec<Option<SimTime>>,
    pub packets_sent: u64,
    pub retx_data: u64,
    pub retx_control: u64,
    pub data_rounds: u32,
    pub control_rounds: u32,
}

async fn blast(
    h: &SimHandle,
    tx: &mut DataSender,
    pacer: &mut Pacer,
    encoded: &[Vec<u8>],
    seqs: impl IntoIterator<Item = u32>,
    send_times: &mut [Option<SimTime>],
) -> u64 {
    let mut n = 0;
    for seq in seqs {
        let at = pacer.next_slot(h.now());
        if at > h.now() {
            h.sleep_until(at).await;
        }
        tx.send_packet(h, seq, &encoded[seq as usize]);
        send_times[seq as usize].get_or_insert(at);
        n += 1;
    }
    n
}

fn is_request_for(m: &ControlMessage, tid: u32) -> bool {
    matches!(m, ControlMessage::Request { transfer_id, .. } if *transfer_id == tid)
}

async fn send(
    h: &SimHandle,
    peer: &mut Peer,
    tid: u32,
    data: &[u8],
    cfg: &SessionConfig,
) -> Result<Sent, SessionError> {
    let policy = cfg.retransmit;
    let Peer { ctrl, rx, tx, .. } = peer;
    let rx = rx.as_mut().ok_or_else(|| transfer_err("no data channel"))?;
    let tx = tx.as_mut().ok_or_else(|| transfer_err("no data channel"))?;
    tx.begin(tid);
    loop {
        match next_event(h, ctrl, rx, None).await {
            Ev::Ctrl(Some(ControlEvent::Msg(m))) if is_request_for(&m, tid) => break,
            Ev::Data(Some(DataEvent::Request { transfer, body, .. }))
                if transfer == tid && ControlMessage::decode(&body).is_ok_and(|m| is_request_for(&m, tid)) =>
            {
                break
            }
            Ev::Ctrl(None) | Ev::Data(None) => return Err(transfer_err("channel closed before request")),
            _ => {}
        }
    }
    let (meta, packets) = packetize(tid, data, cfg.chunk_size, cfg.seq_bytes).at(Stage::Transfer)?;
    let encoded: Vec<Vec<u8>> = packets.iter().map(|p| p.encode(cfg.seq_bytes)).collect();
    let n = meta.total_packets;
    ctrl.send_msg(h, &ControlMessage::Metadata(meta));
    let mut pacer = Pacer::new(cfg.pacing_pps, cfg.pacing_burst);
    let mut out = Sent {
        send_times: vec![None; n as usize],
        ..Sent::default()
    };
    out.packets_sent = blast(h, tx, &mut pacer, &encoded, 0..n, &mut out.send_times).await;
    ctrl.send_msg(
        h,
        &ControlMessage::TransferComplete {
            transfer_id: tid,
            packets_sent: n,
        },
    );
    loop {
        let m = ctrl.recv_msg(h).await.at(Stage::Transfer)?;
        let ControlMessage::LossReport {
            transfer_id,
            missing_seqs,
        } = &m
        else {
            continue;
        };
        if *transfer_id != tid {
            continue;
        }
        m.check_loss_report(n).at(Stage::Transfer)?;
        if missing_seqs.is_empty() {
            return Ok(out);
        }
        let resent = if out.data_rounds < policy.data_rounds() {
            out.data_rounds += 1;
            let k = blast(
                h,
                tx,
                &mut pacer,
                &encoded,
                missing_seqs.iter().copied(),
                &mut out.send_times,
            )
            .await;
            out.retx_data += k;
            k
        } else if policy.control_fallback() {
            out.control_rounds += 1;
            for &seq in missing_seqs {
                ctrl.writable(h, cfg.stream_window).await;
                ctrl.send_bulk(h, &encoded[seq as usize]);
            }
            out.retx_control += missing_seqs.len() as u64;
            missing_seqs.len() as u64
        } else {
            return Ok(out);
        };
        ctrl.send_msg(
            h,
            &ControlMessage::TransferComplete {
                transfer_id: tid,
                packets_sent: resent as u32,
            },
        );
    }
}

pub(crate) fn delays(first_arrival: &[Option<SimTime>], handoff: &[Option<SimTime>]) -> Vec<Duration> {
    first_arrival
        .iter()
        .zip(handoff)
        .filter_map(|(a, s)| Some(a.as_ref()?.saturating_since(*s.as_ref()?)))
        .collect()
}

/// Compares what the receiver rebuilt with the source and returns the
/// SHA-256 of the rebuilt bytes, if the transfer completed.
pub(crate) fn check_data(recv: &Received, data: &[u8]) -> Result<Option<String>, SessionError> {
    let Some(st) = recv.state.as_ref().filter(|s| s.is_complete()) else {
        return Ok(None);
    };
    let got = st
        .reassemble()
        .map_err(|_| transfer_err("complete state failed to reassemble"))?;
    if got != data {
        return Err(transfer_err("reassembled bytes differ from the source"));
    }
    Ok(Some(hex::encode(Sha256::digest(&got))))
}

/// Moves `data` across the session in `direction`: request, metadata,
/// paced send on the data channel, then loss reports and recovery.
pub async fn transfer(
    h: &SimHandle,
    session: &mut Session,
    direction: Direction,
    data: &[u8],
) -> Result<TransferResult, SessionError> {
    if session.state != SessionState::Ready {
        return Err(transfer_err("session not ready"));
    }
    let tid = session.next_transfer_id;
    session.next_transfer_id += 1;
    let cfg = session.cfg.clone();
    let (sender, receiver) = match direction {
        Direction::S2c => (&mut session.server, &mut session.client),
        Direction::C2s => (&mut session.client, &mut session.server),
    };
    let bytes_before = fabric_bytes(h);
    let (recv, sent) = futures::future::try_join(
        receive(h, receiver, tid, data.len() as u64, &cfg),
        send(h, sender, tid, data, &cfg),
    )
    .await?;
    let received_sha256 = check_data(&recv, data)?;
    let size = on_wire_packet_size(&cfg);
    let ctrl_relays = (cfg.n_client_relays + cfg.n_server_relays) as u64;
    let bytes_on_wire = compute_overhead(sent.packets_sent, size, super::DATA_PATH_LEN as u64, sent.retx_data)
        + compute_overhead(0, size, ctrl_relays, sent.retx_control);
    Ok(TransferResult {
        system: System::Darkhorse,
        direction,
        transfer_id: tid,
        data_len: data.len() as u64,
        transfer_time: recv.finish_time().saturating_since(recv.t0),
        completed: recv.completed(),
        packets_sent: sent.packets_sent,
        packets_lost: recv.lost_initial,
        packets_retx: sent.retx_data + sent.retx_control,
        retx_data: sent.retx_data,
        retx_control: sent.retx_control,
        recovery_rounds: sent.data_rounds + sent.control_rounds,
        residual_missing: recv.residual.clone(),
        per_packet_delays: delays(&recv.first_arrival, &sent.send_times),
        on_wire_packet_size: size,
        bytes_on_wire,
        fabric_bytes: fabric_bytes(h) - bytes_before,
        received_sha256,
    })
}
