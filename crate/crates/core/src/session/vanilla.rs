use super::transfer::{check_data, delays, fabric_bytes, transfer_err, Received};
use super::{on_wire_packet_size, AtStage, Peer, SessionError, Stage, System, TransferResult, VanillaSession};
use crate::control::{ControlEvent, ControlMessage, Direction};
use crate::data::{metadata_for, packetize};
use crate::metrics::compute_overhead;
use crate::runtime::SimHandle;
use crate::time::SimTime;

fn hop_retransmissions(h: &SimHandle) -> u64 {
    h.with(|w| w.net.conns().map(|(_, e)| e.stats().retransmissions).sum())
}

/// The requester knows the resource size, so it derives the packet layout
/// itself; a plain stream carries no metadata message.
async fn receive(
    h: &SimHandle,
    peer: &mut Peer,
    tid: u32,
    size_hint: u64,
    cfg: &super::SessionConfig,
) -> Result<Received, SessionError> {
    let mut out = Received::new_at(h.now());
    let meta = metadata_for(tid, size_hint, cfg.chunk_size, cfg.seq_bytes).at(Stage::Transfer)?;
    out.on_metadata(tid, meta)?;
    peer.ctrl.send_msg(
        h,
        &ControlMessage::Request {
            transfer_id: tid,
            resource_id: u64::from(tid),
            size_hint,
        },
    );
    let ack_every = cfg.ack_every.max(1);
    let mut acked = 0;
    loop {
        match peer.ctrl.recv(h).await {
            None => return Err(transfer_err("channel closed mid-transfer")),
            Some(ControlEvent::Bulk { packet, at }) => out.on_packet(&packet, at, true),
            Some(ControlEvent::Msg(_)) => {}
        }
        let got = out.state.as_ref().map_or(0, |s| s.received());
        if cfg.e2e_window.is_some() && got >= acked + ack_every && !out.completed() {
            acked = got;
            peer.ctrl.send_msg(
                h,
                &ControlMessage::StreamAck {
                    transfer_id: tid,
                    received: got,
                },
            );
        }
        if out.completed() {
            out.end = h.now();
            out.residual.push(0);
            return Ok(out);
        }
    }
}

async fn send(
    h: &SimHandle,
    peer: &mut Peer,
    tid: u32,
    data: &[u8],
    cfg: &super::SessionConfig,
) -> Result<(Vec<Option<SimTime>>, u64), SessionError> {
    loop {
        let m = peer.ctrl.recv_msg(h).await.at(Stage::Transfer)?;
        if matches!(m, ControlMessage::Request { transfer_id, .. } if transfer_id == tid) {
            break;
        }
    }
    let (meta, packets) = packetize(tid, data, cfg.chunk_size, cfg.seq_bytes).at(Stage::Transfer)?;
    let n = meta.total_packets;
    let mut handoff = vec![None; n as usize];
    let mut acked = 0u32;
    for p in &packets {
        if let Some(w) = cfg.e2e_window {
            while p.seq - acked >= w {
                if let ControlMessage::StreamAck { transfer_id, received } =
                    peer.ctrl.recv_msg(h).await.at(Stage::Transfer)?
                {
                    if transfer_id == tid {
                        acked = acked.max(received);
                    }
                }
            }
        }
        peer.ctrl.writable(h, cfg.stream_window).await;
        handoff[p.seq as usize] = Some(h.now());
        peer.ctrl.send_bulk(h, &p.encode(cfg.seq_bytes));
    }
    Ok((handoff, u64::from(n)))
}

/// Moves `data` as a reliable stream over the 6-relay channel.
pub async fn vanilla_transfer(
    h: &SimHandle,
    session: &mut VanillaSession,
    direction: Direction,
    data: &[u8],
) -> Result<TransferResult, SessionError> {
    let tid = session.next_transfer_id;
    session.next_transfer_id += 1;
    let cfg = session.cfg.clone();
    let (sender, receiver) = match direction {
        Direction::S2c => (&mut session.server, &mut session.client),
        Direction::C2s => (&mut session.client, &mut session.server),
    };
    let bytes_before = fabric_bytes(h);
    let retx_before = hop_retransmissions(h);
    let (recv, (handoff, sent)) = futures::future::try_join(
        receive(h, receiver, tid, data.len() as u64, &cfg),
        send(h, sender, tid, data, &cfg),
    )
    .await?;
    let received_sha256 = check_data(&recv, data)?;
    let hop_retx = hop_retransmissions(h) - retx_before;
    let size = on_wire_packet_size(&cfg);
    let relays = (cfg.n_client_relays + cfg.n_server_relays) as u64;
    Ok(TransferResult {
        system: System::Vanilla,
        direction,
        transfer_id: tid,
        data_len: data.len() as u64,
        transfer_time: recv.finish_time().saturating_since(recv.t0),
        completed: recv.completed(),
        packets_sent: sent,
        packets_lost: 0,
        packets_retx: hop_retx,
        retx_data: 0,
        retx_control: hop_retx,
        recovery_rounds: 0,
        residual_missing: recv.residual.clone(),
        per_packet_delays: delays(&recv.first_arrival, &handoff),
        on_wire_packet_size: size,
        bytes_on_wire: compute_overhead(sent, size, relays, hop_retx),
        fabric_bytes: fabric_bytes(h) - bytes_before,
        received_sha256,
    })
}
