use super::*;
use crate::control::Direction;
use crate::overlay::{EgressConfig, FabricConfig, LinkConfig, NodeId};
use crate::path::BuildError;
use crate::relay::HopParams;
use crate::runtime::{Sim, SimHandle, World, WorldParams};
use std::collections::BTreeSet;
use std::time::Duration;

const L: Duration = Duration::from_millis(20);

fn world(relays: usize, params: WorldParams) -> (Sim, NodeId, NodeId) {
    let fc = FabricConfig {
        default_link: LinkConfig::with_latency(L),
        ..FabricConfig::default()
    };
    let mut w = World::new(fc, params).unwrap();
    let c = w.add_host(EgressConfig::default()).unwrap();
    let s = w.add_host(EgressConfig::default()).unwrap();
    for _ in 0..relays {
        w.add_relay(EgressConfig::default()).unwrap();
    }
    (Sim::new(w), c, s)
}

fn data(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i * 31 % 251) as u8).collect()
}

fn set_loss(h: &SimHandle, links: &[(NodeId, NodeId)], p: f64) {
    h.with(|w| {
        for &(a, b) in links {
            let cfg = LinkConfig {
                loss_rate: p,
                ..LinkConfig::with_latency(L)
            };
            w.net.fabric.set_link(a, b, cfg).unwrap();
        }
    });
}

/// Link delays until the client holds the server's Hello on a uniform
/// fabric with `h`-round-trip link handshakes.
fn vanilla_open_links(h: u32) -> u32 {
    // Each half: hop k is a handshake (2h) plus a 2k-link round trip.
    let half = (2 * h + 2) + (2 * h + 4) + (2 * h + 6);
    // Join: EXTEND reaches the server's third relay, which handshakes with
    // the rendezvous and sends CREATE; JOINED then crosses 3 links.
    let join = 3 + 2 * h + 1 + 3;
    // Hello out and back over 7 links each way.
    half + join + 14
}

#[test]
fn open_and_bootstrap_follow_the_link_schedule() {
    let (mut sim, c, s) = world(12, WorldParams::default());
    let h = sim.handle();
    let (open, boot, vopen) = sim
        .run(async move {
            let cfg = SessionConfig::default();
            let sess = bootstrap(&h, c, s, &cfg).await.unwrap();
            (sess.control_open_time, sess.bootstrap_time, sess.server_ready_time)
        })
        .unwrap();
    let hrtt = HopParams::default().handshake_rtts;
    assert_eq!(open, L * vanilla_open_links(hrtt));
    // The server builds its path (12 links) from Hello receipt, 7 links
    // before open, and its binding takes 7 links back; the client builds
    // its own from open. Both finish 12 links after open.
    assert_eq!(boot, open + L * 12);
    assert!(vopen > Duration::ZERO);
    let (mut sim, c, s) = world(6, WorldParams::default());
    let h = sim.handle();
    let vo = sim
        .run(async move {
            vanilla_open(&h, c, s, &SessionConfig::default())
                .await
                .unwrap()
                .open_time
        })
        .unwrap();
    assert_eq!(vo, open);
    assert!(boot > vo);
}

#[test]
fn zero_loss_transfer_exact_counts_and_delays() {
    let (mut sim, c, s) = world(12, WorldParams::default());
    let h = sim.handle();
    let payload = data(1 << 20);
    let p2 = payload.clone();
    let r = sim
        .run(async move {
            let mut sess = bootstrap(&h, c, s, &SessionConfig::default()).await.unwrap();
            transfer(&h, &mut sess, Direction::S2c, &p2).await.unwrap()
        })
        .unwrap();
    let size = on_wire_packet_size(&SessionConfig::default());
    assert_eq!(size, 1 + 5 + 28 + 1028 + 3 * 28);
    assert!(r.completed);
    assert_eq!((r.packets_sent, r.packets_lost, r.packets_retx), (1024, 0, 0));
    assert_eq!(r.bytes_on_wire, 1024 * size * 3);
    assert_eq!(r.per_packet_delays.len(), 1024);
    assert!(r.per_packet_delays.iter().all(|d| *d == 4 * L));
    // Request crosses the 7-link control path, packets the 4-link data path.
    assert_eq!(r.transfer_time, 11 * L);
}

#[test]
fn vanilla_delay_and_overhead() {
    let (mut sim, c, s) = world(6, WorldParams::default());
    let h = sim.handle();
    let r = sim
        .run(async move {
            let mut vs = vanilla_open(&h, c, s, &SessionConfig::default()).await.unwrap();
            vanilla_transfer(&h, &mut vs, Direction::S2c, &data(1 << 20))
                .await
                .unwrap()
        })
        .unwrap();
    let size = on_wire_packet_size(&SessionConfig::default());
    assert!(r.completed);
    assert_eq!(r.bytes_on_wire, 1024 * size * 6);
    assert!(r.per_packet_delays.iter().all(|d| *d == 7 * L));
}

#[test]
fn crypto_cost_adds_one_layer_per_relay() {
    let params = WorldParams {
        relay: crate::relay::RelayConfig {
            crypto_cost_per_layer: L,
            ..Default::default()
        },
        ..WorldParams::default()
    };
    let (mut sim, c, s) = world(12, params);
    let h = sim.handle();
    let one = data(1000);
    let o2 = one.clone();
    let dh = sim
        .run(async move {
            let mut sess = bootstrap(&h, c, s, &SessionConfig::default()).await.unwrap();
            transfer(&h, &mut sess, Direction::S2c, &o2).await.unwrap()
        })
        .unwrap();
    let (mut sim, c, s) = world(6, params);
    let h = sim.handle();
    let va = sim
        .run(async move {
            let mut vs = vanilla_open(&h, c, s, &SessionConfig::default()).await.unwrap();
            vanilla_transfer(&h, &mut vs, Direction::S2c, &one).await.unwrap()
        })
        .unwrap();
    assert_eq!(dh.per_packet_delays, vec![4 * L + 3 * L]);
    assert_eq!(va.per_packet_delays, vec![7 * L + 6 * L]);
}

#[test]
fn insufficient_pool_fails_at_data_path_stage() {
    let (mut sim, c, s) = world(11, WorldParams::default());
    let h = sim.handle();
    let e = sim
        .run(async move { bootstrap(&h, c, s, &SessionConfig::default()).await.unwrap_err() })
        .unwrap();
    assert_eq!(e.stage, Stage::DataPath);
    assert_eq!(
        e.kind,
        FailureKind::Build(BuildError::InsufficientRelays { need: 3, have: 2 })
    );
}

#[test]
fn relay_sets_are_pairwise_disjoint_and_temps_distinct() {
    let (mut sim, c, s) = world(20, WorldParams::default());
    let h = sim.handle();
    let sess = sim
        .run(async move {
            bootstrap(
                &h,
                c,
                s,
                &SessionConfig {
                    seed: 9,
                    ..Default::default()
                },
            )
            .await
            .unwrap()
        })
        .unwrap();
    let all: BTreeSet<_> = sess.plan.all().collect();
    assert_eq!(all.len(), 12);
    let t1 = sess.client.tx.as_ref().unwrap().binding.temp_src_addr;
    let t2 = sess.server.tx.as_ref().unwrap().binding.temp_src_addr;
    assert_ne!(t1, t2);
}

fn lossy_run(mode: RetransmitMode, p: f64, request_mode: RequestMode, seed: u64) -> TransferResult {
    let (mut sim, c, s) = world(
        12,
        WorldParams {
            seed,
            ..Default::default()
        },
    );
    let h = sim.handle();
    sim.run(async move {
        let cfg = SessionConfig {
            retransmit: RetransmitPolicy { mode, max_rounds: 3 },
            request_mode,
            seed,
            ..Default::default()
        };
        let mut sess = bootstrap(&h, c, s, &cfg).await.unwrap();
        set_loss(&h, &sess.plan.data_links(Direction::S2c, c, s), p);
        set_loss(&h, &sess.plan.data_links(Direction::C2s, c, s), p);
        transfer(&h, &mut sess, Direction::S2c, &data(200 * 1024))
            .await
            .unwrap()
    })
    .unwrap()
}

#[test]
fn total_loss_recovers_only_with_control_fallback() {
    let r = lossy_run(RetransmitMode::ControlChannel, 1.0, RequestMode::Control, 1);
    assert!(r.completed);
    assert_eq!((r.packets_lost, r.retx_control, r.recovery_rounds), (200, 200, 1));
    assert_eq!(r.residual_missing, vec![200, 0]);
    let r = lossy_run(RetransmitMode::DataChannel, 1.0, RequestMode::Control, 1);
    assert!(!r.completed);
    assert_eq!(r.residual_missing, vec![200; 4]);
    assert_eq!(r.retx_data, 600);
    let r = lossy_run(RetransmitMode::Hybrid, 1.0, RequestMode::Control, 1);
    assert!(r.completed);
    assert_eq!((r.retx_data, r.retx_control), (600, 200));
}

#[test]
fn hybrid_recovers_partial_loss() {
    let r = lossy_run(RetransmitMode::Hybrid, 0.3, RequestMode::Control, 11);
    assert!(r.completed);
    assert!(r.packets_lost > 0 && r.packets_lost < 200);
    assert!(r.residual_missing.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(*r.residual_missing.last().unwrap(), 0);
}

#[test]
fn data_mode_request_falls_back_to_control() {
    let ok = lossy_run(RetransmitMode::Hybrid, 0.0, RequestMode::Data, 2);
    assert!(ok.completed);
    let dead = lossy_run(RetransmitMode::Hybrid, 1.0, RequestMode::Data, 2);
    assert!(dead.completed);
    assert!(dead.transfer_time > ok.transfer_time);
}
