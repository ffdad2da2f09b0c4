//! Checkers shared by the property suites and the acceptance run. Each
//! returns `Err` with a description of the first mismatch.

#![allow(dead_code)]

use darkhorse::config::ExperimentConfig;
use darkhorse::control::Direction;
use darkhorse::crypto::{layer_nonce, onion_wrap, CipherSuite, NonceDir, SealedCell, SymmetricKey};
use darkhorse::data::{
    allocate_temp, build_data_path, metadata_for, packetize, DataEvent, DataReceiver, DataSender, ReceiveState,
};
use darkhorse::metrics::run::{payload, run_darkhorse};
use darkhorse::overlay::{EgressConfig, FabricConfig, LinkConfig, NodeId, OverlayAddress};
use darkhorse::runtime::{Sim, World, WorldParams};
use darkhorse::session::RetransmitMode;
use darkhorse::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::time::Duration;

/// Packetizing then accepting every packet rebuilds `data` exactly.
pub fn packetize_roundtrip(data: &[u8], chunk: u32) -> Result<(), String> {
    let (meta, packets) = packetize(1, data, chunk, 4).map_err(|e| e.to_string())?;
    let expect_packets = data.len().div_ceil(chunk as usize);
    if packets.len() != expect_packets {
        return Err(format!("{} packets, expected {expect_packets}", packets.len()));
    }
    let mut st = ReceiveState::new(meta);
    // Reverse order, so reassembly cannot lean on arrival order.
    for p in packets.iter().rev() {
        if p.chunk.len() != chunk as usize {
            return Err(format!("packet {} has {} bytes", p.seq, p.chunk.len()));
        }
        st.accept(p.seq, &p.chunk, SimTime::ZERO);
    }
    match st.reassemble() {
        Ok(got) if got == data => Ok(()),
        Ok(got) => Err(format!(
            "rebuilt {} bytes differ from {} source bytes",
            got.len(),
            data.len()
        )),
        Err(e) => Err(format!("incomplete: {} missing", e.missing)),
    }
}

fn keys(rng: &mut ChaCha8Rng, n: usize) -> Vec<SymmetricKey> {
    (0..n).map(|i| SymmetricKey::random(rng, i as u32)).collect()
}

/// Sender-side wrap then per-relay peel, and relay-side add then owner-side
/// unwrap, both return the payload; flipping any single wire byte is caught.
pub fn onion_inverse(suite: CipherSuite, payload: &[u8], layers: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = keys(&mut rng, layers);
    let circuit: u32 = rng.gen();
    let counter: u64 = rng.gen();

    let cell = onion_wrap(suite, payload.to_vec(), &ks, circuit, |i| {
        layer_nonce(NonceDir::Outbound, i as u8, counter)
    })
    .map_err(|e| e.to_string())?;
    let wire = cell.encode();
    let mut c = SealedCell::decode(&wire).map_err(|e| e.to_string())?;
    for k in &ks {
        c = c.peel(suite, k).map_err(|e| format!("peel: {e}"))?;
    }
    if c.layers() != 0 || c.body() != payload {
        return Err("peeling every layer did not give the payload".into());
    }

    // Relays nearest the sender add first; the owner peels outermost first.
    let mut c = SealedCell::bare(circuit, payload.to_vec());
    for (i, k) in ks.iter().enumerate().rev() {
        c = c
            .add_layer(suite, k, layer_nonce(NonceDir::Inbound, i as u8, counter))
            .map_err(|e| e.to_string())?;
    }
    let got = darkhorse::crypto::unwrap_all(suite, c, &ks).map_err(|e| format!("unwrap: {e}"))?;
    if got != payload {
        return Err("unwrap_all did not give the payload".into());
    }

    if layers > 0 {
        let pos = rng.gen_range(0..wire.len());
        let mut bad = wire.clone();
        bad[pos] ^= 1 << rng.gen_range(0..8);
        let peeled = SealedCell::decode(&bad).map_err(|e| e.to_string()).and_then(|mut c| {
            for k in &ks {
                c = c.peel(suite, k).map_err(|e| e.to_string())?;
            }
            Ok(c)
        });
        if let Ok(c) = peeled {
            return Err(format!(
                "flip at byte {pos} went unnoticed (body {} bytes)",
                c.body().len()
            ));
        }
    }
    Ok(())
}

/// `compute_missing` against a set difference over `0..total`.
pub fn missing_matches_set_difference(total: u32, lost: &BTreeSet<u32>, dup_every: u32) -> Result<(), String> {
    let chunk = 8u32;
    let meta = metadata_for(1, u64::from(total) * u64::from(chunk), chunk, 4).map_err(|e| e.to_string())?;
    let mut st = ReceiveState::new(meta);
    for seq in 0..total {
        if lost.contains(&seq) {
            continue;
        }
        st.accept(seq, &[0; 8], SimTime::ZERO);
        if dup_every > 0 && seq % dup_every == 0 {
            st.accept(seq, &[0; 8], SimTime::ZERO);
        }
    }
    let brute: Vec<u32> = (0..total).filter(|s| lost.contains(s)).collect();
    let got = st.compute_missing();
    if got == brute {
        Ok(())
    } else {
        Err(format!(
            "compute_missing gave {} seqs, set difference {}",
            got.len(),
            brute.len()
        ))
    }
}

/// A DarkHorse transfer at end-to-end data loss `loss` that must complete
/// with the receiver holding exactly the source bytes.
pub fn lossy_transfer_completes(mode: RetransmitMode, loss: f64, size: u64, seed: u64) -> Result<(), String> {
    let mut cfg = ExperimentConfig::preset("deterministic").expect("preset");
    cfg.loss.data_loss = loss;
    cfg.session.retransmit.mode = mode;
    let r = run_darkhorse(&cfg, seed, size).map_err(|e| e.to_string())?;
    let t = &r.transfer;
    if !t.completed {
        return Err(format!(
            "incomplete after {} rounds, residual {:?}",
            t.recovery_rounds, t.residual_missing
        ));
    }
    let want = hex::encode(Sha256::digest(payload(seed, size)));
    match &t.received_sha256 {
        Some(got) if *got == want => Ok(()),
        other => Err(format!("receiver digest {other:?}, source {want}")),
    }
}

/// What a data-channel receiver saw: each packet with its arrival time.
pub type Arrivals = Vec<(Vec<u8>, SimTime)>;

/// Sends `n` packets over one 3-relay data channel with lossy links. With
/// `randomize_src` every datagram carries a fresh random source address;
/// otherwise all carry the bound temporary address.
pub fn data_channel_flow(seed: u64, n: u32, randomize_src: bool) -> Arrivals {
    let fc = FabricConfig {
        seed,
        default_link: LinkConfig {
            loss_rate: 0.1,
            ..LinkConfig::with_latency(Duration::from_millis(20))
        },
        ..FabricConfig::default()
    };
    let mut w = World::new(
        fc,
        WorldParams {
            seed,
            ..WorldParams::default()
        },
    )
    .expect("world");
    let owner = w.add_host(EgressConfig::default()).expect("host");
    let sender = w.add_host(EgressConfig::default()).expect("host");
    let relays: Vec<NodeId> = (0..3)
        .map(|_| w.add_relay(EgressConfig::default()).expect("relay"))
        .collect();
    let mut sim = Sim::new(w);
    let h = sim.handle();
    sim.run(async move {
        // Loss-free setup; only data datagrams meet lossy links.
        h.with(|w| {
            let mut l = w.net.fabric.config().default_link;
            l.loss_rate = 0.0;
            let mut nodes = vec![owner];
            nodes.extend(&relays);
            for pair in nodes.windows(2) {
                w.net.fabric.set_link_symmetric(pair[0], pair[1], l).expect("link");
            }
        });
        let mut handle = build_data_path(&h, owner, &relays, Direction::S2c).await.expect("path");
        h.with(|w| {
            let lossy = w.net.fabric.config().default_link;
            let mut nodes = vec![owner];
            nodes.extend(&relays);
            for pair in nodes.windows(2) {
                w.net.fabric.set_link(pair[1], pair[0], lossy).expect("link");
            }
        });
        let temp = allocate_temp(&h).expect("temp");
        let binding = handle.bind(temp);
        let secret = [3u8; 32];
        let mut rx = DataReceiver::new(&h, handle, &secret);
        let mut tx = DataSender::new(&h, sender, binding, &secret);
        tx.begin(0);
        let h2 = h.clone();
        let sending = h.spawn(async move {
            let mut src_rng = ChaCha8Rng::seed_from_u64(!seed);
            for seq in 0..n {
                if randomize_src {
                    tx.binding.temp_src_addr = OverlayAddress::new(src_rng.gen(), src_rng.gen());
                }
                tx.send_packet(&h2, seq, &seq.to_be_bytes());
                h2.sleep(Duration::from_millis(1)).await;
            }
        });
        let mut got = Vec::new();
        while let Some(Some(ev)) = h.timeout(Duration::from_secs(2), rx.recv(&h)).await {
            if let DataEvent::Packet { packet, at, .. } = ev {
                got.push((packet, at));
            }
        }
        sending.await;
        got
    })
    .expect("simulation")
}

/// Source addresses never influence delivery: same seed, same arrivals.
pub fn src_independent(seed: u64, n: u32) -> Result<(), String> {
    let fixed = data_channel_flow(seed, n, false);
    let random = data_channel_flow(seed, n, true);
    if fixed.is_empty() || fixed.len() == n as usize {
        return Err(format!("{} of {n} arrived; the flow must see some loss", fixed.len()));
    }
    if fixed == random {
        Ok(())
    } else {
        Err(format!(
            "fixed-src flow delivered {}, random-src flow {}",
            fixed.len(),
            random.len()
        ))
    }
}
