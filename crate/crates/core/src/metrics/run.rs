//! Single experiment runs: one world, one seed, one system.

use crate::config::ExperimentConfig;
use crate::control::Direction;
use crate::overlay::{EgressConfig, FabricConfig, FabricError, LinkConfig, NodeId, TraceRow};
use crate::runtime::{Sim, SimError, SimHandle, World, WorldParams};
use crate::session::{
    bootstrap, transfer, vanilla_open, vanilla_transfer, RelayPlan, SessionConfig, SessionError, System, TransferResult,
};
use crate::time::{serde_nanos, SimTime};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// No run is allowed more virtual time than this.
pub const VIRTUAL_TIME_LIMIT: SimTime = SimTime::from_nanos(4 * 3600 * 1_000_000_000);

/// Streams derived from a run seed, kept apart so adding a draw in one
/// never shifts another.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_FABRIC: u64 = 1;
const STREAM_PROTOCOL: u64 = 2;
const STREAM_BANDWIDTH: u64 = 3;
const STREAM_SESSION: u64 = 4;
const STREAM_DATA: u64 = 5;
pub(crate) const STREAM_SWEEP: u64 = 6;

pub fn fabric_config(cfg: &ExperimentConfig, seed: u64) -> FabricConfig {
    let f = &cfg.fabric;
    FabricConfig {
        seed: sub_seed(seed, STREAM_FABRIC),
        default_link: LinkConfig {
            latency: f.latency(),
            loss_rate: cfg.loss.link_loss,
            bandwidth: f.link_bandwidth,
        },
        latency_spread: f
            .latency_spread_ms
            .map(|(lo, hi)| ((lo * 1e6).round() as u64, (hi * 1e6).round() as u64)),
        temp_pool: f.temp_pool(),
        temp_mode: f.temp_mode,
        trace: f.trace,
        ..FabricConfig::default()
    }
}

pub fn world_params(cfg: &ExperimentConfig, seed: u64) -> WorldParams {
    WorldParams {
        suite: cfg.cipher,
        hop: cfg.hop.to_params(),
        relay: cfg.relay.to_config(),
        seed: sub_seed(seed, STREAM_PROTOCOL),
    }
}

/// A world with a client, a server and `cfg.relays` relays.
pub struct Testbed {
    pub sim: Sim,
    pub client: NodeId,
    pub server: NodeId,
    pub relays: Vec<NodeId>,
}

pub fn testbed(cfg: &ExperimentConfig, seed: u64) -> Result<Testbed, RunError> {
    let mut w = World::new(fabric_config(cfg, seed), world_params(cfg, seed))?;
    let host = EgressConfig {
        bandwidth: cfg.fabric.host_bandwidth,
        queue_limit: cfg.fabric.queue_limit(),
    };
    let client = w.add_host(host)?;
    let server = w.add_host(host)?;
    let relays = add_relays(&mut w, cfg, seed, cfg.relays)?;
    let mut sim = Sim::new(w);
    sim.set_time_limit(Some(VIRTUAL_TIME_LIMIT));
    Ok(Testbed {
        sim,
        client,
        server,
        relays,
    })
}

pub(crate) fn add_relays(w: &mut World, cfg: &ExperimentConfig, seed: u64, n: usize) -> Result<Vec<NodeId>, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_BANDWIDTH));
    (0..n)
        .map(|_| {
            let bandwidth = match cfg.fabric.relay_bandwidth {
                Some((lo, hi)) => rng.gen_range(lo..=hi),
                None => 0,
            };
            Ok(w.add_relay(EgressConfig {
                bandwidth,
                queue_limit: cfg.fabric.queue_limit(),
            })?)
        })
        .collect()
}

/// The bytes a run transfers: pseudo-random, fixed by the seed.
pub fn payload(seed: u64, len: u64) -> Vec<u8> {
    let mut v = vec![0u8; len as usize];
    ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_DATA)).fill_bytes(&mut v);
    v
}

pub fn session_config(cfg: &ExperimentConfig, seed: u64) -> SessionConfig {
    SessionConfig {
        seed: sub_seed(seed, STREAM_SESSION),
        ..cfg.session.clone()
    }
}

/// Puts the configured data-path loss on every link of both data paths.
pub fn apply_data_loss(h: &SimHandle, cfg: &ExperimentConfig, plan: &RelayPlan, client: NodeId, server: NodeId) {
    if cfg.loss.data_loss <= 0.0 {
        return;
    }
    h.with(|w| {
        for dir in [Direction::S2c, Direction::C2s] {
            let links = plan.data_links(dir, client, server);
            let q = cfg.loss.per_data_link(links.len());
            for (a, b) in links {
                let mut l = w.net.fabric.link(a, b);
                l.loss_rate = 1.0 - (1.0 - l.loss_rate) * (1.0 - q);
                w.net.fabric.set_link(a, b, l).expect("loss rate within [0, 1]");
            }
        }
    });
}

/// One system's numbers for one (seed, size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub system: System,
    pub seed: u64,
    pub size_bytes: u64,
    /// DarkHorse: full bootstrap. Vanilla: channel open.
    #[serde(with = "serde_nanos")]
    pub bootstrap_time: Duration,
    /// Control-channel open as seen inside this run.
    #[serde(with = "serde_nanos")]
    pub open_time: Duration,
    pub transfer: TransferResult,
}

pub fn run_darkhorse(cfg: &ExperimentConfig, seed: u64, size: u64) -> Result<RunRecord, RunError> {
    darkhorse_on(&mut testbed(cfg, seed)?, cfg, seed, size)
}

pub fn run_vanilla(cfg: &ExperimentConfig, seed: u64, size: u64) -> Result<RunRecord, RunError> {
    vanilla_on(&mut testbed(cfg, seed)?, cfg, seed, size)
}

pub fn run_system(system: System, cfg: &ExperimentConfig, seed: u64, size: u64) -> Result<RunRecord, RunError> {
    match system {
        System::Darkhorse => run_darkhorse(cfg, seed, size),
        System::Vanilla => run_vanilla(cfg, seed, size),
    }
}

/// One traced run: the record plus every datagram the fabric carried.
pub fn simulate(
    system: System,
    cfg: &ExperimentConfig,
    seed: u64,
    size: u64,
) -> Result<(RunRecord, Vec<TraceRow>), RunError> {
    let mut traced = cfg.clone();
    traced.fabric.trace = true;
    let mut tb = testbed(&traced, seed)?;
    let rec = match system {
        System::Darkhorse => darkhorse_on(&mut tb, cfg, seed, size)?,
        System::Vanilla => vanilla_on(&mut tb, cfg, seed, size)?,
    };
    let trace = tb.sim.world_mut().net.fabric.take_trace();
    Ok((rec, trace))
}

fn darkhorse_on(tb: &mut Testbed, cfg: &ExperimentConfig, seed: u64, size: u64) -> Result<RunRecord, RunError> {
    let (client, server) = (tb.client, tb.server);
    let h = tb.sim.handle();
    let scfg = session_config(cfg, seed);
    let ecfg = cfg.clone();
    let data = payload(seed, size);
    let (boot, open, r) = tb.sim.run(async move {
        let mut sess = bootstrap(&h, client, server, &scfg).await?;
        apply_data_loss(&h, &ecfg, &sess.plan, client, server);
        let r = transfer(&h, &mut sess, Direction::S2c, &data).await?;
        Ok::<_, SessionError>((sess.bootstrap_time, sess.control_open_time, r))
    })??;
    Ok(RunRecord {
        system: System::Darkhorse,
        seed,
        size_bytes: size,
        bootstrap_time: boot,
        open_time: open,
        transfer: r,
    })
}

fn vanilla_on(tb: &mut Testbed, cfg: &ExperimentConfig, seed: u64, size: u64) -> Result<RunRecord, RunError> {
    let (client, server) = (tb.client, tb.server);
    let h = tb.sim.handle();
    let scfg = session_config(cfg, seed);
    let data = payload(seed, size);
    let (open, r) = tb.sim.run(async move {
        let mut vs = vanilla_open(&h, client, server, &scfg).await?;
        let r = vanilla_transfer(&h, &mut vs, Direction::S2c, &data).await?;
        Ok::<_, SessionError>((vs.open_time, r))
    })??;
    Ok(RunRecord {
        system: System::Vanilla,
        seed,
        size_bytes: size,
        bootstrap_time: open,
        open_time: open,
        transfer: r,
    })
}

/// Bootstrap-only timings for one seed: (DarkHorse bootstrap, vanilla open).
pub fn bootstrap_pair(cfg: &ExperimentConfig, seed: u64) -> Result<(Duration, Duration), RunError> {
    let scfg = session_config(cfg, seed);
    let Testbed {
        mut sim,
        client,
        server,
        ..
    } = testbed(cfg, seed)?;
    let h = sim.handle();
    let s2 = scfg.clone();
    let boot = sim.run(async move { bootstrap(&h, client, server, &s2).await.map(|s| s.bootstrap_time) })??;
    let Testbed {
        mut sim,
        client,
        server,
        ..
    } = testbed(cfg, seed)?;
    let h = sim.handle();
    let open = sim.run(async move { vanilla_open(&h, client, server, &scfg).await.map(|v| v.open_time) })??;
    Ok((boot, open))
}
