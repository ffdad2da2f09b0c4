//! Multi-seed experiments: system comparison, bootstrap bench, and the
//! concurrency sweep. Runs fan out over threads, one world per run.

use super::run::{
    add_relays, fabric_config, payload, run_system, session_config, sub_seed, world_params, RunError, RunRecord,
    STREAM_SWEEP, VIRTUAL_TIME_LIMIT,
};
use super::stats::{summarize, Summary};
use crate::config::ExperimentConfig;
use crate::control::Direction;
use crate::overlay::{EgressConfig, NodeId};
use crate::runtime::{Sim, World};
use crate::session::{bootstrap_with_plan, transfer, RelayPlan, SessionError, System, TransferResult};
use crate::time::duration_nanos;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

/// Runs `f` over `items` on up to `jobs` threads. Results keep input order;
/// the first error in input order wins.
pub fn par_map<I, T, E, F>(items: &[I], jobs: usize, f: F) -> Result<Vec<T>, E>
where
    I: Sync,
    T: Send,
    E: Send,
    F: Fn(&I) -> Result<T, E> + Sync,
{
    let slots: Vec<Mutex<Option<Result<T, E>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("slot lock") = Some(f(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

fn ms(d: Duration) -> f64 {
    duration_nanos(d) as f64 / 1e6
}

/// One line of `compare.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub system: String,
    pub size_bytes: u64,
    pub metric: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    /// Every run behind the rows; kept out of the written report.
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
}

impl CompareReport {
    pub fn row(&self, system: &str, size: u64, metric: &str) -> Option<&Summary> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.size_bytes == size && r.metric == metric)
            .map(|r| &r.summary)
    }

    pub fn runs_of(&self, system: System, size: u64) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.system == system && r.size_bytes == size)
    }
}

/// Kilobytes (10^3) per second.
pub fn throughput_kbs(t: &TransferResult) -> f64 {
    let s = t.transfer_time.as_secs_f64();
    if s == 0.0 {
        0.0
    } else {
        t.data_len as f64 / 1e3 / s
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

fn system_rows(size: u64, system: System, runs: &[&RunRecord]) -> Vec<CompareRow> {
    let col = |f: &dyn Fn(&RunRecord) -> f64| summarize(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
    let delays: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.transfer.per_packet_delays.iter().map(|d| ms(*d)))
        .collect();
    let metrics = [
        ("bootstrap_ms", col(&|r| ms(r.bootstrap_time))),
        ("per_packet_delay_ms", summarize(&delays)),
        ("transfer_time_ms", col(&|r| ms(r.transfer.transfer_time))),
        ("throughput_kb_s", col(&|r| throughput_kbs(&r.transfer))),
        ("overhead_bytes", col(&|r| r.transfer.bytes_on_wire as f64)),
        ("loss_pct", col(&|r| 100.0 * r.transfer.loss_fraction())),
        ("retx_packets", col(&|r| r.transfer.packets_retx as f64)),
    ];
    metrics
        .into_iter()
        .map(|(m, summary)| CompareRow {
            system: system.to_string(),
            size_bytes: size,
            metric: m.to_string(),
            summary,
        })
        .collect()
}

/// Per-seed ratios between the two systems at one size.
fn derived_rows(size: u64, dh: &[&RunRecord], va: &[&RunRecord]) -> Vec<CompareRow> {
    let pairs: Vec<(&RunRecord, &RunRecord)> = dh.iter().copied().zip(va.iter().copied()).collect();
    let col =
        |f: &dyn Fn(&RunRecord, &RunRecord) -> f64| summarize(&pairs.iter().map(|(d, v)| f(d, v)).collect::<Vec<_>>());
    let metrics = [
        (
            "speedup",
            col(&|d, v| ratio(ms(v.transfer.transfer_time), ms(d.transfer.transfer_time))),
        ),
        (
            "overhead_reduction_pct",
            col(&|d, v| 100.0 * (1.0 - ratio(d.transfer.bytes_on_wire as f64, v.transfer.bytes_on_wire as f64))),
        ),
        (
            "delay_reduction_pct",
            col(&|d, v| {
                let med = |r: &RunRecord| {
                    summarize(&r.transfer.per_packet_delays.iter().map(|x| ms(*x)).collect::<Vec<_>>()).median
                };
                100.0 * (1.0 - ratio(med(d), med(v)))
            }),
        ),
        (
            "bootstrap_ratio",
            col(&|d, v| ratio(ms(d.bootstrap_time), ms(v.bootstrap_time))),
        ),
    ];
    metrics
        .into_iter()
        .map(|(m, summary)| CompareRow {
            system: "derived".to_string(),
            size_bytes: size,
            metric: m.to_string(),
            summary,
        })
        .collect()
}

/// Both systems over every configured size and seed.
pub fn compare_run(cfg: &ExperimentConfig, jobs: usize) -> Result<CompareReport, RunError> {
    let seeds = cfg.seed_list();
    let mut work = Vec::new();
    for size in &cfg.sizes {
        for system in [System::Darkhorse, System::Vanilla] {
            for &seed in &seeds {
                work.push((system, size.0, seed));
            }
        }
    }
    let runs = par_map(&work, jobs, |&(system, size, seed)| run_system(system, cfg, seed, size))?;
    let mut rows = Vec::new();
    for size in &cfg.sizes {
        let pick = |s: System| -> Vec<&RunRecord> {
            runs.iter()
                .filter(|r| r.system == s && r.size_bytes == size.0)
                .collect()
        };
        let (dh, va) = (pick(System::Darkhorse), pick(System::Vanilla));
        rows.extend(system_rows(size.0, System::Darkhorse, &dh));
        rows.extend(system_rows(size.0, System::Vanilla, &va));
        rows.extend(derived_rows(size.0, &dh, &va));
    }
    Ok(CompareReport {
        config: cfg.clone(),
        seeds,
        rows,
        runs,
    })
}

/// One line of `bootstrap.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub system: String,
    pub metric: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub rows: Vec<BootstrapRow>,
    /// Per seed: (DarkHorse bootstrap, vanilla open), in nanoseconds.
    pub samples_ns: Vec<(u64, u64)>,
}

pub fn bootstrap_bench(cfg: &ExperimentConfig, jobs: usize) -> Result<BootstrapReport, RunError> {
    let seeds = cfg.seed_list();
    let pairs = par_map(&seeds, jobs, |&s| super::run::bootstrap_pair(cfg, s))?;
    let dh: Vec<f64> = pairs.iter().map(|p| ms(p.0)).collect();
    let va: Vec<f64> = pairs.iter().map(|p| ms(p.1)).collect();
    let ratios: Vec<f64> = pairs.iter().map(|p| ratio(ms(p.0), ms(p.1))).collect();
    let row = |system: &str, metric: &str, xs: &[f64]| BootstrapRow {
        system: system.to_string(),
        metric: metric.to_string(),
        summary: summarize(xs),
    };
    Ok(BootstrapReport {
        config: cfg.clone(),
        seeds,
        rows: vec![
            row("darkhorse", "bootstrap_ms", &dh),
            row("vanilla", "bootstrap_ms", &va),
            row("derived", "bootstrap_ratio", &ratios),
        ],
        samples_ns: pairs
            .iter()
            .map(|p| (duration_nanos(p.0), duration_nanos(p.1)))
            .collect(),
    })
}

/// One sweep point, over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_clients: usize,
    /// Data-channel loss before recovery, pooled over a run's clients.
    pub loss_pct: Summary,
    /// Median client transfer time of a run.
    pub transfer_time_ms: Summary,
    /// Per seed, in seed order.
    pub loss_pct_by_seed: Vec<f64>,
    pub transfer_time_ms_by_seed: Vec<f64>,
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_clients: usize,
    pub metric: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .flat_map(|p| {
                [("loss_pct", p.loss_pct), ("transfer_time_ms", p.transfer_time_ms)].map(|(m, summary)| SweepRow {
                    n_clients: p.n_clients,
                    metric: m.to_string(),
                    summary,
                })
            })
            .collect()
    }
}

/// Result of one contention run: every client's transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentionRun {
    pub n_clients: usize,
    pub seed: u64,
    pub transfers: Vec<TransferResult>,
}

impl ContentionRun {
    pub fn loss_pct(&self) -> f64 {
        let sent: u64 = self.transfers.iter().map(|t| t.packets_sent).sum();
        let lost: u64 = self.transfers.iter().map(|t| t.packets_lost).sum();
        if sent == 0 {
            0.0
        } else {
            100.0 * lost as f64 / sent as f64
        }
    }

    pub fn median_transfer_ms(&self) -> f64 {
        summarize(&self.transfers.iter().map(|t| ms(t.transfer_time)).collect::<Vec<_>>()).median
    }
}

/// `n` clients, each downloading `cfg.sweep.size` from one server. All
/// data paths cross the same six relays; control channels use a pool.
pub fn contention_run(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<ContentionRun, RunError> {
    let sw = &cfg.sweep;
    let mut w = World::new(fabric_config(cfg, seed), world_params(cfg, seed))?;
    let host = EgressConfig {
        bandwidth: cfg.fabric.host_bandwidth,
        queue_limit: cfg.fabric.queue_limit(),
    };
    let server = w.add_host(host)?;
    let clients = (0..n).map(|_| w.add_host(host)).collect::<Result<Vec<_>, _>>()?;
    let pool = add_relays(&mut w, cfg, seed, sw.control_relays)?;
    let shared_egress = EgressConfig {
        bandwidth: sw.shared_relay_bandwidth,
        queue_limit: sw
            .shared_queue_limit_ms
            .map(|m| Duration::from_nanos((m * 1e6).round() as u64)),
    };
    let shared = (0..6)
        .map(|_| w.add_relay(shared_egress))
        .collect::<Result<Vec<NodeId>, _>>()?;
    let mut sim = Sim::new(w);
    sim.set_time_limit(Some(VIRTUAL_TIME_LIMIT));
    let h = sim.handle();

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_SWEEP));
    let spread = Duration::from_nanos((sw.start_spread_ms * 1e6).round() as u64);
    let size = sw.size.0;
    let mut tasks = Vec::with_capacity(n);
    for (i, &client) in clients.iter().enumerate() {
        let ctrl: Vec<NodeId> = pool.choose_multiple(&mut rng, 6).copied().collect();
        let plan = RelayPlan {
            ctrl_client: ctrl[..3].to_vec(),
            ctrl_server: ctrl[3..].to_vec(),
            s2c: shared[..3].to_vec(),
            c2s: shared[3..].to_vec(),
        };
        let offset = if spread.is_zero() {
            Duration::ZERO
        } else {
            rng.gen_range(Duration::ZERO..spread)
        };
        let mut scfg = session_config(cfg, seed);
        scfg.seed = sub_seed(scfg.seed, i as u64);
        let data = payload(sub_seed(seed, i as u64), size);
        let h2 = h.clone();
        tasks.push(h.spawn(async move {
            h2.sleep(offset).await;
            let mut sess = bootstrap_with_plan(&h2, client, server, plan, &scfg).await?;
            let r = transfer(&h2, &mut sess, Direction::S2c, &data).await?;
            sess.close(&h2);
            Ok::<_, SessionError>(r)
        }));
    }
    let transfers = sim.run(async move {
        let mut out = Vec::with_capacity(tasks.len());
        for t in tasks {
            out.push(t.await?);
        }
        Ok::<_, SessionError>(out)
    })??;
    Ok(ContentionRun {
        n_clients: n,
        seed,
        transfers,
    })
}

pub fn concurrency_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepReport, RunError> {
    let seeds = cfg.seed_list();
    let work: Vec<(usize, u64)> = cfg
        .sweep
        .n_clients
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let runs = par_map(&work, jobs, |&(n, s)| contention_run(cfg, n, s))?;
    let points = cfg
        .sweep
        .n_clients
        .iter()
        .map(|&n| {
            let of_n: Vec<&ContentionRun> = runs.iter().filter(|r| r.n_clients == n).collect();
            let loss: Vec<f64> = of_n.iter().map(|r| r.loss_pct()).collect();
            let tt: Vec<f64> = of_n.iter().map(|r| r.median_transfer_ms()).collect();
            SweepPoint {
                n_clients: n,
                loss_pct: summarize(&loss),
                transfer_time_ms: summarize(&tt),
                loss_pct_by_seed: loss,
                transfer_time_ms_by_seed: tt,
            }
        })
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        seeds,
        points,
    })
}
