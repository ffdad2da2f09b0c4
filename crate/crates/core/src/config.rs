//! Experiment configuration files (TOML).
//!
//! Times are given in milliseconds (`*_ms`) or microseconds (`*_us`);
//! bandwidths in bytes per second; sizes as integers or strings with a
//! `B`, `KiB`, `MiB` or `GiB` suffix.

use crate::crypto::CipherSuite;
use crate::overlay::{TempAddrMode, TempPoolRange};
use crate::relay::{HopParams, RelayConfig};
use crate::session::SessionConfig;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;
use thiserror::Error;

/// A byte count that reads `"4MiB"` as well as `4194304`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ByteSize(pub u64);

impl FromStr for ByteSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
        let (num, unit) = t.split_at(split);
        let n: u64 = num.parse().map_err(|_| format!("bad size {s:?}"))?;
        let mult = match unit.trim() {
            "" | "B" => 1,
            "KiB" => 1 << 10,
            "MiB" => 1 << 20,
            "GiB" => 1 << 30,
            u => return Err(format!("unknown size unit {u:?} in {s:?}")),
        };
        n.checked_mul(mult)
            .map(ByteSize)
            .ok_or_else(|| format!("size {s:?} overflows"))
    }
}

impl fmt::Display for ByteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0;
        for (unit, m) in [("GiB", 1u64 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)] {
            if n >= m && n.is_multiple_of(m) {
                return write!(f, "{}{unit}", n / m);
            }
        }
        write!(f, "{n}B")
    }
}

impl Serialize for ByteSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ByteSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(ByteSize(n)),
            Raw::S(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

fn ms(x: f64) -> Duration {
    Duration::from_secs_f64(x.max(0.0) / 1e3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricSection {
    /// Latency of every link without an explicit override.
    pub latency_ms: f64,
    /// When set, each node pair gets a fixed latency drawn from this range.
    pub latency_spread_ms: Option<(f64, f64)>,
    /// Per-link cap, 0 = unlimited.
    pub link_bandwidth: u64,
    /// Per-relay egress bandwidth, drawn uniformly per relay from this range.
    pub relay_bandwidth: Option<(u64, u64)>,
    pub host_bandwidth: u64,
    /// Drop-tail limit on egress queueing delay.
    pub queue_limit_ms: Option<f64>,
    pub temp_mode: TempAddrMode,
    pub trace: bool,
}

impl Default for FabricSection {
    fn default() -> Self {
        FabricSection {
            latency_ms: 20.0,
            latency_spread_ms: None,
            link_bandwidth: 0,
            relay_bandwidth: None,
            host_bandwidth: 0,
            queue_limit_ms: None,
            temp_mode: TempAddrMode::default(),
            trace: false,
        }
    }
}

impl FabricSection {
    pub fn latency(&self) -> Duration {
        ms(self.latency_ms)
    }

    pub fn queue_limit(&self) -> Option<Duration> {
        self.queue_limit_ms.map(ms)
    }

    pub fn temp_pool(&self) -> TempPoolRange {
        TempPoolRange::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// End-to-end loss on each data path, spread evenly over its links.
    pub data_loss: f64,
    /// Per-link loss on every other link.
    pub link_loss: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            data_loss: 0.0,
            link_loss: 0.0,
        }
    }
}

impl LossSection {
    /// Per-link loss that compounds to `data_loss` over `links` links.
    pub fn per_data_link(&self, links: usize) -> f64 {
        1.0 - (1.0 - self.data_loss.clamp(0.0, 1.0)).powf(1.0 / links as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaySection {
    pub crypto_cost_per_layer_us: f64,
    pub create_cost_us: f64,
    pub idle_timeout_ms: f64,
}

impl Default for RelaySection {
    fn default() -> Self {
        let d = RelayConfig::default();
        RelaySection {
            crypto_cost_per_layer_us: 0.0,
            create_cost_us: 0.0,
            idle_timeout_ms: d.idle_timeout.as_secs_f64() * 1e3,
        }
    }
}

impl RelaySection {
    pub fn to_config(&self) -> RelayConfig {
        RelayConfig {
            crypto_cost_per_layer: ms(self.crypto_cost_per_layer_us / 1e3),
            create_cost: ms(self.create_cost_us / 1e3),
            idle_timeout: ms(self.idle_timeout_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopSection {
    pub window: u32,
    pub rto_ms: f64,
    pub max_retries: u32,
    pub handshake_rtts: u32,
}

impl Default for HopSection {
    fn default() -> Self {
        let d = HopParams::default();
        HopSection {
            window: d.window,
            rto_ms: d.rto.as_secs_f64() * 1e3,
            max_retries: d.max_retries,
            handshake_rtts: d.handshake_rtts,
        }
    }
}

impl HopSection {
    pub fn to_params(&self) -> HopParams {
        HopParams {
            window: self.window,
            rto: ms(self.rto_ms),
            max_retries: self.max_retries,
            handshake_rtts: self.handshake_rtts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_clients: Vec<usize>,
    /// Data each client downloads.
    pub size: ByteSize,
    /// Client transfers start uniformly within this window.
    pub start_spread_ms: f64,
    /// Relays available for control channels.
    pub control_relays: usize,
    /// Egress bandwidth of the shared data-path relays.
    pub shared_relay_bandwidth: u64,
    /// Drop-tail limit at the shared data-path relays.
    pub shared_queue_limit_ms: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            n_clients: vec![1, 10, 50, 100, 250, 500],
            size: ByteSize(256 << 10),
            start_spread_ms: 10_000.0,
            control_relays: 60,
            shared_relay_bandwidth: 0,
            shared_queue_limit_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// First seed; runs use `seed .. seed + seeds`.
    pub seed: u64,
    pub seeds: u64,
    pub sizes: Vec<ByteSize>,
    pub relays: usize,
    pub cipher: CipherSuite,
    pub fabric: FabricSection,
    pub loss: LossSection,
    pub relay: RelaySection,
    pub hop: HopSection,
    pub session: SessionConfig,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            seed: 1,
            seeds: 1,
            sizes: vec![ByteSize(1 << 20)],
            relays: 12,
            cipher: CipherSuite::default(),
            fabric: FabricSection::default(),
            loss: LossSection::default(),
            relay: RelaySection::default(),
            hop: HopSection::default(),
            session: SessionConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: path.to_owned(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        let s = &self.session;
        if s.n_client_relays == 0 || s.n_server_relays == 0 {
            return Err("relay counts must be at least 1".into());
        }
        if s.chunk_size == 0 || !(1..=4).contains(&s.seq_bytes) {
            return Err("chunk_size must be >= 1 and seq_bytes in 1..=4".into());
        }
        if s.retransmit.max_rounds == 0 && s.retransmit.mode == crate::session::RetransmitMode::DataChannel {
            return Err("data_channel recovery needs max_rounds >= 1".into());
        }
        for p in [self.loss.data_loss, self.loss.link_loss] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("loss {p} outside [0, 1]"));
            }
        }
        if self.seeds == 0 {
            return Err("seeds must be at least 1".into());
        }
        if self.sizes.iter().any(|b| b.0 == 0) {
            return Err("sizes must be non-zero".into());
        }
        if let Some((lo, hi)) = self.fabric.latency_spread_ms {
            if lo > hi || lo < 0.0 {
                return Err("latency_spread_ms must be an ordered non-negative range".into());
            }
        }
        if let Some((lo, hi)) = self.fabric.relay_bandwidth {
            if lo > hi {
                return Err("relay_bandwidth must be an ordered range".into());
            }
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seed..self.seed + self.seeds).collect()
    }
}

/// The shipped presets, by name.
pub mod presets {
    pub const DETERMINISTIC: &str = include_str!("../configs/deterministic.toml");
    pub const LOSSY: &str = include_str!("../configs/lossy.toml");
    pub const PAPER_LIKE: &str = include_str!("../configs/paper_like.toml");
    pub const CONTENTION: &str = include_str!("../configs/contention.toml");

    pub const ALL: [(&str, &str); 4] = [
        ("deterministic", DETERMINISTIC),
        ("lossy", LOSSY),
        ("paper-like", PAPER_LIKE),
        ("contention", CONTENTION),
    ];
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Option<Self> {
        presets::ALL
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text).expect("shipped presets parse"))
    }
}
