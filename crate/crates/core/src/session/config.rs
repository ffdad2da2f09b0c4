use crate::data::{DEFAULT_CHUNK_SIZE, DEFAULT_SEQ_BYTES};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    #[default]
    Control,
    /// One unreliable request on the data channel, re-sent once, then
    /// retried over the control channel.
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetransmitMode {
    DataChannel,
    ControlChannel,
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetransmitPolicy {
    pub mode: RetransmitMode,
    /// Data-channel retransmission rounds before giving up or falling back.
    pub max_rounds: u32,
}

impl Default for RetransmitPolicy {
    fn default() -> Self {
        RetransmitPolicy {
            mode: RetransmitMode::Hybrid,
            max_rounds: 3,
        }
    }
}

impl RetransmitPolicy {
    pub fn data_rounds(&self) -> u32 {
        match self.mode {
            RetransmitMode::ControlChannel => 0,
            _ => self.max_rounds,
        }
    }

    pub fn control_fallback(&self) -> bool {
        self.mode != RetransmitMode::DataChannel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Relays on the client's half of the control channel, rendezvous included.
    pub n_client_relays: usize,
    pub n_server_relays: usize,
    pub request_mode: RequestMode,
    pub retransmit: RetransmitPolicy,
    pub chunk_size: u32,
    pub seq_bytes: u8,
    /// Data-channel packets per second; `None` sends as fast as egress allows.
    pub pacing_pps: Option<f64>,
    pub pacing_burst: u32,
    /// Lets data-channel relays overlap the control channel's.
    pub allow_overlap: bool,
    /// Cells a stream sender keeps outstanding on its first hop.
    pub stream_window: usize,
    /// Baseline end-to-end window: packets sent but not yet acknowledged by
    /// the receiver. `None` leaves the stream limited only by its hops.
    pub e2e_window: Option<u32>,
    /// The baseline receiver acknowledges after this many new packets.
    pub ack_every: u32,
    /// Seeds relay selection, key material and introduction.
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            n_client_relays: 3,
            n_server_relays: 3,
            request_mode: RequestMode::Control,
            retransmit: RetransmitPolicy::default(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            seq_bytes: DEFAULT_SEQ_BYTES,
            pacing_pps: None,
            pacing_burst: 1,
            allow_overlap: false,
            stream_window: 32,
            e2e_window: None,
            ack_every: 16,
            seed: 0,
        }
    }
}

impl SessionConfig {
    /// Plaintext bytes per data packet (`seq | chunk`).
    pub fn packet_size(&self) -> usize {
        self.seq_bytes as usize + self.chunk_size as usize
    }
}
