use serde::{Deserialize, Serialize};

/// Inputs to the overhead metric: every packet, original or retransmitted,
/// counted once per relay it crosses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRecord {
    pub total_packets: u64,
    pub on_wire_packet_size: u64,
    pub relay_count: u64,
    pub retx_packets: u64,
    pub overhead_bytes: u64,
}

impl OverheadRecord {
    pub fn new(total_packets: u64, on_wire_packet_size: u64, relay_count: u64, retx_packets: u64) -> Self {
        OverheadRecord {
            total_packets,
            on_wire_packet_size,
            relay_count,
            retx_packets,
            overhead_bytes: compute_overhead(total_packets, on_wire_packet_size, relay_count, retx_packets),
        }
    }
}

pub fn compute_overhead(total_packets: u64, on_wire_packet_size: u64, relay_count: u64, retx_packets: u64) -> u64 {
    (total_packets + retx_packets) * on_wire_packet_size * relay_count
}
