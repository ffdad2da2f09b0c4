//! Relays: circuit table, layer processing, and the reliable per-hop link.

pub mod arq;
pub mod circuit;
pub mod node;
pub mod wire;

pub use arq::{HopEndpoint, HopFailure, HopFrame, HopOut, HopParams, HopState, HopStats};
pub use circuit::{CircuitEntry, CircuitTable, TableCounters};
pub use node::{Relay, RelayConfig, RelayIo, RelayStats};
pub use wire::{Link, LinkMode};

use std::io::Write;

/// Writes `relay_id,forwarded,unknown_circuit,integrity_fail,bytes_in,bytes_out`.
pub fn write_relay_stats_csv<W: Write>(rows: &[(crate::overlay::NodeId, RelayStats)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "relay_id",
        "forwarded",
        "unknown_circuit",
        "integrity_fail",
        "bytes_in",
        "bytes_out",
    ])?;
    for (id, s) in rows {
        w.write_record([
            id.to_string(),
            s.forwarded.to_string(),
            s.unknown_circuit.to_string(),
            s.integrity_fail.to_string(),
            s.bytes_in.to_string(),
            s.bytes_out.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
