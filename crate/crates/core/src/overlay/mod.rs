//! Addresses, datagrams, and the datagram fabric they travel over.

mod addr;
mod datagram;
pub mod fabric;
pub mod temp;
pub mod udp;

pub use addr::{NodeId, OverlayAddress};
pub use datagram::{ChannelTag, Datagram};
pub use fabric::{
    Advanced, EgressConfig, Event, Fabric, FabricConfig, FabricError, LinkConfig, LinkCounters, NodeCounters, Outcome,
    SendOutcome, TraceRow,
};
pub use temp::{AllocError, TempAddrMode, TempAddressPool, TempPoolRange};

use std::io::Write;

/// Writes trace rows as `time_ns,src,dst,bytes,outcome,channel`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_ns", "src", "dst", "bytes", "outcome", "channel"])?;
    for r in rows {
        w.write_record([
            r.time_ns.to_string(),
            r.src.clone(),
            r.dst.clone(),
            r.bytes.to_string(),
            r.outcome.to_string(),
            r.channel.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
