//! Unidirectional data channels and the packet-level transfer machinery.

pub mod channel;
pub mod pacing;
pub mod packet;
pub mod recv;

pub use channel::{
    allocate_temp, build_data_path, data_key, BindError, Binding, BindingTable, ChannelHandle, DataEvent, DataReceiver,
    DataSender,
};
pub use pacing::Pacer;
pub use packet::{metadata_for, packetize, DataPacket, PacketizeError, DEFAULT_CHUNK_SIZE, DEFAULT_SEQ_BYTES};
pub use recv::{Accept, Incomplete, ReceiveState};
