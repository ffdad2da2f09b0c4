//! Session orchestration: bootstrap, transfers, and the vanilla baseline.

mod bootstrap;
mod config;
mod transfer;
mod vanilla;

pub use bootstrap::{
    bootstrap, bootstrap_with_plan, plan_relays, vanilla_open, Peer, RelayPlan, Session, SessionState, VanillaSession,
    DATA_PATH_LEN,
};
pub use config::{RequestMode, RetransmitMode, RetransmitPolicy, SessionConfig};
pub use transfer::{on_wire_packet_size, transfer, System, TransferResult};
pub use vanilla::vanilla_transfer;

use crate::control::{ControlError, MessageError};
use crate::data::{BindError, PacketizeError};
use crate::overlay::FabricError;
use crate::path::BuildError;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ControlChannel,
    DataPath,
    Binding,
    Transfer,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ControlChannel => "control-channel",
            Stage::DataPath => "data-path",
            Stage::Binding => "binding",
            Stage::Transfer => "transfer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FailureKind {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Packetize(#[from] PacketizeError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {kind}")]
pub struct SessionError {
    pub stage: Stage,
    pub kind: FailureKind,
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, SessionError>;
}

impl<T, E: Into<FailureKind>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, SessionError> {
        self.map_err(|e| SessionError { stage, kind: e.into() })
    }
}

#[cfg(test)]
mod tests;
