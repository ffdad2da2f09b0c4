use super::OverlayAddress;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Which logical channel a datagram belongs to. Simulation metadata only:
/// never serialized onto the wire, used to tag trace rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelTag {
    Control,
    Data,
    Setup,
    Other,
}

impl fmt::Display for ChannelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelTag::Control => "control",
            ChannelTag::Data => "data",
            ChannelTag::Setup => "setup",
            ChannelTag::Other => "other",
        })
    }
}

/// An unreliable overlay message. `src` is whatever the sender stamped on it;
/// the fabric never checks it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub src: OverlayAddress,
    pub dst: OverlayAddress,
    pub payload: Vec<u8>,
    pub send_time: SimTime,
    pub channel: ChannelTag,
}

impl Datagram {
    pub fn new(src: OverlayAddress, dst: OverlayAddress, payload: Vec<u8>) -> Self {
        Datagram {
            src,
            dst,
            payload,
            send_time: SimTime::ZERO,
            channel: ChannelTag::Other,
        }
    }

    pub fn with_channel(mut self, channel: ChannelTag) -> Self {
        self.channel = channel;
        self
    }
}
