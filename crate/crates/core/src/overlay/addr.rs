use serde::{Deserialize, Serialize};
use std::fmt;

/// Identity of a simulated host (relay, client, or server).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// An overlay-level address. Registered nodes own `node_index == NodeId`;
/// the temporary pool lives in a reserved index range no node may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OverlayAddress {
    pub node_index: u16,
    pub port: u16,
}

impl OverlayAddress {
    pub const WIRE_LEN: usize = 4;

    pub const fn new(node_index: u16, port: u16) -> Self {
        OverlayAddress { node_index, port }
    }

    pub fn of(node: NodeId, port: u16) -> Self {
        OverlayAddress::new(node.0, port)
    }

    pub fn node(self) -> NodeId {
        NodeId(self.node_index)
    }

    pub fn to_bytes(self) -> [u8; 4] {
        let n = self.node_index.to_be_bytes();
        let p = self.port.to_be_bytes();
        [n[0], n[1], p[0], p[1]]
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let b: &[u8; 4] = b.get(..4)?.try_into().ok()?;
        Some(OverlayAddress::new(
            u16::from_be_bytes([b[0], b[1]]),
            u16::from_be_bytes([b[2], b[3]]),
        ))
    }
}

impl fmt::Display for OverlayAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node_index, self.port)
    }
}
