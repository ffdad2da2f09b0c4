//! Real-UDP loopback transport.
//!
//! Unprivileged sockets cannot forge source IPs, so each UDP payload starts
//! with an 8-byte preamble carrying the overlay address pair
//! (`src.node | src.port | dst.node | dst.port`, big-endian u16s).

use super::{Datagram, NodeId, OverlayAddress};
use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

pub const PREAMBLE_LEN: usize = 8;

pub fn encode_preamble(d: &Datagram) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE_LEN + d.payload.len());
    out.extend_from_slice(&d.src.to_bytes());
    out.extend_from_slice(&d.dst.to_bytes());
    out.extend_from_slice(&d.payload);
    out
}

pub fn decode_preamble(buf: &[u8]) -> Option<Datagram> {
    if buf.len() < PREAMBLE_LEN {
        return None;
    }
    let src = OverlayAddress::from_bytes(&buf[0..4])?;
    let dst = OverlayAddress::from_bytes(&buf[4..8])?;
    Some(Datagram::new(src, dst, buf[PREAMBLE_LEN..].to_vec()))
}

/// One endpoint bound to 127.0.0.1. Peers are looked up by overlay node index.
#[derive(Debug)]
pub struct UdpEndpoint {
    node: NodeId,
    socket: UdpSocket,
    peers: HashMap<NodeId, SocketAddr>,
}

impl UdpEndpoint {
    pub fn bind(node: NodeId) -> io::Result<Self> {
        let socket = UdpSocket::bind("127.0.0.1:0")?;
        Ok(UdpEndpoint {
            node,
            socket,
            peers: HashMap::new(),
        })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn add_peer(&mut self, node: NodeId, addr: SocketAddr) {
        self.peers.insert(node, addr);
    }

    /// Sends `d` to the socket registered for `d.dst`. Returns `Ok(false)`
    /// when the destination is unknown (dropped, like the simulated fabric).
    pub fn send(&self, d: &Datagram) -> io::Result<bool> {
        let Some(peer) = self.peers.get(&d.dst.node()) else {
            return Ok(false);
        };
        self.socket.send_to(&encode_preamble(d), peer)?;
        Ok(true)
    }

    pub fn recv(&self, timeout: Duration) -> io::Result<Datagram> {
        self.socket.set_read_timeout(Some(timeout))?;
        let mut buf = [0u8; 65_536];
        loop {
            let (n, _) = self.socket.recv_from(&mut buf)?;
            if let Some(d) = decode_preamble(&buf[..n]) {
                return Ok(d);
            }
        }
    }

    pub fn try_clone(&self) -> io::Result<Self> {
        Ok(UdpEndpoint {
            node: self.node,
            socket: self.socket.try_clone()?,
            peers: self.peers.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spoofed_source_survives_loopback() {
        let mut a = UdpEndpoint::bind(NodeId(1)).unwrap();
        let b = UdpEndpoint::bind(NodeId(2)).unwrap();
        a.add_peer(NodeId(2), b.local_addr().unwrap());
        let temp = OverlayAddress::new(0xf123, 0);
        let d = Datagram::new(temp, OverlayAddress::new(2, 5), b"hi".to_vec());
        assert!(a.send(&d).unwrap());
        let got = b.recv(Duration::from_secs(2)).unwrap();
        assert_eq!(got.src, temp);
        assert_eq!(got.dst, OverlayAddress::new(2, 5));
        assert_eq!(got.payload, b"hi");
        let unknown = Datagram::new(temp, OverlayAddress::new(9, 0), vec![]);
        assert!(!a.send(&unknown).unwrap());
    }

    #[test]
    fn concurrent_receives() {
        let mut tx = UdpEndpoint::bind(NodeId(1)).unwrap();
        let rx = UdpEndpoint::bind(NodeId(2)).unwrap();
        tx.add_peer(NodeId(2), rx.local_addr().unwrap());
        let rx2 = rx.try_clone().unwrap();
        let handles: Vec<_> = [rx, rx2]
            .into_iter()
            .map(|r| std::thread::spawn(move || r.recv(Duration::from_secs(2)).map(|d| d.payload)))
            .collect();
        for i in 0..2u8 {
            tx.send(&Datagram::new(
                OverlayAddress::new(1, 0),
                OverlayAddress::new(2, 0),
                vec![i],
            ))
            .unwrap();
        }
        let mut got: Vec<u8> = handles.into_iter().map(|h| h.join().unwrap().unwrap()[0]).collect();
        got.sort();
        assert_eq!(got, vec![0, 1]);
    }
}
