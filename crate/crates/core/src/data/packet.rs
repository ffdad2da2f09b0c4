use crate::control::Metadata;
use thiserror::Error;

pub const DEFAULT_CHUNK_SIZE: u32 = 1024;
pub const DEFAULT_SEQ_BYTES: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketizeError {
    #[error("nothing to send")]
    Empty,
    #[error("chunk size must be at least 1")]
    ZeroChunk,
    #[error("seq_bytes must be 1..=4, got {0}")]
    BadSeqBytes(u8),
    #[error("{packets} packets do not fit in a {seq_bytes}-byte sequence number")]
    SeqSpace { packets: u64, seq_bytes: u8 },
}

/// `seq | chunk`, the plaintext of one data packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPacket {
    pub seq: u32,
    pub chunk: Vec<u8>,
}

impl DataPacket {
    pub fn encode(&self, seq_bytes: u8) -> Vec<u8> {
        let mut b = Vec::with_capacity(seq_bytes as usize + self.chunk.len());
        b.extend_from_slice(&self.seq.to_be_bytes()[4 - seq_bytes as usize..]);
        b.extend_from_slice(&self.chunk);
        b
    }

    pub fn decode(b: &[u8], seq_bytes: u8) -> Option<Self> {
        let n = seq_bytes as usize;
        if !(1..=4).contains(&n) || b.len() < n {
            return None;
        }
        let mut s = [0u8; 4];
        s[4 - n..].copy_from_slice(&b[..n]);
        Some(DataPacket {
            seq: u32::from_be_bytes(s),
            chunk: b[n..].to_vec(),
        })
    }
}

/// Packet layout for `data_len` bytes.
pub fn metadata_for(
    transfer_id: u32,
    data_len: u64,
    chunk_size: u32,
    seq_bytes: u8,
) -> Result<Metadata, PacketizeError> {
    if data_len == 0 {
        return Err(PacketizeError::Empty);
    }
    if chunk_size == 0 {
        return Err(PacketizeError::ZeroChunk);
    }
    if !(1..=4).contains(&seq_bytes) {
        return Err(PacketizeError::BadSeqBytes(seq_bytes));
    }
    let total = data_len.div_ceil(u64::from(chunk_size));
    if total > 1u64 << (8 * u32::from(seq_bytes)) {
        return Err(PacketizeError::SeqSpace {
            packets: total,
            seq_bytes,
        });
    }
    Ok(Metadata {
        transfer_id,
        total_packets: total as u32,
        packet_size: u32::from(seq_bytes) + chunk_size,
        seq_bytes,
        chunk_size,
        data_len,
    })
}

/// Splits `data` into fixed-size packets; the last chunk is zero-padded.
pub fn packetize(
    transfer_id: u32,
    data: &[u8],
    chunk_size: u32,
    seq_bytes: u8,
) -> Result<(Metadata, Vec<DataPacket>), PacketizeError> {
    let meta = metadata_for(transfer_id, data.len() as u64, chunk_size, seq_bytes)?;
    let packets = data
        .chunks(chunk_size as usize)
        .enumerate()
        .map(|(i, c)| {
            let mut chunk = c.to_vec();
            chunk.resize(chunk_size as usize, 0);
            DataPacket { seq: i as u32, chunk }
        })
        .collect();
    Ok((meta, packets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_bytes_in_chunks_of_four() {
        let (m, p) = packetize(0, b"0123456789", 4, 4).unwrap();
        assert_eq!(m.total_packets, 3);
        assert_eq!(m.data_len, 10);
        assert_eq!(p[2].chunk, b"89\0\0");
        assert!(p.iter().all(|x| x.encode(4).len() == 8));
    }

    #[test]
    fn one_mib_metadata() {
        let data = vec![1u8; 1 << 20];
        let (m, p) = packetize(5, &data, 1024, 4).unwrap();
        assert_eq!(p.len(), 1024);
        assert_eq!(
            m,
            Metadata {
                transfer_id: 5,
                total_packets: 1024,
                packet_size: 1028,
                seq_bytes: 4,
                chunk_size: 1024,
                data_len: 1 << 20,
            }
        );
        assert!(m.validate().is_ok());
    }

    #[test]
    fn seq_space_and_argument_errors() {
        assert_eq!(packetize(0, &[0; 256], 1, 1).map(|x| x.1.len()), Ok(256));
        assert_eq!(
            packetize(0, &[0; 257], 1, 1).unwrap_err(),
            PacketizeError::SeqSpace {
                packets: 257,
                seq_bytes: 1
            }
        );
        assert_eq!(packetize(0, &[], 4, 4).unwrap_err(), PacketizeError::Empty);
        assert_eq!(packetize(0, &[1], 0, 4).unwrap_err(), PacketizeError::ZeroChunk);
        assert_eq!(packetize(0, &[1], 1, 5).unwrap_err(), PacketizeError::BadSeqBytes(5));
    }

    #[test]
    fn packet_codec() {
        let p = DataPacket {
            seq: 0x0102,
            chunk: vec![9, 9],
        };
        assert_eq!(p.encode(2), vec![1, 2, 9, 9]);
        assert_eq!(DataPacket::decode(&p.encode(2), 2), Some(p.clone()));
        assert_eq!(DataPacket::decode(&p.encode(4), 4), Some(p));
    }
}
