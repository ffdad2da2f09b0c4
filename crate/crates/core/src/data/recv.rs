use crate::control::Metadata;
use crate::time::SimTime;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    New,
    Duplicate,
    OutOfRange,
    BadLength,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transfer incomplete: {missing} packets missing")]
pub struct Incomplete {
    pub missing: u32,
}

/// Receiver-side bookkeeping for one transfer.
#[derive(Debug, Clone)]
pub struct ReceiveState {
    pub transfer_id: u32,
    pub metadata: Metadata,
    bitmap: Vec<u64>,
    data: Vec<u8>,
    count: u32,
    pub completed_at: Option<SimTime>,
}

impl ReceiveState {
    pub fn new(metadata: Metadata) -> Self {
        let total = metadata.total_packets as usize;
        ReceiveState {
            transfer_id: metadata.transfer_id,
            metadata,
            bitmap: vec![0; total.div_ceil(64)],
            data: vec![0; total * metadata.chunk_size as usize],
            count: 0,
            completed_at: None,
        }
    }

    pub fn has(&self, seq: u32) -> bool {
        let s = seq as usize;
        s < self.metadata.total_packets as usize && self.bitmap[s / 64] & (1 << (s % 64)) != 0
    }

    /// Stores `chunk` for `seq` unless already present.
    pub fn accept(&mut self, seq: u32, chunk: &[u8], at: SimTime) -> Accept {
        if seq >= self.metadata.total_packets {
            return Accept::OutOfRange;
        }
        if chunk.len() != self.metadata.chunk_size as usize {
            return Accept::BadLength;
        }
        if self.has(seq) {
            return Accept::Duplicate;
        }
        let s = seq as usize;
        self.bitmap[s / 64] |= 1 << (s % 64);
        let cs = self.metadata.chunk_size as usize;
        self.data[s * cs..(s + 1) * cs].copy_from_slice(chunk);
        self.count += 1;
        if self.is_complete() {
            self.completed_at = Some(at);
        }
        Accept::New
    }

    pub fn received(&self) -> u32 {
        self.count
    }

    pub fn is_complete(&self) -> bool {
        self.count == self.metadata.total_packets
    }

    /// Every seq in `0..total_packets` not yet received, ascending.
    pub fn compute_missing(&self) -> Vec<u32> {
        (0..self.metadata.total_packets).filter(|&s| !self.has(s)).collect()
    }

    pub fn reassemble(&self) -> Result<Vec<u8>, Incomplete> {
        if !self.is_complete() {
            return Err(Incomplete {
                missing: self.metadata.total_packets - self.count,
            });
        }
        Ok(self.data[..self.metadata.data_len as usize].to_vec())
    }
}
