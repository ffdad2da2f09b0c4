//! Temporary source addresses for data-channel senders.
//!
//! Both ways of hiding a sender reduce to the same thing here: an address drawn
//! from a reserved range that no registered node owns, so nothing can be routed
//! back to it. `SpoofRandom` draws uniformly among free addresses, `MtdPool`
//! hands them out in pool order.

use super::OverlayAddress;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TempAddrMode {
    #[default]
    SpoofRandom,
    MtdPool,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("temporary address pool exhausted ({size} addresses)")]
    Exhausted { size: u32 },
}

/// Reserved index range `[start, start + size)`; every address uses `port`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempPoolRange {
    pub start: u16,
    pub size: u16,
    pub port: u16,
}

impl Default for TempPoolRange {
    fn default() -> Self {
        TempPoolRange {
            start: 0xf000,
            size: 0x0fff,
            port: 0,
        }
    }
}

impl TempPoolRange {
    pub fn contains(&self, addr: OverlayAddress) -> bool {
        let end = self.start as u32 + self.size as u32;
        (self.start as u32..end).contains(&(addr.node_index as u32))
    }
}

#[derive(Debug, Clone)]
pub struct TempAddressPool {
    range: TempPoolRange,
    mode: TempAddrMode,
    allocated: BTreeSet<u16>,
    cursor: u16,
}

impl TempAddressPool {
    pub fn new(range: TempPoolRange, mode: TempAddrMode) -> Self {
        TempAddressPool {
            range,
            mode,
            allocated: BTreeSet::new(),
            cursor: 0,
        }
    }

    pub fn range(&self) -> TempPoolRange {
        self.range
    }

    pub fn allocated(&self) -> usize {
        self.allocated.len()
    }

    pub fn is_allocated(&self, addr: OverlayAddress) -> bool {
        self.range.contains(addr) && self.allocated.contains(&(addr.node_index - self.range.start))
    }

    /// Returns an address never handed out before by this pool.
    pub fn allocate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<OverlayAddress, AllocError> {
        let size = self.range.size;
        if self.allocated.len() >= size as usize {
            return Err(AllocError::Exhausted { size: size as u32 });
        }
        let offset = match self.mode {
            TempAddrMode::MtdPool => {
                while self.allocated.contains(&self.cursor) {
                    self.cursor += 1;
                }
                self.cursor
            }
            TempAddrMode::SpoofRandom => {
                // k-th free offset, k uniform over the free count
                let free = size as usize - self.allocated.len();
                let mut k = rng.gen_range(0..free);
                let mut off = 0u16;
                loop {
                    if !self.allocated.contains(&off) {
                        if k == 0 {
                            break off;
                        }
                        k -= 1;
                    }
                    off += 1;
                }
            }
        };
        self.allocated.insert(offset);
        Ok(OverlayAddress::new(self.range.start + offset, self.range.port))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn size_one_pool_exhausts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [TempAddrMode::SpoofRandom, TempAddrMode::MtdPool] {
            let range = TempPoolRange {
                start: 100,
                size: 1,
                port: 7,
            };
            let mut pool = TempAddressPool::new(range, mode);
            assert_eq!(pool.allocate(&mut rng), Ok(OverlayAddress::new(100, 7)));
            assert_eq!(pool.allocate(&mut rng), Err(AllocError::Exhausted { size: 1 }));
        }
    }

    #[test]
    fn mtd_pool_is_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let range = TempPoolRange {
            start: 10,
            size: 4,
            port: 0,
        };
        let mut pool = TempAddressPool::new(range, TempAddrMode::MtdPool);
        let got: Vec<u16> = (0..4).map(|_| pool.allocate(&mut rng).unwrap().node_index).collect();
        assert_eq!(got, vec![10, 11, 12, 13]);
    }

    #[test]
    fn random_draws_are_distinct_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let range = TempPoolRange {
            start: 500,
            size: 256,
            port: 0,
        };
        let mut pool = TempAddressPool::new(range, TempAddrMode::SpoofRandom);
        let all: BTreeSet<_> = (0..256).map(|_| pool.allocate(&mut rng).unwrap()).collect();
        assert_eq!(all.len(), 256);
        assert!(all.iter().all(|a| range.contains(*a)));
        assert!(pool.allocate(&mut rng).is_err());
    }
}
