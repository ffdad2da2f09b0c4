use super::wire::Link;
use crate::crypto::{LayerDirection, SymmetricKey};
use crate::time::SimTime;
use std::collections::HashMap;
use std::time::Duration;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone)]
pub struct CircuitEntry {
    pub circuit_id: u32,
    pub key: SymmetricKey,
    /// False for a rendezvous join entry, which splices without a layer.
    pub layered: bool,
    pub toward_owner: Link,
    pub away: Option<Link>,
    pub direction: LayerDirection,
    pub created_at: SimTime,
    pub last_used: SimTime,
    /// Ephemeral key of the CREATE that installed this entry, to recognize
    /// retransmitted CREATEs.
    pub create_eph: [u8; 32],
    pub pending_extend: Option<Link>,
    /// Ephemeral key inside the EXTEND this relay acted on, so a retried
    /// EXTEND re-sends the same CREATE instead of failing.
    pub extend_eph: Option<[u8; 32]>,
    pub add_counter: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TableCounters {
    pub installed: u64,
    pub removed: u64,
    pub expired: u64,
}

#[derive(Debug, Default)]
pub struct CircuitTable {
    entries: HashMap<u32, CircuitEntry>,
    counters: TableCounters,
    idle_timeout: Option<Duration>,
    last_sweep: SimTime,
}

impl CircuitTable {
    pub fn new(idle_timeout: Option<Duration>) -> Self {
        CircuitTable {
            idle_timeout,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counters(&self) -> TableCounters {
        self.counters
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: u32) -> Option<&CircuitEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: u32) -> Option<&mut CircuitEntry> {
        self.entries.get_mut(&id)
    }

    /// Installs `entry`; returns false (and leaves the table unchanged) when
    /// the id is taken.
    pub fn insert(&mut self, entry: CircuitEntry) -> bool {
        if self.entries.contains_key(&entry.circuit_id) {
            return false;
        }
        self.counters.installed += 1;
        self.entries.insert(entry.circuit_id, entry);
        true
    }

    pub fn remove(&mut self, id: u32) -> Option<CircuitEntry> {
        let e = self.entries.remove(&id);
        if e.is_some() {
            self.counters.removed += 1;
        }
        e
    }

    /// Drops entries idle longer than the timeout. Sweeps at most once per
    /// minute of virtual time.
    pub fn expire(&mut self, now: SimTime) {
        let Some(idle) = self.idle_timeout else { return };
        if now.saturating_since(self.last_sweep) < Duration::from_secs(60) {
            return;
        }
        self.last_sweep = now;
        let before = self.entries.len();
        self.entries.retain(|_, e| now.saturating_since(e.last_used) < idle);
        let gone = (before - self.entries.len()) as u64;
        self.counters.expired += gone;
        self.counters.removed += gone;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::OverlayAddress;

    pub(crate) fn entry(id: u32, at: SimTime) -> CircuitEntry {
        CircuitEntry {
            circuit_id: id,
            key: SymmetricKey::new([id as u8; 32], id),
            layered: true,
            toward_owner: Link::Udp(OverlayAddress::new(1, 0)),
            away: None,
            direction: LayerDirection::AddForward,
            created_at: at,
            last_used: at,
            create_eph: [0; 32],
            pending_extend: None,
            extend_eph: None,
            add_counter: 0,
        }
    }

    #[test]
    fn duplicate_rejected_and_bookkeeping() {
        let mut t = CircuitTable::new(None);
        assert!(t.insert(entry(1, SimTime::ZERO)));
        assert!(!t.insert(entry(1, SimTime::ZERO)));
        assert_eq!(t.len(), 1);
        for id in 2..=100 {
            assert!(t.insert(entry(id, SimTime::ZERO)));
        }
        for id in 1..=100 {
            assert!(t.remove(id).is_some());
        }
        assert!(t.is_empty());
        assert_eq!(t.counters().installed, 100);
        assert_eq!(t.counters().removed, 100);
    }

    #[test]
    fn idle_entries_expire() {
        let mut t = CircuitTable::new(Some(DEFAULT_IDLE_TIMEOUT));
        t.insert(entry(1, SimTime::ZERO));
        t.insert(entry(2, SimTime::from_millis(400_000)));
        t.expire(SimTime::from_millis(700_000));
        assert!(!t.contains(1));
        assert!(t.contains(2));
        assert_eq!(t.counters().expired, 1);
    }
}
