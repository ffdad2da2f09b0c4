//! Deterministic execution: the world (fabric, relays, hosts) and a
//! single-threaded executor for host tasks.

pub mod exec;
pub mod world;

pub use exec::{JoinHandle, Sim, SimError, SimHandle, Sleep};
pub use world::{CellMsg, Host, Mailbox, Net, NodeRole, World, WorldParams};
