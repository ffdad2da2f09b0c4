pub mod config;
pub mod control;
pub mod crypto;
pub mod data;
pub mod golden;
pub mod metrics;
pub mod overlay;
pub mod path;
pub mod relay;
pub mod runtime;
pub mod session;
pub mod time;
