//! Downlink C-RAN max-min SINR beamforming under per-RRH power and
//! fronthaul capacity limits.

pub mod association;
pub mod channel;
pub mod conic;
pub mod error;
pub mod harness;
pub mod model;
pub mod oracle;
