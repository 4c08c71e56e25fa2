//! Hybrid CDN/PCDN video delivery: data model, multipath transport, packet
//! schedulers, client switching logic, tracker, peer store and a
//! deterministic network simulator that ties them together.

pub mod client;
pub mod error;
pub mod model;
pub mod peer;
pub mod scheduler;
pub mod simnet;
pub mod time;
pub mod tracker;
pub mod transport;

pub use error::{Error, Result};
pub use time::{SimDuration, SimTime};
