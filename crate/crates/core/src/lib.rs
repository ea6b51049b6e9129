//! Statistically validated networks of trader states and lead-lag networks
//! between trader groups across pairs of timescales.

pub mod coarsen;
pub mod community;
pub mod error;
pub mod ingest;
pub mod io;
pub mod leadlag;
pub mod stats;
pub mod sweep;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
