//! Probabilistic rateless multiple access for machine-type devices.
//!
//! Devices encode their messages with analog fountain codes and transmit
//! each coded symbol with a per-device access probability. Simultaneous
//! transmissions superpose at the base station into one larger code, which
//! is decoded jointly by belief propagation. Around that core the crate
//! provides the channel model, the contention (random-access) phase,
//! density-evolution performance prediction, delay-aware access-probability
//! optimization, a conventional backoff random-access baseline, and a
//! configuration-driven experiment runner.
//!
//! Units: SNRs and gains are linear unless a name ends in `_db`; noise
//! variance is per real dimension; one channel use carries one real coded
//! symbol.

// `!(x > 0.0)` guards are deliberate since they also reject NaN; index loops
// walk several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod channel;
pub mod codec;
pub mod contention;
mod error;
pub mod experiment;
pub mod lte;
pub mod masim;
pub mod qos;
pub mod rng;
pub mod special;
pub mod table;

pub use error::{Error, Result};
