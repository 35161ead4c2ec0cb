//! A flash-resident multi-version key-value testbed: an emulated open-channel
//! SSD, log-structured stores that index versions in memory or on flash, a
//! naive stacked baseline, and an optimistic MVCC transaction layer.

pub mod clock;
pub mod error;
pub mod flashsim;
pub mod ftl;
pub mod semel;
pub mod skimpy;
pub mod store;
pub mod txn;
pub mod vftl;

pub use error::{Error, Result};
