//! Asynchronous stochastic optimization under arbitrary delay sequences.
//!
//! The crate simulates the round protocol in which every round delivers a
//! stochastic gradient evaluated at some earlier iterate, and implements
//! asynchronous mini-batching with stale-gradient filtering, the doubling
//! sweep that adapts to the best delay quantile, the classical inner
//! optimizers, closed-form guarantees and lower-bound constructions.

pub mod bounds;
pub mod config;
pub mod delays;
pub mod engine;
pub mod experiment;
pub mod error;
pub mod minibatch;
pub mod optimizers;
pub mod problems;
pub mod sweep;
pub mod verify;
pub mod vector;

pub use error::{Error, Result};
