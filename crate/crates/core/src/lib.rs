//! Cross-cloud federated learning simulator.
//!
//! Clients train on private shards, protect their updates with a
//! Paillier-style additively homomorphic cipher (optionally in parallel
//! blocks), and a server aggregates them with plain, encrypted, hybrid or
//! dynamically weighted rules. A synchronization model prices each round
//! across cloud platforms, and transcripts of every round feed leakage,
//! communication and computation metrics.

pub mod aggregation;
pub mod cli;
pub mod error;
pub mod he;
pub mod metrics;
pub mod ops;
pub mod rng;
pub mod runtime;
pub mod sync;
pub mod vector;

pub use error::{Error, Result};
pub use vector::GradientVector;
