//! Reliability scoring for non-finalized optimistic-rollup blocks.
//!
//! Fast exits observed in L1 batch data act as value-weighted attestations
//! for the L2 blocks they build on. [`scoring`] turns those attestations into
//! a 0-100 reliability score and an interest rate, [`avs`] simulates the
//! staked operator network that reports the score, and [`store`] persists
//! everything as a replayable append-only log.

pub mod amount;
pub mod avs;
pub mod ingestion;
pub mod rng;
pub mod scoring;
pub mod store;

pub use amount::{Amount, SignedAmount, BASE_UNITS_PER_TOKEN};
pub use scoring::{
    BlockReliability, ChainState, FastExitEvent, ScorePayload, ScoringError, ScoringParams,
};
