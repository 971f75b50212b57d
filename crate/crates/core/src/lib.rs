//! Peer recommendation engine for online communities.
//!
//! The pipeline runs from a time-ordered [`event_log`] through implicit
//! [`feedback`] extraction, [`features`], trained and baseline [`models`],
//! chronological offline [`evaluation`], capped recommendation [`batcher`]
//! output, and intervention [`analysis`].

pub mod analysis;
pub mod batcher;
pub mod error;
pub mod evaluation;
pub mod event_log;
pub mod features;
pub mod feedback;
pub mod keyed;
pub mod models;

pub use error::{Error, Result};
