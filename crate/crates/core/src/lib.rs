//! Simulator for federated learning across a fleet of UAVs with
//! energy-aware, data-diversity-driven participant selection.
//!
//! The crate covers the air-to-ground channel, per-round latency and energy
//! accounting, SSIM-based redundancy scoring and deduplication, cohort
//! selection, a small from-scratch classifier with federated averaging, a
//! synthetic image generator, and the experiment harness behind the `deeps`
//! binary.

pub mod channel;
pub mod cost;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod harness;
pub mod learning;
pub mod pgm;
pub mod seed;
pub mod selection;
pub mod similarity;

pub use error::{Error, Result};
