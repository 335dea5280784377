//! Seeded generation of synthetic longitudinal clinical-note cohorts.
//!
//! Stages: persona sampling, visit planning, keyword mention sampling, prompt
//! rendering, note generation through a pluggable backend, sentence-level
//! annotation, and fidelity validation against the configured tables.

pub mod config;
mod defaults;
pub mod persona;
pub mod rng;
pub mod segment;
pub mod semantic;
pub mod trajectory;
pub mod prompt;
pub mod gateway;
pub mod annotator;
pub mod fidelity;
pub mod dataset;
pub mod error;
pub mod pipeline;

pub use error::{Error, Result};
