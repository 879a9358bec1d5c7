//! Logistic-vehicle dataset curation and classifier-head training.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`taxonomy`]: the four vehicle classes, the mass/height rules and the
//!   make/model registry.
//! - [`ingest`]: query planning and fetching raw images through source adapters.
//! - [`curation`]: corrupt-file rejection, detector-driven cropping, dedup.
//! - [`dataset`]: the append-only manifest, class balancing and stratified splits.
//! - [`learner`]: feature stores and the softmax head trained with SGD.
//! - [`evaluation`]: confusion matrices, accuracy and report rendering.
//! - [`pipeline`]: the stage orchestrator behind `fleet-census run`.

pub mod config;
pub mod curation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod hash;
pub mod ingest;
pub mod jsonl;
pub mod learner;
pub mod pipeline;
pub mod rng;
pub mod taxonomy;

pub use error::{Error, Result};
pub use hash::ContentHash;
pub use taxonomy::VehicleClass;
