//! Point-cloud neural operator for engineering surrogate modeling.
//!
//! The crate implements the full desk-scale pipeline: STL ingestion, signed
//! distance fields and spatial queries, a small reverse-mode differentiable
//! compute core, the multi-scale geometry encoder, the stencil-based field
//! predictor, training and engineering-metric evaluation, and a synthetic
//! analytic-flow benchmark used as ground truth.

// pub mod bundle;
// pub mod config;
// pub mod container;
pub mod datagen;
pub mod diffnet;
pub mod encoder;
pub mod error;
pub mod mesh;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod seeding;
pub mod spatial;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vec3;
