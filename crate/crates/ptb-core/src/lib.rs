//! Desk-scale laboratory for physically robust backdoor attacks on image
//! classifiers.
//!
//! The crate builds poisoned training sets by pasting a visual trigger into
//! clean images, trains a small from-scratch CNN whose training loop pushes
//! every poisoned sample through a probabilistic gate of five physical
//! transformations (distance, viewing angle, in-plane rotation, brightness,
//! sensor noise), and measures attack success rate and clean-accuracy drop
//! under simulated simple and complex capture conditions.
//!
//! Modules follow the pipeline:
//!
//! - [`imaging`]: pixel container, bilinear sampling, perspective/affine warps
//! - [`ppm`]: bit-exact binary PPM/PGM codec
//! - [`rng`]: seeded, hierarchically derived PRNG streams
//! - [`transforms`]: the five physical transforms and the gated composite
//! - [`trigger`]: trigger shapes, injection, poison relabeling
//! - [`dataset`]: loading, synthetic generation, poisoned-set construction
//! - [`model`]: from-scratch CNN with manual gradients and SGD training
//! - [`eval`]: scene simulation, attack-success-rate and accuracy-drop metrics

pub mod dataset;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod model;
pub mod ppm;
pub mod rng;
pub mod transforms;
pub mod trigger;

pub use error::{Error, Result};
