//! Prototype networks with faithful Shapley explanations.
//!
//! The crate is `no_std` with `alloc`. It provides a deterministic forward
//! pass, a moment-propagating probabilistic twin, three Shapley engines, the
//! legacy upsampled-distance explanation and the evaluation harness.

#![no_std]
extern crate alloc;

pub mod desk;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod gauss;
pub mod legacy;
pub mod model;
pub mod ops;
pub mod protopnet;
pub mod shapley;
pub mod special;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Activation, Classifier, Layer, LayerKind, ModelSpec, PrototypeSet, Provenance};
pub use tensor::Tensor;
