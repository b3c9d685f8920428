//! Training, pruning, and cost accounting for small residual networks.
//!
//! The crate covers the full pipeline at desk scale:
//!
//! * dense tensors with the forward/backward operations a CIFAR ResNet
//!   needs, plus SGD and a finite-difference gradient checker;
//! * the five classic CIFAR ResNet depths (20/32/44/56/110) with He
//!   initialization, option-A shortcuts, and single-file checkpoints;
//! * mixup, cutout, and standard crop/flip augmentation as seeded, pure
//!   batch transforms;
//! * soft filter pruning: per-epoch smallest-norm (or norm-proportional)
//!   filter zeroing with regrowth, and end-of-training extraction of a
//!   physically compact model;
//! * exact multiply-accumulate accounting for dense, masked, and compact
//!   models under several channel-count policies;
//! * experiment orchestration with deterministic metrics, result tables,
//!   and SVG cost/accuracy plots.
//!
//! Batch-level loops fan out over rayon when the default `parallel` feature
//! is on; every parallel region writes disjoint outputs and reduces in a
//! fixed order, so results are bitwise identical at any thread count.

pub mod augment;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flops;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
mod par;
pub mod prune;
pub mod rng;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dtype, Parameter, Scalar, Tensor};
