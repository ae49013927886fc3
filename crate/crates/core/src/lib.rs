//! Core library of the CardioLens cardiomegaly-detection pipeline.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`imgproc`] — radiograph enhancement and mathematical morphology
//! - [`autodiff`] — dense tensors with reverse-mode differentiation and the
//!   neural-network building blocks
//! - [`attention`] — scaled dot-product and multi-head attention
//! - [`model`] — the inception-style classifier with a channel-attention head
//! - [`optim`] — first-order optimizers
//! - [`metrics`] — confusion-matrix arithmetic and ranking metrics
//! - [`data`] — dataset manifests, splits, augmentation, and the synthetic
//!   desk-scale generator
//! - [`checkpoint`] — the versioned binary tensor container
//! - [`imageio`] — PNG/PGM reading and writing
//! - [`gradcheck`] — finite-difference gradient checking

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod imageio;
pub mod imgproc;
pub mod metrics;
pub mod model;
pub mod optim;
