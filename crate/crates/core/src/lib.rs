//! Calibration-gated ("hard gate") knowledge distillation for sequence models.
//!
//! A calibrated teacher decides, per token or per sentence, whether the
//! student learns from the ground truth or from the teacher's distribution.
//! Everything here is built from scratch on 64-bit dense tensors with
//! hand-written gradients.

pub mod calibration;
pub mod cli;
pub mod datagen;
pub mod distill;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
