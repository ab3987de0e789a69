//! Misleading-text detection from a contrastive text encoder and a stance
//! encoder, combined by a learned gate.
//!
//! Everything runs on a small double-precision reverse-mode autodiff core
//! ([`autodiff`]), so every gradient in the model can be checked against
//! central finite differences ([`gradcheck`]).

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
