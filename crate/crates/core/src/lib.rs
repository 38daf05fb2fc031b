//! Facial wrinkle segmentation from weak texture supervision.
//!
//! Stages: texture maps as weak labels, multi-annotator fusion, a small
//! U-Net pretrained to regress texture maps, then finetuned for wrinkle
//! segmentation from RGB plus texture input.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod micronet;
pub mod optim;
pub mod synth;
pub mod texture;
pub mod trainer;

pub use error::{Error, Result};
