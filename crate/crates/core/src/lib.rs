//! Foreground-targeted differentiable warping for semi-supervised video
//! object segmentation, on a small from-scratch gradient engine.

#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod diffarray;
pub mod error;
pub mod eval;
pub mod flownet;
pub mod losses;
pub mod model;
mod nn;
pub mod segmenter;
pub mod training;
pub mod warp;

pub use data_io::VideoSequence;
pub use diffarray::{Array, DiffArray, ParamSet, Real, Tape};
pub use error::{Error, Result};
pub use flownet::{FlowNet, FlowNetConfig};
pub use losses::LossConfig;
pub use model::VosModel;
pub use segmenter::{SegNet, SegNetConfig};
pub use training::{RunConfig, TrainingConfig};
pub use warp::FlowField;
