//! Anomaly-detection training core: a small reverse-mode autodiff engine,
//! two detector backbones, confidence-weighted meta-learning, synthetic
//! feature data and image-level metrics.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbones;
pub mod data;
pub mod diffcore;
pub mod meta;
pub mod metrics;
pub mod scl;

pub use backbones::{Backbone, NfBackbone, SimpleNetModel};
pub use diffcore::{Gradient, Mat, ParamSet, Tape};
pub use meta::{train, TrainConfig, TrainOutcome};
pub use metrics::{evaluate, EvalResult};
