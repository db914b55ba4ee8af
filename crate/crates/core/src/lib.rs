//! Diffusion-model anomaly scoring for multivariate sensor windows, with
//! fuzzy-logic constraints in the training loss and distillation into a
//! random-Fourier-feature classifier.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod tensor;
pub mod rng;
pub mod signals;
pub mod nesy;
pub mod ddpm;
pub mod metrics;
pub mod rff;
