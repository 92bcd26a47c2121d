//! Sensor-conditioned single-image optical flow.
//!
//! A network predicts dense flow from one frame plus an ego-motion sensor
//! vector. It is trained without flow labels: the predicted flow warps a
//! neighboring frame onto the center frame, and the two directions of a
//! frame triplet are tied together by negating the sensor vector.
//!
//! Modules, bottom up:
//! - [`world`]: synthetic driving scenes, renderer and exact flow oracle
//! - [`diffops`]: differentiable warping, SSIM, Charbonnier, gradients, FD checks
//! - [`losses`]: the self-supervised objective
//! - [`model`]: the encoder/decoder network with its sensor modulator
//! - [`train`]: sensor normalization, augmentation, ADAM, evaluation
//! - [`io`]: `.flo`, PNG, manifests and flow visualization

pub mod config;
pub mod diffops;
pub mod error;
pub mod field;
pub mod gradsuite;
pub mod io;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod real;
pub mod tensor;
pub mod train;
pub mod world;

pub use error::{Error, Result};
pub use field::{Field, FlowField, Frame, ValidMask};
pub use parallel::ExecMode;
pub use real::Real;
pub use tensor::Tensor;
