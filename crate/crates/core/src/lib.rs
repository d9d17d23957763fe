//! Neural-wavelet precomputed radiance transfer.
//!
//! The crate is organised along the data flow of the system:
//!
//! * [`cubemap`] and [`wavelet`] handle environment lighting and its
//!   non-standard Haar decomposition.
//! * [`scene`] loads geometry, builds a BVH and produces G-buffers.
//! * [`brdf`], [`envmap_sampling`] and [`pathtracer`] form the Monte-Carlo
//!   oracle used for training data and verification; [`dataset`] drives it.
//! * [`feature_field`], [`transport`] and [`train`] hold the learned
//!   transport model and its optimisation.
//! * [`render`] evaluates the model as a wavelet dot product.

pub mod brdf;
pub mod cubemap;
pub mod dataset;
pub mod envmap_sampling;
pub mod error;
pub mod feature_field;
pub mod fixtures;
pub mod imageio;
pub mod math;
pub mod param;
pub mod pathtracer;
pub mod real;
pub mod render;
pub mod rng;
pub mod scene;
pub mod sh;
pub mod train;
pub mod transport;
pub mod wavelet;

pub use error::{Error, Result};
pub use math::Vec3;
