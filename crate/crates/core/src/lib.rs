//! Differentiable omnidirectional Gaussian splatting.
//!
//! Scenes are clouds of anisotropic 3D Gaussians rendered directly onto an
//! equirectangular panorama: every Gaussian is projected through the
//! longitude/latitude camera model, its covariance is pushed through the
//! local affine approximation of that projection, and the resulting 2D
//! splats are alpha-blended per tile in order of their distance to the
//! camera center. The backward pass propagates image-space loss gradients
//! to every Gaussian parameter analytically, and the [`trainer`] module
//! drives the full photometric reconstruction loop with densification.
//!
//! The crate is `no_std` (it needs `alloc`). The default `std` feature adds
//! tile-parallel rendering via rayon; results are bit-identical either way.

#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons are how NaN gets rejected; indexed channel loops read
// better than zipped iterators in the per-pixel math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod camera;
pub mod crop;
pub mod gradients;
pub mod image;
pub mod metrics;
pub mod rasterizer;
pub mod scene;
pub mod sh;
pub mod trainer;

mod math;
mod par;

pub use camera::{EquirectCamera, PerspectiveCamera, Pose};
pub use gradients::{backward, GradientBuffer};
pub use image::Image;
pub use rasterizer::{reference_render, render, RenderOptions, RenderOutput};
pub use scene::{GaussianCloud, GaussianPoint};
