//! CPU-first differentiable composite Gaussian splatting engine with
//! multi-granularity appearance refinement (per-Gaussian, per-image and
//! per-actor), a full hand-written backward pass, and a synthetic scene
//! generator for oracle-checked training experiments.

pub mod appearance;
pub mod error;
pub mod gaussians;
pub mod geometry;
pub mod img;
pub mod losses;
pub mod actors;
pub mod datagen;
pub mod encoders;
pub mod rasterizer;
pub mod scene;
pub mod scene_io;
pub mod trainer;

pub use error::{Error, Result};
pub use gaussians::{GaussianGrads, GaussianSet};
pub use geometry::{Camera, Covariance3, Projected2D};
pub use img::{ImagePlane, ImageRgb};
pub use rasterizer::{RasterOutput, Splat, SplatTag};
