//! Training-free orthophoto rendering from colored point clouds, plus the
//! measurable pieces of a cross-view retrieval stack: stationary-wavelet
//! and mask losses, uncertainty weighting, and cosine retrieval with
//! Recall@K / AP evaluation.

// `!(x > 0.0)` rejects NaN on purpose; per-channel loops stay indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cloud;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod inpaint;
pub mod pipeline;
pub mod plane;
pub mod raster;
pub mod render;
pub mod retrieval;
pub mod rng;
pub mod wavelet;

pub use cloud::{load_ply, save_ply, Aabb, ColoredPointCloud, PlyLoad};
pub use error::{Error, ErrorCategory, Result};
pub use exec::Parallelism;
pub use plane::{fit_plane_ransac, GroundPlane, PlanePointSet, RansacParams, Threshold};
pub use raster::{OrthoImage, RasterConfig};
pub use render::{render_orthophoto, RenderConfig, RenderOutput};
