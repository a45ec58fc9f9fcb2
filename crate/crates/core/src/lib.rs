//! Articulated text-to-avatar optimization engine.
//!
//! A canonical-space volumetric field is optimized first, then converted into a
//! deformable tetrahedral mesh and refined. Both stages are driven by score
//! distillation against a pluggable guidance model conditioned on dense body
//! part maps, and the result is animated with linear blend skinning.

pub mod body_model;
pub mod checkpoint;
pub mod coarse_field;
pub mod error;
pub mod guidance;
pub mod imaging;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod rasterizer;
pub mod tet_field;
pub mod trainer;
pub mod volume_renderer;

pub use error::{Error, Result};
