//! Illumination-aware infrared/visible image fusion.
//!
//! The pipeline estimates per-image illumination maps, brightens both
//! modalities by element-wise division, fuses the enhanced Y planes with an
//! attention/differential feature-fusion network, and recombines the fused
//! luminance with the enhanced visible chroma. Training is two-stage
//! (enhancer first, then the fusion network under saliency-weighted
//! structure/intensity/gradient losses), and fused output is scored with six
//! standard fusion-quality metrics.

pub mod checkpoint;
pub mod error;
pub mod fusenet;
pub mod illum;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod saliency;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{GradientField, ImageTensor};
