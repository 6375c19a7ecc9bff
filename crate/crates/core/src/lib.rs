//! Fully automatic brain-tumor segmentation on volumetric MR data.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`ngmm`] fits a Gaussian mixture to mean-normalized healthy-atlas
//!    intensities.
//! 2. [`brainmap`] turns a normalized patient scan plus tissue probability
//!    atlases into a per-voxel abnormality map, which [`candidate`] reduces to
//!    a single seed region.
//! 3. [`fvf`] evolves a level set from that seed under curvature and a
//!    directional fluid-vector-flow force.
//!
//! [`phantom`] generates synthetic atlases and patients with known ground
//! truth, [`metrics`] scores overlap, [`io`] reads and writes the MVOL
//! container and [`pipeline`] wires everything together.

pub mod brainmap;
pub mod candidate;
pub mod error;
pub mod fvf;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod ngmm;
pub mod phantom;
pub mod pipeline;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Grid, ScalarVolume, VectorField};
