//! Dense 3D grids and the spatial operators the pipeline is built from.
//!
//! Every grid is stored x-fastest: the voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. World coordinates are `index * spacing` with the
//! origin at voxel `(0, 0, 0)`.

mod filter;
mod morphology;
mod resample;

pub use filter::{central_gradient, gaussian_kernel, gaussian_smooth};
pub use morphology::{
    label_components, largest_component, mask_boundary_strip, morphology, Connectivity, MorphMode,
};
pub use resample::{resample_affine, resample_mask, AffineTransform};

use crate::error::{Error, Result};

/// Shape and voxel size shared by every volume type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Millimeters per voxel along x, y, z.
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::invalid("voxel count overflows usize"))?;
        Ok(Grid { dims, spacing })
    }

    /// Unit-spacing grid.
    pub fn cube(n: usize) -> Self {
        Grid::new([n, n, n], [1.0; 3]).expect("n must be positive")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    /// World position of a voxel center.
    #[inline]
    pub fn world(&self, v: [usize; 3]) -> [f64; 3] {
        [
            v[0] as f64 * self.spacing[0],
            v[1] as f64 * self.spacing[1],
            v[2] as f64 * self.spacing[2],
        ]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )));
        }
        Ok(())
    }
}

// Spacing is validated finite on construction, so equality is reflexive.
impl Eq for Grid {}

/// Real-valued volume (images, edge maps, abnormality maps, level-set fields).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    grid: Grid,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match {} voxels",
                data.len(),
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at voxel {i}")));
        }
        Ok(ScalarVolume { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        ScalarVolume {
            grid,
            data: vec![value; grid.len()],
        }
    }

    /// Samples `f` at every voxel index.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> f32) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(f([x, y, z]));
                }
            }
        }
        ScalarVolume { grid, data }
    }

    /// Builds a volume without the finiteness scan; callers guarantee it.
    pub(crate) fn from_raw(grid: Grid, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        ScalarVolume { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.grid.index(x, y, z);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean over the voxels set in `mask`, accumulated in f64.
    pub fn masked_mean(&self, mask: &BinaryMask) -> Result<Option<f64>> {
        self.grid.ensure_same(mask.grid(), "masked mean")?;
        let (sum, n) = self
            .data
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m)
            .fold((0.0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
        Ok((n > 0).then(|| sum / n as f64))
    }
}

/// One boolean per voxel (brain masks, thresholded maps, segmentations).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "mask length {} does not match {} voxels",
                data.len(),
                grid.len()
            )));
        }
        Ok(BinaryMask { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        BinaryMask {
            grid,
            data: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid) -> Self {
        BinaryMask {
            grid,
            data: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(f([x, y, z]));
                }
            }
        }
        BinaryMask { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.grid.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.grid.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.grid.ensure_same(&other.grid, "mask intersection")?;
        Ok(BinaryMask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        })
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.grid == other.grid && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Voxel-count weighted mean of set voxel centers, in world coordinates.
    ///
    /// Index sums are accumulated as integers so the result is exactly
    /// translation-covariant.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut sums = [0u128; 3];
        let mut n = 0u128;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.grid.coords(i);
            for a in 0..3 {
                sums[a] += c[a] as u128;
            }
            n += 1;
        }
        (n > 0).then(|| {
            let mut out = [0.0; 3];
            for a in 0..3 {
                out[a] = sums[a] as f64 / n as f64 * self.grid.spacing[a];
            }
            out
        })
    }

    /// Inclusive bounding box of set voxels as (min, max) indices.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.grid.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }

    /// Indicator volume with 1.0 on set voxels.
    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume::from_raw(
            self.grid,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// Three components per voxel, stored interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    data: Vec<[f32; 3]>,
}

impl VectorField {
    pub fn new(grid: Grid, data: Vec<[f32; 3]>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field length {} does not match {} voxels",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vector field contains non-finite values"));
        }
        Ok(VectorField { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            data: vec![[0.0; 3]; grid.len()],
        }
    }

    pub(crate) fn from_raw(grid: Grid, data: Vec<[f32; 3]>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        VectorField { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        self.data[self.grid.index(x, y, z)]
    }

    /// Scalar volume holding one component (0 = x, 1 = y, 2 = z).
    pub fn component(&self, axis: usize) -> ScalarVolume {
        ScalarVolume::from_raw(self.grid, self.data.iter().map(|v| v[axis]).collect())
    }
}
