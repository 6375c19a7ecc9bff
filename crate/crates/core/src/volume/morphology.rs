//! Binary morphology with Chebyshev-ball structuring elements and connected
//! component labeling.

use std::collections::VecDeque;

use super::{BinaryMask, Grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphMode {
    Erode,
    Dilate,
}

/// Voxel adjacency used for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::invalid(format!("connectivity must be 6 or 26, got {other}"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }

    pub(crate) fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Erosion or dilation by the cube `(2r+1)^3` (the Chebyshev ball of radius
/// `r`), repeated `iterations` times. Voxels outside the grid count as
/// background for both modes.
pub fn morphology(
    mask: &BinaryMask,
    mode: MorphMode,
    radius: usize,
    iterations: usize,
) -> Result<BinaryMask> {
    if radius < 1 {
        return Err(Error::invalid("structuring element radius must be >= 1"));
    }
    if iterations < 1 {
        return Err(Error::invalid("morphology iterations must be >= 1"));
    }
    let grid = *mask.grid();
    let mut cur: Vec<bool> = mask.data().to_vec();
    let mut scratch = vec![false; cur.len()];
    for _ in 0..iterations {
        // The cube is separable: one 1D window pass per axis.
        for axis in 0..3 {
            line_pass(&grid, &cur, &mut scratch, axis, radius, mode);
            std::mem::swap(&mut cur, &mut scratch);
        }
    }
    BinaryMask::new(grid, cur)
}

fn line_pass(grid: &Grid, src: &[bool], dst: &mut [bool], axis: usize, r: usize, mode: MorphMode) {
    let [nx, ny, _] = grid.dims;
    let n = grid.dims[axis];
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let mut prefix = vec![0u32; n + 1];
    for start in line_starts(grid, axis) {
        for i in 0..n {
            prefix[i + 1] = prefix[i] + src[start + i * stride] as u32;
        }
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let set = prefix[hi + 1] - prefix[lo];
            dst[start + i * stride] = match mode {
                MorphMode::Dilate => set > 0,
                // A window clipped by the border contains background.
                MorphMode::Erode => i >= r && i + r < n && set as usize == 2 * r + 1,
            };
        }
    }
}

fn line_starts(grid: &Grid, axis: usize) -> Vec<usize> {
    let [nx, ny, nz] = grid.dims;
    let mut out = Vec::new();
    match axis {
        0 => {
            for z in 0..nz {
                for y in 0..ny {
                    out.push(grid.index(0, y, z));
                }
            }
        }
        1 => {
            for z in 0..nz {
                for x in 0..nx {
                    out.push(grid.index(x, 0, z));
                }
            }
        }
        _ => {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(grid.index(x, y, 0));
                }
            }
        }
    }
    out
}

/// Removes `depth` voxel layers from the mask surface: erosion by the
/// 26-neighborhood applied `depth` times.
pub fn mask_boundary_strip(mask: &BinaryMask, depth: usize) -> Result<BinaryMask> {
    morphology(mask, MorphMode::Erode, 1, depth)
}

/// Component labels (0 = background, 1.. in order of each component's
/// smallest linear index) and per-label voxel counts (index 0 unused).
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let grid = *mask.grid();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; grid.len()];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for seed in 0..grid.len() {
        if !mask.data()[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0usize;
        labels[seed] = label;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let c = grid.coords(i);
            for o in &offsets {
                let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                if !grid.contains(p) {
                    continue;
                }
                let j = grid.index(p[0] as usize, p[1] as usize, p[2] as usize);
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// The connected component with the most voxels. Ties go to the component
/// whose first voxel has the smallest linear index.
pub fn largest_component(mask: &BinaryMask, connectivity: Connectivity) -> Result<BinaryMask> {
    let (labels, sizes) = label_components(mask, connectivity);
    let mut best = 0usize;
    for (label, &size) in sizes.iter().enumerate().skip(1) {
        if best == 0 || size > sizes[best] {
            best = label;
        }
    }
    if best == 0 {
        return Err(Error::EmptyRegion);
    }
    let best = best as u32;
    BinaryMask::new(*mask.grid(), labels.iter().map(|&l| l == best).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_mask(n: usize, lo: usize, hi: usize) -> BinaryMask {
        BinaryMask::from_fn(Grid::cube(n), |[x, y, z]| {
            (lo..=hi).contains(&x) && (lo..=hi).contains(&y) && (lo..=hi).contains(&z)
        })
    }

    #[test]
    fn single_voxel_erodes_away() {
        let mut m = BinaryMask::empty(Grid::cube(5));
        m.set(2, 2, 2, true);
        assert!(morphology(&m, MorphMode::Erode, 1, 1).unwrap().is_empty());
    }

    #[test]
    fn single_voxel_dilates_to_cube() {
        let mut m = BinaryMask::empty(Grid::cube(7));
        m.set(3, 3, 3, true);
        let d = morphology(&m, MorphMode::Dilate, 1, 2).unwrap();
        assert_eq!(d, cube_mask(7, 1, 5));
    }

    #[test]
    fn closing_restores_interior_cube() {
        let m = cube_mask(20, 5, 14);
        let d = morphology(&m, MorphMode::Dilate, 1, 1).unwrap();
        let e = morphology(&d, MorphMode::Erode, 1, 1).unwrap();
        assert_eq!(e, m);
    }

    #[test]
    fn border_counts_as_background_when_eroding() {
        let full = BinaryMask::full(Grid::cube(6));
        let e = morphology(&full, MorphMode::Erode, 1, 1).unwrap();
        assert_eq!(e, cube_mask(6, 1, 4));
    }

    #[test]
    fn rejects_zero_radius_or_iterations() {
        let m = BinaryMask::empty(Grid::cube(3));
        assert!(morphology(&m, MorphMode::Erode, 0, 1).is_err());
        assert!(morphology(&m, MorphMode::Dilate, 1, 0).is_err());
        assert!(mask_boundary_strip(&m, 0).is_err());
    }

    #[test]
    fn strip_solid_cube() {
        let m = cube_mask(12, 2, 9);
        assert_eq!(mask_boundary_strip(&m, 1).unwrap(), cube_mask(12, 3, 8));
    }

    #[test]
    fn thin_slab_strips_to_nothing() {
        let m = BinaryMask::from_fn(Grid::cube(10), |[x, y, z]| {
            (1..9).contains(&x) && (1..9).contains(&y) && (4..=6).contains(&z)
        });
        assert!(mask_boundary_strip(&m, 2).unwrap().is_empty());
    }

    #[test]
    fn largest_of_two_blobs() {
        let g = Grid::cube(20);
        let m = BinaryMask::from_fn(g, |[x, y, z]| {
            let a = x < 5 && y < 5 && z < 4; // 100 voxels
            let b = (15..17).contains(&x) && (15..17).contains(&y) && (10..15).contains(&z); // 20
            a || b
        });
        let l = largest_component(&m, Connectivity::TwentySix).unwrap();
        assert_eq!(l.count(), 100);
        assert!(l.get(0, 0, 0));
        assert!(!l.get(15, 15, 10));
    }

    #[test]
    fn tie_goes_to_smallest_seed() {
        let g = Grid::cube(6);
        let mut m = BinaryMask::empty(g);
        m.set(4, 4, 4, true);
        m.set(1, 1, 1, true);
        let l = largest_component(&m, Connectivity::Six).unwrap();
        assert!(l.get(1, 1, 1));
        assert_eq!(l.count(), 1);
    }

    #[test]
    fn diagonal_neighbors_depend_on_connectivity() {
        let g = Grid::cube(4);
        let mut m = BinaryMask::empty(g);
        m.set(1, 1, 1, true);
        m.set(2, 2, 2, true);
        assert_eq!(largest_component(&m, Connectivity::TwentySix).unwrap().count(), 2);
        assert_eq!(largest_component(&m, Connectivity::Six).unwrap().count(), 1);
    }

    #[test]
    fn empty_mask_has_no_component() {
        let m = BinaryMask::empty(Grid::cube(3));
        assert!(matches!(
            largest_component(&m, Connectivity::TwentySix),
            Err(Error::EmptyRegion)
        ));
    }
}
