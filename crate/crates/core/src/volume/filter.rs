use rayon::prelude::*;

use super::{Grid, ScalarVolume, VectorField};
use crate::error::{Error, Result};

/// Sampled 1D Gaussian truncated at `ceil(3 sigma)` and normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian blur with `sigma` in voxels and replicate-edge
/// boundaries.
pub fn gaussian_smooth(vol: &ScalarVolume, sigma: f64) -> Result<ScalarVolume> {
    let kernel = gaussian_kernel(sigma)?;
    let grid = *vol.grid();
    let mut cur: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    for axis in 0..3 {
        cur = convolve_axis(&grid, &cur, &kernel, axis);
    }
    Ok(ScalarVolume::from_raw(grid, cur.into_iter().map(|v| v as f32).collect()))
}

fn convolve_axis(grid: &Grid, src: &[f64], kernel: &[f64], axis: usize) -> Vec<f64> {
    let [nx, ny, _] = grid.dims;
    let n = grid.dims[axis] as i64;
    let stride = [1, nx, nx * ny][axis];
    let radius = (kernel.len() / 2) as i64;
    let mut dst = vec![0.0; src.len()];
    dst.par_iter_mut().enumerate().for_each(|(i, out)| {
        let pos = grid.coords(i)[axis] as i64;
        let base = i - pos as usize * stride;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let p = (pos + k as i64 - radius).clamp(0, n - 1) as usize;
            acc += w * src[base + p * stride];
        }
        *out = acc;
    });
    dst
}

/// Central differences in world units; one-sided differences on the faces.
pub fn central_gradient(vol: &ScalarVolume) -> Result<VectorField> {
    let grid = *vol.grid();
    if grid.dims.iter().any(|&d| d < 3) {
        return Err(Error::invalid(format!(
            "gradient needs every dim >= 3, got {:?}",
            grid.dims
        )));
    }
    let data = vol.data();
    let [nx, ny, _] = grid.dims;
    let strides = [1, nx, nx * ny];
    let field: Vec<[f32; 3]> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            let mut g = [0.0f32; 3];
            for a in 0..3 {
                let n = grid.dims[a];
                let h = grid.spacing[a];
                let s = strides[a];
                let d = if c[a] == 0 {
                    (data[i + s] as f64 - data[i] as f64) / h
                } else if c[a] == n - 1 {
                    (data[i] as f64 - data[i - s] as f64) / h
                } else {
                    (data[i + s] as f64 - data[i - s] as f64) / (2.0 * h)
                };
                g[a] = d as f32;
            }
            g
        })
        .collect();
    Ok(VectorField::from_raw(grid, field))
}
