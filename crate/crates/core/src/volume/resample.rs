use rayon::prelude::*;

use super::{BinaryMask, Grid, ScalarVolume};
use crate::error::{Error, Result};

/// `p -> linear * p + translation` in world (millimeter) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl AffineTransform {
    pub fn new(linear: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let t = AffineTransform {
            linear,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        AffineTransform {
            linear: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        AffineTransform {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about the z axis through `center`.
    pub fn rotation_z(angle: f64, center: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        let linear = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let mut translation = [0.0; 3];
        for r in 0..3 {
            let rc: f64 = (0..3).map(|k| linear[r][k] * center[k]).sum();
            translation[r] = center[r] - rc;
        }
        AffineTransform {
            linear,
            translation,
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.linear;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.linear.iter().flatten().chain(&self.translation).all(|v| v.is_finite());
        let det = self.determinant();
        if !all_finite || !(det.abs() > 1e-12) {
            return Err(Error::invalid(format!(
                "affine transform is not invertible (det = {det})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.linear;
        let mut out = [0.0; 3];
        for r in 0..3 {
            out[r] = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + self.translation[r];
        }
        out
    }

    pub fn inverse(&self) -> Result<Self> {
        self.validate()?;
        let m = &self.linear;
        let det = self.determinant();
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                // adjugate: cofactor of (c, r)
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
            }
        }
        let mut translation = [0.0; 3];
        for r in 0..3 {
            translation[r] = -(0..3).map(|k| inv[r][k] * self.translation[k]).sum::<f64>();
        }
        Ok(AffineTransform {
            linear: inv,
            translation,
        })
    }
}

/// Pull-back resampling: each output voxel at world position `p` takes the
/// trilinear interpolation of `vol` at `t.apply(p)`. Samples falling outside
/// the source grid are 0.
pub fn resample_affine(
    vol: &ScalarVolume,
    t: &AffineTransform,
    out_dims: [usize; 3],
    out_spacing: [f64; 3],
) -> Result<ScalarVolume> {
    t.validate()?;
    let out = Grid::new(out_dims, out_spacing)?;
    let data: Vec<f32> = (0..out.len())
        .into_par_iter()
        .map(|i| {
            let src = t.apply(out.world(out.coords(i)));
            trilinear(vol, src) as f32
        })
        .collect();
    Ok(ScalarVolume::from_raw(out, data))
}

/// Resamples a mask by interpolating its indicator and keeping values >= 0.5.
pub fn resample_mask(
    mask: &BinaryMask,
    t: &AffineTransform,
    out_dims: [usize; 3],
    out_spacing: [f64; 3],
) -> Result<BinaryMask> {
    let v = resample_affine(&mask.to_scalar(), t, out_dims, out_spacing)?;
    BinaryMask::new(*v.grid(), v.data().iter().map(|&x| x >= 0.5).collect())
}

fn trilinear(vol: &ScalarVolume, world: [f64; 3]) -> f64 {
    let grid = vol.grid();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let u = world[a] / grid.spacing[a];
        let n = grid.dims[a];
        // Tolerate round-off just outside the last sample.
        if !(u >= -1e-9 && u <= (n - 1) as f64 + 1e-9) {
            return 0.0;
        }
        let u = u.clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n.saturating_sub(2));
        base[a] = i;
        frac[a] = if n == 1 { 0.0 } else { u - i as f64 };
    }
    let data = vol.data();
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            if bit == 1 {
                w *= frac[a];
                idx[a] = (base[a] + 1).min(grid.dims[a] - 1);
            } else {
                w *= 1.0 - frac[a];
                idx[a] = base[a];
            }
        }
        if w != 0.0 {
            acc += w * data[grid.index(idx[0], idx[1], idx[2])] as f64;
        }
    }
    acc
}
