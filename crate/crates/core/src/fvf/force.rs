//! Edge map and the directional external force.

use crate::error::{Error, Result};
use crate::volume::{central_gradient, gaussian_smooth, BinaryMask, ScalarVolume, VectorField};

/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// Edge map `f = |grad(G_sigma * image)|` rescaled to `[0, 1]`, together with
/// its central-difference gradient.
pub fn edge_map(patient: &ScalarVolume, sigma: f64) -> Result<(ScalarVolume, VectorField)> {
    let smooth = gaussian_smooth(patient, sigma)?;
    let grad = central_gradient(&smooth)?;
    let mag: Vec<f64> = grad
        .data()
        .iter()
        .map(|g| g.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt())
        .collect();
    let max = mag.iter().copied().fold(0.0, f64::max);
    let f: Vec<f32> = if max > 0.0 {
        mag.iter().map(|&m| (m / max) as f32).collect()
    } else {
        vec![0.0; mag.len()]
    };
    let f = ScalarVolume::new(*patient.grid(), f)?;
    let fg = central_gradient(&f)?;
    Ok((f, fg))
}

/// Cosine of the angle between two direction vectors.
pub fn directional_cosine(l1: [f64; 3], l2: [f64; 3]) -> Result<f64> {
    let n1 = norm(l1);
    let n2 = norm(l2);
    if n1 <= MIN_NORM || n2 <= MIN_NORM {
        return Err(Error::invalid("direction vectors must be non-zero"));
    }
    let dot = l1[0] * l2[0] + l1[1] * l2[1] + l1[2] * l2[2];
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Inputs to the external force, all on one grid.
#[derive(Debug, Clone)]
pub struct ForceContext {
    edge: ScalarVolume,
    edge_grad: VectorField,
    center: [f64; 3],
    candidate: BinaryMask,
}

impl ForceContext {
    pub fn new(
        edge: ScalarVolume,
        edge_grad: VectorField,
        center: [f64; 3],
        candidate: BinaryMask,
    ) -> Result<Self> {
        edge.grid().ensure_same(edge_grad.grid(), "edge map vs edge gradient")?;
        edge.grid().ensure_same(candidate.grid(), "edge map vs candidate")?;
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("flow center must be finite"));
        }
        Ok(ForceContext {
            edge,
            edge_grad,
            center,
            candidate,
        })
    }

    /// Builds the context from a patient image and a candidate region.
    pub fn from_patient(
        patient: &ScalarVolume,
        sigma: f64,
        center: [f64; 3],
        candidate: BinaryMask,
    ) -> Result<Self> {
        let (f, fg) = edge_map(patient, sigma)?;
        Self::new(f, fg, center, candidate)
    }

    pub fn edge(&self) -> &ScalarVolume {
        &self.edge
    }

    pub fn edge_gradient(&self) -> &VectorField {
        &self.edge_grad
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn candidate(&self) -> &BinaryMask {
        &self.candidate
    }

    /// Force at every voxel (independent of the surface normal).
    pub fn force_field(&self) -> VectorField {
        let grid = *self.edge.grid();
        let data = (0..grid.len())
            .map(|i| {
                let e = self.force_at(i).0;
                [e[0] as f32, e[1] as f32, e[2] as f32]
            })
            .collect();
        VectorField::from_raw(grid, data)
    }

    /// Returns `(E_e, delta, unit A->B or None when B = A)`.
    pub(crate) fn force_at(&self, i: usize) -> ([f64; 3], f64, Option<[f64; 3]>) {
        let grid = self.edge.grid();
        let b = grid.world(grid.coords(i));
        let delta = if self.candidate.data()[i] { 1.0 } else { -1.0 };
        let l2 = [b[0] - self.center[0], b[1] - self.center[1], b[2] - self.center[2]];
        let len = norm(l2);
        if len <= MIN_NORM {
            return ([0.0; 3], delta, None);
        }
        let dir = [l2[0] / len, l2[1] / len, l2[2] / len];
        let g = self.edge_grad.data()[i];
        let s = [
            g[0] as f64 + delta * dir[0],
            g[1] as f64 + delta * dir[1],
            g[2] as f64 + delta * dir[2],
        ];
        let n = norm(s);
        if n < MIN_NORM {
            return ([0.0; 3], delta, Some(dir));
        }
        ([s[0] / n, s[1] / n, s[2] / n], delta, Some(dir))
    }
}

/// External force at one surface point with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    /// Unit vector or exactly zero.
    pub force: [f64; 3],
    pub delta: f64,
    /// Cosine between the surface normal and the A->B direction; `None` when
    /// either is degenerate.
    pub cos_gamma: Option<f64>,
}

/// Evaluates the external force at voxel `b`.
pub fn external_force(ctx: &ForceContext, b: [usize; 3], normal: [f64; 3]) -> Result<ForceSample> {
    let grid = ctx.edge.grid();
    if !grid.contains([b[0] as i64, b[1] as i64, b[2] as i64]) {
        return Err(Error::OutOfRange(format!("surface point {b:?} outside grid {:?}", grid.dims)));
    }
    let (force, delta, dir) = ctx.force_at(grid.index(b[0], b[1], b[2]));
    let cos_gamma = dir.and_then(|d| directional_cosine(normal, d).ok());
    Ok(ForceSample {
        force,
        delta,
        cos_gamma,
    })
}
