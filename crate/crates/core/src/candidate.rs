//! Reduces an abnormality map to the single candidate region that seeds the
//! level set.
//!
//! The steps run in a fixed order: strip the brain boundary, threshold,
//! erode, keep the largest component, dilate (inside the stripped brain),
//! and optionally map back through a reverse transform.

use crate::error::{Error, Result};
use crate::kv::KvRecord;
use crate::volume::{
    largest_component, mask_boundary_strip, morphology, resample_mask, AffineTransform,
    BinaryMask, Connectivity, Grid, MorphMode, ScalarVolume,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateParams {
    /// Threshold on map values; voxels strictly above it are kept.
    pub psi: f64,
    /// Map range the threshold must lie inside.
    pub omega: f64,
    pub strip_depth: usize,
    pub erode_iters: usize,
    pub dilate_iters: usize,
    pub connectivity: Connectivity,
}

impl CandidateParams {
    pub fn with_omega(omega: f64) -> Self {
        CandidateParams {
            psi: DEFAULT_PSI_FRACTION * omega,
            omega,
            strip_depth: 2,
            erode_iters: 2,
            dilate_iters: 2,
            connectivity: Connectivity::TwentySix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.psi > 0.0 && self.psi < self.omega) {
            return Err(Error::invalid(format!(
                "psi must lie in (0, {}), got {}",
                self.omega, self.psi
            )));
        }
        if self.strip_depth < 1 || self.erode_iters < 1 || self.dilate_iters < 1 {
            return Err(Error::invalid("strip depth and morphology iterations must be >= 1"));
        }
        Ok(())
    }
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self::with_omega(255.0)
    }
}

/// Default threshold as a fraction of omega.
pub const DEFAULT_PSI_FRACTION: f64 = 0.6;

/// Maps the candidate back into another image space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseTransform {
    /// Pull-back transform: target world point -> map world point.
    pub transform: AffineTransform,
    pub target: Grid,
}

/// Names of the six steps, 1-based in reports.
pub const STEP_NAMES: [&str; 6] = [
    "strip-boundary",
    "threshold",
    "erode",
    "largest-component",
    "dilate",
    "reverse-transform",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRegion {
    pub mask: BinaryMask,
    /// Centroid of the region in world coordinates; the flow source point.
    pub centroid: [f64; 3],
    pub voxel_count: usize,
    /// Set voxels after each step.
    pub step_counts: [usize; 6],
}

impl CandidateRegion {
    /// Wraps an externally supplied seed mask.
    pub fn from_mask(mask: BinaryMask) -> Result<Self> {
        let centroid = mask.centroid().ok_or(Error::EmptyRegion)?;
        let n = mask.count();
        Ok(CandidateRegion {
            mask,
            centroid,
            voxel_count: n,
            step_counts: [n; 6],
        })
    }

    pub fn report(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.push("candidate_voxels", self.voxel_count)
            .push_f64("centroid_x", self.centroid[0])
            .push_f64("centroid_y", self.centroid[1])
            .push_f64("centroid_z", self.centroid[2]);
        for (name, n) in STEP_NAMES.iter().zip(self.step_counts) {
            rec.push(format!("step_{}", name.replace('-', "_")), n);
        }
        rec
    }
}

/// `b = 1` where the map is strictly greater than `psi`.
pub fn binarize_gbbm(gbbm: &ScalarVolume, psi: f64, omega: f64) -> Result<BinaryMask> {
    if !(psi > 0.0 && psi < omega) {
        return Err(Error::invalid(format!("psi must lie in (0, {omega}), got {psi}")));
    }
    BinaryMask::new(
        *gbbm.grid(),
        gbbm.data().iter().map(|&a| a as f64 > psi).collect(),
    )
}

pub fn extract_candidate(
    gbbm: &ScalarVolume,
    brain_mask: &BinaryMask,
    params: &CandidateParams,
    reverse: Option<&ReverseTransform>,
) -> Result<CandidateRegion> {
    params.validate()?;
    gbbm.grid().ensure_same(brain_mask.grid(), "map vs brain mask")?;
    let mut counts = [0usize; 6];
    let check = |step: usize, m: &BinaryMask, counts: &mut [usize; 6]| -> Result<()> {
        counts[step - 1] = m.count();
        if counts[step - 1] == 0 {
            return Err(Error::NoCandidate {
                step,
                name: STEP_NAMES[step - 1],
            });
        }
        Ok(())
    };

    let stripped = mask_boundary_strip(brain_mask, params.strip_depth)?;
    check(1, &stripped, &mut counts)?;
    let mut map = gbbm.clone();
    for (v, &inside) in map.data_mut().iter_mut().zip(stripped.data()) {
        if !inside {
            *v = 0.0;
        }
    }

    let binary = binarize_gbbm(&map, params.psi, params.omega)?;
    check(2, &binary, &mut counts)?;

    let eroded = morphology(&binary, MorphMode::Erode, 1, params.erode_iters)?;
    check(3, &eroded, &mut counts)?;

    let largest = largest_component(&eroded, params.connectivity)?;
    check(4, &largest, &mut counts)?;

    let dilated = morphology(&largest, MorphMode::Dilate, 1, params.dilate_iters)?
        .intersection(&stripped)?;
    check(5, &dilated, &mut counts)?;

    let out = match reverse {
        Some(r) => resample_mask(&dilated, &r.transform, r.target.dims, r.target.spacing)?,
        None => dilated,
    };
    check(6, &out, &mut counts)?;

    let centroid = out.centroid().ok_or(Error::EmptyRegion)?;
    Ok(CandidateRegion {
        voxel_count: counts[5],
        mask: out,
        centroid,
        step_counts: counts,
    })
}
