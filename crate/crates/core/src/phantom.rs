//! Synthetic atlases and patients with planted tumors.
//!
//! The head is an ellipsoid of concentric soft shells: a CSF ventricle, a
//! white-matter core, a thick gray-matter cortex mixed with sulcal CSF, and
//! a CSF rim. Intensities follow one Gaussian per tissue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::brainmap::ProbabilisticAtlas;
use crate::error::{Error, Result};
use crate::kv::KvRecord;
use crate::ngmm::Tissue;
use crate::volume::{BinaryMask, Grid, ScalarVolume};

/// Raw intensity mean per tissue (CSF, GM, WM).
pub const TISSUE_MEANS: [f64; 3] = [180.0, 330.0, 430.0];
/// Raw intensity standard deviation per tissue.
pub const TISSUE_STDS: [f64; 3] = [25.0, 30.0, 35.0];

/// Brain semi-axes as a fraction of each grid extent.
const BRAIN_FRACTION: f64 = 0.47;
/// Logistic width of shell edges, in normalized radius.
const SHELL_WIDTH: f64 = 0.015;

/// Outer edge (normalized radius) and tissue composition of each shell.
const SHELLS: [(f64, [f64; 3]); 4] = [
    (0.13, [0.90, 0.07, 0.03]),
    (0.33, [0.03, 0.07, 0.90]),
    (0.90, [0.25, 0.70, 0.05]),
    (1.00, [0.85, 0.15, 0.00]),
];

pub const MIN_DIM: usize = 32;

fn brain_center(grid: &Grid) -> [f64; 3] {
    let mut c = [0.0; 3];
    for a in 0..3 {
        c[a] = (grid.dims[a] as f64 - 1.0) / 2.0 * grid.spacing[a];
    }
    c
}

fn semi_axes(grid: &Grid) -> [f64; 3] {
    let mut s = [0.0; 3];
    for a in 0..3 {
        s[a] = BRAIN_FRACTION * grid.dims[a] as f64 * grid.spacing[a];
    }
    s
}

fn normalized_radius(grid: &Grid, p: [usize; 3]) -> f64 {
    let c = brain_center(grid);
    let s = semi_axes(grid);
    let w = grid.world(p);
    (0..3).map(|a| ((w[a] - c[a]) / s[a]).powi(2)).sum::<f64>().sqrt()
}

fn logistic_below(r: f64, edge: f64) -> f64 {
    1.0 / (1.0 + ((r - edge) / SHELL_WIDTH).exp())
}

/// Tissue probabilities at normalized radius `r`; zero outside the brain.
fn composition(r: f64) -> [f64; 3] {
    if r > 1.0 {
        return [0.0; 3];
    }
    let mut out = [0.0; 3];
    let mut below_prev = 0.0;
    for (edge, mix) in SHELLS {
        let below = logistic_below(r, edge);
        let m = below - below_prev;
        for t in 0..3 {
            out[t] += m * mix[t];
        }
        below_prev = below;
    }
    out
}

fn sample_label(rng: &mut ChaCha8Rng, probs: [f64; 3]) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    if u < probs[0] {
        0
    } else if u < probs[0] + probs[1] {
        1
    } else {
        2
    }
}

/// Draws a labelled image from the atlas maps; voxels outside the mask are 0.
fn draw_tissue_image(atlas_maps: &[ScalarVolume; 3], mask: &BinaryMask, seed: u64) -> ScalarVolume {
    let grid = *mask.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: [Normal<f64>; 3] =
        std::array::from_fn(|t| Normal::new(TISSUE_MEANS[t], TISSUE_STDS[t]).expect("positive std"));
    let data = (0..grid.len())
        .map(|i| {
            if !mask.data()[i] {
                return 0.0;
            }
            let probs = std::array::from_fn(|t| atlas_maps[t].data()[i] as f64);
            let label = sample_label(&mut rng, probs);
            noise[label].sample(&mut rng).max(0.0) as f32
        })
        .collect();
    ScalarVolume::from_raw(grid, data)
}

/// Builds a pseudo-atlas on a unit-spacing grid.
pub fn synth_atlas(dims: [usize; 3], seed: u64) -> Result<ProbabilisticAtlas> {
    if dims.iter().any(|&d| d < MIN_DIM) {
        return Err(Error::invalid(format!("phantom dims must be >= {MIN_DIM}, got {dims:?}")));
    }
    let grid = Grid::new(dims, [1.0; 3])?;
    let radii: Vec<f64> = (0..grid.len()).map(|i| normalized_radius(&grid, grid.coords(i))).collect();
    let brain_mask = BinaryMask::new(grid, radii.iter().map(|&r| r <= 1.0).collect())?;
    let comps: Vec<[f64; 3]> = radii.iter().map(|&r| composition(r)).collect();
    let tissues: [ScalarVolume; 3] = std::array::from_fn(|t| {
        ScalarVolume::from_raw(grid, comps.iter().map(|c| c[t] as f32).collect())
    });
    let template = draw_tissue_image(&tissues, &brain_mask, seed);
    ProbabilisticAtlas::new(template, tissues, brain_mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TumorShape {
    Sphere,
    Ellipsoid,
    /// Sphere with a seeded low-frequency radial perturbation.
    Blob,
}

impl TumorShape {
    pub fn name(self) -> &'static str {
        match self {
            TumorShape::Sphere => "sphere",
            TumorShape::Ellipsoid => "ellipsoid",
            TumorShape::Blob => "blob",
        }
    }
}

impl std::str::FromStr for TumorShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(TumorShape::Sphere),
            "ellipsoid" => Ok(TumorShape::Ellipsoid),
            "blob" => Ok(TumorShape::Blob),
            other => Err(Error::invalid(format!("unknown tumor shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumorSpec {
    pub shape: TumorShape,
    /// World coordinates.
    pub center: [f64; 3],
    /// Semi-axes in world units; spheres and blobs use the first.
    pub radii: [f64; 3],
    /// Intensity offset in units of the local tissue standard deviation.
    /// Either 0 (control) or at least 3 in magnitude.
    pub offset: f64,
    pub seed: u64,
}

/// Fraction of the z semi-axis between brain center and default tumor center.
const DEFAULT_DEPTH: f64 = 0.63;

impl TumorSpec {
    /// Tumor inside the cortex band above the brain center.
    pub fn in_cortex(grid: &Grid, shape: TumorShape, radii: [f64; 3], offset: f64, seed: u64) -> Self {
        let mut center = brain_center(grid);
        center[2] += DEFAULT_DEPTH * semi_axes(grid)[2];
        TumorSpec {
            shape,
            center,
            radii,
            offset,
            seed,
        }
    }

    pub fn sphere(grid: &Grid, radius: f64, offset: f64, seed: u64) -> Self {
        Self::in_cortex(grid, TumorShape::Sphere, [radius; 3], offset, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("tumor center must be finite"));
        }
        let used = match self.shape {
            TumorShape::Ellipsoid => &self.radii[..],
            _ => &self.radii[..1],
        };
        if !used.iter().all(|&r| r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("tumor radii must be positive, got {:?}", self.radii)));
        }
        if !self.offset.is_finite() || (self.offset != 0.0 && self.offset.abs() < 3.0) {
            return Err(Error::invalid(format!(
                "tumor offset must be 0 or at least 3 in magnitude, got {}",
                self.offset
            )));
        }
        Ok(())
    }

    /// Exact planted region on `grid`.
    pub fn region(&self, grid: &Grid) -> Result<BinaryMask> {
        self.validate()?;
        let c = self.center;
        let lobes = blob_lobes(self.seed);
        Ok(BinaryMask::from_fn(*grid, |p| {
            let w = grid.world(p);
            let d = [w[0] - c[0], w[1] - c[1], w[2] - c[2]];
            match self.shape {
                TumorShape::Sphere => d.iter().map(|v| v * v).sum::<f64>() <= self.radii[0].powi(2),
                TumorShape::Ellipsoid => {
                    (0..3).map(|a| (d[a] / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
                }
                TumorShape::Blob => {
                    let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if len == 0.0 {
                        return true;
                    }
                    let u = [d[0] / len, d[1] / len, d[2] / len];
                    let bump: f64 = lobes
                        .iter()
                        .map(|(k, phase, amp)| amp * ((k[0] * u[0] + k[1] * u[1] + k[2] * u[2]) * 2.0 + phase).cos())
                        .sum();
                    len <= self.radii[0] * (1.0 + bump)
                }
            }
        }))
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.push("tumor_shape", self.shape.name())
            .push_f64("tumor_center_x", self.center[0])
            .push_f64("tumor_center_y", self.center[1])
            .push_f64("tumor_center_z", self.center[2])
            .push_f64("tumor_radius_x", self.radii[0])
            .push_f64("tumor_radius_y", self.radii[1])
            .push_f64("tumor_radius_z", self.radii[2])
            .push_f64("tumor_offset", self.offset)
            .push("tumor_seed", self.seed);
        rec
    }
}

/// Three random unit directions, phases and amplitudes (total at most 0.2).
fn blob_lobes(seed: u64) -> [([f64; 3], f64, f64); 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10b);
    std::array::from_fn(|_| {
        let mut k = [0.0f64; 3];
        loop {
            for v in &mut k {
                *v = rng.random_range(-1.0..1.0);
            }
            let n = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
            if n > 0.1 && n <= 1.0 {
                k.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.02..0.066);
        (k, phase, amp)
    })
}

/// Patient image (fresh anatomy and noise drawn from the atlas maps) with
/// the tumor region overwritten, plus its ground-truth mask.
pub fn synth_patient(atlas: &ProbabilisticAtlas, tumor: &TumorSpec) -> Result<(ScalarVolume, BinaryMask)> {
    let grid = *atlas.grid();
    let truth = tumor.region(&grid)?;
    if truth.is_empty() {
        return Err(Error::invalid("tumor covers no voxels"));
    }
    if !truth.is_subset_of(&atlas.brain_mask) {
        return Err(Error::invalid("tumor does not fit inside the brain mask"));
    }
    let mut patient = draw_tissue_image(&atlas.tissues, &atlas.brain_mask, tumor.seed);
    let value = tumor_intensity(atlas, tumor)?;
    for (v, &t) in patient.data_mut().iter_mut().zip(truth.data()) {
        if t {
            *v = value;
        }
    }
    Ok((patient, truth))
}

/// `mean + offset * std` of the dominant tissue at the tumor center.
pub fn tumor_intensity(atlas: &ProbabilisticAtlas, tumor: &TumorSpec) -> Result<f32> {
    let t = host_tissue(atlas, tumor.center)?.index();
    Ok((TISSUE_MEANS[t] + tumor.offset * TISSUE_STDS[t]).max(0.0) as f32)
}

/// Tissue with the highest atlas probability at the voxel nearest `center`.
pub fn host_tissue(atlas: &ProbabilisticAtlas, center: [f64; 3]) -> Result<Tissue> {
    let grid = atlas.grid();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let v = (center[a] / grid.spacing[a]).round();
        if !(v >= 0.0 && (v as usize) < grid.dims[a]) {
            return Err(Error::invalid("tumor center outside the grid"));
        }
        idx[a] = v as usize;
    }
    let i = grid.index(idx[0], idx[1], idx[2]);
    let mut best = Tissue::Csf;
    for t in Tissue::ALL {
        if atlas.tissue_map(t).data()[i] > atlas.tissue_map(best).data()[i] {
            best = t;
        }
    }
    Ok(best)
}

/// Every generator parameter as key=value.
pub fn manifest(dims: [usize; 3], atlas_seed: u64, tumor: &TumorSpec) -> KvRecord {
    let mut rec = KvRecord::new();
    rec.push("dims", format!("{} {} {}", dims[0], dims[1], dims[2]))
        .push("spacing", "1 1 1")
        .push("atlas_seed", atlas_seed)
        .push_f64("brain_fraction", BRAIN_FRACTION)
        .push_f64("shell_width", SHELL_WIDTH);
    for (i, (edge, mix)) in SHELLS.iter().enumerate() {
        rec.push_f64(format!("shell{i}_edge"), *edge);
        for t in Tissue::ALL {
            rec.push_f64(format!("shell{i}_{}", t.name()), mix[t.index()]);
        }
    }
    for t in Tissue::ALL {
        let name = t.name();
        rec.push_f64(format!("{name}_mean"), TISSUE_MEANS[t.index()])
            .push_f64(format!("{name}_std"), TISSUE_STDS[t.index()]);
    }
    for (k, v) in tumor.to_kv().entries() {
        rec.push(k.clone(), v);
    }
    rec
}
