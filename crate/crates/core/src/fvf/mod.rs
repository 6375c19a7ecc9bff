//! Level-set segmentation driven by curvature and a fluid-vector-flow
//! external force seeded by the candidate region.

mod distance;
mod force;

pub use distance::{reinitialize, signed_distance, squared_edt};
pub use force::{directional_cosine, edge_map, external_force, ForceContext, ForceSample, MIN_NORM};

use rayon::prelude::*;

use crate::candidate::CandidateRegion;
use crate::error::{Error, Result};
use crate::kv::KvRecord;
use crate::volume::{BinaryMask, Grid, ScalarVolume};

/// Default narrow-band half width, in voxels.
pub const DEFAULT_BAND: usize = 6;

/// Default edge-map smoothing, in world units.
pub const DEFAULT_EDGE_SIGMA: f64 = 1.0;

/// Implicit surface: the region is `{phi < 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    pub phi: ScalarVolume,
    pub iteration: usize,
    /// Half width of the update band, in voxels; 0 updates the whole grid.
    pub band_halfwidth: usize,
}

impl LevelSetField {
    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }
}

/// Signed distance field of the candidate mask.
pub fn signed_distance_init(region: &CandidateRegion, band_halfwidth: usize) -> Result<LevelSetField> {
    Ok(LevelSetField {
        phi: signed_distance(&region.mask)?,
        iteration: 0,
        band_halfwidth,
    })
}

/// Voxels with `phi < 0`.
pub fn zero_level_mask(ls: &LevelSetField) -> BinaryMask {
    BinaryMask::new(*ls.grid(), ls.phi.data().iter().map(|&v| v < 0.0).collect())
        .expect("mask built on the field's own grid")
}

/// Largest stable step for the explicit scheme.
pub fn stability_bound(alpha: f64, beta: f64, h: f64) -> f64 {
    0.9 / (6.0 * alpha / (h * h) + 3.0 * beta / h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionParams {
    pub dt: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub reinit_every: usize,
    /// Fractional change in inside volume per reinit interval below which
    /// the evolution stops.
    pub stop_tol: f64,
}

impl EvolutionParams {
    /// Defaults with `dt` at the stability bound for spacing `h`.
    pub fn for_spacing(h: f64) -> Self {
        let (alpha, beta) = (0.2, 1.0);
        EvolutionParams {
            dt: stability_bound(alpha, beta, h),
            alpha,
            beta,
            max_iters: 300,
            reinit_every: 20,
            stop_tol: 1e-3,
        }
    }

    /// Recomputes `dt` from the bound after changing the weights.
    pub fn with_weights(mut self, alpha: f64, beta: f64, h: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.dt = stability_bound(alpha, beta, h);
        self
    }

    /// Checks ranges. The stability bound is not enforced here; a step that
    /// is too large shows up as an instability error during evolution.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("alpha and beta must be finite and non-negative"));
        }
        if self.max_iters < 1 || self.reinit_every < 1 {
            return Err(Error::invalid("max_iters and reinit_every must be >= 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol must be non-negative"));
        }
        Ok(())
    }

    pub fn is_stable(&self, h: f64) -> bool {
        self.dt <= stability_bound(self.alpha, self.beta, h) * (1.0 + 1e-12)
    }
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self::for_spacing(1.0)
    }
}

/// Diagnostics for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub inside_voxels: usize,
    pub max_update: f64,
    /// Voxels adjacent to the zero level set.
    pub interface_voxels: usize,
    pub cos_gamma_mean: f64,
    pub cos_gamma_min: f64,
    pub cos_gamma_max: f64,
}

impl IterationRecord {
    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.push("iteration", self.iteration)
            .push("inside_voxels", self.inside_voxels)
            .push_f64("max_update", self.max_update)
            .push("interface_voxels", self.interface_voxels)
            .push_f64("cos_gamma_mean", self.cos_gamma_mean)
            .push_f64("cos_gamma_min", self.cos_gamma_min)
            .push_f64("cos_gamma_max", self.cos_gamma_max);
        rec
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub field: LevelSetField,
    pub log: Vec<IterationRecord>,
    /// True when the volume-change criterion stopped the run.
    pub converged: bool,
}

impl Evolution {
    pub fn render_log(&self) -> String {
        self.log.iter().map(|r| r.to_kv().render_line() + "\n").collect()
    }
}

/// Runs the explicit update
/// `phi += dt * (alpha * K * |grad phi| - beta * E . grad phi)`
/// with mean curvature `K` and upwind differences for the advection term.
///
/// Fails with [`Error::Instability`] when `phi` turns non-finite, grows past
/// a thousand grid diagonals, or changes by more than the band half width in
/// a single step.
pub fn evolve(ls: &LevelSetField, ctx: &ForceContext, params: &EvolutionParams) -> Result<Evolution> {
    params.validate()?;
    let grid = *ls.grid();
    grid.ensure_same(ctx.edge().grid(), "level set vs force context")?;
    if grid.dims.iter().any(|&d| d < 3) {
        return Err(Error::invalid("level-set grid needs at least 3 voxels per axis"));
    }
    if !ls.phi.is_finite() {
        return Err(Error::Instability {
            iteration: ls.iteration,
        });
    }
    let force = ctx.force_field();
    let h = grid.min_spacing();
    let band = if ls.band_halfwidth == 0 {
        f32::INFINITY
    } else {
        (ls.band_halfwidth as f64 * h) as f32
    };
    let diag = grid
        .dims
        .iter()
        .zip(grid.spacing)
        .map(|(&n, s)| (n as f64 * s).powi(2))
        .sum::<f64>()
        .sqrt();
    let blowup = 1e3 * diag;
    // A stable step moves in-band values by O(h); crossing the whole band in
    // one step only happens when the time step outruns the scheme.
    let jump_limit = if band.is_finite() { band as f64 } else { diag };

    let mut field = ls.clone();
    let mut next = field.phi.data().to_vec();
    let mut log = Vec::new();
    let mut last_inside = count_inside(field.phi.data());
    let mut converged = false;

    for step in 1..=params.max_iters {
        let cur = field.phi.data();
        next.par_iter_mut().enumerate().for_each(|(i, out)| {
            let v = cur[i];
            *out = if v.abs() >= band {
                v
            } else {
                let u = update(&grid, cur, i, force.data()[i], params);
                (v as f64 + params.dt * u) as f32
            };
        });
        let mut max_update = 0.0f64;
        let mut bad = false;
        for (a, b) in cur.iter().zip(&next) {
            if !b.is_finite() || (*b as f64).abs() > blowup {
                bad = true;
                break;
            }
            max_update = max_update.max((*b as f64 - *a as f64).abs());
        }
        let iteration = ls.iteration + step;
        if bad || max_update > jump_limit {
            return Err(Error::Instability { iteration });
        }
        let prev = std::mem::replace(&mut field.phi, ScalarVolume::from_raw(grid, next));
        next = prev.into_data();
        field.iteration = iteration;
        log.push(diagnostics(&field, ctx, iteration, max_update));

        if step % params.reinit_every == 0 {
            field = reinitialize(&field)?;
            let inside = count_inside(field.phi.data());
            let change = inside.abs_diff(last_inside) as f64 / last_inside.max(1) as f64;
            last_inside = inside;
            if change < params.stop_tol {
                converged = true;
                break;
            }
        }
    }
    Ok(Evolution {
        field,
        log,
        converged,
    })
}

fn count_inside(phi: &[f32]) -> usize {
    phi.iter().filter(|&&v| v < 0.0).count()
}

/// Right-hand side at voxel `i`.
fn update(grid: &Grid, phi: &[f32], i: usize, e: [f32; 3], p: &EvolutionParams) -> f64 {
    let c = grid.coords(i);
    let [nx, ny, _] = grid.dims;
    let strides = [1usize, nx, nx * ny];
    let at = |j: usize| phi[j] as f64;
    let v = at(i);

    // One-sided differences per axis, with the missing side linearly extrapolated at faces.
    let mut dm = [0.0; 3];
    let mut dp = [0.0; 3];
    let mut d1 = [0.0; 3];
    let mut d2 = [0.0; 3];
    for a in 0..3 {
        let h = grid.spacing[a];
        let lo = if c[a] > 0 { at(i - strides[a]) } else { 2.0 * v - at(i + strides[a]) };
        let hi = if c[a] + 1 < grid.dims[a] { at(i + strides[a]) } else { 2.0 * v - at(i - strides[a]) };
        dm[a] = (v - lo) / h;
        dp[a] = (hi - v) / h;
        d1[a] = (hi - lo) / (2.0 * h);
        d2[a] = (hi - 2.0 * v + lo) / (h * h);
    }

    let mut curv_term = 0.0;
    if p.alpha > 0.0 {
        let mixed = |a: usize, b: usize| -> f64 {
            let ca = clamp_shift(c[a], grid.dims[a]);
            let cb = clamp_shift(c[b], grid.dims[b]);
            let idx = |sa: i64, sb: i64| {
                let mut q = c;
                q[a] = (ca as i64 + sa) as usize;
                q[b] = (cb as i64 + sb) as usize;
                grid.index(q[0], q[1], q[2])
            };
            (at(idx(1, 1)) - at(idx(1, -1)) - at(idx(-1, 1)) + at(idx(-1, -1)))
                / (4.0 * grid.spacing[a] * grid.spacing[b])
        };
        let (fx, fy, fz) = (d1[0], d1[1], d1[2]);
        let g2 = fx * fx + fy * fy + fz * fz;
        let num = d2[0] * (fy * fy + fz * fz) + d2[1] * (fx * fx + fz * fz) + d2[2] * (fx * fx + fy * fy)
            - 2.0 * fx * fy * mixed(0, 1)
            - 2.0 * fx * fz * mixed(0, 2)
            - 2.0 * fy * fz * mixed(1, 2);
        curv_term = p.alpha * num / (2.0 * (g2 + 1e-12));
    }

    let mut adv = 0.0;
    if p.beta > 0.0 {
        for a in 0..3 {
            let ea = e[a] as f64;
            adv += if ea > 0.0 { ea * dm[a] } else { ea * dp[a] };
        }
    }
    curv_term - p.beta * adv
}

/// Center index for a 3-point stencil, shifted inward at faces.
fn clamp_shift(c: usize, n: usize) -> usize {
    c.clamp(1, n - 2)
}

fn diagnostics(field: &LevelSetField, ctx: &ForceContext, iteration: usize, max_update: f64) -> IterationRecord {
    let grid = field.grid();
    let phi = field.phi.data();
    let [nx, ny, _] = grid.dims;
    let strides = [1usize, nx, nx * ny];
    let mut inside = 0usize;
    let mut n = 0usize;
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..phi.len() {
        let neg = phi[i] < 0.0;
        inside += neg as usize;
        let c = grid.coords(i);
        let mut interface = false;
        let mut normal = [0.0; 3];
        for a in 0..3 {
            let lo_i = (c[a] > 0).then(|| i - strides[a]);
            let hi_i = (c[a] + 1 < grid.dims[a]).then(|| i + strides[a]);
            for j in [lo_i, hi_i].into_iter().flatten() {
                interface |= (phi[j] < 0.0) != neg;
            }
            let l = lo_i.map_or(phi[i], |j| phi[j]) as f64;
            let u = hi_i.map_or(phi[i], |j| phi[j]) as f64;
            normal[a] = (u - l) / grid.spacing[a];
        }
        if !interface {
            continue;
        }
        let (_, _, dir) = ctx.force_at(i);
        if let Some(cg) = dir.and_then(|d| directional_cosine(normal, d).ok()) {
            n += 1;
            sum += cg;
            lo = lo.min(cg);
            hi = hi.max(cg);
        }
    }
    let (mean, lo, hi) = if n == 0 { (0.0, 0.0, 0.0) } else { (sum / n as f64, lo, hi) };
    IterationRecord {
        iteration,
        inside_voxels: inside,
        max_update,
        interface_voxels: n,
        cos_gamma_mean: mean,
        cos_gamma_min: lo,
        cos_gamma_max: hi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VectorField;

    fn sphere_mask(n: usize, r: f64) -> BinaryMask {
        let g = Grid::cube(n);
        let c = (n as f64 - 1.0) / 2.0;
        BinaryMask::from_fn(g, |p| {
            let w = g.world(p);
            (0..3).map(|a| (w[a] - c).powi(2)).sum::<f64>() <= r * r
        })
    }

    fn idle_ctx(g: Grid) -> ForceContext {
        ForceContext::new(ScalarVolume::zeros(g), VectorField::zeros(g), [0.0; 3], BinaryMask::empty(g))
            .unwrap()
    }

    #[test]
    fn sphere_distance_and_volume() {
        let m = sphere_mask(33, 8.0);
        let region = CandidateRegion::from_mask(m.clone()).unwrap();
        let ls = signed_distance_init(&region, DEFAULT_BAND).unwrap();
        let centre = ls.phi.get(16, 16, 16);
        assert!((centre + 8.0).abs() <= 1.0, "{centre}");
        assert_eq!(zero_level_mask(&ls), m);
        let vol = 4.0 / 3.0 * std::f64::consts::PI * 512.0;
        assert!((m.count() as f64 - vol).abs() / vol < 0.05);
    }

    #[test]
    fn no_forces_keeps_surface() {
        let m = sphere_mask(24, 6.0);
        let ls = signed_distance_init(&CandidateRegion::from_mask(m.clone()).unwrap(), 0).unwrap();
        let mut p = EvolutionParams::default();
        p.alpha = 0.0;
        p.beta = 0.0;
        p.max_iters = 40;
        p.stop_tol = 0.0;
        let out = evolve(&ls, &idle_ctx(*m.grid()), &p).unwrap();
        assert_eq!(zero_level_mask(&out.field), m);
        assert_eq!(out.field.iteration, 40);
        assert_eq!(out.log.len(), 40);
    }

    #[test]
    fn stability_bound_value() {
        assert!((stability_bound(0.2, 1.0, 1.0) - 0.9 / 4.2).abs() < 1e-15);
        assert!(EvolutionParams::default().is_stable(1.0));
    }

    #[test]
    fn all_positive_field_is_empty() {
        let g = Grid::cube(4);
        let ls = LevelSetField {
            phi: ScalarVolume::filled(g, 1.0),
            iteration: 0,
            band_halfwidth: 0,
        };
        assert!(zero_level_mask(&ls).is_empty());
    }
}
