//! Exact Euclidean distance transforms and level-set redistancing.

use super::LevelSetField;
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Grid, ScalarVolume};

const FAR: f64 = 1e30;

/// Squared world distance from every voxel to the nearest `true` site
/// (separable lower-envelope transform). Voxels with no reachable site get
/// `f64::INFINITY`.
pub fn squared_edt(grid: &Grid, sites: &[bool]) -> Vec<f64> {
    let mut d: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let [nx, ny, _] = grid.dims;
    let strides = [1, nx, nx * ny];
    let nmax = *grid.dims.iter().max().unwrap();
    let mut f = vec![0.0; nmax];
    let mut out = vec![0.0; nmax];
    let mut v = vec![0usize; nmax];
    let mut z = vec![0.0; nmax + 1];
    for axis in 0..3 {
        let n = grid.dims[axis];
        let w2 = grid.spacing[axis] * grid.spacing[axis];
        for start in line_starts(grid, axis) {
            for i in 0..n {
                f[i] = d[start + i * strides[axis]];
            }
            envelope_1d(&f[..n], w2, &mut out[..n], &mut v, &mut z);
            for i in 0..n {
                d[start + i * strides[axis]] = out[i];
            }
        }
    }
    d.iter_mut().for_each(|x| {
        if *x >= FAR * 0.5 {
            *x = f64::INFINITY;
        }
    });
    d
}

fn envelope_1d(f: &[f64], w2: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let cost = |q: usize| f[q] + w2 * (q * q) as f64;
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = (cost(q) - cost(p)) / (2.0 * w2 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = (w2 * dq * dq + f[p]).min(FAR);
    }
}

fn line_starts(grid: &Grid, axis: usize) -> Vec<usize> {
    let [nx, ny, nz] = grid.dims;
    let mut out = Vec::new();
    let (a, b) = match axis {
        0 => (ny, nz),
        1 => (nx, nz),
        _ => (nx, ny),
    };
    for j in 0..b {
        for i in 0..a {
            out.push(match axis {
                0 => grid.index(0, i, j),
                1 => grid.index(i, 0, j),
                _ => grid.index(i, j, 0),
            });
        }
    }
    out
}

/// Signed distance of a mask: inside voxels are `-(d_out - h/2)`, outside
/// voxels `d_in - h/2`, where `d_out`/`d_in` are world distances to the
/// nearest outside/inside voxel center and `h` is the smallest spacing.
/// Space beyond the grid counts as outside.
pub fn signed_distance(mask: &BinaryMask) -> Result<ScalarVolume> {
    if mask.is_empty() {
        return Err(Error::invalid("cannot build a signed distance from an empty mask"));
    }
    let grid = *mask.grid();
    let half = 0.5 * grid.min_spacing();
    let to_inside = squared_edt(&grid, mask.data());

    // Distance to outside is computed on a grid padded by one background
    // layer so that masks touching the border still see an outside.
    let pdims = [grid.dims[0] + 2, grid.dims[1] + 2, grid.dims[2] + 2];
    let pgrid = Grid::new(pdims, grid.spacing)?;
    let mut outside = vec![true; pgrid.len()];
    for (i, &m) in mask.data().iter().enumerate() {
        let [x, y, z] = grid.coords(i);
        outside[pgrid.index(x + 1, y + 1, z + 1)] = !m;
    }
    let to_outside = squared_edt(&pgrid, &outside);

    let data = (0..grid.len())
        .map(|i| {
            if mask.data()[i] {
                let [x, y, z] = grid.coords(i);
                let d = to_outside[pgrid.index(x + 1, y + 1, z + 1)].sqrt();
                -(d - half) as f32
            } else {
                (to_inside[i].sqrt() - half) as f32
            }
        })
        .collect();
    ScalarVolume::new(grid, data)
}

/// Restores `phi` to a signed distance function while keeping its zero level
/// set and sign pattern.
///
/// Voxels with a face neighbor of opposite sign are set to `phi / |grad phi|`
/// (central differences); the rest of the grid is filled by fast sweeping on
/// the eikonal equation.
pub fn reinitialize(ls: &LevelSetField) -> Result<LevelSetField> {
    let phi = &ls.phi;
    if !phi.is_finite() {
        return Err(Error::Instability {
            iteration: ls.iteration,
        });
    }
    let grid = *phi.grid();
    let data = phi.data();
    let n = grid.len();
    let [nx, ny, _] = grid.dims;
    let strides = [1usize, nx, nx * ny];
    let inside = |i: usize| data[i] < 0.0;

    let mut dist = vec![f64::INFINITY; n];
    let mut fixed = vec![false; n];
    let mut any_interface = false;
    for i in 0..n {
        let c = grid.coords(i);
        let mut crossing = false;
        for a in 0..3 {
            if c[a] > 0 && inside(i - strides[a]) != inside(i) {
                crossing = true;
            }
            if c[a] + 1 < grid.dims[a] && inside(i + strides[a]) != inside(i) {
                crossing = true;
            }
        }
        if !crossing {
            continue;
        }
        any_interface = true;
        fixed[i] = true;
        dist[i] = interface_distance(&grid, data, i, c);
    }
    if !any_interface {
        return Ok(ls.clone());
    }

    fast_sweep(&grid, &mut dist, &fixed);

    let out: Vec<f32> = (0..n)
        .map(|i| {
            let d = dist[i] as f32;
            if inside(i) {
                -d.max(f32::MIN_POSITIVE)
            } else {
                d
            }
        })
        .collect();
    Ok(LevelSetField {
        phi: ScalarVolume::new(grid, out)?,
        iteration: ls.iteration,
        band_halfwidth: ls.band_halfwidth,
    })
}

fn interface_distance(grid: &Grid, data: &[f32], i: usize, c: [usize; 3]) -> f64 {
    let [nx, ny, _] = grid.dims;
    let strides = [1usize, nx, nx * ny];
    let v = data[i] as f64;
    let mut g2 = 0.0;
    let mut crossing_inv2 = 0.0;
    for a in 0..3 {
        let h = grid.spacing[a];
        let lo = (c[a] > 0).then(|| data[i - strides[a]] as f64);
        let hi = (c[a] + 1 < grid.dims[a]).then(|| data[i + strides[a]] as f64);
        let d = match (lo, hi) {
            (Some(l), Some(u)) => (u - l) / (2.0 * h),
            (Some(l), None) => (v - l) / h,
            (None, Some(u)) => (u - v) / h,
            (None, None) => 0.0,
        };
        g2 += d * d;
        // Fallback estimate from the sub-cell crossing along this axis.
        let mut t = f64::INFINITY;
        for nb in [lo, hi].into_iter().flatten() {
            if (nb < 0.0) != (v < 0.0) && nb != v {
                t = t.min(h * v / (v - nb));
            }
        }
        if t.is_finite() && t > 0.0 {
            crossing_inv2 += 1.0 / (t * t);
        }
    }
    if g2 > 1e-12 {
        (v.abs() / g2.sqrt()).min(grid.spacing.iter().copied().fold(0.0, f64::max))
    } else if crossing_inv2 > 0.0 {
        1.0 / crossing_inv2.sqrt()
    } else {
        0.0
    }
}

/// Gauss-Seidel sweeps in the 8 octant orderings until values settle.
fn fast_sweep(grid: &Grid, dist: &mut [f64], fixed: &[bool]) {
    let [nx, ny, nz] = grid.dims;
    let h = grid.spacing;
    for _round in 0..4 {
        let mut changed = 0.0f64;
        for dir in 0..8 {
            let xs: Vec<usize> = ordered(nx, dir & 1 != 0);
            let ys: Vec<usize> = ordered(ny, dir & 2 != 0);
            let zs: Vec<usize> = ordered(nz, dir & 4 != 0);
            for &z in &zs {
                for &y in &ys {
                    for &x in &xs {
                        let i = grid.index(x, y, z);
                        if fixed[i] {
                            continue;
                        }
                        let c = [x, y, z];
                        let mut a = [f64::INFINITY; 3];
                        let strides = [1usize, nx, nx * ny];
                        for ax in 0..3 {
                            if c[ax] > 0 {
                                a[ax] = a[ax].min(dist[i - strides[ax]]);
                            }
                            if c[ax] + 1 < grid.dims[ax] {
                                a[ax] = a[ax].min(dist[i + strides[ax]]);
                            }
                        }
                        let u = godunov(a, h);
                        if u < dist[i] {
                            changed = changed.max(if dist[i].is_finite() { dist[i] - u } else { f64::INFINITY });
                            dist[i] = u;
                        }
                    }
                }
            }
        }
        if changed < 1e-9 {
            break;
        }
    }
}

fn ordered(n: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    }
}

/// Largest `u` with `sum ((u - a_i)^+ / h_i)^2 = 1`.
fn godunov(a: [f64; 3], h: [f64; 3]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = (0..3).filter(|&k| a[k].is_finite()).map(|k| (a[k], h[k])).collect();
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut u = pairs[0].0 + pairs[0].1;
    for m in 2..=pairs.len() {
        if u <= pairs[m - 1].0 {
            break;
        }
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -1.0);
        for &(ai, hi) in &pairs[..m] {
            let w = 1.0 / (hi * hi);
            qa += w;
            qb += -2.0 * ai * w;
            qc += ai * ai * w;
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            break;
        }
        u = (-qb + disc.sqrt()) / (2.0 * qa);
    }
    u
}
