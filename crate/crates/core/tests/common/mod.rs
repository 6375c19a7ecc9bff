//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumorseg::{BinaryMask, Grid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random mask mixing iid noise with a few solid boxes.
pub fn random_mask(seed: u64, n: usize) -> BinaryMask {
    let mut r = rng(seed);
    let g = Grid::cube(n);
    let density = r.random_range(0.05..0.95);
    let mut m = BinaryMask::from_fn(g, |_| r.random_bool(density));
    for _ in 0..r.random_range(0..4) {
        let lo: [usize; 3] = std::array::from_fn(|_| r.random_range(0..n));
        let hi: [usize; 3] = std::array::from_fn(|a| (lo[a] + r.random_range(1..n / 2)).min(n));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    m.set(x, y, z, true);
                }
            }
        }
    }
    m
}

fn at(m: &BinaryMask, p: [i64; 3]) -> bool {
    let d = m.dims();
    (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < d[a]) && m.get(p[0] as usize, p[1] as usize, p[2] as usize)
}

/// One erosion (all) or dilation (any) over the 3x3x3 cube; outside is unset.
pub fn naive_step(m: &BinaryMask, erode: bool) -> BinaryMask {
    BinaryMask::from_fn(*m.grid(), |[x, y, z]| {
        let mut all = true;
        let mut any = false;
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let v = at(m, [x as i64 + dx, y as i64 + dy, z as i64 + dz]);
                    all &= v;
                    any |= v;
                }
            }
        }
        if erode {
            all
        } else {
            any
        }
    })
}

pub fn naive_morph(m: &BinaryMask, erode: bool, iterations: usize) -> BinaryMask {
    let mut out = m.clone();
    for _ in 0..iterations {
        out = naive_step(&out, erode);
    }
    out
}

/// Voxels within Chebyshev distance `r` of the grid faces.
pub fn border_band(g: Grid, r: usize) -> BinaryMask {
    BinaryMask::from_fn(g, |p| (0..3).any(|a| p[a] < r || p[a] + r >= g.dims[a]))
}

pub fn union(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    BinaryMask::new(*a.grid(), a.data().iter().zip(b.data()).map(|(x, y)| *x || *y).collect()).unwrap()
}

/// Component label per voxel by repeated minimum-label relaxation; the label
/// of a component is its smallest linear index. `usize::MAX` marks background.
pub fn relax_labels(m: &BinaryMask, full: bool) -> Vec<usize> {
    let g = *m.grid();
    let mut label: Vec<usize> = (0..g.len()).map(|i| if m.data()[i] { i } else { usize::MAX }).collect();
    let mut offs = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let nz = (dx != 0) as i32 + (dy != 0) as i32 + (dz != 0) as i32;
                if nz == 0 || (!full && nz > 1) {
                    continue;
                }
                offs.push([dx, dy, dz]);
            }
        }
    }
    for pass in 0.. {
        let mut changed = false;
        // Alternate sweep direction so labels travel both ways quickly.
        let order: Box<dyn Iterator<Item = usize>> = if pass % 2 == 0 {
            Box::new(0..g.len())
        } else {
            Box::new((0..g.len()).rev())
        };
        for i in order {
            if label[i] == usize::MAX {
                continue;
            }
            let c = g.coords(i);
            for o in &offs {
                let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                if !g.contains(p) {
                    continue;
                }
                let j = g.index(p[0] as usize, p[1] as usize, p[2] as usize);
                if label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    label
}

/// Largest component by relaxation labels; ties go to the smaller label.
pub fn naive_largest(m: &BinaryMask, full: bool) -> Option<BinaryMask> {
    let labels = relax_labels(m, full);
    let mut sizes = std::collections::BTreeMap::new();
    for &l in &labels {
        if l != usize::MAX {
            *sizes.entry(l).or_insert(0usize) += 1;
        }
    }
    let (&best, _) = sizes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
    Some(BinaryMask::new(*m.grid(), labels.iter().map(|&l| l == best).collect()).unwrap())
}

pub fn sphere(g: Grid, c: [f64; 3], r: f64) -> BinaryMask {
    BinaryMask::from_fn(g, |p| {
        let w = g.world(p);
        (0..3).map(|a| (w[a] - c[a]).powi(2)).sum::<f64>() <= r * r
    })
}

/// Relative error against an oracle value.
pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs()
    }
}
