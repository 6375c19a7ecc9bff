mod common;

use rand::Rng;

use tumorseg::candidate::CandidateRegion;
use tumorseg::fvf::{
    directional_cosine, evolve, external_force, reinitialize, signed_distance, signed_distance_init,
    squared_edt, stability_bound, zero_level_mask, EvolutionParams, ForceContext, LevelSetField,
};
use tumorseg::{BinaryMask, Error, Grid, ScalarVolume, VectorField};

use common::{random_mask, rng, sphere};

fn dist2(g: &Grid, a: [usize; 3], b: [i64; 3]) -> f64 {
    (0..3).map(|k| ((a[k] as i64 - b[k]) as f64 * g.spacing[k]).powi(2)).sum()
}

fn brute_edt(g: &Grid, sites: &[bool]) -> Vec<f64> {
    let pts: Vec<[i64; 3]> = (0..g.len())
        .filter(|&i| sites[i])
        .map(|i| g.coords(i).map(|c| c as i64))
        .collect();
    (0..g.len())
        .map(|i| {
            let p = g.coords(i);
            pts.iter().map(|&q| dist2(g, p, q)).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn anisotropic_mask(seed: u64) -> BinaryMask {
    let mut r = rng(seed);
    let g = Grid::new([11, 9, 7], [1.0, 1.5, 2.5]).unwrap();
    let p = r.random_range(0.05..0.6);
    BinaryMask::from_fn(g, |_| r.random_bool(p))
}

#[test]
fn edt_matches_brute_force_on_anisotropic_grids() {
    for seed in 0..20 {
        let m = anisotropic_mask(seed);
        let got = squared_edt(m.grid(), m.data());
        let want = brute_edt(m.grid(), m.data());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn signed_distance_matches_brute_force() {
    for seed in 0..20 {
        let m = anisotropic_mask(seed);
        if m.is_empty() {
            continue;
        }
        let g = *m.grid();
        let half = 0.5 * g.min_spacing();
        let phi = signed_distance(&m).unwrap();
        let inside: Vec<[i64; 3]> = (0..g.len()).filter(|&i| m.data()[i]).map(|i| g.coords(i).map(|c| c as i64)).collect();
        // Outside voxels plus one ring of virtual background around the grid.
        let mut outside: Vec<[i64; 3]> = Vec::new();
        for z in -1..=g.dims[2] as i64 {
            for y in -1..=g.dims[1] as i64 {
                for x in -1..=g.dims[0] as i64 {
                    let p = [x, y, z];
                    if !g.contains(p) || !m.get(x as usize, y as usize, z as usize) {
                        outside.push(p);
                    }
                }
            }
        }
        for i in 0..g.len() {
            let p = g.coords(i);
            let want = if m.data()[i] {
                -(outside.iter().map(|&q| dist2(&g, p, q)).fold(f64::INFINITY, f64::min).sqrt() - half)
            } else {
                inside.iter().map(|&q| dist2(&g, p, q)).fold(f64::INFINITY, f64::min).sqrt() - half
            };
            let got = phi.data()[i] as f64;
            assert!((got - want).abs() < 1e-4, "seed {seed} voxel {p:?}: {got} vs {want}");
        }
    }
}

#[test]
fn empty_mask_has_no_signed_distance() {
    assert!(signed_distance(&BinaryMask::empty(Grid::cube(4))).is_err());
    assert!(squared_edt(&Grid::cube(3), &[false; 27]).iter().all(|d| d.is_infinite()));
}

#[test]
fn zero_level_set_reproduces_the_candidate() {
    for seed in 0..30 {
        let m = random_mask(seed, 16);
        if m.is_empty() {
            continue;
        }
        let ls = signed_distance_init(&CandidateRegion::from_mask(m.clone()).unwrap(), 6).unwrap();
        assert_eq!(zero_level_mask(&ls), m, "seed {seed}");
    }
}

fn idle_ctx(g: Grid) -> ForceContext {
    ForceContext::new(ScalarVolume::zeros(g), VectorField::zeros(g), [0.0; 3], BinaryMask::empty(g)).unwrap()
}

fn plane(g: Grid, offset: f32) -> ScalarVolume {
    ScalarVolume::from_fn(g, |p| p[2] as f32 - offset)
}

#[test]
fn plane_is_a_fixed_point_of_reinitialization_and_flow() {
    let g = Grid::cube(24);
    let phi = plane(g, 10.3);
    let ls = LevelSetField { phi: phi.clone(), iteration: 0, band_halfwidth: 6 };

    let re = reinitialize(&ls).unwrap();
    let worst = re.phi.data().iter().zip(phi.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-3, "reinit moved the plane by {worst}");

    // Curvature only: the radial term of the force is never zero.
    let params = EvolutionParams { max_iters: 40, stop_tol: 0.0, ..EvolutionParams::for_spacing(1.0) }.with_weights(0.2, 0.0, 1.0);
    let out = evolve(&ls, &idle_ctx(g), &params).unwrap();
    let worst = out.field.phi.data().iter().zip(phi.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-3, "flow moved the plane by {worst}");
}

#[test]
fn reinitialization_preserves_signs() {
    let g = Grid::new([20, 18, 16], [1.0, 1.2, 0.8]).unwrap();
    let mut r = rng(5);
    for _ in 0..5 {
        let f: [f64; 3] = std::array::from_fn(|_| r.random_range(0.1..0.6));
        let s = r.random_range(0.5..4.0) as f32;
        let phi = ScalarVolume::from_fn(g, |p| {
            s * ((p[0] as f64 * f[0]).sin() + (p[1] as f64 * f[1]).cos() + (p[2] as f64 * f[2]).sin() - 0.3) as f32
        });
        let ls = LevelSetField { phi: phi.clone(), iteration: 3, band_halfwidth: 6 };
        let re = reinitialize(&ls).unwrap();
        assert_eq!(re.iteration, 3);
        for (a, b) in phi.data().iter().zip(re.phi.data()) {
            assert_eq!(*a < 0.0, *b < 0.0);
        }
    }
}

#[test]
fn reinitialization_rejects_non_finite_input() {
    let g = Grid::cube(5);
    let mut phi = plane(g, 2.5);
    phi.set(1, 1, 1, f32::NAN);
    let err = reinitialize(&LevelSetField { phi, iteration: 7, band_halfwidth: 6 }).unwrap_err();
    assert!(matches!(err, Error::Instability { iteration: 7 }));
}

fn random_ctx(seed: u64) -> ForceContext {
    let mut r = rng(seed);
    let g = Grid::new([12, 10, 8], [1.0, 0.9, 1.3]).unwrap();
    let grad: Vec<[f32; 3]> = (0..g.len())
        .map(|_| std::array::from_fn(|_| r.random_range(-2.0f32..2.0)))
        .collect();
    let center = g.world([r.random_range(0..12), r.random_range(0..10), r.random_range(0..8)]);
    let cand = BinaryMask::from_fn(g, |_| r.random_bool(0.4));
    ForceContext::new(ScalarVolume::zeros(g), VectorField::new(g, grad).unwrap(), center, cand).unwrap()
}

#[test]
fn external_force_is_unit_or_zero() {
    for seed in 0..10 {
        let ctx = random_ctx(seed);
        let field = ctx.force_field();
        for v in field.data() {
            let n = v.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-6, "norm {n}");
        }
    }
}

#[test]
fn external_force_matches_formula() {
    let mut r = rng(17);
    for seed in 0..10 {
        let ctx = random_ctx(seed);
        let g = *ctx.edge().grid();
        for i in 0..g.len() {
            let b = g.coords(i);
            let normal: [f64; 3] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
            let s = external_force(&ctx, b, normal).unwrap();

            let inside = ctx.candidate().data()[i];
            assert_eq!(s.delta, if inside { 1.0 } else { -1.0 });

            let w = g.world(b);
            let c = ctx.center();
            let l2 = [w[0] - c[0], w[1] - c[1], w[2] - c[2]];
            let len = l2.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len == 0.0 {
                assert_eq!(s.force, [0.0; 3]);
                assert_eq!(s.cos_gamma, None);
                continue;
            }
            let gr = ctx.edge_gradient().data()[i];
            let raw: [f64; 3] = std::array::from_fn(|k| gr[k] as f64 + s.delta * l2[k] / len);
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..3 {
                assert!((s.force[k] - raw[k] / n).abs() < 1e-12);
            }
            let nn = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos: f64 = (0..3).map(|k| normal[k] / nn * l2[k] / len).sum();
            assert!((s.cos_gamma.unwrap() - cos).abs() < 1e-12);
        }
    }
}

#[test]
fn force_queries_validate_inputs() {
    let ctx = random_ctx(0);
    assert!(matches!(external_force(&ctx, [12, 0, 0], [1.0, 0.0, 0.0]), Err(Error::OutOfRange(_))));
    assert!(directional_cosine([0.0; 3], [1.0, 0.0, 0.0]).is_err());
    assert_eq!(directional_cosine([2.0, 0.0, 0.0], [-3.0, 0.0, 0.0]).unwrap(), -1.0);
}

#[test]
fn curvature_flow_shrinks_convex_bodies_monotonically() {
    let g = Grid::cube(40);
    let ellipsoid = BinaryMask::from_fn(g, |p| {
        let d = [(p[0] as f64 - 19.5) / 12.0, (p[1] as f64 - 19.5) / 9.0, (p[2] as f64 - 19.5) / 7.0];
        d.iter().map(|v| v * v).sum::<f64>() <= 1.0
    });
    for body in [sphere(g, [19.5; 3], 9.0), ellipsoid] {
        let start = body.count();
        let ls = LevelSetField { phi: signed_distance(&body).unwrap(), iteration: 0, band_halfwidth: 6 };
        let dt = stability_bound(1.0, 0.0, 1.0);
        let params = EvolutionParams { dt, alpha: 1.0, beta: 0.0, max_iters: 120, reinit_every: 20, stop_tol: 0.0 };
        let out = evolve(&ls, &idle_ctx(g), &params).unwrap();
        let counts: Vec<usize> = out.log.iter().map(|r| r.inside_voxels).collect();
        assert!(counts[0] <= start);
        for w in counts.windows(2) {
            assert!(w[1] <= w[0], "volume grew: {} -> {}", w[0], w[1]);
        }
        assert!(*counts.last().unwrap() < start);
    }
}
