use proptest::prelude::*;

use tumorseg::brainmap::{pearson_cc, TissueTriple};
use tumorseg::io::{decode_volume, encode_volume, Volume};
use tumorseg::metrics::tanimoto;
use tumorseg::ngmm::normalize_intensity;
use tumorseg::volume::{mask_boundary_strip, morphology, MorphMode};
use tumorseg::{BinaryMask, Error, Grid, ScalarVolume};

fn mask_of(dims: [usize; 3], bits: &[bool]) -> BinaryMask {
    BinaryMask::new(Grid::new(dims, [1.0; 3]).unwrap(), bits[..dims.iter().product::<usize>()].to_vec()).unwrap()
}

fn masks() -> impl Strategy<Value = BinaryMask> {
    (3usize..9, 3usize..9, 3usize..9, prop::collection::vec(any::<bool>(), 512))
        .prop_map(|(x, y, z, bits)| mask_of([x, y, z], &bits))
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (
        3usize..8,
        3usize..8,
        3usize..8,
        prop::collection::vec(any::<bool>(), 343),
        prop::collection::vec(any::<bool>(), 343),
    )
        .prop_map(|(x, y, z, a, b)| (mask_of([x, y, z], &a), mask_of([x, y, z], &b)))
}

fn union(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    BinaryMask::new(*a.grid(), a.data().iter().zip(b.data()).map(|(x, y)| *x || *y).collect()).unwrap()
}

fn triple() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(0.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn erosion_shrinks_and_dilation_grows(m in masks(), r in 1usize..3, it in 1usize..3) {
        let e = morphology(&m, MorphMode::Erode, r, it).unwrap();
        let d = morphology(&m, MorphMode::Dilate, r, it).unwrap();
        prop_assert!(e.is_subset_of(&m));
        prop_assert!(m.is_subset_of(&d));
    }

    #[test]
    fn morphology_is_monotone((a, b) in mask_pair(), r in 1usize..3) {
        let big = union(&a, &b);
        for mode in [MorphMode::Erode, MorphMode::Dilate] {
            let small = morphology(&a, mode, r, 1).unwrap();
            let large = morphology(&big, mode, r, 1).unwrap();
            prop_assert!(small.is_subset_of(&large));
        }
    }

    #[test]
    fn boundary_strip_composes(m in masks(), a in 1usize..3, b in 1usize..3) {
        let once = mask_boundary_strip(&m, a + b).unwrap();
        let twice = mask_boundary_strip(&mask_boundary_strip(&m, a).unwrap(), b).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn tanimoto_is_symmetric_and_bounded((a, b) in mask_pair()) {
        let ab = tanimoto(&a, &b).unwrap();
        let ba = tanimoto(&b, &a).unwrap();
        prop_assert_eq!(ab.tanimoto, ba.tanimoto);
        prop_assert!((0.0..=1.0).contains(&ab.tanimoto));
        prop_assert_eq!(tanimoto(&a, &a).unwrap().tanimoto, 1.0);
    }

    #[test]
    fn pearson_is_affine_invariant(a in triple(), b in triple(), s in 0.1f64..10.0, t in -5.0f64..5.0) {
        let base = pearson_cc(TissueTriple(a), TissueTriple(b));
        prop_assume!(base != 0.0);
        let moved = pearson_cc(TissueTriple(a.map(|v| s * v + t)), TissueTriple(b));
        let flipped = pearson_cc(TissueTriple(a.map(|v| -s * v + t)), TissueTriple(b));
        prop_assert!((moved - base).abs() < 1e-9);
        prop_assert!((flipped + base).abs() < 1e-9);
        prop_assert!((pearson_cc(TissueTriple(b), TissueTriple(a)) - base).abs() < 1e-15);
    }

    #[test]
    fn normalization_is_scale_equivariant(
        vals in prop::collection::vec(1.0f32..1000.0, 27),
        keep in prop::collection::vec(any::<bool>(), 27),
        c in 0.01f32..100.0,
    ) {
        prop_assume!(keep.iter().any(|&k| k));
        let g = Grid::cube(3);
        let mask = BinaryMask::new(g, keep).unwrap();
        let v = ScalarVolume::new(g, vals.clone()).unwrap();
        let scaled = ScalarVolume::new(g, vals.iter().map(|x| x * c).collect()).unwrap();
        let (a, ra) = normalize_intensity(&v, &mask).unwrap();
        let (b, _) = normalize_intensity(&scaled, &mask).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
        }
        let mean: f64 = a.data().iter().zip(mask.data()).filter(|p| *p.1).map(|p| *p.0 as f64).sum::<f64>()
            / ra.mask_voxels as f64;
        prop_assert!((mean - 1.0).abs() < 1e-5);
    }
}

const MASK_FIXTURE: &[u8] = b"MVOL1\ndims 2 1 2\nspacing 1 0.5 2.25\ndtype mask8\nencoding raw-le\n\n\x01\x00\x00\x01";

#[test]
fn mask_fixture_decodes_x_fastest() {
    let Volume::Mask(m) = decode_volume(MASK_FIXTURE).unwrap() else {
        panic!("expected a mask");
    };
    assert_eq!(m.dims(), [2, 1, 2]);
    assert_eq!(m.grid().spacing, [1.0, 0.5, 2.25]);
    assert!(m.get(0, 0, 0) && !m.get(1, 0, 0) && !m.get(0, 0, 1) && m.get(1, 0, 1));
    assert_eq!(encode_volume(&Volume::Mask(m)).unwrap(), MASK_FIXTURE);
}

#[test]
fn scalar_fixture_is_little_endian() {
    let mut bytes = b"MVOL1\ndims 2 1 1\nspacing 1 1 1\ndtype scalar32\nencoding raw-le\n\n".to_vec();
    bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc1]);
    let Volume::Scalar(v) = decode_volume(&bytes).unwrap() else {
        panic!("expected a scalar volume");
    };
    assert_eq!(v.data(), &[1.0, -10.0]);
    assert_eq!(encode_volume(&Volume::Scalar(v)).unwrap(), bytes);
}

#[test]
fn malformed_fixtures_are_rejected() {
    let truncated = &MASK_FIXTURE[..MASK_FIXTURE.len() - 1];
    assert!(matches!(decode_volume(truncated), Err(Error::Truncated { expected: 4, found: 3 })));

    let mut bad_byte = MASK_FIXTURE.to_vec();
    *bad_byte.last_mut().unwrap() = 2;
    assert!(matches!(decode_volume(&bad_byte), Err(Error::Format(_))));

    let dtype = b"MVOL1\ndims 1 1 1\nspacing 1 1 1\ndtype float64\nencoding raw-le\n\n\0\0\0\0\0\0\0\0";
    assert!(matches!(decode_volume(dtype), Err(Error::UnsupportedDtype(_))));

    let magic = b"MVOL2\ndims 1 1 1\nspacing 1 1 1\ndtype mask8\nencoding raw-le\n\n\x01";
    assert!(matches!(decode_volume(magic), Err(Error::Format(_))));

    let encoding = b"MVOL1\ndims 1 1 1\nspacing 1 1 1\ndtype mask8\nencoding gzip\n\n\x01";
    assert!(matches!(decode_volume(encoding), Err(Error::Format(_))));
}
