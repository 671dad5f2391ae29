use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use timelike_surfaces::catalog::{constant_first_type, product_chart, third_type_family};
use timelike_surfaces::invariants::{theorem_conditions_residuals_with, EvalOptions};
use timelike_surfaces::{
    apply_motion, classify, congruence_distance, frame_gram_residual, minkowski_dot, motion_from_frames,
    reorthonormalize, theorem_conditions_residuals, GridDomain, InvariantSet, LorentzMotion,
    PseudoOrthonormalFrame, SurfaceType, Vec4,
};

fn vec4() -> impl Strategy<Value = Vec4> {
    prop::array::uniform4(-3.0f64..3.0).prop_map(Vec4)
}

fn motion(seed: u64, rapidity: f64) -> LorentzMotion {
    LorentzMotion::random(&mut StdRng::seed_from_u64(seed), rapidity)
}

fn frame_close(a: &PseudoOrthonormalFrame, b: &PseudoOrthonormalFrame) -> f64 {
    a.legs()
        .iter()
        .zip(b.legs())
        .map(|(p, q)| (*p - q).max_abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn motions_preserve_the_metric(seed in any::<u64>(), r in 0.0f64..1.5, a in vec4(), b in vec4()) {
        let m = motion(seed, r);
        let (ma, mb) = (m.apply_vector(&a), m.apply_vector(&b));
        let scale = 1.0 + a.euclidean_norm() * b.euclidean_norm() * (2.0 * r).cosh().powi(2);
        prop_assert!((minkowski_dot(&ma, &mb) - minkowski_dot(&a, &b)).abs() < 1e-12 * scale);
        // points: differences transform like vectors
        let d = m.apply_point(&a) - m.apply_point(&b);
        prop_assert!((d - m.apply_vector(&(a - b))).max_abs() < 1e-12 * scale);
    }

    #[test]
    fn inverse_undoes_a_motion(seed in any::<u64>(), r in 0.0f64..1.5, p in vec4()) {
        let m = motion(seed, r);
        let back = m.then(&m.inverse()).apply_point(&p);
        prop_assert!((back - p).max_abs() < 1e-10 * (1.0 + p.max_abs()) * (2.0 * r).cosh().powi(3));
    }

    #[test]
    fn reorthonormalize_fixes_exact_frames(seed in any::<u64>(), r in 0.0f64..1.0) {
        let frame = motion(seed, r).apply_frame(&PseudoOrthonormalFrame::standard());
        prop_assert!(frame_gram_residual(&frame) < 1e-12);
        let fixed = reorthonormalize(&frame).unwrap();
        prop_assert!(frame_close(&fixed, &frame) < 1e-12 * (2.0 * r).cosh().powi(2));
    }

    #[test]
    fn motion_is_recovered_from_its_frames(seed in any::<u64>(), r in 0.0f64..1.0, p in vec4()) {
        let m = motion(seed, r);
        let from = PseudoOrthonormalFrame::standard();
        let got = motion_from_frames(&p, &from, &m.apply_point(&p), &m.apply_frame(&from)).unwrap();
        let q = Vec4([0.3, -0.7, 1.1, 0.2]);
        prop_assert!((got.apply_point(&q) - m.apply_point(&q)).max_abs() < 1e-9 * (2.0 * r).cosh().powi(2));
    }

    #[test]
    fn index_swap_is_an_involution(c in prop::array::uniform6(-2.0f64..2.0), n in 3usize..9) {
        let d = GridDomain::new(0.1, -0.2, 0.05, 0.07, n, n + 2).unwrap();
        let inv = InvariantSet::from_fn(d, |u, v| {
            [1.0 + 0.1 * c[0] * u, 1.0 + c[1] * v * v, c[2] * u * v, c[3], c[4] + u, c[5] * v]
        })
        .unwrap();
        let s = inv.swapped();
        prop_assert_eq!((s.domain().nu, s.domain().nv), (d.nv, d.nu));
        prop_assert_eq!(s.swapped(), inv);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constant_first_type_conditions_vanish_exactly(c in 0.2f64..5.0) {
        let d = GridDomain::square(0.0, 0.0, 0.05, 9).unwrap();
        let inv = constant_first_type(c, d).unwrap();
        prop_assert_eq!(classify(&inv, inv.default_zero_tol()).unwrap(), SurfaceType::FirstType);
        prop_assert_eq!(theorem_conditions_residuals(&inv, SurfaceType::FirstType).unwrap().worst(), 0.0);
    }

    #[test]
    fn third_type_family_residuals_shrink_at_second_order(
        cc in 0.2f64..2.0,
        a in 0.2f64..2.0,
        b in -2.0f64..2.0,
    ) {
        // same physical margin on both grids
        let run = |h: f64, n: usize, margin: usize| {
            let d = GridDomain::square(0.5, 0.5, h, n).unwrap();
            let inv = third_type_family(cc, a, b, d).unwrap();
            assert_eq!(classify(&inv, inv.default_zero_tol()).unwrap(), SurfaceType::ThirdType);
            let opts = EvalOptions { margin: Some(margin), ..Default::default() };
            theorem_conditions_residuals_with(&inv, SurfaceType::ThirdType, &opts).unwrap()
        };
        let (coarse, fine) = (run(0.04, 16, 3), run(0.02, 31, 6));
        for name in ["third_i", "third_ii", "third_iii"] {
            let (e1, e2) = (coarse.max_norm(name).unwrap(), fine.max_norm(name).unwrap());
            // exact rows stay at rounding level
            if e1 > 1e-10 {
                prop_assert!(e1 / e2 > 3.0, "{} {:e} -> {:e}", name, e1, e2);
            }
        }
    }

    #[test]
    fn moved_patches_are_congruent(seed in any::<u64>(), r in 0.0f64..1.0) {
        let d = GridDomain::square(0.0, 0.0, 0.05, 9).unwrap();
        let chart = product_chart(1.0, 2.0, d).unwrap();
        // alignment reads the origin frame only
        let frames = vec![PseudoOrthonormalFrame::standard(); d.len()];
        let patch = chart.patch().with_frames(frames).unwrap();
        let moved = apply_motion(&motion(seed, r), &patch);
        prop_assert!(congruence_distance(&patch, &moved).unwrap() < 1e-9 * (2.0 * r).cosh().powi(2));
    }
}
