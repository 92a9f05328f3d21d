mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgscene_core::geometry::{intersection_volume, transform_box};
use vgscene_core::{iou_3d, OrientedBox3D, Pose, Rotation, Vec3};

use common::{axis_aligned_iou, monte_carlo_iou, random_box};

fn oriented(a: [f64; 9]) -> OrientedBox3D {
    OrientedBox3D::from_array(a).unwrap()
}

#[test]
fn rotated_iou_agrees_with_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 100 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let exact = iou_3d(&oriented(a), &oriented(b));
        if exact == 0.0 {
            continue;
        }
        let estimate = monte_carlo_iou(a, b, 400_000, checked);
        assert!((exact - estimate).abs() <= 0.01, "{a:?} {b:?}: exact {exact}, sampled {estimate}");
        checked += 1;
    }
}

#[test]
fn yawed_unit_cube() {
    let a = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let b = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4, 0.0, 0.0];
    // The overlap is a regular octagon prism of area 2(√2 − 1).
    let inter = intersection_volume(&oriented(a), &oriented(b));
    assert!((inter - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);
    let exact = iou_3d(&oriented(a), &oriented(b));
    assert!((exact - inter / (2.0 - inter)).abs() < 1e-12);
    assert!((monte_carlo_iou(a, b, 2_000_000, 1) - exact).abs() < 0.005);
}

fn finite_box() -> impl Strategy<Value = [f64; 9]> {
    let pi = std::f64::consts::PI;
    (
        prop::array::uniform3(-2.0..2.0f64),
        prop::array::uniform3(0.1..2.0f64),
        prop::array::uniform3(-pi..pi),
    )
        .prop_map(|(c, s, r)| [c[0], c[1], c[2], s[0], s[1], s[2], r[0], r[1], r[2]])
}

fn aligned_box() -> impl Strategy<Value = [f64; 9]> {
    (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(0.1..2.0f64))
        .prop_map(|(c, s)| [c[0], c[1], c[2], s[0], s[1], s[2], 0.0, 0.0, 0.0])
}

fn pose() -> impl Strategy<Value = Pose> {
    let pi = std::f64::consts::PI;
    (prop::array::uniform3(-pi..pi), prop::array::uniform3(-5.0..5.0f64))
        .prop_map(|(r, t)| Pose::new(Rotation::from_euler(r[0], r[1], r[2]).unwrap(), Vec3::new(t[0], t[1], t[2])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in finite_box(), b in finite_box()) {
        let (a, b) = (oriented(a), oriented(b));
        let (ab, ba) = (iou_3d(&a, &b), iou_3d(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-9);
    }

    #[test]
    fn self_iou_is_one(a in finite_box()) {
        prop_assert!((iou_3d(&oriented(a), &oriented(a)) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn axis_aligned_matches_closed_form(a in aligned_box(), b in aligned_box()) {
        prop_assert!((iou_3d(&oriented(a), &oriented(b)) - axis_aligned_iou(a, b)).abs() <= 1e-9);
    }

    #[test]
    fn iou_is_scale_invariant(a in finite_box(), b in finite_box(), k in 0.2..5.0f64) {
        let scale = |v: [f64; 9]| {
            let mut v = v;
            for x in &mut v[..6] {
                *x *= k;
            }
            oriented(v)
        };
        let base = iou_3d(&oriented(a), &oriented(b));
        prop_assert!((iou_3d(&scale(a), &scale(b)) - base).abs() <= 1e-9);
    }

    #[test]
    fn iou_is_rigid_invariant(a in finite_box(), b in finite_box(), p in pose()) {
        let (a, b) = (oriented(a), oriented(b));
        let moved = iou_3d(&transform_box(&a, &p), &transform_box(&b, &p));
        prop_assert!((moved - iou_3d(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn pose_round_trips(p in pose(), x in prop::array::uniform3(-10.0..10.0f64)) {
        let x = Vec3::new(x[0], x[1], x[2]);
        prop_assert!((p.invert().apply(&p.apply(&x)) - x).norm() <= 1e-9);
        prop_assert!((p.compose(&p.invert()).apply(&x) - x).norm() <= 1e-9);
        let again = Pose::from_row_major(&p.to_row_major()).unwrap();
        prop_assert!((again.apply(&x) - p.apply(&x)).norm() <= 1e-9);
    }

    #[test]
    fn euler_round_trips(r in prop::array::uniform3(-3.0..3.0f64)) {
        let rot = Rotation::from_euler(r[0], r[1], r[2]).unwrap();
        let (y, p, ro) = rot.to_euler();
        let back = Rotation::from_euler(y, p, ro).unwrap();
        prop_assert!((back.matrix() - rot.matrix()).amax() <= 1e-9);
    }
}

#[test]
fn rotation_matches_reference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (y, p, r) = (rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0));
        let ours = Rotation::from_euler(y, p, r).unwrap();
        let reference = common::euler_matrix(y, p, r);
        for (i, row) in reference.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((ours.matrix()[(i, j)] - v).abs() < 1e-12);
            }
        }
    }
}
