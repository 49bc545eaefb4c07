mod common;

use std::f64::consts::{FRAC_PI_4, PI};

use approx::assert_abs_diff_eq;
use common::{mc_iou, random_box_pairs};
use hvtrack::geometry::{
    center_distance, from_local_frame, iou3d, observation_angle, to_local_frame, wrap_angle, Box7, PointCloud,
    YawIsometry,
};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn unit_cube(x: f64) -> Box7 {
    Box7::new([x, 0.0, 0.0], [1.0; 3], 0.0)
}

#[test]
fn identical_boxes_have_unit_iou() {
    let b = Box7::new([3.0, -2.0, 0.4], [1.6, 3.9, 1.5], 0.7);
    assert_eq!(iou3d(&b, &b), 1.0);
}

#[test]
fn half_offset_unit_cubes() {
    // overlap 0.5, union 1.5
    assert_abs_diff_eq!(iou3d(&unit_cube(0.0), &unit_cube(0.5)), 1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn square_rotated_by_quarter_pi() {
    // the unit square and its 45° rotation share a regular octagon of area 2(√2 − 1)
    let a = unit_cube(0.0);
    let b = Box7 { yaw: FRAC_PI_4, ..a };
    let inter = 2.0 * (2f64.sqrt() - 1.0);
    assert_abs_diff_eq!(iou3d(&a, &b), inter / (2.0 - inter), epsilon = 1e-12);
    assert_abs_diff_eq!(iou3d(&a, &b), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
}

#[test]
fn disjoint_and_stacked_boxes() {
    assert_eq!(iou3d(&unit_cube(0.0), &unit_cube(1.5)), 0.0);
    let above = Box7::new([0.0, 0.0, 2.0], [1.0; 3], 0.0);
    assert_eq!(iou3d(&unit_cube(0.0), &above), 0.0);
}

#[test]
fn iou_matches_monte_carlo() {
    let mut worst: f64 = 0.0;
    for (i, (a, b)) in random_box_pairs(24, 17).iter().enumerate() {
        let err = (iou3d(a, b) - mc_iou(a, b, 200_000, i as u64)).abs();
        worst = worst.max(err);
    }
    println!("worst |iou - mc| over 24 pairs: {worst:.2e}");
    assert!(worst < 1e-2, "{worst}");
}

#[test]
fn center_distance_and_observation_angle() {
    let a = Box7::new([3.0, 4.0, 0.0], [1.0; 3], 0.0);
    assert_abs_diff_eq!(center_distance(&a, &unit_cube(0.0)), 5.0, epsilon = 1e-12);
    // bearing from the origin is atan2(4, 3); heading 0
    let alpha = observation_angle(&a, &Point3::origin()).unwrap().radians();
    assert_abs_diff_eq!(alpha, -(4f64).atan2(3.0), epsilon = 1e-12);
    assert!(observation_angle(&unit_cube(0.0), &Point3::origin()).is_err());
}

fn arb_box() -> impl Strategy<Value = Box7> {
    (
        prop::array::uniform3(-3.0..3.0f64),
        prop::array::uniform3(0.2..4.0f64),
        -PI..PI,
    )
        .prop_map(|(c, s, yaw)| Box7::new(c, s, yaw))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (ab, ba) = (iou3d(&a, &b), iou3d(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn iou_is_rigid_invariant(a in arb_box(), b in arb_box(), yaw in -PI..PI, t in prop::array::uniform3(-50.0..50.0f64)) {
        let iso = YawIsometry::new(Vector3::from(t), yaw);
        let moved = iou3d(&iso.apply_box(&a), &iso.apply_box(&b));
        prop_assert!((moved - iou3d(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn wrap_angle_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }

    #[test]
    fn local_frame_round_trip(b in arb_box(), pts in prop::collection::vec(prop::array::uniform3(-20.0..20.0f64), 1..40)) {
        let cloud = PointCloud::new(pts.iter().map(|p| Point3::from(*p)).collect());
        let back = from_local_frame(&to_local_frame(&cloud, &b), &b);
        for (p, q) in cloud.points.iter().zip(&back.points) {
            prop_assert!((p - q).norm() < 1e-9);
        }
        // the box center maps to the origin and the box's own corners stay inside it
        let local = to_local_frame(&PointCloud::new(vec![b.center()]), &b);
        prop_assert!(local.points[0].coords.norm() < 1e-9);
        prop_assert!(b.corners().iter().all(|c| b.contains(c)));
    }
}
