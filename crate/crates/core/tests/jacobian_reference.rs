//! Kinematics cross-checks: forward kinematics against an independent
//! homogeneous-matrix composition, analytic Jacobians against central
//! differences.

use cbf_taskstack::kinematics::{
    demo_arm_7dof, CameraModel, RobotState, TaskMap,
};
use nalgebra::{DVector, Isometry3, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// 4x4 homogeneous matrix product, plain arrays.
fn mat_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Classic DH homogeneous matrix for a revolute joint with coordinate q:
/// `Rz(q) Tz(d) Tx(a) Rx(alpha)` expanded by hand.
fn dh_matrix(q: f64, d: f64, a: f64, alpha: f64) -> [[f64; 4]; 4] {
    let (st, ct) = q.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// DH table of the bundled demo arm.
const DEMO_DH: [(f64, f64, f64); 7] = [
    (0.3, 0.0, -std::f64::consts::FRAC_PI_2),
    (0.0, 0.0, std::f64::consts::FRAC_PI_2),
    (0.3, 0.0, std::f64::consts::FRAC_PI_2),
    (0.0, 0.0, -std::f64::consts::FRAC_PI_2),
    (0.3, 0.0, -std::f64::consts::FRAC_PI_2),
    (0.0, 0.0, std::f64::consts::FRAC_PI_2),
    (0.3, 0.0, 0.0),
];

#[test]
fn forward_kinematics_matches_independent_composition() {
    let robot = demo_arm_7dof();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let q = DVector::from_fn(7, |_, _| rng.gen_range(-1.5..1.5));
        let pose = robot.forward_kinematics(&q).unwrap();

        let mut t = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for (i, &(d, a, alpha)) in DEMO_DH.iter().enumerate() {
            t = mat_mul(&t, &dh_matrix(q[i], d, a, alpha));
        }

        for (axis, &expected) in [t[0][3], t[1][3], t[2][3]].iter().enumerate() {
            let got = pose.translation.vector[axis];
            assert!(
                (got - expected).abs() < 1e-10,
                "axis {axis}: {got} vs {expected}"
            );
        }
        // Rotation agrees too.
        let rot = pose.rotation.to_rotation_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert!((rot[(i, j)] - t[i][j]).abs() < 1e-10);
            }
        }
    }
}

fn demo_camera(robot: &Arc<cbf_taskstack::kinematics::RobotModel>) -> Arc<CameraModel> {
    // Mounted slightly ahead of the flange, looking at a point that stays in
    // front of the camera for moderate joint excursions around zero.
    let mount = Isometry3::translation(0.0, 0.0, 0.05);
    let home = robot.forward_kinematics(&DVector::zeros(7)).unwrap();
    let target = (home * mount).transform_point(&Point3::new(0.02, -0.01, 0.8));
    Arc::new(CameraModel::new((500.0, 480.0), (320.0, 240.0), mount, target).unwrap())
}

#[test]
fn analytic_jacobians_match_central_differences() {
    let robot = Arc::new(demo_arm_7dof());
    let camera = demo_camera(&robot);
    let maps: Vec<(&str, TaskMap)> = vec![
        ("joint_identity", TaskMap::joint_identity(robot.clone())),
        ("ee_position", TaskMap::ee_position(robot.clone())),
        (
            "image_feature",
            TaskMap::image_feature(robot.clone(), camera),
        ),
        (
            "custom_height",
            TaskMap::custom(
                robot.clone(),
                1,
                {
                    let robot = robot.clone();
                    move |state: &RobotState| {
                        let pose = robot.forward_kinematics(&state.q)?;
                        Ok(DVector::from_element(1, pose.translation.z))
                    }
                },
                {
                    let robot = robot.clone();
                    move |state: &RobotState| {
                        let pose = robot.forward_kinematics(&state.q)?;
                        let origin = Point3::from(pose.translation.vector);
                        let (linear, _) = robot.frame_jacobian(&state.q, &origin)?;
                        Ok(linear.rows(2, 1).into_owned())
                    }
                },
            ),
        ),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, map) in &maps {
        let mut checked = 0;
        while checked < 100 {
            // Small excursions keep the camera target in view; skip the rare
            // configuration that still defeats it.
            let q = DVector::from_fn(7, |_, _| rng.gen_range(-0.6..0.6));
            let state = RobotState::new(q, 0.0);
            let analytic = match map.jacobian(&state) {
                Ok(j) => j,
                Err(_) => continue,
            };
            let numeric = map.numeric_jacobian(&state, 1e-6).unwrap();
            let err = (&analytic - &numeric).amax();
            assert!(err < 1e-5, "{name}: max Jacobian error {err:.3e}");
            checked += 1;
        }
    }
}

#[test]
fn central_difference_error_is_second_order() {
    let robot = Arc::new(demo_arm_7dof());
    let map = TaskMap::ee_position(robot);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ratios = Vec::new();
    for _ in 0..10 {
        let q = DVector::from_fn(7, |_, _| rng.gen_range(-1.2..1.2));
        let state = RobotState::new(q, 0.0);
        let analytic = map.jacobian(&state).unwrap();
        let coarse = (map.numeric_jacobian(&state, 2e-4).unwrap() - &analytic).norm();
        let fine = (map.numeric_jacobian(&state, 1e-4).unwrap() - &analytic).norm();
        if fine > 1e-11 {
            ratios.push(coarse / fine);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    // Halving the step should shrink the error about fourfold.
    assert!(
        (3.0..5.0).contains(&median),
        "median error ratio {median} not ~4"
    );
}

#[test]
fn on_axis_projection_is_depth_invariant() {
    // On the optical axis the pixel stays at the principal point for any
    // depth and focal length; off axis it does not.
    let robot = Arc::new(demo_arm_7dof());
    let home = robot.forward_kinematics(&DVector::zeros(7)).unwrap();
    let mount = Isometry3::translation(0.0, 0.0, 0.05);
    for (depth, focal) in [(0.5, 300.0), (1.0, 500.0), (2.0, 900.0)] {
        let target = (home * mount).transform_point(&Point3::new(0.0, 0.0, depth));
        let camera =
            Arc::new(CameraModel::new((focal, focal), (320.0, 240.0), mount, target).unwrap());
        let map = TaskMap::image_feature(robot.clone(), camera);
        let s = map.output(&RobotState::new(DVector::zeros(7), 0.0)).unwrap();
        assert!((s[0] - 320.0).abs() < 1e-9 && (s[1] - 240.0).abs() < 1e-9);
    }
    // Off-axis: doubling the depth moves the pixel.
    let mut pixels = Vec::new();
    for depth in [0.5, 1.0] {
        let target = (home * mount).transform_point(&Point3::new(0.05, 0.0, depth));
        let camera =
            Arc::new(CameraModel::new((500.0, 500.0), (320.0, 240.0), mount, target).unwrap());
        let map = TaskMap::image_feature(robot.clone(), camera);
        pixels.push(map.output(&RobotState::new(DVector::zeros(7), 0.0)).unwrap()[0]);
    }
    assert!((pixels[0] - pixels[1]).abs() > 1.0);
}
