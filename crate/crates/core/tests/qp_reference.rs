//! Randomized cross-checks of the active-set solver against the exhaustive
//! KKT-enumeration solver and a dense grid search.

use cbf_taskstack::qp::{check_kkt, solve_qp, solve_qp_exhaustive, QpProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Strictly convex problem with a guaranteed-nonempty feasible region:
/// `H = L L' + 0.1 I` and offsets chosen so a random point is interior.
fn random_problem(rng: &mut ChaCha8Rng, d: usize, m: usize) -> QpProblem {
    let l_mat = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l_mat * l_mat.transpose() + DMatrix::identity(d, d) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
    let a = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
    let interior = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(m, |i, _| {
        a.row(i).transpose().dot(&interior) - rng.gen_range(0.01..1.0)
    });
    QpProblem::new(h, f, a, b).unwrap()
}

#[test]
fn active_set_matches_exhaustive_on_random_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let d = rng.gen_range(1..=5);
        let m = rng.gen_range(0..=8);
        let problem = random_problem(&mut rng, d, m);
        let fast = solve_qp(&problem).unwrap();
        let reference = solve_qp_exhaustive(&problem).unwrap();
        let gap = (&fast.z_star - &reference.z_star).norm();
        assert!(gap < 1e-6, "case {case}: |z_as - z_ex| = {gap:.3e}");
        let report = check_kkt(&problem, &fast).unwrap();
        assert!(
            report.max_residual() < 1e-8,
            "case {case}: kkt residuals {report:?}"
        );
        let report_ref = check_kkt(&problem, &reference).unwrap();
        assert!(
            report_ref.max_residual() < 1e-8,
            "case {case}: oracle kkt residuals {report_ref:?}"
        );
    }
}

#[test]
fn exhaustive_matches_refined_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let problem = random_problem(&mut rng, 3, 4);
    let reference = solve_qp_exhaustive(&problem).unwrap();

    let feasible = |z: &DVector<f64>| {
        (0..problem.num_constraints()).all(|i| {
            problem.constraints().row(i).transpose().dot(z) >= problem.offsets()[i] - 1e-12
        })
    };

    // Three refinement stages: 0.1 over [-3,3], then 0.005, then 0.00025.
    let mut center = DVector::zeros(3);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for (half_span, step) in [(3.0f64, 0.1f64), (0.15, 0.005), (0.0075, 0.00025)] {
        let counts = (2.0 * half_span / step).round() as i64;
        for i in 0..=counts {
            for j in 0..=counts {
                for k in 0..=counts {
                    let z = DVector::from_vec(vec![
                        center[0] - half_span + i as f64 * step,
                        center[1] - half_span + j as f64 * step,
                        center[2] - half_span + k as f64 * step,
                    ]);
                    if !feasible(&z) {
                        continue;
                    }
                    let obj = problem.objective(&z);
                    if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                        best = Some((obj, z));
                    }
                }
            }
        }
        center = best.as_ref().expect("feasible grid point").1.clone();
    }

    let (grid_obj, grid_z) = best.unwrap();
    assert!(
        (grid_z - &reference.z_star).amax() <= 1e-3,
        "grid point {:?} vs oracle {:?}",
        center.as_slice(),
        reference.z_star.as_slice()
    );
    assert!((grid_obj - reference.objective).abs() <= 1e-3);
}

#[test]
fn resolving_random_problems_is_bitwise_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let d = rng.gen_range(1..=5);
        let m = rng.gen_range(0..=8);
        let problem = random_problem(&mut rng, d, m);
        let first = solve_qp(&problem).unwrap();
        let second = solve_qp(&problem).unwrap();
        assert_eq!(first.z_star.as_slice(), second.z_star.as_slice());
        assert_eq!(first.active_set, second.active_set);
        assert_eq!(first.multipliers.as_slice(), second.multipliers.as_slice());
    }
}

#[test]
fn multipliers_nonnegative_and_complementary() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let d = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=8);
        let problem = random_problem(&mut rng, d, m);
        let solution = solve_qp(&problem).unwrap();
        for i in 0..m {
            assert!(solution.multipliers[i] >= -1e-9);
            let slack =
                problem.constraints().row(i).transpose().dot(&solution.z_star) - problem.offsets()[i];
            if !solution.active_set.contains(&i) {
                assert_eq!(solution.multipliers[i], 0.0);
            }
            assert!(solution.multipliers[i].abs() * slack.abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// For `H = 2I`, `f = 0` and a single row `a'z >= beta`, the minimizer is
    /// the closed-form projection `a max(beta, 0) / ||a||^2`.
    #[test]
    fn single_constraint_projection_closed_form(
        a in prop::collection::vec(-2.0f64..2.0, 1..5),
        beta in -2.0f64..2.0,
    ) {
        let a = DVector::from_vec(a);
        prop_assume!(a.norm() > 1e-3);
        let d = a.len();
        let problem = QpProblem::new(
            DMatrix::identity(d, d) * 2.0,
            DVector::zeros(d),
            DMatrix::from_row_slice(1, d, a.as_slice()),
            DVector::from_element(1, beta),
        ).unwrap();
        let solution = solve_qp(&problem).unwrap();
        let expected = &a * (beta.max(0.0) / a.norm_squared());
        prop_assert!((solution.z_star - expected).norm() < 1e-10);
    }

    /// Every solved random problem satisfies the KKT conditions.
    #[test]
    fn random_problems_satisfy_kkt(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..=5);
        let m = rng.gen_range(0..=8);
        let problem = random_problem(&mut rng, d, m);
        let solution = solve_qp(&problem).unwrap();
        let report = check_kkt(&problem, &solution).unwrap();
        prop_assert!(report.max_residual() < 1e-8, "{report:?}");
    }
}
