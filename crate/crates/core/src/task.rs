//! Barrier encodings of tasks.
//!
//! Each task owns an output map `sigma = k(x)`, a scalar barrier `h(sigma, t)`
//! whose zero superlevel set is the task's satisfaction region, and a class-K
//! gain. A task reduces to one linear inequality row per scalar barrier:
//!
//! ```text
//!     a' u >= beta,   a = (dh/dsigma) J g(x),
//!                     beta = -dh/dt - (dh/dsigma) J f(x) - gamma(h)
//! ```
//!
//! so that any `u` on the feasible side keeps `h_dot >= -gamma(h)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DVector, RowDVector};

use crate::error::{Error, Result};
use crate::kinematics::{DynamicsModel, RobotState, TaskMap};

/// Extended class-K gain applied to the barrier value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassK {
    /// `gamma(h) = alpha h`.
    Linear { alpha: f64 },
    /// `gamma(h) = alpha h^3`; weaker near h = 0.
    Cubic { alpha: f64 },
}

impl ClassK {
    pub fn linear(alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Config(format!("class-K gain must be positive, got {alpha}")));
        }
        Ok(Self::Linear { alpha })
    }

    pub fn cubic(alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Config(format!("class-K gain must be positive, got {alpha}")));
        }
        Ok(Self::Cubic { alpha })
    }

    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            Self::Linear { alpha } => alpha * h,
            Self::Cubic { alpha } => alpha * h * h * h,
        }
    }
}

impl Default for ClassK {
    fn default() -> Self {
        Self::Linear { alpha: 1.0 }
    }
}

/// Piecewise-polynomial reference trajectory with an analytic derivative.
///
/// Each segment holds per-output-dimension coefficient lists in ascending
/// powers of the local time `t - start`; the segment active at `t` is the
/// last one whose `start` is at or before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    segments: Vec<ReferenceSegment>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSegment {
    pub start: f64,
    pub coeffs: Vec<Vec<f64>>,
}

impl Reference {
    pub fn new(segments: Vec<ReferenceSegment>) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(Error::Config("reference needs at least one segment".into()));
        };
        let dim = first.coeffs.len();
        if dim == 0 {
            return Err(Error::Config("reference segment has no dimensions".into()));
        }
        for pair in segments.windows(2) {
            if pair[1].start <= pair[0].start {
                return Err(Error::Config("reference segment starts must increase".into()));
            }
        }
        for seg in &segments {
            if seg.coeffs.len() != dim {
                return Err(Error::Config("reference segments disagree on dimension".into()));
            }
            if seg.coeffs.iter().any(|c| c.is_empty()) {
                return Err(Error::Config("empty polynomial in reference segment".into()));
            }
        }
        Ok(Self { segments, dim })
    }

    pub fn constant(value: DVector<f64>) -> Self {
        let coeffs = value.iter().map(|&v| vec![v]).collect();
        Self::new(vec![ReferenceSegment { start: 0.0, coeffs }]).expect("constant is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn segment_at(&self, t: f64) -> &ReferenceSegment {
        self.segments
            .iter()
            .rev()
            .find(|seg| seg.start <= t)
            .unwrap_or(&self.segments[0])
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let seg = self.segment_at(t);
        let tau = t - seg.start;
        DVector::from_iterator(self.dim, seg.coeffs.iter().map(|c| horner(c, tau)))
    }

    /// Analytic time derivative of [`Reference::value`].
    pub fn rate(&self, t: f64) -> DVector<f64> {
        let seg = self.segment_at(t);
        let tau = t - seg.start;
        DVector::from_iterator(self.dim, seg.coeffs.iter().map(|c| horner_derivative(c, tau)))
    }
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn horner_derivative(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * t + c * k as f64;
    }
    acc
}

type BarrierFn = dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync;
type BarrierGradFn = dyn Fn(&DVector<f64>, f64) -> RowDVector<f64> + Send + Sync;

/// Scalar barrier shape over the task output.
#[derive(Clone)]
pub enum BarrierKind {
    /// `h = -gain ||sigma - target||^2`; zero exactly at the target.
    Setpoint { target: DVector<f64>, gain: f64 },
    /// `h = -1/2 ||sigma - ref(t)||^2` against a moving reference.
    Tracking { reference: Reference },
    /// One barrier per joint, `h_i = gain (upper_i - z_i)(z_i - lower_i)`.
    /// With `aggregate` only the minimum over joints is reported (single
    /// reporting curve); constraints always use the per-joint rows.
    JointBox {
        lower: DVector<f64>,
        upper: DVector<f64>,
        gain: f64,
        aggregate: bool,
    },
    /// User-supplied `h`, `dh/dsigma` and `dh/dt` evaluators.
    Custom {
        value: Arc<BarrierFn>,
        grad: Arc<BarrierGradFn>,
        time_derivative: Arc<BarrierFn>,
    },
}

impl fmt::Debug for BarrierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Setpoint { target, gain } => f
                .debug_struct("Setpoint")
                .field("target", target)
                .field("gain", gain)
                .finish(),
            Self::Tracking { reference } => {
                f.debug_struct("Tracking").field("reference", reference).finish()
            }
            Self::JointBox { lower, upper, gain, aggregate } => f
                .debug_struct("JointBox")
                .field("lower", lower)
                .field("upper", upper)
                .field("gain", gain)
                .field("aggregate", aggregate)
                .finish(),
            Self::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Barrier value with its derivatives at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    /// Row vector `dh/dsigma`.
    pub grad: RowDVector<f64>,
    pub dh_dt: f64,
}

impl BarrierKind {
    /// Number of scalar barriers this kind produces for an output of
    /// dimension `dim`.
    pub fn rows(&self, dim: usize) -> usize {
        match self {
            Self::JointBox { aggregate: false, .. } => dim,
            _ => 1,
        }
    }

    /// Evaluates the barrier(s) at output value `sigma` and time `t`.
    pub fn evaluate(&self, sigma: &DVector<f64>, t: f64) -> Vec<BarrierEval> {
        let dim = sigma.len();
        match self {
            Self::Setpoint { target, gain } => {
                let err = sigma - target;
                let grad = RowDVector::from_iterator(dim, err.iter().map(|&e| -2.0 * gain * e));
                vec![BarrierEval {
                    h: -gain * err.norm_squared(),
                    grad,
                    dh_dt: 0.0,
                }]
            }
            Self::Tracking { reference } => {
                let err = sigma - reference.value(t);
                let grad = RowDVector::from_iterator(dim, err.iter().map(|&e| -e));
                let dh_dt = err.dot(&reference.rate(t));
                vec![BarrierEval {
                    h: -0.5 * err.norm_squared(),
                    grad,
                    dh_dt,
                }]
            }
            Self::JointBox { lower, upper, gain, aggregate } => {
                let evals: Vec<BarrierEval> = (0..dim)
                    .map(|i| {
                        let z = sigma[i];
                        let mut grad = RowDVector::zeros(dim);
                        grad[i] = gain * (upper[i] + lower[i] - 2.0 * z);
                        BarrierEval {
                            h: gain * (upper[i] - z) * (z - lower[i]),
                            grad,
                            dh_dt: 0.0,
                        }
                    })
                    .collect();
                if *aggregate {
                    let min = evals
                        .into_iter()
                        .reduce(|best, e| if e.h < best.h { e } else { best })
                        .expect("at least one joint");
                    vec![min]
                } else {
                    evals
                }
            }
            Self::Custom { value, grad, time_derivative } => vec![BarrierEval {
                h: value(sigma, t),
                grad: grad(sigma, t),
                dh_dt: time_derivative(sigma, t),
            }],
        }
    }
}

/// One linear inequality row on the control input: `a' u >= beta` (relaxed to
/// `a' u >= beta - delta` once the task's slack enters the program).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: DVector<f64>,
    pub offset: f64,
}

/// A task: output map, barrier, class-K gain and criticality flag.
#[derive(Debug, Clone)]
pub struct BarrierTask {
    pub label: String,
    map: TaskMap,
    barrier: BarrierKind,
    pub class_k: ClassK,
    pub safety_critical: bool,
}

impl BarrierTask {
    pub fn new(
        label: impl Into<String>,
        map: TaskMap,
        barrier: BarrierKind,
        class_k: ClassK,
        safety_critical: bool,
    ) -> Result<Self> {
        let dim = map.output_dim();
        match &barrier {
            BarrierKind::Setpoint { target, .. } => {
                if target.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "setpoint target",
                        expected: dim,
                        found: target.len(),
                    });
                }
            }
            BarrierKind::Tracking { reference } => {
                if reference.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "tracking reference",
                        expected: dim,
                        found: reference.dim(),
                    });
                }
            }
            BarrierKind::JointBox { lower, upper, .. } => {
                if !map.is_joint_identity() {
                    return Err(Error::Config(
                        "joint_box barrier requires the joint_identity map".into(),
                    ));
                }
                if lower.len() != dim || upper.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "joint_box bounds",
                        expected: dim,
                        found: lower.len().min(upper.len()),
                    });
                }
                for i in 0..dim {
                    if lower[i] >= upper[i] {
                        return Err(Error::Config(format!(
                            "joint_box bound {i}: lower {} not below upper {}",
                            lower[i], upper[i]
                        )));
                    }
                }
            }
            BarrierKind::Custom { .. } => {}
        }
        Ok(Self {
            label: label.into(),
            map,
            barrier,
            class_k,
            safety_critical,
        })
    }

    pub fn map(&self) -> &TaskMap {
        &self.map
    }

    pub fn barrier(&self) -> &BarrierKind {
        &self.barrier
    }

    /// Scalar barrier rows this task contributes to the program.
    pub fn row_count(&self) -> usize {
        self.barrier.rows(self.map.output_dim())
    }

    /// Barrier values and derivatives at the given state and time, one entry
    /// per scalar barrier.
    pub fn evaluate(&self, state: &RobotState, t: f64) -> Result<Vec<BarrierEval>> {
        let sigma = self.map.output(state)?;
        Ok(self.barrier.evaluate(&sigma, t))
    }

    /// Minimum barrier value over this task's rows; the single curve used for
    /// reporting and trace plots.
    pub fn reporting_value(&self, state: &RobotState, t: f64) -> Result<f64> {
        Ok(self
            .evaluate(state, t)?
            .into_iter()
            .map(|e| e.h)
            .fold(f64::INFINITY, f64::min))
    }

    /// Reduces each scalar barrier to its inequality row on `u`.
    pub fn constraint_rows(
        &self,
        state: &RobotState,
        dynamics: &DynamicsModel,
        t: f64,
    ) -> Result<Vec<ConstraintRow>> {
        let evals = self.evaluate(state, t)?;
        let jac = self.map.jacobian(state)?;
        if dynamics.is_velocity_resolved() {
            // f = 0, g = I: a = dh/dsigma J, beta = -dh/dt - gamma(h).
            return Ok(evals
                .into_iter()
                .map(|e| {
                    let a = &e.grad * &jac;
                    ConstraintRow {
                        coeffs: a.transpose(),
                        offset: -e.dh_dt - self.class_k.eval(e.h),
                    }
                })
                .collect());
        }
        let drift = dynamics.drift(&state.q);
        let input = dynamics.input_matrix(&state.q);
        Ok(evals
            .into_iter()
            .map(|e| {
                let along_state = &e.grad * &jac;
                let a = &along_state * &input;
                let drift_term = along_state.transpose().dot(&drift);
                ConstraintRow {
                    coeffs: a.transpose(),
                    offset: -e.dh_dt - drift_term - self.class_k.eval(e.h),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{planar_arm, RobotModel};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn two_link() -> Arc<RobotModel> {
        Arc::new(planar_arm("two_link", &[1.0, 1.0], 3.5).unwrap())
    }

    #[test]
    fn class_k_values() {
        assert_abs_diff_eq!(ClassK::linear(2.0).unwrap().eval(0.0), 0.0);
        assert_abs_diff_eq!(ClassK::linear(2.0).unwrap().eval(-0.5), -1.0);
        assert_abs_diff_eq!(ClassK::cubic(1.0).unwrap().eval(2.0), 8.0);
        assert!(ClassK::linear(0.0).is_err());
    }

    #[test]
    fn setpoint_on_target_is_flat() {
        let target = DVector::from_vec(vec![0.3, -0.2]);
        let kind = BarrierKind::Setpoint { target: target.clone(), gain: 1.0 };
        let evals = kind.evaluate(&target, 0.0);
        assert_eq!(evals.len(), 1);
        assert_abs_diff_eq!(evals[0].h, 0.0);
        assert!(evals[0].grad.norm() < 1e-15);
        assert_abs_diff_eq!(evals[0].dh_dt, 0.0);
    }

    #[test]
    fn tracking_derivatives_match_hand_values() {
        // sigma = (1,0), ref = 0 moving at (1,0):
        // h = -1/2, dh/dsigma = (-1, 0), dh/dt = 1.
        let reference = Reference::new(vec![ReferenceSegment {
            start: 0.0,
            coeffs: vec![vec![0.0, 1.0], vec![0.0]],
        }])
        .unwrap();
        let kind = BarrierKind::Tracking { reference };
        let evals = kind.evaluate(&DVector::from_vec(vec![1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(evals[0].h, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(evals[0].grad[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(evals[0].grad[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(evals[0].dh_dt, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn joint_box_boundary_and_midpoint() {
        let kind = BarrierKind::JointBox {
            lower: DVector::from_vec(vec![-1.0, -2.0]),
            upper: DVector::from_vec(vec![1.0, 2.0]),
            gain: 1.0,
            aggregate: false,
        };
        let at_lower = kind.evaluate(&DVector::from_vec(vec![-1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(at_lower[0].h, 0.0);
        let at_mid = kind.evaluate(&DVector::from_vec(vec![0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(at_mid[0].h, 1.0); // ((1 - -1)/2)^2
        assert_abs_diff_eq!(at_mid[1].h, 4.0);
    }

    #[test]
    fn joint_box_sign_matches_membership() {
        let lower = DVector::from_vec(vec![-1.0]);
        let upper = DVector::from_vec(vec![2.0]);
        let kind = BarrierKind::JointBox {
            lower: lower.clone(),
            upper: upper.clone(),
            gain: 0.7,
            aggregate: false,
        };
        for z in [-1.5, -1.0, -0.99, 0.3, 1.99, 2.0, 2.4] {
            let h = kind.evaluate(&DVector::from_element(1, z), 0.0)[0].h;
            let inside = (lower[0]..=upper[0]).contains(&z);
            assert_eq!(h >= 0.0, inside, "z = {z}, h = {h}");
        }
    }

    #[test]
    fn joint_box_aggregate_reports_minimum() {
        let kind = BarrierKind::JointBox {
            lower: DVector::from_vec(vec![-1.0, -1.0]),
            upper: DVector::from_vec(vec![1.0, 1.0]),
            gain: 1.0,
            aggregate: true,
        };
        let evals = kind.evaluate(&DVector::from_vec(vec![0.9, 0.0]), 0.0);
        assert_eq!(evals.len(), 1);
        assert_abs_diff_eq!(evals[0].h, (1.0 - 0.9) * (0.9 + 1.0), epsilon = 1e-12);
        // Gradient belongs to the attaining joint.
        assert!(evals[0].grad[0] != 0.0 && evals[0].grad[1] == 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let reference = Reference::new(vec![ReferenceSegment {
            start: 0.0,
            coeffs: vec![vec![0.1, 0.5, -0.2], vec![-0.3, 0.2]],
        }])
        .unwrap();
        let kinds = [
            BarrierKind::Setpoint {
                target: DVector::from_vec(vec![0.4, -0.6]),
                gain: 1.3,
            },
            BarrierKind::Tracking { reference },
            BarrierKind::JointBox {
                lower: DVector::from_vec(vec![-1.0, -2.0]),
                upper: DVector::from_vec(vec![1.5, 0.5]),
                gain: 0.8,
                aggregate: false,
            },
        ];
        let sigma = DVector::from_vec(vec![0.2, -0.4]);
        let t = 0.7;
        let step = 1e-6;
        for kind in &kinds {
            let evals = kind.evaluate(&sigma, t);
            for (row, eval) in evals.iter().enumerate() {
                for j in 0..sigma.len() {
                    let mut fwd = sigma.clone();
                    let mut bwd = sigma.clone();
                    fwd[j] += step;
                    bwd[j] -= step;
                    let num =
                        (kind.evaluate(&fwd, t)[row].h - kind.evaluate(&bwd, t)[row].h) / (2.0 * step);
                    assert_abs_diff_eq!(eval.grad[j], num, epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn reference_piecewise_lookup_and_rate() {
        let reference = Reference::new(vec![
            ReferenceSegment { start: 0.0, coeffs: vec![vec![0.0, 1.0]] },
            ReferenceSegment { start: 2.0, coeffs: vec![vec![2.0, -1.0]] },
        ])
        .unwrap();
        assert_abs_diff_eq!(reference.value(1.0)[0], 1.0);
        assert_abs_diff_eq!(reference.rate(1.0)[0], 1.0);
        assert_abs_diff_eq!(reference.value(3.0)[0], 1.0);
        assert_abs_diff_eq!(reference.rate(3.0)[0], -1.0);
    }

    #[test]
    fn on_target_row_is_trivially_satisfiable() {
        let arm = two_link();
        let q = DVector::from_vec(vec![0.1, 0.2]);
        let task = BarrierTask::new(
            "hold",
            TaskMap::joint_identity(arm),
            BarrierKind::Setpoint { target: q.clone(), gain: 1.0 },
            ClassK::default(),
            false,
        )
        .unwrap();
        let rows = task
            .constraint_rows(&RobotState::new(q, 0.0), &DynamicsModel::velocity_resolved(), 0.0)
            .unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].coeffs.norm() < 1e-15);
        assert_abs_diff_eq!(rows[0].offset, 0.0);
    }

    #[test]
    fn tracking_row_encodes_barrier_rate_condition() {
        // For any u the row satisfies a'u - beta = dh/dt + dh/dsigma J u + gamma(h),
        // checked here coefficient by coefficient on the planar arm.
        let arm = two_link();
        let reference = Reference::new(vec![ReferenceSegment {
            start: 0.0,
            coeffs: vec![vec![1.4, 0.3], vec![0.2, -0.1], vec![0.0, 0.05]],
        }])
        .unwrap();
        let task = BarrierTask::new(
            "track",
            TaskMap::ee_position(arm.clone()),
            BarrierKind::Tracking { reference: reference.clone() },
            ClassK::linear(2.0).unwrap(),
            false,
        )
        .unwrap();
        let state = RobotState::new(DVector::from_vec(vec![0.3, -0.5]), 0.0);
        let t = 0.9;
        let rows = task.constraint_rows(&state, &DynamicsModel::velocity_resolved(), t).unwrap();
        let row = &rows[0];

        let sigma = task.map().output(&state).unwrap();
        let jac = task.map().jacobian(&state).unwrap();
        let err = &sigma - reference.value(t);
        let h = -0.5 * err.norm_squared();
        let dh_dt = err.dot(&reference.rate(t));
        // Coefficients: a' = -err' J.
        let expected_a = (-err.transpose() * &jac).transpose();
        assert!((&row.coeffs - expected_a).norm() < 1e-12);
        // Offset: beta = -dh/dt - gamma(h).
        assert_abs_diff_eq!(row.offset, -dh_dt - 2.0 * h, epsilon = 1e-12);
        // Affine identity at a couple of inputs, including linearity in u.
        for u in [DVector::from_vec(vec![0.7, -0.2]), DVector::from_vec(vec![1.4, -0.4])] {
            let lhs = row.coeffs.dot(&u) - row.offset;
            let h_dot = dh_dt + (-err.transpose() * &jac * &u)[0];
            assert_abs_diff_eq!(lhs, h_dot + 2.0 * h, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_box_requires_identity_map() {
        let arm = two_link();
        let bad = BarrierTask::new(
            "box",
            TaskMap::ee_position(arm),
            BarrierKind::JointBox {
                lower: DVector::from_vec(vec![-1.0, -1.0, -1.0]),
                upper: DVector::from_vec(vec![1.0, 1.0, 1.0]),
                gain: 1.0,
                aggregate: false,
            },
            ClassK::default(),
            true,
        );
        assert!(bad.is_err());
    }
}
