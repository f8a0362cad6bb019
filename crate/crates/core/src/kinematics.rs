//! Serial-chain kinematics and task output maps.
//!
//! A chain is a list of joints, each applying its motion (rotation about or
//! translation along `axis`) in the frame left by the previous joint, then a
//! fixed link transform. The end-effector frame is the frame after the last
//! link transform.

use std::fmt;
use std::sync::Arc;

use nalgebra::{
    DMatrix, DVector, Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3,
};

use crate::error::{Error, Result};

/// Minimum depth in front of the camera for a projectable point.
pub const MIN_CAMERA_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint: motion about/along `axis`, followed by the fixed `link`
/// transform carrying the frame to the next joint (or to the end effector).
#[derive(Debug, Clone)]
pub struct Joint {
    pub kind: JointKind,
    pub axis: Unit<Vector3<f64>>,
    pub link: Isometry3<f64>,
}

impl Joint {
    pub fn revolute(axis: Vector3<f64>, link: Isometry3<f64>) -> Self {
        Self {
            kind: JointKind::Revolute,
            axis: Unit::new_normalize(axis),
            link,
        }
    }

    pub fn prismatic(axis: Vector3<f64>, link: Isometry3<f64>) -> Self {
        Self {
            kind: JointKind::Prismatic,
            axis: Unit::new_normalize(axis),
            link,
        }
    }

    fn motion(&self, q: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Revolute => Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&self.axis, q),
            ),
            JointKind::Prismatic => Isometry3::translation(
                self.axis.x * q,
                self.axis.y * q,
                self.axis.z * q,
            ),
        }
    }
}

/// One Denavit-Hartenberg row. For a revolute joint the coordinate adds to
/// `theta`; for a prismatic joint it adds to `d`.
#[derive(Debug, Clone, Copy)]
pub struct DhRow {
    pub kind: JointKind,
    pub theta: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
}

impl DhRow {
    pub fn revolute(d: f64, a: f64, alpha: f64) -> Self {
        Self {
            kind: JointKind::Revolute,
            theta: 0.0,
            d,
            a,
            alpha,
        }
    }

    /// Axis + link-transform joint equivalent to this row
    /// (`Rz(theta) Tz(d) Tx(a) Rx(alpha)`, coordinate on `theta` or `d`).
    pub fn to_joint(&self) -> Joint {
        let link = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.theta),
        ) * Isometry3::translation(0.0, 0.0, self.d)
            * Isometry3::translation(self.a, 0.0, 0.0)
            * Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
            );
        Joint {
            kind: self.kind,
            axis: Vector3::z_axis(),
            link,
        }
    }
}

/// Kinematic description of a serial-chain manipulator with joint limits.
#[derive(Debug, Clone)]
pub struct RobotModel {
    name: String,
    joints: Vec<Joint>,
    limits_lower: DVector<f64>,
    limits_upper: DVector<f64>,
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        limits_lower: DVector<f64>,
        limits_upper: DVector<f64>,
    ) -> Result<Self> {
        let n = joints.len();
        if n == 0 {
            return Err(Error::Config("robot needs at least one joint".into()));
        }
        if limits_lower.len() != n || limits_upper.len() != n {
            return Err(Error::DimensionMismatch {
                context: "joint limits",
                expected: n,
                found: limits_lower.len().min(limits_upper.len()),
            });
        }
        for i in 0..n {
            if limits_lower[i] >= limits_upper[i] {
                return Err(Error::Config(format!(
                    "joint {i}: lower limit {} must be below upper limit {}",
                    limits_lower[i], limits_upper[i]
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            joints,
            limits_lower,
            limits_upper,
        })
    }

    /// Converts standard DH rows (`Rz(theta) Tz(d) Tx(a) Rx(alpha)` per row)
    /// to the per-joint axis + link-transform form used here.
    pub fn from_dh(
        name: impl Into<String>,
        rows: &[DhRow],
        limits_lower: DVector<f64>,
        limits_upper: DVector<f64>,
    ) -> Result<Self> {
        let joints = rows.iter().map(DhRow::to_joint).collect();
        Self::new(name, joints, limits_lower, limits_upper)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn limits_lower(&self) -> &DVector<f64> {
        &self.limits_lower
    }

    pub fn limits_upper(&self) -> &DVector<f64> {
        &self.limits_upper
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                context: "joint vector",
                expected: self.dof(),
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Frames after each joint's motion and link transform, base to tip.
    pub fn joint_frames(&self, q: &DVector<f64>) -> Result<Vec<Isometry3<f64>>> {
        self.check_q(q)?;
        let mut frames = Vec::with_capacity(self.dof());
        let mut current = Isometry3::identity();
        for (joint, &qi) in self.joints.iter().zip(q.iter()) {
            current = current * joint.motion(qi) * joint.link;
            frames.push(current);
        }
        Ok(frames)
    }

    /// End-effector pose (position and orientation) at configuration `q`.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Isometry3<f64>> {
        Ok(*self.joint_frames(q)?.last().expect("at least one joint"))
    }

    /// Linear and angular Jacobians (each 3 x n) of a frame rigidly attached
    /// to the end effector, evaluated at the world-frame point `origin`.
    pub fn frame_jacobian(
        &self,
        q: &DVector<f64>,
        origin: &Point3<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_q(q)?;
        let n = self.dof();
        let mut linear = DMatrix::zeros(3, n);
        let mut angular = DMatrix::zeros(3, n);
        // Joint i acts in the frame left by joint i-1 (identity for i = 0).
        let mut before = Isometry3::identity();
        for (i, (joint, &qi)) in self.joints.iter().zip(q.iter()).enumerate() {
            let axis_world = before.rotation * joint.axis.into_inner();
            match joint.kind {
                JointKind::Revolute => {
                    let arm = origin.coords - before.translation.vector;
                    linear.column_mut(i).copy_from(&axis_world.cross(&arm));
                    angular.column_mut(i).copy_from(&axis_world);
                }
                JointKind::Prismatic => {
                    linear.column_mut(i).copy_from(&axis_world);
                }
            }
            before = before * joint.motion(qi) * joint.link;
        }
        Ok((linear, angular))
    }
}

/// Joint configuration and time.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub t: f64,
}

impl RobotState {
    pub fn new(q: DVector<f64>, t: f64) -> Self {
        Self { q, t }
    }
}

type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type InputMapFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Control-affine plant `x_dot = f(x) + g(x) u`. The default is the
/// velocity-resolved kinematic model `x_dot = u` (f = 0, g = I).
#[derive(Clone, Default)]
pub struct DynamicsModel {
    drift: Option<Arc<DriftFn>>,
    input_map: Option<Arc<InputMapFn>>,
}

impl DynamicsModel {
    pub fn velocity_resolved() -> Self {
        Self::default()
    }

    pub fn new(
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        input_map: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Some(Arc::new(drift)),
            input_map: Some(Arc::new(input_map)),
        }
    }

    pub fn is_velocity_resolved(&self) -> bool {
        self.drift.is_none() && self.input_map.is_none()
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.drift {
            Some(f) => f(x),
            None => DVector::zeros(x.len()),
        }
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.input_map {
            Some(g) => g(x),
            None => DMatrix::identity(x.len(), x.len()),
        }
    }

    /// Control dimension for a state of dimension `n`.
    pub fn input_dim(&self, n: usize) -> usize {
        match &self.input_map {
            Some(g) => g(&DVector::zeros(n)).ncols(),
            None => n,
        }
    }
}

impl fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_velocity_resolved() {
            write!(f, "DynamicsModel(velocity-resolved)")
        } else {
            write!(f, "DynamicsModel(custom)")
        }
    }
}

/// Pinhole camera rigidly mounted on the end effector, observing one fixed
/// world point.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub focal: (f64, f64),
    pub principal_point: (f64, f64),
    /// End-effector frame to camera frame.
    pub mount: Isometry3<f64>,
    /// Observed point, world frame.
    pub target_point: Point3<f64>,
}

impl CameraModel {
    pub fn new(
        focal: (f64, f64),
        principal_point: (f64, f64),
        mount: Isometry3<f64>,
        target_point: Point3<f64>,
    ) -> Result<Self> {
        if focal.0 <= 0.0 || focal.1 <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got ({}, {})",
                focal.0, focal.1
            )));
        }
        Ok(Self {
            focal,
            principal_point,
            mount,
            target_point,
        })
    }

    fn project(&self, p_cam: &Point3<f64>) -> Result<DVector<f64>> {
        if p_cam.z <= MIN_CAMERA_DEPTH {
            return Err(Error::BehindCamera { depth: p_cam.z });
        }
        Ok(DVector::from_vec(vec![
            self.focal.0 * p_cam.x / p_cam.z + self.principal_point.0,
            self.focal.1 * p_cam.y / p_cam.z + self.principal_point.1,
        ]))
    }
}

type OutputFn = dyn Fn(&RobotState) -> Result<DVector<f64>> + Send + Sync;
type JacobianFn = dyn Fn(&RobotState) -> Result<DMatrix<f64>> + Send + Sync;

#[derive(Clone)]
enum TaskKind {
    JointIdentity,
    EePosition,
    ImageFeature(Arc<CameraModel>),
    Custom {
        dim: usize,
        output: Arc<OutputFn>,
        jacobian: Arc<JacobianFn>,
    },
}

/// Output map `sigma = k(x)` of a task, with its analytic Jacobian.
#[derive(Clone)]
pub struct TaskMap {
    robot: Arc<RobotModel>,
    kind: TaskKind,
}

impl fmt::Debug for TaskMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            TaskKind::JointIdentity => "joint_identity",
            TaskKind::EePosition => "ee_position",
            TaskKind::ImageFeature(_) => "image_feature",
            TaskKind::Custom { .. } => "custom",
        };
        write!(f, "TaskMap({kind}, robot={})", self.robot.name())
    }
}

impl TaskMap {
    pub fn joint_identity(robot: Arc<RobotModel>) -> Self {
        Self {
            robot,
            kind: TaskKind::JointIdentity,
        }
    }

    pub fn ee_position(robot: Arc<RobotModel>) -> Self {
        Self {
            robot,
            kind: TaskKind::EePosition,
        }
    }

    pub fn image_feature(robot: Arc<RobotModel>, camera: Arc<CameraModel>) -> Self {
        Self {
            robot,
            kind: TaskKind::ImageFeature(camera),
        }
    }

    pub fn custom(
        robot: Arc<RobotModel>,
        dim: usize,
        output: impl Fn(&RobotState) -> Result<DVector<f64>> + Send + Sync + 'static,
        jacobian: impl Fn(&RobotState) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            robot,
            kind: TaskKind::Custom {
                dim,
                output: Arc::new(output),
                jacobian: Arc::new(jacobian),
            },
        }
    }

    pub fn robot(&self) -> &Arc<RobotModel> {
        &self.robot
    }

    pub fn is_joint_identity(&self) -> bool {
        matches!(self.kind, TaskKind::JointIdentity)
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            TaskKind::JointIdentity => self.robot.dof(),
            TaskKind::EePosition => 3,
            TaskKind::ImageFeature(_) => 2,
            TaskKind::Custom { dim, .. } => *dim,
        }
    }

    /// Task output `sigma` at the given state.
    pub fn output(&self, state: &RobotState) -> Result<DVector<f64>> {
        self.robot.check_q(&state.q)?;
        match &self.kind {
            TaskKind::JointIdentity => Ok(state.q.clone()),
            TaskKind::EePosition => {
                let pose = self.robot.forward_kinematics(&state.q)?;
                Ok(DVector::from_column_slice(pose.translation.vector.as_slice()))
            }
            TaskKind::ImageFeature(camera) => {
                let pose = self.robot.forward_kinematics(&state.q)?;
                let cam_pose = pose * camera.mount;
                let p_cam = cam_pose.inverse_transform_point(&camera.target_point);
                camera.project(&p_cam)
            }
            TaskKind::Custom { output, .. } => output(state),
        }
    }

    /// Analytic Jacobian `d sigma / d q` (output_dim x n).
    pub fn jacobian(&self, state: &RobotState) -> Result<DMatrix<f64>> {
        self.robot.check_q(&state.q)?;
        match &self.kind {
            TaskKind::JointIdentity => {
                Ok(DMatrix::identity(self.robot.dof(), self.robot.dof()))
            }
            TaskKind::EePosition => {
                let pose = self.robot.forward_kinematics(&state.q)?;
                let origin = Point3::from(pose.translation.vector);
                let (linear, _) = self.robot.frame_jacobian(&state.q, &origin)?;
                Ok(linear)
            }
            TaskKind::ImageFeature(camera) => {
                let pose = self.robot.forward_kinematics(&state.q)?;
                let cam_pose = pose * camera.mount;
                let cam_origin = Point3::from(cam_pose.translation.vector);
                let p_cam = cam_pose.inverse_transform_point(&camera.target_point);
                if p_cam.z <= MIN_CAMERA_DEPTH {
                    return Err(Error::BehindCamera { depth: p_cam.z });
                }
                let (lin, ang) = self.robot.frame_jacobian(&state.q, &cam_origin)?;

                // Point velocity in the camera frame for unit joint rates:
                // p_cam = R'(target - o), so
                // dp_cam = -R'(v + omega x (target - o)) per column.
                let rot_t = cam_pose.rotation.to_rotation_matrix().inverse();
                let arm = camera.target_point.coords - cam_origin.coords;
                let n = self.robot.dof();
                let mut dp_cam = DMatrix::zeros(3, n);
                for j in 0..n {
                    let v = Vector3::new(lin[(0, j)], lin[(1, j)], lin[(2, j)]);
                    let w = Vector3::new(ang[(0, j)], ang[(1, j)], ang[(2, j)]);
                    let col = rot_t * (-(v + w.cross(&arm)));
                    dp_cam.column_mut(j).copy_from(&col);
                }

                let (fx, fy) = camera.focal;
                let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
                let projection = DMatrix::from_row_slice(
                    2,
                    3,
                    &[
                        fx / z,
                        0.0,
                        -fx * x / (z * z),
                        0.0,
                        fy / z,
                        -fy * y / (z * z),
                    ],
                );
                Ok(projection * dp_cam)
            }
            TaskKind::Custom { jacobian, .. } => jacobian(state),
        }
    }

    /// Central-difference Jacobian of [`TaskMap::output`], column by column.
    pub fn numeric_jacobian(&self, state: &RobotState, step: f64) -> Result<DMatrix<f64>> {
        if step <= 0.0 {
            return Err(Error::Config(format!("step must be positive, got {step}")));
        }
        self.robot.check_q(&state.q)?;
        let n = self.robot.dof();
        let m = self.output_dim();
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let mut fwd = state.clone();
            let mut bwd = state.clone();
            fwd.q[j] += step;
            bwd.q[j] -= step;
            let diff = (self.output(&fwd)? - self.output(&bwd)?) / (2.0 * step);
            jac.column_mut(j).copy_from(&diff);
        }
        Ok(jac)
    }
}

/// Planar arm with revolute z-axis joints and the given link lengths along x.
pub fn planar_arm(name: &str, link_lengths: &[f64], limit: f64) -> Result<RobotModel> {
    let joints = link_lengths
        .iter()
        .map(|&len| Joint::revolute(Vector3::z(), Isometry3::translation(len, 0.0, 0.0)))
        .collect();
    let n = link_lengths.len();
    RobotModel::new(
        name,
        joints,
        DVector::from_element(n, -limit),
        DVector::from_element(n, limit),
    )
}

/// Demo 7-DoF arm: alternating-axis geometry with 0.3 m links, built from a
/// DH table. Not calibrated to any particular hardware.
pub fn demo_arm_7dof() -> RobotModel {
    use std::f64::consts::FRAC_PI_2;
    let rows = [
        DhRow::revolute(0.3, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, FRAC_PI_2),
        DhRow::revolute(0.3, 0.0, FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.3, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, FRAC_PI_2),
        DhRow::revolute(0.3, 0.0, 0.0),
    ];
    let lower = DVector::from_vec(vec![-2.8, -2.0, -2.8, -2.0, -2.8, -2.0, -2.8]);
    let upper = DVector::from_vec(vec![2.8, 2.0, 2.8, 2.0, 2.8, 2.0, 2.8]);
    RobotModel::from_dh("demo_arm_7dof", &rows, lower, upper).expect("static model is valid")
}
