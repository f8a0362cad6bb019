//! Scenario files: a declarative JSON description of a robot, its tasks, the
//! priority schedule and the simulation settings.
//!
//! Parsing is strict (unknown keys are errors); validation collects every
//! violation before reporting. Several demo scenarios ship embedded in the
//! library; the `CBF_TASKSTACK_SCENARIO_DIR` environment variable redirects
//! name lookups to a directory instead.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DVector, Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig};
use crate::kinematics::{
    CameraModel, DhRow, DynamicsModel, Joint, JointKind, RobotModel, RobotState, TaskMap,
};
use crate::priority::{InsertionSpec, PrioritySchedule, PriorityStack, RemovalSpec};
use crate::sim::{self, RunFailure, SimTrace};
use crate::task::{BarrierKind, BarrierTask, ClassK, Reference, ReferenceSegment};

/// Environment variable overriding the bundled scenario directory.
pub const SCENARIO_DIR_ENV: &str = "CBF_TASKSTACK_SCENARIO_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario validation failed:\n{}", violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Validation { violations: Vec<String> },
}

fn default_gain() -> f64 {
    1.0
}
fn default_kappa() -> f64 {
    10.0
}
fn default_window() -> f64 {
    1.0
}
fn default_ramp() -> f64 {
    1.0
}
fn default_l() -> f64 {
    100.0
}
fn default_true() -> bool {
    true
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    30.0
}

/// Top-level scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub robot: RobotSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSpec>,
    /// Initial joint configuration; zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_q: Option<Vec<f64>>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub limits_lower: Vec<f64>,
    pub limits_upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JointKindSpec {
    #[default]
    Revolute,
    Prismatic,
}

impl From<JointKindSpec> for JointKind {
    fn from(value: JointKindSpec) -> Self {
        match value {
            JointKindSpec::Revolute => JointKind::Revolute,
            JointKindSpec::Prismatic => JointKind::Prismatic,
        }
    }
}

/// One joint, either in axis + link-transform form or as a DH row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    #[serde(default)]
    pub kind: JointKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_translation: Option<[f64; 3]>,
    /// Roll-pitch-yaw of the link transform, radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_rpy: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh: Option<DhSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhSpec {
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    #[serde(default)]
    pub mount_translation: [f64; 3],
    #[serde(default)]
    pub mount_rpy: [f64; 3],
    /// Observed world point, meters.
    pub target_point: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSpec {
    JointIdentity,
    EePosition,
    ImageFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum BarrierSpec {
    Setpoint {
        target: Vec<f64>,
        #[serde(default = "default_gain")]
        gain: f64,
    },
    Tracking {
        reference: ReferenceSpec,
    },
    JointBox {
        /// Defaults to the robot's joint limits.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<Vec<f64>>,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        aggregate: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub start: f64,
    /// Per-output-dimension polynomial coefficients, ascending powers of
    /// `t - start`.
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ClassKSpec {
    Linear { alpha: f64 },
    Cubic { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub label: String,
    pub map: MapSpec,
    pub barrier: BarrierSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_k: Option<ClassKSpec>,
    #[serde(default)]
    pub safety_critical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_window")]
    pub transition_window: f64,
    #[serde(default)]
    pub stacks: Vec<StackSpec>,
    #[serde(default)]
    pub insertions: Vec<InsertionJson>,
    #[serde(default)]
    pub removals: Vec<RemovalJson>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            transition_window: default_window(),
            stacks: Vec::new(),
            insertions: Vec::new(),
            removals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub start: f64,
    /// Precedence pairs `[higher, lower]` by task label.
    #[serde(default)]
    pub order: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertionJson {
    pub task: String,
    pub t_ins: f64,
    #[serde(default = "default_ramp")]
    pub ramp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovalJson {
    pub task: String,
    pub t_rem: f64,
    #[serde(default = "default_ramp")]
    pub ramp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default = "default_l")]
    pub l: f64,
    #[serde(default = "default_true")]
    pub enforce_slack_nonneg: bool,
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            l: default_l(),
            enforce_slack_nonneg: true,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

impl Scenario {
    /// Strict JSON parse; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn task_labels(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.label.as_str()).collect()
    }

    fn task_index(&self, label: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.label == label)
    }

    fn map_dim(&self, map: MapSpec) -> usize {
        match map {
            MapSpec::JointIdentity => self.robot.joints.len(),
            MapSpec::EePosition => 3,
            MapSpec::ImageFeature => 2,
        }
    }

    /// Checks the document, collecting every violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut violations = Vec::new();
        let n = self.robot.joints.len();

        if n == 0 {
            violations.push("robot: needs at least one joint".to_string());
        }
        if self.robot.limits_lower.len() != n || self.robot.limits_upper.len() != n {
            violations.push(format!(
                "robot: limits must have {n} entries, got {} and {}",
                self.robot.limits_lower.len(),
                self.robot.limits_upper.len()
            ));
        } else {
            for i in 0..n {
                if self.robot.limits_lower[i] >= self.robot.limits_upper[i] {
                    violations.push(format!("robot: joint {i} lower limit not below upper"));
                }
            }
        }
        for (i, joint) in self.robot.joints.iter().enumerate() {
            let axis_form = joint.axis.is_some()
                || joint.link_translation.is_some()
                || joint.link_rpy.is_some();
            if joint.dh.is_some() && axis_form {
                violations.push(format!(
                    "robot: joint {i} mixes dh and axis/link fields"
                ));
            }
            if joint.dh.is_none() && joint.axis.is_none() {
                violations.push(format!("robot: joint {i} needs an axis or a dh row"));
            }
            if let Some(axis) = joint.axis {
                if Vector3::from(axis).norm() < 1e-12 {
                    violations.push(format!("robot: joint {i} axis is zero"));
                }
            }
        }

        if let Some(camera) = &self.camera {
            if camera.focal[0] <= 0.0 || camera.focal[1] <= 0.0 {
                violations.push("camera: focal lengths must be positive".to_string());
            }
        }

        if let Some(q0) = &self.initial_q {
            if q0.len() != n {
                violations.push(format!(
                    "initial_q: expected {n} entries, got {}",
                    q0.len()
                ));
            }
        }

        if self.tasks.is_empty() {
            violations.push("tasks: at least one task is required".to_string());
        }
        let mut seen = BTreeSet::new();
        for task in &self.tasks {
            if !seen.insert(task.label.as_str()) {
                violations.push(format!("tasks: duplicate label \"{}\"", task.label));
            }
        }
        for task in &self.tasks {
            let dim = self.map_dim(task.map);
            if matches!(task.map, MapSpec::ImageFeature) && self.camera.is_none() {
                violations.push(format!(
                    "task \"{}\": image_feature map needs a camera section",
                    task.label
                ));
            }
            match &task.barrier {
                BarrierSpec::Setpoint { target, gain } => {
                    if target.len() != dim {
                        violations.push(format!(
                            "task \"{}\": setpoint target has {} entries, map output has {dim}",
                            task.label,
                            target.len()
                        ));
                    }
                    if *gain <= 0.0 {
                        violations.push(format!("task \"{}\": gain must be positive", task.label));
                    }
                }
                BarrierSpec::Tracking { reference } => {
                    if reference.segments.is_empty() {
                        violations.push(format!(
                            "task \"{}\": tracking reference has no segments",
                            task.label
                        ));
                    }
                    for (s, seg) in reference.segments.iter().enumerate() {
                        if seg.coeffs.len() != dim {
                            violations.push(format!(
                                "task \"{}\": reference segment {s} has {} dims, map output has {dim}",
                                task.label,
                                seg.coeffs.len()
                            ));
                        }
                        if seg.coeffs.iter().any(|c| c.is_empty()) {
                            violations.push(format!(
                                "task \"{}\": reference segment {s} has an empty polynomial",
                                task.label
                            ));
                        }
                    }
                    for pair in reference.segments.windows(2) {
                        if pair[1].start <= pair[0].start {
                            violations.push(format!(
                                "task \"{}\": reference segment starts must increase",
                                task.label
                            ));
                        }
                    }
                }
                BarrierSpec::JointBox { lower, upper, gain, .. } => {
                    if !matches!(task.map, MapSpec::JointIdentity) {
                        violations.push(format!(
                            "task \"{}\": joint_box requires the joint_identity map",
                            task.label
                        ));
                    }
                    if *gain <= 0.0 {
                        violations.push(format!("task \"{}\": gain must be positive", task.label));
                    }
                    for (name, bound) in [("lower", lower), ("upper", upper)] {
                        if let Some(bound) = bound {
                            if bound.len() != n {
                                violations.push(format!(
                                    "task \"{}\": {name} bound has {} entries, robot has {n} joints",
                                    task.label,
                                    bound.len()
                                ));
                            }
                        }
                    }
                    // Start inside the box, otherwise invariance is void.
                    let lo = lower.as_ref().unwrap_or(&self.robot.limits_lower);
                    let hi = upper.as_ref().unwrap_or(&self.robot.limits_upper);
                    if let Some(q0) = &self.initial_q {
                        if q0.len() == lo.len() && q0.len() == hi.len() {
                            for i in 0..q0.len() {
                                if q0[i] <= lo[i] || q0[i] >= hi[i] {
                                    violations.push(format!(
                                        "task \"{}\": initial_q[{i}] = {} starts outside ({}, {})",
                                        task.label, q0[i], lo[i], hi[i]
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            if let Some(ClassKSpec::Linear { alpha } | ClassKSpec::Cubic { alpha }) = task.class_k {
                if alpha <= 0.0 {
                    violations.push(format!(
                        "task \"{}\": class_k alpha must be positive",
                        task.label
                    ));
                }
            }
        }

        let sched = &self.schedule;
        if sched.kappa <= 1.0 {
            violations.push(format!("schedule: kappa must exceed 1, got {}", sched.kappa));
        }
        if sched.transition_window <= 0.0 {
            violations.push("schedule: transition_window must be positive".to_string());
        }
        for pair in sched.stacks.windows(2) {
            if pair[1].start <= pair[0].start {
                violations.push("schedule: stack start times must increase".to_string());
            } else if pair[1].start - pair[0].start < sched.transition_window {
                violations.push(format!(
                    "schedule: stacks at {} and {} overlap within the transition window",
                    pair[0].start, pair[1].start
                ));
            }
        }
        for (s, stack) in sched.stacks.iter().enumerate() {
            let mut pairs = Vec::new();
            for pair in &stack.order {
                for label in pair {
                    if self.task_index(label).is_none() {
                        violations.push(format!(
                            "schedule stack {s}: unknown task label \"{label}\""
                        ));
                    }
                }
                if let (Some(a), Some(b)) = (self.task_index(&pair[0]), self.task_index(&pair[1])) {
                    pairs.push((a, b));
                }
            }
            if PriorityStack::new(pairs, sched.kappa.max(1.0 + 1e-9), BTreeSet::new()).is_err() {
                violations.push(format!("schedule stack {s}: priority order contains a cycle"));
            }
        }
        for ins in &sched.insertions {
            if self.task_index(&ins.task).is_none() {
                violations.push(format!(
                    "schedule insertion: unknown task label \"{}\"",
                    ins.task
                ));
            }
            if ins.ramp <= 0.0 {
                violations.push(format!(
                    "schedule insertion of \"{}\": ramp must be positive",
                    ins.task
                ));
            }
        }
        for rem in &sched.removals {
            if self.task_index(&rem.task).is_none() {
                violations.push(format!(
                    "schedule removal: unknown task label \"{}\"",
                    rem.task
                ));
            }
            if rem.ramp <= 0.0 {
                violations.push(format!(
                    "schedule removal of \"{}\": ramp must be positive",
                    rem.task
                ));
            }
            if let Some(ins) = sched.insertions.iter().find(|i| i.task == rem.task) {
                if rem.t_rem - rem.ramp < ins.t_ins + ins.ramp {
                    violations.push(format!(
                        "schedule: task \"{}\" removal ramp overlaps its insertion ramp",
                        rem.task
                    ));
                }
            }
        }

        if self.controller.l <= 0.0 {
            violations.push("controller: l must be positive".to_string());
        }
        if self.sim.dt <= 0.0 {
            violations.push("sim: dt must be positive".to_string());
        }
        if self.sim.horizon < self.sim.dt {
            violations.push("sim: horizon must be at least one step".to_string());
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation { violations })
        }
    }

    /// Validates and constructs the runnable form.
    pub fn build(&self) -> Result<BuiltScenario, ScenarioError> {
        self.validate()?;
        let internal = |message: String| ScenarioError::Validation {
            violations: vec![message],
        };

        let joints: Vec<Joint> = self
            .robot
            .joints
            .iter()
            .map(|spec| match &spec.dh {
                Some(dh) => DhRow {
                    kind: spec.kind.into(),
                    theta: dh.theta,
                    d: dh.d,
                    a: dh.a,
                    alpha: dh.alpha,
                }
                .to_joint(),
                None => {
                    let axis = Vector3::from(spec.axis.expect("validated"));
                    let translation = spec.link_translation.unwrap_or([0.0; 3]);
                    let rpy = spec.link_rpy.unwrap_or([0.0; 3]);
                    let link = Isometry3::from_parts(
                        Translation3::new(translation[0], translation[1], translation[2]),
                        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
                    );
                    match spec.kind {
                        JointKindSpec::Revolute => Joint::revolute(axis, link),
                        JointKindSpec::Prismatic => Joint::prismatic(axis, link),
                    }
                }
            })
            .collect();
        let robot = Arc::new(
            RobotModel::new(
                self.robot.name.clone(),
                joints,
                DVector::from_vec(self.robot.limits_lower.clone()),
                DVector::from_vec(self.robot.limits_upper.clone()),
            )
            .map_err(|e| internal(format!("robot: {e}")))?,
        );

        let camera = match &self.camera {
            Some(spec) => Some(Arc::new(
                CameraModel::new(
                    (spec.focal[0], spec.focal[1]),
                    (spec.principal_point[0], spec.principal_point[1]),
                    Isometry3::from_parts(
                        Translation3::new(
                            spec.mount_translation[0],
                            spec.mount_translation[1],
                            spec.mount_translation[2],
                        ),
                        UnitQuaternion::from_euler_angles(
                            spec.mount_rpy[0],
                            spec.mount_rpy[1],
                            spec.mount_rpy[2],
                        ),
                    ),
                    Point3::new(
                        spec.target_point[0],
                        spec.target_point[1],
                        spec.target_point[2],
                    ),
                )
                .map_err(|e| internal(format!("camera: {e}")))?,
            )),
            None => None,
        };

        let mut tasks = Vec::with_capacity(self.tasks.len());
        for spec in &self.tasks {
            let map = match spec.map {
                MapSpec::JointIdentity => TaskMap::joint_identity(robot.clone()),
                MapSpec::EePosition => TaskMap::ee_position(robot.clone()),
                MapSpec::ImageFeature => TaskMap::image_feature(
                    robot.clone(),
                    camera.clone().expect("validated"),
                ),
            };
            let barrier = match &spec.barrier {
                BarrierSpec::Setpoint { target, gain } => BarrierKind::Setpoint {
                    target: DVector::from_vec(target.clone()),
                    gain: *gain,
                },
                BarrierSpec::Tracking { reference } => BarrierKind::Tracking {
                    reference: Reference::new(
                        reference
                            .segments
                            .iter()
                            .map(|s| ReferenceSegment {
                                start: s.start,
                                coeffs: s.coeffs.clone(),
                            })
                            .collect(),
                    )
                    .map_err(|e| internal(format!("task \"{}\": {e}", spec.label)))?,
                },
                BarrierSpec::JointBox { lower, upper, gain, aggregate } => BarrierKind::JointBox {
                    lower: DVector::from_vec(
                        lower.clone().unwrap_or_else(|| self.robot.limits_lower.clone()),
                    ),
                    upper: DVector::from_vec(
                        upper.clone().unwrap_or_else(|| self.robot.limits_upper.clone()),
                    ),
                    gain: *gain,
                    aggregate: *aggregate,
                },
            };
            let class_k = match spec.class_k {
                None => ClassK::default(),
                Some(ClassKSpec::Linear { alpha }) => ClassK::Linear { alpha },
                Some(ClassKSpec::Cubic { alpha }) => ClassK::Cubic { alpha },
            };
            tasks.push(
                BarrierTask::new(spec.label.clone(), map, barrier, class_k, spec.safety_critical)
                    .map_err(|e| internal(format!("task \"{}\": {e}", spec.label)))?,
            );
        }

        let safety: BTreeSet<usize> = tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.safety_critical)
            .map(|(i, _)| i)
            .collect();
        let mut segments = Vec::new();
        if self.schedule.stacks.is_empty() {
            segments.push((
                0.0,
                PriorityStack::new(Vec::new(), self.schedule.kappa, safety.clone())
                    .map_err(|e| internal(format!("schedule: {e}")))?,
            ));
        } else {
            for stack in &self.schedule.stacks {
                let order = stack
                    .order
                    .iter()
                    .map(|pair| {
                        (
                            self.task_index(&pair[0]).expect("validated"),
                            self.task_index(&pair[1]).expect("validated"),
                        )
                    })
                    .collect();
                segments.push((
                    stack.start,
                    PriorityStack::new(order, self.schedule.kappa, safety.clone())
                        .map_err(|e| internal(format!("schedule: {e}")))?,
                ));
            }
        }
        let insertions = self
            .schedule
            .insertions
            .iter()
            .map(|i| InsertionSpec {
                task: self.task_index(&i.task).expect("validated"),
                at: i.t_ins,
                ramp: i.ramp,
            })
            .collect();
        let removals = self
            .schedule
            .removals
            .iter()
            .map(|r| RemovalSpec {
                task: self.task_index(&r.task).expect("validated"),
                at: r.t_rem,
                ramp: r.ramp,
            })
            .collect();
        let schedule = PrioritySchedule::new(
            segments,
            self.schedule.transition_window,
            insertions,
            removals,
        )
        .map_err(|e| internal(format!("schedule: {e}")))?;

        let config = ControllerConfig {
            slack_penalty: self.controller.l,
            enforce_slack_nonneg: self.controller.enforce_slack_nonneg,
            warm_start: self.controller.warm_start,
        };

        let q0 = match &self.initial_q {
            Some(q0) => DVector::from_vec(q0.clone()),
            None => DVector::zeros(robot.dof()),
        };

        Ok(BuiltScenario {
            spec: self.clone(),
            robot,
            camera,
            tasks,
            schedule,
            config,
            initial: RobotState::new(q0, 0.0),
            dt: self.sim.dt,
            horizon: self.sim.horizon,
        })
    }
}

/// Validated, runnable form of a scenario.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub spec: Scenario,
    pub robot: Arc<RobotModel>,
    pub camera: Option<Arc<CameraModel>>,
    pub tasks: Vec<BarrierTask>,
    pub schedule: PrioritySchedule,
    pub config: ControllerConfig,
    pub initial: RobotState,
    pub dt: f64,
    pub horizon: f64,
}

impl BuiltScenario {
    pub fn controller(&self) -> Controller {
        Controller::new(
            self.tasks.clone(),
            self.schedule.clone(),
            DynamicsModel::velocity_resolved(),
            self.config,
        )
        .expect("scenario was validated")
    }

    /// Runs the closed loop over the configured horizon.
    pub fn run(&self) -> Result<SimTrace, Box<RunFailure>> {
        let mut controller = self.controller();
        sim::run(&mut controller, &self.initial, self.dt, self.horizon)
    }
}

/// Reads and parses a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

/// Bundled demo scenarios, embedded in the library.
pub mod builtin {
    pub const PAPER_7DOF: &str = include_str!("../scenarios/paper_7dof.json");
    pub const CONFLICT: &str = include_str!("../scenarios/conflict.json");
    pub const SINGLE_TRACK: &str = include_str!("../scenarios/single_track.json");
    pub const SWAP_SMOOTH: &str = include_str!("../scenarios/swap_smooth.json");
    pub const SWAP_STEP: &str = include_str!("../scenarios/swap_step.json");
    pub const INSERTION: &str = include_str!("../scenarios/insertion.json");

    pub const NAMES: [&str; 6] = [
        "paper_7dof",
        "conflict",
        "single_track",
        "swap_smooth",
        "swap_step",
        "insertion",
    ];

    /// Embedded source by name; accepts a trailing `.json`.
    pub fn source(name: &str) -> Option<&'static str> {
        let name = name.strip_suffix(".json").unwrap_or(name);
        match name {
            "paper_7dof" => Some(PAPER_7DOF),
            "conflict" => Some(CONFLICT),
            "single_track" => Some(SINGLE_TRACK),
            "swap_smooth" => Some(SWAP_SMOOTH),
            "swap_step" => Some(SWAP_STEP),
            "insertion" => Some(INSERTION),
            _ => None,
        }
    }
}

fn scenario_dir() -> Option<PathBuf> {
    std::env::var_os(SCENARIO_DIR_ENV).map(PathBuf::from)
}

/// Available scenario names: the files of the override directory when
/// `CBF_TASKSTACK_SCENARIO_DIR` is set, the embedded ones otherwise.
pub fn list_scenarios() -> Vec<String> {
    if let Some(dir) = scenario_dir() {
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|entry| {
                let path = entry.path();
                (path.extension().and_then(|e| e.to_str()) == Some("json"))
                    .then(|| path.file_stem()?.to_str().map(str::to_owned))
                    .flatten()
            })
            .collect();
        names.sort();
        names
    } else {
        builtin::NAMES.iter().map(|s| s.to_string()).collect()
    }
}

/// Resolves `name_or_path` as a filesystem path first, then as a scenario
/// name in the override directory (when set) or among the embedded ones.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    let direct = Path::new(name_or_path);
    if direct.is_file() {
        return parse_scenario(direct);
    }
    if let Some(dir) = scenario_dir() {
        for candidate in [
            dir.join(name_or_path),
            dir.join(format!("{name_or_path}.json")),
        ] {
            if candidate.is_file() {
                return parse_scenario(candidate);
            }
        }
    } else if let Some(source) = builtin::source(name_or_path) {
        return Scenario::from_json(source);
    }
    Err(ScenarioError::Io {
        path: name_or_path.to_string(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such scenario"),
    })
}
