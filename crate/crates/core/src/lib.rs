//! Execute and prioritize multiple robot tasks by encoding each one as a
//! barrier constraint on the joint velocities and solving a single slacked
//! quadratic program per control step.
//!
//! The pieces, bottom up:
//!
//! * [`qp`] — dense active-set solver for small strictly convex QPs, plus an
//!   exhaustive reference solver and a KKT checker.
//! * [`kinematics`] — serial-chain models, forward kinematics, geometric and
//!   task-map Jacobians (joint space, end-effector position, pinhole image
//!   feature).
//! * [`task`] — barrier encodings of tasks and their reduction to one linear
//!   inequality row on the control input.
//! * [`priority`] — prioritization matrices built from strict partial orders,
//!   time-varying schedules, insertion/removal ramps.
//! * [`controller`] — assembles and solves the slacked prioritized QP.
//! * [`sim`] — closed-loop integration, trace logging, CSV export, continuity
//!   and invariance reports.
//! * [`scenario`] — JSON scenario files and the bundled demo scenarios.

pub mod controller;
pub mod error;
pub mod kinematics;
pub mod priority;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod task;

pub use error::{Error, Result};
