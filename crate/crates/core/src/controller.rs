//! Per-step assembly and solve of the slacked prioritized program.
//!
//! Decision vector `z = (u, delta_free)` where `u` is the control input and
//! `delta_free` holds one slack per non-safety-critical task (safety-critical
//! slacks are eliminated rather than penalized, so their constraints hold
//! exactly). The program minimizes `||u||^2 + l ||delta||^2` subject to
//!
//! * one row `a' u + delta_m >= rho_m(t) * beta` per scalar barrier of task m
//!   (the activation gain `rho_m` ramps only the offset, never the
//!   coefficients),
//! * the prioritization rows `K(t) delta >= 0`,
//! * optionally `delta >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kinematics::{DynamicsModel, RobotState};
use crate::priority::PrioritySchedule;
use crate::qp::{solve_qp_with, QpProblem, SolveOptions};
use crate::task::BarrierTask;

/// Controller tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Slack penalty `l` in the objective; must be positive for strict
    /// convexity.
    pub slack_penalty: f64,
    /// Constrain every slack to be nonnegative.
    pub enforce_slack_nonneg: bool,
    /// Reuse the previous step's active set as a solver hint.
    pub warm_start: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            slack_penalty: 100.0,
            enforce_slack_nonneg: true,
            warm_start: true,
        }
    }
}

impl ControllerConfig {
    fn validate(&self) -> Result<()> {
        if self.slack_penalty <= 0.0 {
            return Err(Error::Config(format!(
                "slack penalty must be positive, got {}",
                self.slack_penalty
            )));
        }
        Ok(())
    }
}

/// Provenance of one program row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    /// Scalar barrier `component` of task `task`.
    Barrier { task: usize, component: usize },
    /// Row `row` of the prioritization matrix.
    Priority { row: usize },
    /// Nonnegativity of the slack of task `task`.
    SlackNonneg { task: usize },
}

/// Assembled program plus the layout needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct AssembledQp {
    pub problem: QpProblem,
    /// One tag per constraint row, in row order.
    pub tags: Vec<RowTag>,
    /// Task index per slack column, in column order.
    pub free_slacks: Vec<usize>,
    /// Control dimension (leading block of the decision vector).
    pub input_dim: usize,
}

/// Solver outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal { iterations: usize },
}

/// Control and slack values for one step.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Joint velocity command.
    pub u: DVector<f64>,
    /// Slack per task (zero for safety-critical tasks).
    pub slacks: DVector<f64>,
    /// Active constraint rows of the assembled program.
    pub active_constraints: Vec<usize>,
    pub status: SolveStatus,
}

/// One controller instance per simulated robot. Holds the task list, the
/// priority schedule and a warm-start cache; not reentrant.
#[derive(Debug, Clone)]
pub struct Controller {
    tasks: Vec<BarrierTask>,
    schedule: PrioritySchedule,
    dynamics: DynamicsModel,
    config: ControllerConfig,
    warm: Vec<usize>,
}

impl Controller {
    pub fn new(
        tasks: Vec<BarrierTask>,
        schedule: PrioritySchedule,
        dynamics: DynamicsModel,
        config: ControllerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::Config("controller needs at least one task".into()));
        }
        let m = tasks.len();
        for (_, stack) in schedule.segments() {
            for &(a, b) in &stack.order {
                for idx in [a, b] {
                    if idx >= m {
                        return Err(Error::IndexOutOfRange { index: idx, len: m });
                    }
                }
            }
        }
        for spec in schedule.insertions() {
            if spec.task >= m {
                return Err(Error::IndexOutOfRange { index: spec.task, len: m });
            }
        }
        for spec in schedule.removals() {
            if spec.task >= m {
                return Err(Error::IndexOutOfRange { index: spec.task, len: m });
            }
        }
        Ok(Self {
            tasks,
            schedule,
            dynamics,
            config,
            warm: Vec::new(),
        })
    }

    pub fn tasks(&self) -> &[BarrierTask] {
        &self.tasks
    }

    pub fn schedule(&self) -> &PrioritySchedule {
        &self.schedule
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Task indices whose slack is a decision variable.
    pub fn free_slack_tasks(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.safety_critical)
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds the program for the given state and time. Pure; the warm-start
    /// cache is not consulted here.
    pub fn assemble(&self, state: &RobotState, t: f64) -> Result<AssembledQp> {
        let p = self.dynamics.input_dim(state.q.len());
        let free_slacks = self.free_slack_tasks();
        let n_free = free_slacks.len();
        let dim = p + n_free;
        let slack_col = |task: usize| -> Option<usize> {
            free_slacks.iter().position(|&i| i == task).map(|c| p + c)
        };

        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut offsets: Vec<f64> = Vec::new();
        let mut tags: Vec<RowTag> = Vec::new();

        for (task_idx, task) in self.tasks.iter().enumerate() {
            let gain = self.schedule.insertion_gain(task_idx, t);
            for (component, row) in task.constraint_rows(state, &self.dynamics, t)?.into_iter().enumerate() {
                if row.coeffs.len() != p {
                    return Err(Error::DimensionMismatch {
                        context: "barrier row",
                        expected: p,
                        found: row.coeffs.len(),
                    });
                }
                let mut full = DVector::zeros(dim);
                full.rows_mut(0, p).copy_from(&row.coeffs);
                if let Some(col) = slack_col(task_idx) {
                    full[col] = 1.0;
                }
                rows.push(full);
                offsets.push(row.offset * gain);
                tags.push(RowTag::Barrier { task: task_idx, component });
            }
        }

        let k = self.schedule.matrix_at(t, self.tasks.len())?;
        for r in 0..k.rows() {
            let mut full = DVector::zeros(dim);
            for (col, &task_idx) in free_slacks.iter().enumerate() {
                full[p + col] = k.k[(r, task_idx)];
            }
            rows.push(full);
            offsets.push(0.0);
            tags.push(RowTag::Priority { row: r });
        }

        if self.config.enforce_slack_nonneg {
            for (col, &task_idx) in free_slacks.iter().enumerate() {
                let mut full = DVector::zeros(dim);
                full[p + col] = 1.0;
                rows.push(full);
                offsets.push(0.0);
                tags.push(RowTag::SlackNonneg { task: task_idx });
            }
        }

        let mut cost = DMatrix::zeros(dim, dim);
        for i in 0..p {
            cost[(i, i)] = 2.0;
        }
        for i in p..dim {
            cost[(i, i)] = 2.0 * self.config.slack_penalty;
        }

        let mut constraints = DMatrix::zeros(rows.len(), dim);
        for (i, row) in rows.iter().enumerate() {
            constraints.row_mut(i).copy_from(&row.transpose());
        }
        let problem = QpProblem::new(
            cost,
            DVector::zeros(dim),
            constraints,
            DVector::from_vec(offsets),
        )?;

        Ok(AssembledQp {
            problem,
            tags,
            free_slacks,
            input_dim: p,
        })
    }

    /// Assembles and solves the program, updating the warm-start cache.
    ///
    /// An `Infeasible` error here indicates a caller bug: with one slack per
    /// non-safety-critical task and no input bounds the program is feasible
    /// by construction.
    pub fn compute(&mut self, state: &RobotState, t: f64) -> Result<ControlOutput> {
        let assembled = self.assemble(state, t)?;
        let options = SolveOptions {
            warm_start: if self.config.warm_start {
                std::mem::take(&mut self.warm)
            } else {
                Vec::new()
            },
            max_iterations: None,
        };
        let solution = match solve_qp_with(&assembled.problem, &options) {
            Ok(solution) => solution,
            // A warm-start hint must never make a feasible program fail;
            // retry cold before propagating.
            Err(Error::Infeasible) if !options.warm_start.is_empty() => {
                solve_qp_with(&assembled.problem, &SolveOptions::default())?
            }
            Err(e) => return Err(e),
        };
        if self.config.warm_start {
            self.warm = solution.active_set.clone();
        }

        let u = solution.z_star.rows(0, assembled.input_dim).into_owned();
        let mut slacks = DVector::zeros(self.tasks.len());
        for (col, &task_idx) in assembled.free_slacks.iter().enumerate() {
            slacks[task_idx] = solution.z_star[assembled.input_dim + col];
        }
        Ok(ControlOutput {
            u,
            slacks,
            active_constraints: solution.active_set,
            status: SolveStatus::Optimal { iterations: solution.iterations },
        })
    }

    /// Drops the warm-start cache (used when the state jumps).
    pub fn reset(&mut self) {
        self.warm.clear();
    }
}
