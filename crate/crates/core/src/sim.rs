//! Closed-loop simulation under zero-order hold, trace logging and reports.
//!
//! The plant is the single integrator `q_dot = u`, for which explicit Euler
//! is exact under zero-order hold.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::kinematics::RobotState;
use crate::task::{BarrierKind, BarrierTask};

/// Advances the state by one zero-order-hold step: `q <- q + u dt`.
pub fn integrate_step(state: &RobotState, u: &DVector<f64>, dt: f64) -> Result<RobotState> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if u.len() != state.q.len() {
        return Err(Error::DimensionMismatch {
            context: "control input",
            expected: state.q.len(),
            found: u.len(),
        });
    }
    Ok(RobotState::new(&state.q + u * dt, state.t + dt))
}

/// Schedule event mark in a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub label: String,
}

/// Time series of one closed-loop run.
///
/// Sample `k` holds the state at `t_k = k dt`, the control computed there and
/// the barrier values of every task at that state; the final sample's control
/// is computed but never applied. Wall-clock solve times are kept apart from
/// the dynamic data so bitwise trace comparisons stay meaningful.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub slacks: Vec<DVector<f64>>,
    /// `barriers[task][component][step]`.
    pub barriers: Vec<Vec<Vec<f64>>>,
    pub task_labels: Vec<String>,
    pub events: Vec<SimEvent>,
    /// Per-step QP solve time in microseconds.
    pub solve_micros: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Minimum barrier value across a task's components at each step; the
    /// single curve used for reporting.
    pub fn barrier_min_curve(&self, task: usize) -> Vec<f64> {
        let comps = &self.barriers[task];
        (0..self.len())
            .map(|k| comps.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Index of the sample at time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.len().saturating_sub(1))
    }

    /// Writes the trace as CSV: header
    /// `t,q0..,u0..,delta0..,h_<label>..`, one row per step, plain decimal
    /// points.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |q| q.len());
        let p = self.controls.first().map_or(0, |u| u.len());
        let m = self.slacks.first().map_or(0, |d| d.len());
        let mut header = String::from("t");
        for i in 0..n {
            header.push_str(&format!(",q{i}"));
        }
        for i in 0..p {
            header.push_str(&format!(",u{i}"));
        }
        for i in 0..m {
            header.push_str(&format!(",delta{i}"));
        }
        for label in &self.task_labels {
            header.push_str(&format!(",h_{label}"));
        }
        writeln!(out, "{header}")?;

        let min_curves: Vec<Vec<f64>> =
            (0..self.task_labels.len()).map(|i| self.barrier_min_curve(i)).collect();
        for k in 0..self.len() {
            let mut line = format!("{}", self.times[k]);
            for v in self.states[k].iter() {
                line.push_str(&format!(",{v}"));
            }
            for v in self.controls[k].iter() {
                line.push_str(&format!(",{v}"));
            }
            for v in self.slacks[k].iter() {
                line.push_str(&format!(",{v}"));
            }
            for curve in &min_curves {
                line.push_str(&format!(",{}", curve[k]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// A run that aborted on a controller error; carries the partial trace and
/// the failure time.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: SimTrace,
    pub at: f64,
    pub source: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted at t = {} s: {}", self.at, self.source)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Runs the closed loop from `t = 0` to `horizon`, sampling the controller
/// at fixed `dt`. Deterministic given its inputs. Aborts on the first
/// controller error, returning the partial trace and the failure time.
pub fn run(
    controller: &mut Controller,
    initial: &RobotState,
    dt: f64,
    horizon: f64,
) -> std::result::Result<SimTrace, Box<RunFailure>> {
    let steps = (horizon / dt).round() as usize;
    let task_labels: Vec<String> =
        controller.tasks().iter().map(|t| t.label.clone()).collect();
    let row_counts: Vec<usize> = controller.tasks().iter().map(|t| t.row_count()).collect();
    let mut trace = SimTrace {
        dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        slacks: Vec::with_capacity(steps + 1),
        barriers: row_counts
            .iter()
            .map(|&r| vec![Vec::with_capacity(steps + 1); r])
            .collect(),
        task_labels,
        events: controller
            .schedule()
            .events()
            .into_iter()
            .map(|(t, label)| SimEvent { t, label })
            .collect(),
        solve_micros: Vec::with_capacity(steps + 1),
    };

    let mut state = RobotState::new(initial.q.clone(), 0.0);
    for k in 0..=steps {
        let t = k as f64 * dt;
        state.t = t;

        let abort = |trace: SimTrace, source: Error| {
            Box::new(RunFailure { partial: trace, at: t, source })
        };

        // Barrier values for the log.
        let mut step_barriers: Vec<Vec<f64>> = Vec::with_capacity(controller.tasks().len());
        for task in controller.tasks() {
            match task.evaluate(&state, t) {
                Ok(evals) => step_barriers.push(evals.into_iter().map(|e| e.h).collect()),
                Err(e) => return Err(abort(trace, e)),
            }
        }

        let started = Instant::now();
        let out = match controller.compute(&state, t) {
            Ok(out) => out,
            Err(e) => return Err(abort(trace, e)),
        };
        let solve_us = started.elapsed().as_secs_f64() * 1e6;

        trace.times.push(t);
        trace.states.push(state.q.clone());
        trace.controls.push(out.u.clone());
        trace.slacks.push(out.slacks.clone());
        for (task_idx, values) in step_barriers.into_iter().enumerate() {
            for (comp, v) in values.into_iter().enumerate() {
                trace.barriers[task_idx][comp].push(v);
            }
        }
        trace.solve_micros.push(solve_us);

        if k < steps {
            state = match integrate_step(&state, &out.u, dt) {
                Ok(s) => s,
                Err(e) => return Err(abort(trace, e)),
            };
        }
    }
    Ok(trace)
}

/// Control-increment statistics of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityStats {
    /// Max over all steps of `||u_{k+1} - u_k|| / dt`.
    pub max_du_dt: f64,
    /// Per schedule event: max scaled increment within `+-window` of it.
    pub event_window_max: Vec<(f64, f64)>,
    /// Per schedule event: one-step jump `||u_{k+1} - u_k||` at the event.
    pub event_jumps: Vec<(f64, f64)>,
    pub window: f64,
}

/// Scans a trace for control increments; `window` is the half-width of the
/// per-event scan in seconds.
pub fn continuity_report(trace: &SimTrace, window: f64) -> ContinuityStats {
    let dt = trace.dt;
    let mut increments = Vec::with_capacity(trace.len().saturating_sub(1));
    for k in 0..trace.len().saturating_sub(1) {
        increments.push((&trace.controls[k + 1] - &trace.controls[k]).norm());
    }
    let max_du_dt = increments.iter().cloned().fold(0.0f64, f64::max) / dt;

    let mut event_window_max = Vec::new();
    let mut event_jumps = Vec::new();
    for event in &trace.events {
        if increments.is_empty() {
            break;
        }
        let center = trace.index_at(event.t);
        let lo = center.saturating_sub((window / dt).round() as usize);
        let hi = (center + (window / dt).round() as usize).min(increments.len() - 1);
        let peak = increments[lo..=hi].iter().cloned().fold(0.0f64, f64::max) / dt;
        event_window_max.push((event.t, peak));
        let jump = if center == 0 {
            increments[0]
        } else {
            increments[(center - 1).min(increments.len() - 1)]
        };
        event_jumps.push((event.t, jump));
    }

    ContinuityStats {
        max_du_dt,
        event_window_max,
        event_jumps,
        window,
    }
}

/// Safety outcome of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceStats {
    /// Per safety-critical task: minimum barrier value over components and
    /// time.
    pub min_h: Vec<(String, f64)>,
    /// True when any safety-critical barrier dipped below `-1e-6`.
    pub violated: bool,
    /// Worst violation of the sampled barrier-rate condition
    /// `(h_{k+1} - h_k)/dt >= -gamma(h_k) - delta_k` across all tasks
    /// (positive means the condition was broken by that amount).
    pub worst_rate_defect: f64,
}

/// Checks forward invariance of safety-critical tasks and the sampled
/// barrier-rate condition for every task.
pub fn invariance_report(trace: &SimTrace, tasks: &[BarrierTask]) -> InvarianceStats {
    let mut min_h = Vec::new();
    let mut violated = false;
    for (idx, task) in tasks.iter().enumerate() {
        if !task.safety_critical {
            continue;
        }
        let min = trace.barriers[idx]
            .iter()
            .flat_map(|c| c.iter().copied())
            .fold(f64::INFINITY, f64::min);
        violated |= min < -1e-6;
        min_h.push((task.label.clone(), min));
    }

    let mut worst = 0.0f64;
    for (idx, task) in tasks.iter().enumerate() {
        for comp in &trace.barriers[idx] {
            for k in 0..trace.len().saturating_sub(1) {
                let rate = (comp[k + 1] - comp[k]) / trace.dt;
                let bound = -task.class_k.eval(comp[k]) - trace.slacks[k][idx];
                worst = worst.max(bound - rate);
            }
        }
    }

    InvarianceStats {
        min_h,
        violated,
        worst_rate_defect: worst,
    }
}

/// Aggregated post-run report.
#[derive(Debug, Clone)]
pub struct Report {
    pub continuity: ContinuityStats,
    pub invariance: InvarianceStats,
    /// Final output error per setpoint/tracking task.
    pub final_errors: Vec<(String, f64)>,
    pub median_solve_us: f64,
    pub max_solve_us: f64,
    pub dt: f64,
    pub horizon: f64,
}

/// Builds the full report for a finished run.
pub fn make_report(trace: &SimTrace, tasks: &[BarrierTask], event_window: f64) -> Report {
    let continuity = continuity_report(trace, event_window);
    let invariance = invariance_report(trace, tasks);

    let mut final_errors = Vec::new();
    if let (Some(q), Some(&t)) = (trace.states.last(), trace.times.last()) {
        let state = RobotState::new(q.clone(), t);
        for task in tasks {
            let error = match task.barrier() {
                BarrierKind::Setpoint { target, .. } => task
                    .map()
                    .output(&state)
                    .map(|sigma| (sigma - target).norm())
                    .ok(),
                BarrierKind::Tracking { reference } => task
                    .map()
                    .output(&state)
                    .map(|sigma| (sigma - reference.value(t)).norm())
                    .ok(),
                _ => None,
            };
            if let Some(error) = error {
                final_errors.push((task.label.clone(), error));
            }
        }
    }

    let mut sorted = trace.solve_micros.clone();
    sorted.sort_by(f64::total_cmp);
    let median_solve_us = if sorted.is_empty() { 0.0 } else { sorted[sorted.len() / 2] };
    let max_solve_us = sorted.last().copied().unwrap_or(0.0);

    Report {
        continuity,
        invariance,
        final_errors,
        median_solve_us,
        max_solve_us,
        dt: trace.dt,
        horizon: trace.times.last().copied().unwrap_or(0.0),
    }
}

impl Report {
    /// Plain-text rendering for the CLI.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "run: dt = {} s, horizon = {} s\n",
            self.dt, self.horizon
        ));
        out.push_str("\nsafety barriers (min over run):\n");
        if self.invariance.min_h.is_empty() {
            out.push_str("  (no safety-critical tasks)\n");
        }
        for (label, min) in &self.invariance.min_h {
            out.push_str(&format!("  {label}: {min:.6e}\n"));
        }
        out.push_str(&format!(
            "invariance violated: {}\n",
            if self.invariance.violated { "YES" } else { "no" }
        ));
        out.push_str(&format!(
            "worst sampled barrier-rate defect: {:.3e}\n",
            self.invariance.worst_rate_defect
        ));
        out.push_str("\nfinal task errors:\n");
        if self.final_errors.is_empty() {
            out.push_str("  (no setpoint/tracking tasks)\n");
        }
        for (label, err) in &self.final_errors {
            out.push_str(&format!("  {label}: {err:.6e}\n"));
        }
        out.push_str(&format!(
            "\nmax ||du||/dt over run: {:.6e}\n",
            self.continuity.max_du_dt
        ));
        for ((t, peak), (_, jump)) in self
            .continuity
            .event_window_max
            .iter()
            .zip(&self.continuity.event_jumps)
        {
            out.push_str(&format!(
                "event at t = {t} s: windowed max ||du||/dt = {peak:.6e}, one-step jump = {jump:.6e}\n"
            ));
        }
        out.push_str(&format!(
            "\nsolve time: median {:.1} us, max {:.1} us\n",
            self.median_solve_us, self.max_solve_us
        ));
        out
    }
}
