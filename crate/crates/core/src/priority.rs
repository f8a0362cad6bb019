//! Prioritization matrices and their continuous time variation.
//!
//! A strict precedence pair `m -> n` ("m before n") becomes the linear row
//! `-delta_m + delta_n / kappa >= 0`, i.e. task m may be relaxed at most
//! `1/kappa` as much as task n. Stacking rows for every pair gives the
//! prioritization matrix `K` with `K delta >= 0`. Schedules switch between
//! stacks by blending matrix entries with a smoothstep, and ramp tasks in and
//! out with a 0..1 gain.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// C1 ramp: 0 below 0, `3x^2 - 2x^3` on [0, 1], 1 above.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * (3.0 - 2.0 * x)
    }
}

/// A strict partial order over tasks with its slack-ratio gain.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityStack {
    /// Precedence pairs `(m, n)`: task m outranks task n.
    pub order: Vec<(usize, usize)>,
    /// Slack ratio, > 1; one order of magnitude per level by default.
    pub kappa: f64,
    /// Tasks whose slack is eliminated entirely (always executed).
    pub safety_critical: BTreeSet<usize>,
}

impl PriorityStack {
    pub fn new(
        order: Vec<(usize, usize)>,
        kappa: f64,
        safety_critical: BTreeSet<usize>,
    ) -> Result<Self> {
        if kappa <= 1.0 {
            return Err(Error::Config(format!("kappa must exceed 1, got {kappa}")));
        }
        check_acyclic(&order)?;
        Ok(Self {
            order,
            kappa,
            safety_critical,
        })
    }

    pub fn empty(kappa: f64) -> Result<Self> {
        Self::new(Vec::new(), kappa, BTreeSet::new())
    }

    /// Pairs that produce matrix rows: both ends non-safety-critical
    /// (a safety-critical slack is identically zero, so its ratio rows are
    /// redundant and are dropped).
    pub fn effective_pairs(&self) -> Vec<(usize, usize)> {
        self.order
            .iter()
            .copied()
            .filter(|(m, n)| {
                !self.safety_critical.contains(m) && !self.safety_critical.contains(n)
            })
            .collect()
    }

    /// Builds the prioritization matrix over `task_count` slack columns.
    pub fn matrix(&self, task_count: usize) -> Result<PrioritizationMatrix> {
        for &(m, n) in &self.order {
            for idx in [m, n] {
                if idx >= task_count {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        len: task_count,
                    });
                }
            }
        }
        for &idx in &self.safety_critical {
            if idx >= task_count {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: task_count,
                });
            }
        }
        let pairs = self.effective_pairs();
        let mut k = DMatrix::zeros(pairs.len(), task_count);
        for (row, &(m, n)) in pairs.iter().enumerate() {
            k[(row, m)] = -1.0;
            k[(row, n)] = 1.0 / self.kappa;
        }
        Ok(PrioritizationMatrix { k })
    }
}

fn check_acyclic(order: &[(usize, usize)]) -> Result<()> {
    let nodes: BTreeSet<usize> = order.iter().flat_map(|&(m, n)| [m, n]).collect();
    // Depth-first search with an explicit recursion mark.
    fn visit(
        node: usize,
        order: &[(usize, usize)],
        visiting: &mut BTreeSet<usize>,
        done: &mut BTreeSet<usize>,
    ) -> Result<()> {
        if done.contains(&node) {
            return Ok(());
        }
        if !visiting.insert(node) {
            return Err(Error::CyclicOrder { task: node });
        }
        for &(m, n) in order {
            if m == node {
                visit(n, order, visiting, done)?;
            }
        }
        visiting.remove(&node);
        done.insert(node);
        Ok(())
    }
    let mut done = BTreeSet::new();
    for &node in &nodes {
        visit(node, order, &mut BTreeSet::new(), &mut done)?;
    }
    Ok(())
}

/// Matrix `K` with the semantics `K delta >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizationMatrix {
    pub k: DMatrix<f64>,
}

impl PrioritizationMatrix {
    pub fn rows(&self) -> usize {
        self.k.nrows()
    }
}

/// Task insertion: the constraint offset ramps 0..1 over
/// `[at, at + ramp]`, activating the task without a controller jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionSpec {
    pub task: usize,
    pub at: f64,
    pub ramp: f64,
}

/// Task removal: the gain ramps 1..0 over `[at - ramp, at]`, reaching zero
/// exactly at the removal time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalSpec {
    pub task: usize,
    pub at: f64,
    pub ramp: f64,
}

/// Time-varying prioritization: an ordered list of stacks, each taking over
/// at its start time through a smoothstep blend of matrix entries, plus
/// insertion/removal ramps per task.
#[derive(Debug, Clone, PartialEq)]
pub struct PrioritySchedule {
    segments: Vec<(f64, PriorityStack)>,
    transition_window: f64,
    insertions: Vec<InsertionSpec>,
    removals: Vec<RemovalSpec>,
}

impl PrioritySchedule {
    pub fn new(
        segments: Vec<(f64, PriorityStack)>,
        transition_window: f64,
        insertions: Vec<InsertionSpec>,
        removals: Vec<RemovalSpec>,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("schedule needs at least one stack".into()));
        }
        if transition_window <= 0.0 {
            return Err(Error::Config(format!(
                "transition window must be positive, got {transition_window}"
            )));
        }
        for pair in segments.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Config("segment start times must increase".into()));
            }
            if pair[1].0 - pair[0].0 < transition_window {
                return Err(Error::Config(format!(
                    "segments at {} and {} overlap within the {}s transition window",
                    pair[0].0, pair[1].0, transition_window
                )));
            }
        }
        for ins in &insertions {
            if ins.ramp <= 0.0 {
                return Err(Error::Config("insertion ramp must be positive".into()));
            }
        }
        for rem in &removals {
            if rem.ramp <= 0.0 {
                return Err(Error::Config("removal ramp must be positive".into()));
            }
            if let Some(ins) = insertions.iter().find(|i| i.task == rem.task) {
                if rem.at - rem.ramp < ins.at + ins.ramp {
                    return Err(Error::Config(format!(
                        "task {} removal ramp overlaps its insertion ramp",
                        rem.task
                    )));
                }
            }
        }
        Ok(Self {
            segments,
            transition_window,
            insertions,
            removals,
        })
    }

    /// Schedule with a single static stack.
    pub fn fixed(stack: PriorityStack) -> Self {
        Self {
            segments: vec![(0.0, stack)],
            transition_window: 1.0,
            insertions: Vec::new(),
            removals: Vec::new(),
        }
    }

    pub fn segments(&self) -> &[(f64, PriorityStack)] {
        &self.segments
    }

    pub fn transition_window(&self) -> f64 {
        self.transition_window
    }

    pub fn insertions(&self) -> &[InsertionSpec] {
        &self.insertions
    }

    pub fn removals(&self) -> &[RemovalSpec] {
        &self.removals
    }

    /// Stack governing time `t` (the blend target during a transition).
    pub fn active_stack(&self, t: f64) -> &PriorityStack {
        let idx = self.segment_index(t);
        &self.segments[idx].1
    }

    fn segment_index(&self, t: f64) -> usize {
        let mut idx = 0;
        for (i, (start, _)) in self.segments.iter().enumerate() {
            if *start <= t {
                idx = i;
            }
        }
        idx
    }

    /// Whether `t` falls inside a stack-to-stack blend window.
    pub fn in_transition(&self, t: f64) -> bool {
        let idx = self.segment_index(t);
        idx > 0 && t < self.segments[idx].0 + self.transition_window
    }

    /// Prioritization matrix at time `t`, C1 in `t`.
    ///
    /// Inside a window `[t0, t0 + window]` the previous and next stack
    /// matrices are blended entrywise with a smoothstep. When the stacks
    /// disagree on the row count, the shorter matrix is padded with the
    /// entrywise absolute value of the counterpart row: with nonnegative
    /// slacks such a row is implied (inert), so a new priority row fades in
    /// by having its negative entry cross zero instead of appearing at full
    /// strength.
    pub fn matrix_at(&self, t: f64, task_count: usize) -> Result<PrioritizationMatrix> {
        let idx = self.segment_index(t);
        let current = self.segments[idx].1.matrix(task_count)?;
        if idx == 0 {
            return Ok(current);
        }
        let start = self.segments[idx].0;
        if t >= start + self.transition_window {
            return Ok(current);
        }
        let previous = self.segments[idx - 1].1.matrix(task_count)?;
        let s = smoothstep((t - start) / self.transition_window);
        let rows = previous.rows().max(current.rows());
        let mut k = DMatrix::zeros(rows, task_count);
        for row in 0..rows {
            for col in 0..task_count {
                let a = padded_entry(&previous.k, &current.k, row, col);
                let b = padded_entry(&current.k, &previous.k, row, col);
                k[(row, col)] = (1.0 - s) * a + s * b;
            }
        }
        Ok(PrioritizationMatrix { k })
    }

    /// Activation gain in [0, 1] for a task's constraint offset. Tasks with
    /// no registered insertion or removal are always fully active.
    pub fn insertion_gain(&self, task: usize, t: f64) -> f64 {
        let mut gain = 1.0;
        if let Some(ins) = self.insertions.iter().find(|i| i.task == task) {
            gain *= smoothstep((t - ins.at) / ins.ramp);
        }
        if let Some(rem) = self.removals.iter().find(|r| r.task == task) {
            gain *= 1.0 - smoothstep((t - (rem.at - rem.ramp)) / rem.ramp);
        }
        gain
    }

    /// Schedule events: priority switches (segment starts past the first),
    /// insertions and removals, time-ordered.
    pub fn events(&self) -> Vec<(f64, String)> {
        let mut events: Vec<(f64, String)> = Vec::new();
        for (start, _) in self.segments.iter().skip(1) {
            events.push((*start, "priority_switch".into()));
        }
        for ins in &self.insertions {
            events.push((ins.at, format!("insert_task_{}", ins.task)));
        }
        for rem in &self.removals {
            events.push((rem.at, format!("remove_task_{}", rem.task)));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        events
    }
}

fn padded_entry(own: &DMatrix<f64>, other: &DMatrix<f64>, row: usize, col: usize) -> f64 {
    if row < own.nrows() {
        own[(row, col)]
    } else if row < other.nrows() {
        other[(row, col)].abs()
    } else {
        0.0
    }
}
