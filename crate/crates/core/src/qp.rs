//! Dense strictly convex quadratic programs with linear inequality constraints.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 z' H z + f' z
//!     subject to  A z >= b
//! ```
//!
//! with `H` symmetric positive definite. [`solve_qp`] runs a dual active-set
//! method (Goldfarb-Idnani): it starts from the unconstrained minimizer and
//! adds violated constraints one at a time, so no feasible starting point is
//! needed and an empty feasible region is detected as a byproduct.
//! [`solve_qp_exhaustive`] solves the same problem by enumerating every
//! active subset and checking the KKT conditions; it is exponential in the
//! number of constraints and exists as an independent reference path.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Internal feasibility/optimality tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Tolerance below which a projected step direction counts as zero.
const DIR_TOL: f64 = 1e-12;
/// Maximum constraint count accepted by the exhaustive solver.
pub const EXHAUSTIVE_MAX_CONSTRAINTS: usize = 20;

/// A strictly convex inequality-constrained quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    cost: DMatrix<f64>,
    linear: DVector<f64>,
    constraints: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl QpProblem {
    /// Builds a problem, checking symmetry (1e-10), positive definiteness and
    /// that the constraint matrix and offsets agree on the row count.
    pub fn new(
        cost: DMatrix<f64>,
        linear: DVector<f64>,
        constraints: DMatrix<f64>,
        offsets: DVector<f64>,
    ) -> Result<Self> {
        let d = cost.nrows();
        if cost.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "cost matrix",
                expected: d,
                found: cost.ncols(),
            });
        }
        if linear.len() != d {
            return Err(Error::DimensionMismatch {
                context: "linear cost",
                expected: d,
                found: linear.len(),
            });
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (cost[(i, j)] - cost[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Config(format!(
                        "cost matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        if constraints.nrows() != offsets.len() {
            return Err(Error::DimensionMismatch {
                context: "constraint offsets",
                expected: constraints.nrows(),
                found: offsets.len(),
            });
        }
        if constraints.nrows() > 0 && constraints.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "constraint matrix",
                expected: d,
                found: constraints.ncols(),
            });
        }
        if cost.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            cost,
            linear,
            constraints,
            offsets,
        })
    }

    /// Problem without constraints.
    pub fn unconstrained(cost: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let d = cost.nrows();
        Self::new(cost, linear, DMatrix::zeros(0, d), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.cost.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    /// Objective value 1/2 z'Hz + f'z.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.cost * z).dot(z) + self.linear.dot(z)
    }

    /// Per-constraint slack A z - b (nonnegative when feasible).
    fn slack(&self, z: &DVector<f64>, row: usize) -> f64 {
        self.constraints.row(row).transpose().dot(z) - self.offsets[row]
    }
}

/// Output of a QP solve.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Unique global minimizer.
    pub z_star: DVector<f64>,
    /// Indices of constraints satisfied with equality, ascending.
    pub active_set: Vec<usize>,
    /// Lagrange multipliers, one per constraint, zero off the active set.
    pub multipliers: DVector<f64>,
    /// Objective value at `z_star`.
    pub objective: f64,
    /// Active-set iterations used (0 for the exhaustive path).
    pub iterations: usize,
}

/// Options for [`solve_qp_with`].
#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Constraints to consider first when picking a violated one to add.
    /// Typically the active set of the previous, similar problem.
    pub warm_start: Vec<usize>,
    /// Iteration cap; defaults to `50 * (d + m)`.
    pub max_iterations: Option<usize>,
}

/// Solves the program with default options.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &SolveOptions::default())
}

/// Dual active-set solve.
///
/// Constraint selection is deterministic: among violated constraints the one
/// with the lowest index is added, with warm-start hints searched before the
/// rest. When a partial dual step forces a constraint out of the active set,
/// the blocking constraint (minimum multiplier-to-rate ratio) is dropped,
/// lowest index on ties.
pub fn solve_qp_with(problem: &QpProblem, options: &SolveOptions) -> Result<QpSolution> {
    let d = problem.dim();
    let m = problem.num_constraints();
    let chol = problem
        .cost
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;

    let mut z = -chol.solve(&problem.linear);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();

    if m == 0 {
        let objective = problem.objective(&z);
        return Ok(QpSolution {
            z_star: z,
            active_set: Vec::new(),
            multipliers: DVector::zeros(0),
            objective,
            iterations: 0,
        });
    }

    let limit = options.max_iterations.unwrap_or(50 * (d + m));
    let order = selection_order(m, &options.warm_start);
    let mut iterations = 0usize;

    'outer: loop {
        // Most violated first would also work; lowest index keeps paths
        // reproducible across runs and warm starts.
        let entering = order
            .iter()
            .copied()
            .filter(|i| !active.contains(i))
            .find(|&i| problem.slack(&z, i) < -FEAS_TOL);
        let Some(entering) = entering else {
            break 'outer;
        };

        let normal = problem.constraints.row(entering).transpose();
        let mut incoming = 0.0f64;

        loop {
            iterations += 1;
            if iterations > limit {
                return Err(Error::IterationLimit { limit });
            }

            // Step direction pair for the incoming constraint: z_dir moves the
            // primal point onto the constraint while staying on the active
            // set; rate[j] is the decrease rate of active multiplier j.
            let h_inv_n = chol.solve(&normal);
            let (z_dir, rate) = if active.is_empty() {
                (h_inv_n.clone(), Vec::new())
            } else {
                let k = active.len();
                let mut n_mat = DMatrix::zeros(d, k);
                for (col, &idx) in active.iter().enumerate() {
                    n_mat
                        .column_mut(col)
                        .copy_from(&problem.constraints.row(idx).transpose());
                }
                let b_mat = chol.solve(&n_mat);
                let gram = n_mat.transpose() * &b_mat;
                let rhs = b_mat.transpose() * &normal;
                let r = gram
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .or_else(|| gram.lu().solve(&rhs))
                    .ok_or(Error::Infeasible)?;
                let z_dir = &h_inv_n - &b_mat * &r;
                (z_dir, r.iter().copied().collect())
            };

            // Dependency is judged relative to the unprojected curvature
            // n'H^-1 n: an absolute cutoff misreads badly scaled problems as
            // infeasible.
            let denom = normal.dot(&z_dir);
            let scale = normal.dot(&h_inv_n).max(f64::MIN_POSITIVE);
            let slack = problem.slack(&z, entering);
            let full_step = if denom > DIR_TOL * scale {
                Some(-slack / denom)
            } else {
                None
            };

            // Blocking constraint: first active multiplier driven to zero.
            let mut partial: Option<(f64, usize)> = None;
            for (j, &r_j) in rate.iter().enumerate() {
                if r_j > DIR_TOL {
                    let t = lambda[j] / r_j;
                    let better = match partial {
                        None => true,
                        Some((best, best_j)) => {
                            t < best - 1e-14 || (t < best + 1e-14 && active[j] < active[best_j])
                        }
                    };
                    if better {
                        partial = Some((t, j));
                    }
                }
            }

            enum Step {
                Partial(f64, usize),
                Full(f64),
            }
            let step = match (partial, full_step) {
                (None, None) => return Err(Error::Infeasible),
                (Some((t1, j)), None) => Step::Partial(t1, j),
                (None, Some(t2)) => Step::Full(t2),
                (Some((t1, j)), Some(t2)) => {
                    if t1 < t2 {
                        Step::Partial(t1, j)
                    } else {
                        Step::Full(t2)
                    }
                }
            };
            match step {
                Step::Partial(t1, j) => {
                    // Move as far as the blocking constraint allows, drop it,
                    // then retry the incoming one.
                    if denom > DIR_TOL {
                        z += &z_dir * t1;
                    }
                    for (jj, r_j) in rate.iter().enumerate() {
                        lambda[jj] -= t1 * r_j;
                    }
                    incoming += t1;
                    active.remove(j);
                    lambda.remove(j);
                }
                Step::Full(t2) => {
                    z += &z_dir * t2;
                    for (jj, r_j) in rate.iter().enumerate() {
                        lambda[jj] -= t2 * r_j;
                    }
                    incoming += t2;
                    active.push(entering);
                    lambda.push(incoming);
                    continue 'outer;
                }
            }
        }
    }

    // Polish the iterate by re-solving the equality-constrained problem on
    // the final active set; removes accumulated drift from the updates. The
    // refined point is kept only when it is itself consistent (feasible with
    // nonnegative multipliers), which can fail on near-dependent active sets.
    if let Some((z_ref, mu_ref)) = equality_kkt(problem, &chol, &active) {
        let feasible = (0..m).all(|i| problem.slack(&z_ref, i) >= -1e-7);
        let dual_ok = mu_ref.iter().all(|&mu| mu >= -1e-7);
        if feasible && dual_ok {
            z = z_ref;
            lambda = mu_ref.iter().copied().collect();
        }
    }

    let mut pairs: Vec<(usize, f64)> = active.iter().copied().zip(lambda).collect();
    pairs.sort_by_key(|&(i, _)| i);
    let mut multipliers = DVector::zeros(m);
    let mut active_set = Vec::with_capacity(pairs.len());
    for (i, mu) in pairs {
        multipliers[i] = mu;
        active_set.push(i);
    }

    let objective = problem.objective(&z);
    Ok(QpSolution {
        z_star: z,
        active_set,
        multipliers,
        objective,
        iterations,
    })
}

/// Solves `H z = -f + N mu`, `N' z = b_active` for the given active set.
/// Returns `None` when the reduced system is singular.
fn equality_kkt(
    problem: &QpProblem,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = problem.dim();
    let k = active.len();
    if k == 0 {
        return Some((-chol.solve(&problem.linear), DVector::zeros(0)));
    }
    let mut n_mat = DMatrix::zeros(d, k);
    let mut b_act = DVector::zeros(k);
    for (col, &idx) in active.iter().enumerate() {
        n_mat
            .column_mut(col)
            .copy_from(&problem.constraints.row(idx).transpose());
        b_act[col] = problem.offsets[idx];
    }
    // Block elimination: z = H^{-1}(N mu - f), so
    // (N' H^{-1} N) mu = b_active + N' H^{-1} f.
    let h_inv_n = chol.solve(&n_mat);
    let gram = n_mat.transpose() * &h_inv_n;
    let rhs = &b_act + n_mat.transpose() * chol.solve(&problem.linear);
    let mu = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))?;
    let z = chol.solve(&(&n_mat * &mu - &problem.linear));
    Some((z, mu))
}

fn selection_order(m: usize, warm: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = warm.iter().copied().filter(|&i| i < m).collect();
    order.dedup();
    for i in 0..m {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    order
}

/// Reference solver: enumerates all `2^m` active subsets, solves each
/// equality-constrained KKT system and returns the feasible candidate with
/// nonnegative multipliers and minimal objective.
///
/// Exponential in the constraint count; refuses more than
/// [`EXHAUSTIVE_MAX_CONSTRAINTS`] rows.
pub fn solve_qp_exhaustive(problem: &QpProblem) -> Result<QpSolution> {
    let m = problem.num_constraints();
    if m > EXHAUSTIVE_MAX_CONSTRAINTS {
        return Err(Error::TooManyConstraints {
            count: m,
            max: EXHAUSTIVE_MAX_CONSTRAINTS,
        });
    }
    let chol = problem
        .cost
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;

    let mut best: Option<QpSolution> = None;
    for mask in 0u32..(1u32 << m) {
        let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let Some((z, mu)) = equality_kkt(problem, &chol, &subset) else {
            continue;
        };
        if mu.iter().any(|&v| v < -FEAS_TOL) {
            continue;
        }
        if (0..m).any(|i| problem.slack(&z, i) < -FEAS_TOL) {
            continue;
        }
        let objective = problem.objective(&z);
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            let mut multipliers = DVector::zeros(m);
            for (col, &idx) in subset.iter().enumerate() {
                multipliers[idx] = mu[col];
            }
            best = Some(QpSolution {
                z_star: z,
                active_set: subset,
                multipliers,
                objective,
                iterations: 0,
            });
        }
    }
    best.ok_or(Error::Infeasible)
}

/// KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||H z + f - A' mu||` (Euclidean norm).
    pub stationarity_residual: f64,
    /// `max_i max(0, b_i - a_i' z)`.
    pub primal_violation: f64,
    /// `|mu' (A z - b)|`.
    pub complementarity_residual: f64,
    /// `max_i max(0, -mu_i)`.
    pub dual_violation: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual
            .max(self.primal_violation)
            .max(self.complementarity_residual)
            .max(self.dual_violation)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Computes the four KKT residuals of `solution` for `problem`.
pub fn check_kkt(problem: &QpProblem, solution: &QpSolution) -> Result<KktReport> {
    let d = problem.dim();
    let m = problem.num_constraints();
    if solution.z_star.len() != d {
        return Err(Error::DimensionMismatch {
            context: "kkt candidate point",
            expected: d,
            found: solution.z_star.len(),
        });
    }
    if solution.multipliers.len() != m {
        return Err(Error::DimensionMismatch {
            context: "kkt multipliers",
            expected: m,
            found: solution.multipliers.len(),
        });
    }

    let grad = &problem.cost * &solution.z_star + &problem.linear;
    let stationarity = if m == 0 {
        grad.norm()
    } else {
        (grad - problem.constraints.transpose() * &solution.multipliers).norm()
    };

    let mut primal: f64 = 0.0;
    let mut complementarity = 0.0;
    for i in 0..m {
        let s = problem.slack(&solution.z_star, i);
        primal = primal.max(-s);
        complementarity += solution.multipliers[i] * s;
    }
    let dual = solution
        .multipliers
        .iter()
        .fold(0.0f64, |acc, &mu| acc.max(-mu));

    Ok(KktReport {
        stationarity_residual: stationarity,
        primal_violation: primal.max(0.0),
        complementarity_residual: complementarity.abs(),
        dual_violation: dual,
    })
}
