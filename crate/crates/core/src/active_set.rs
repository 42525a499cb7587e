//! Warm-startable primal active-set QP solver with an exact iteration cap.
//!
//! Constraints are numbered in one index space: `0..n_c` are the rows of
//! `Γz ≤ γ`, `n_c..n_c+n_z` the lower bounds and `n_c+n_z..n_c+2n_z` the upper
//! bounds. One iteration is one equality-constrained KKT solve followed by at
//! most one working-set change (or termination).

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::qp::QpProblem;

const STEP_FLOOR: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-9;
const REGULARIZATION: f64 = 1e-9;
/// Initial elastic weight on violated rows, relative to the problem scale.
const BIG_M: f64 = 1e3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkingSet {
    active_indices: BTreeSet<usize>,
}

impl WorkingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        Self {
            active_indices: indices.into_iter().collect(),
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active_indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.active_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.active_indices.contains(&index)
    }
}

impl fmt::Display for WorkingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.active_indices.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    IterationCapped,
    InfeasibleSubproblem,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::IterationCapped => "iteration_capped",
            SolveStatus::InfeasibleSubproblem => "infeasible_subproblem",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetResult {
    pub iterate: DVector<f64>,
    pub working_set: WorkingSet,
    pub iterations_used: usize,
    pub status: SolveStatus,
    /// `[λ_ineq, λ_lower, λ_upper]`, from the last KKT solve.
    pub multipliers: DVector<f64>,
}

/// Read-only view of the unified constraint list `a_j·z ≤ b_j`.
struct Constraints<'a> {
    prob: &'a QpProblem,
}

impl Constraints<'_> {
    fn count(&self) -> usize {
        self.prob.n_c() + 2 * self.prob.n_z()
    }

    fn bound(&self, j: usize) -> f64 {
        let (m, n) = (self.prob.n_c(), self.prob.n_z());
        if j < m {
            self.prob.ineq_bound()[j]
        } else if j < m + n {
            -self.prob.lower()[j - m]
        } else {
            self.prob.upper()[j - m - n]
        }
    }

    /// Infinite bounds never constrain anything.
    fn is_finite(&self, j: usize) -> bool {
        self.bound(j).is_finite()
    }

    fn dot(&self, j: usize, v: &DVector<f64>) -> f64 {
        let (m, n) = (self.prob.n_c(), self.prob.n_z());
        if j < m {
            self.prob.ineq_matrix().row(j).transpose().dot(v)
        } else if j < m + n {
            -v[j - m]
        } else {
            v[j - m - n]
        }
    }

    fn row(&self, j: usize) -> DVector<f64> {
        let (m, n) = (self.prob.n_c(), self.prob.n_z());
        if j < m {
            self.prob.ineq_matrix().row(j).transpose()
        } else {
            let mut e = DVector::zeros(n);
            if j < m + n {
                e[j - m] = -1.0;
            } else {
                e[j - m - n] = 1.0;
            }
            e
        }
    }

    fn violation(&self, j: usize, z: &DVector<f64>) -> f64 {
        if !self.is_finite(j) {
            return 0.0;
        }
        self.dot(j, z) - self.bound(j)
    }

    fn feas_tol(&self, j: usize) -> f64 {
        FEAS_TOL * (1.0 + self.bound(j).abs())
    }

    /// Least-squares coefficients `c` with `Σ c_i a_{W_i} ≈ a_candidate`.
    fn combination(&self, working: &[usize], candidate: usize) -> Option<DVector<f64>> {
        if working.is_empty() {
            return None;
        }
        let rows: Vec<DVector<f64>> = working.iter().map(|&j| self.row(j)).collect();
        let mat = DMatrix::from_columns(&rows);
        mat.svd(true, true).solve(&self.row(candidate), RANK_TOL).ok()
    }

    fn independent(&self, working: &[usize], candidate: usize) -> bool {
        let n = self.prob.n_z();
        if working.len() >= n {
            return false;
        }
        let rows: Vec<DVector<f64>> = working
            .iter()
            .chain(std::iter::once(&candidate))
            .map(|&j| self.row(j))
            .collect();
        let mat = DMatrix::from_columns(&rows);
        let sv = mat.singular_values();
        let largest = sv.max();
        sv.min() > RANK_TOL * largest.max(1.0)
    }
}

/// Solves the equality-constrained QP on `working` with linear term `lin`:
/// `[2Φ A_Wᵀ; A_W 0][z; λ] = [−lin; b_W]`.
fn solve_eqp(cons: &Constraints<'_>, working: &[usize], lin: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let prob = cons.prob;
    let n = prob.n_z();
    let k = working.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(prob.hessian() * 2.0));
    rhs.rows_mut(0, n).copy_from(&(-lin));
    for (r, &j) in working.iter().enumerate() {
        let a = cons.row(j);
        kkt.view_mut((n + r, 0), (1, n)).copy_from(&a.transpose());
        kkt.view_mut((0, n + r), (n, 1)).copy_from(&a);
        rhs[n + r] = cons.bound(j);
    }
    let attempt = |m: &DMatrix<f64>| -> Option<DVector<f64>> {
        let sol = m.clone().lu().solve(&rhs)?;
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        let res = (m * &sol - &rhs).amax();
        (res <= 1e-7 * (1.0 + rhs.amax())).then_some(sol)
    };
    let sol = attempt(&kkt).or_else(|| {
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += REGULARIZATION;
        }
        attempt(&reg)
    })?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn full_multipliers(total: usize, working: &[usize], lambda: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(total);
    for (r, &j) in working.iter().enumerate() {
        out[j] = lambda[r].max(0.0);
    }
    out
}

/// Primal active-set solve capped at `cap` iterations, hot-started from `z0`
/// and, when given, the working set of a previous solve.
///
/// `z0` is first projected onto the box. Rows of `Γz ≤ γ` still violated there
/// are handled elastically: each contributes `M·Γ_j` to the linear term until
/// a step reaches its boundary, at which point it joins the working set. `M`
/// grows tenfold whenever the penalized subproblem is optimal but some rows
/// remain violated, so capped iterates may be Γ-infeasible while an uncapped
/// solve of a feasible problem ends feasible.
pub fn solve(prob: &QpProblem, warm: Option<&WorkingSet>, z0: &DVector<f64>, cap: usize) -> Result<ActiveSetResult> {
    check_dim("initial iterate", prob.n_z(), z0.len())?;
    if cap == 0 {
        return Err(Error::InvalidConfig("iteration cap must be >= 1".into()));
    }
    let cons = Constraints { prob };
    let total = cons.count();
    let m = prob.n_c();
    let mut z = prob.project_to_box(z0);

    let mut relaxed: Vec<usize> = (0..m).filter(|&j| cons.violation(j, &z) > cons.feas_tol(j)).collect();
    let mut working: Vec<usize> = Vec::new();
    if let Some(ws) = warm {
        for j in ws.indices() {
            if j < total && cons.is_finite(j) && !relaxed.contains(&j) && cons.independent(&working, j) {
                working.push(j);
            }
        }
    }
    working.sort_unstable();
    // A warm working set need not pass through z0: the first iteration either
    // jumps to its equality-constrained solution (when feasible) or keeps only
    // the rows active at z0, so the iterate lies on every working row after it.
    let mut reconcile = working
        .iter()
        .any(|&j| cons.violation(j, &z).abs() > cons.feas_tol(j));

    let scale = 1.0_f64
        .max(prob.affine().amax())
        .max(2.0 * prob.hessian().amax() * (1.0 + z.amax()));
    let mut big_m = BIG_M * scale;
    let big_m_limit = big_m * 1e8;

    let mut lambda_full = DVector::zeros(total);
    let mut iterations = 0;
    // anti-cycling: after a zero-length step the leaving row is chosen by
    // lowest index, and a row that blocks at zero step right after being
    // dropped is pinned until the iterate moves again
    let mut degenerate = false;
    let mut last_dropped: Option<usize> = None;
    let mut pinned: Vec<usize> = Vec::new();
    let mut skipped: Vec<usize> = Vec::new();
    let status = loop {
        if iterations == cap {
            break SolveStatus::IterationCapped;
        }
        iterations += 1;

        let mut lin = prob.affine().clone();
        for &j in &relaxed {
            lin += cons.row(j) * big_m;
        }
        let Some((target, lambda)) = solve_eqp(&cons, &working, &lin) else {
            break SolveStatus::InfeasibleSubproblem;
        };
        lambda_full = full_multipliers(total, &working, &lambda);
        let d = &target - &z;

        let mut jump = false;
        if reconcile {
            reconcile = false;
            if relaxed.is_empty() && (0..total).all(|j| cons.violation(j, &target) <= cons.feas_tol(j)) {
                jump = true;
            } else {
                working.retain(|&j| cons.violation(j, &z).abs() <= cons.feas_tol(j));
                continue;
            }
        }

        // ratio test: satisfied rows block when reached from inside, relaxed
        // rows when the step carries them onto their boundary
        let mut step = 1.0;
        let mut blocking = None;
        if !jump && d.amax() > 0.0 {
            for j in 0..total {
                if working.contains(&j) || skipped.contains(&j) || !cons.is_finite(j) {
                    continue;
                }
                let slack = cons.bound(j) - cons.dot(j, &z);
                let ad = cons.dot(j, &d);
                let ratio = if relaxed.contains(&j) {
                    if ad >= 0.0 {
                        continue;
                    }
                    slack / ad
                } else {
                    if slack < -cons.feas_tol(j) || ad <= 0.0 {
                        continue;
                    }
                    slack.max(0.0) / ad
                };
                if ratio < step {
                    step = ratio;
                    blocking = Some(j);
                }
            }
        }
        if let Some(j) = blocking {
            if step < STEP_FLOOR {
                step = 0.0;
                degenerate = true;
                if last_dropped == Some(j) {
                    pinned.push(j);
                }
            } else {
                degenerate = false;
                pinned.clear();
                skipped.clear();
            }
            last_dropped = None;
            z += &d * step;
            z = prob.project_to_box(&z);
            relaxed.retain(|&r| r != j);
            if cons.independent(&working, j) {
                insert_sorted(&mut working, j);
            } else if step == 0.0 {
                // a dependent row blocking in place would block forever: swap
                // it for the lowest-index working row it leans on
                let swap = cons.combination(&working, j).and_then(|c| {
                    working.iter().zip(c.iter()).find(|(w, &ci)| ci > RANK_TOL && !pinned.contains(w)).map(|(&w, _)| w)
                });
                match swap {
                    Some(w) => {
                        working.retain(|&r| r != w);
                        insert_sorted(&mut working, j);
                    }
                    None => skipped.push(j),
                }
            }
            continue;
        }
        if d.amax() > STEP_FLOOR * (1.0 + z.amax()) {
            degenerate = false;
            pinned.clear();
            skipped.clear();
        }
        z = target;
        z = prob.project_to_box(&z);

        // rows that drifted past their bound numerically become relaxed
        for j in 0..m {
            if !working.contains(&j) && !relaxed.contains(&j) && cons.violation(j, &z) > cons.feas_tol(j) {
                relaxed.push(j);
            }
        }
        relaxed.sort_unstable();

        let dual_tol = DUAL_TOL * scale.max(big_m * relaxed.len() as f64);
        let mut negative = working
            .iter()
            .enumerate()
            .filter(|(r, j)| lambda[*r] < -dual_tol && !pinned.contains(j));
        let leaving = if degenerate {
            negative.next().map(|(r, _)| r)
        } else {
            negative
                .min_by(|a, b| lambda[a.0].total_cmp(&lambda[b.0]).then(a.1.cmp(b.1)))
                .map(|(r, _)| r)
        };
        match leaving {
            Some(r) => {
                last_dropped = Some(working.remove(r));
            }
            None if relaxed.is_empty() => break SolveStatus::Optimal,
            None if big_m < big_m_limit => big_m *= 10.0,
            None => break SolveStatus::InfeasibleSubproblem,
        }
    };

    Ok(ActiveSetResult {
        iterate: z,
        working_set: WorkingSet::from_indices(working),
        iterations_used: iterations,
        status,
        multipliers: lambda_full,
    })
}

fn insert_sorted(working: &mut Vec<usize>, j: usize) {
    if let Err(pos) = working.binary_search(&j) {
        working.insert(pos, j);
    }
}
