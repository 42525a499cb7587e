//! Any-time, monotonic first-order solver.
//!
//! Integrates the gradient flow `ż = −∇J(z)` of the penalty-augmented cost
//! with TR-BDF2 steps (trapezoidal substep to `t + γΔt`, BDF2 substep to
//! `t + Δt`), projects the box variables after every step, and only accepts a
//! step that strictly lowers `J`. One call to [`iterate_once`] is one
//! unbreakable iteration quantum.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::qp::{augmented_cost, augmented_gradient, augmented_hessian, PenaltyConfig, QpProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSolverConfig {
    pub penalty: PenaltyConfig,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// TR-BDF2 split point.
    pub gamma: f64,
    pub step_shrink: f64,
    /// Additive floor keeping the augmented cost strictly positive.
    pub floor: f64,
    pub max_shrinks: usize,
    /// Factor applied to `Δt` after an accepted step; `1.0` keeps it.
    pub step_growth: f64,
}

impl Default for OdeSolverConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltyConfig::default(),
            newton_tol: 1e-8,
            newton_max: 10,
            gamma: 2.0 - std::f64::consts::SQRT_2,
            step_shrink: 0.5,
            floor: 1.0,
            max_shrinks: 30,
            step_growth: 1.0,
        }
    }
}

impl OdeSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0,2), got {}", self.gamma)));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step_shrink must lie in (0,1), got {}",
                self.step_shrink
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return Err(Error::InvalidConfig("newton tolerance/iterations must be positive".into()));
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return Err(Error::InvalidConfig(format!("step_growth must be >= 1, got {}", self.step_growth)));
        }
        if self.floor < 0.0 {
            return Err(Error::InvalidConfig(format!("floor must be >= 0, got {}", self.floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolverState {
    pub iterate: DVector<f64>,
    pub step_size: f64,
    pub iterations_done: usize,
    /// Augmented cost of the initial point followed by one entry per iteration.
    pub cost_trace: Vec<f64>,
}

impl OdeSolverState {
    pub fn cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace always holds the initial cost")
    }
}

/// Projects `z0` onto the box and picks `Δt = sqrt(1/‖ż‖)` from the gradient
/// there (`1.0` when the gradient vanishes).
pub fn init_state(prob: &QpProblem, cfg: &OdeSolverConfig, z0: &DVector<f64>) -> Result<OdeSolverState> {
    cfg.validate()?;
    check_dim("initial iterate", prob.n_z(), z0.len())?;
    let iterate = prob.project_to_box(z0);
    let grad_norm = augmented_gradient(prob, &cfg.penalty, &iterate)?.norm();
    let step_size = if grad_norm > 0.0 && grad_norm.is_finite() {
        (1.0 / grad_norm).sqrt()
    } else {
        1.0
    };
    let cost = augmented_cost(prob, &cfg.penalty, &iterate, cfg.floor)?;
    Ok(OdeSolverState {
        iterate,
        step_size,
        iterations_done: 0,
        cost_trace: vec![cost],
    })
}

/// One accepted (or, after exhausting the shrink budget, null) TR-BDF2 step.
pub fn iterate_once(prob: &QpProblem, cfg: &OdeSolverConfig, mut state: OdeSolverState) -> Result<OdeSolverState> {
    check_dim("solver iterate", prob.n_z(), state.iterate.len())?;
    let current = state.cost();
    let grad = augmented_gradient(prob, &cfg.penalty, &state.iterate)?;

    let mut accepted = None;
    if grad.amax() > 0.0 {
        let mut h = state.step_size;
        for _ in 0..=cfg.max_shrinks {
            if let Some(candidate) = trbdf2_step(prob, cfg, &state.iterate, &grad, h)? {
                let candidate = prob.project_to_box(&candidate);
                if candidate == state.iterate {
                    // the flow no longer moves the iterate at this precision
                    break;
                }
                let cost = augmented_cost(prob, &cfg.penalty, &candidate, cfg.floor)?;
                if cost < current {
                    accepted = Some((candidate, cost, h));
                    break;
                }
            }
            h *= cfg.step_shrink;
        }
    }

    match accepted {
        Some((z, cost, h)) => {
            state.iterate = z;
            state.step_size = h * cfg.step_growth;
            state.cost_trace.push(cost);
        }
        // Stationary (or no descent found): keep iterate and step size.
        None => state.cost_trace.push(current),
    }
    state.iterations_done += 1;
    Ok(state)
}

/// Exactly `k` iterations from `init_state(z0)`.
pub fn run(prob: &QpProblem, cfg: &OdeSolverConfig, z0: &DVector<f64>, k: usize) -> Result<OdeSolverState> {
    if k == 0 {
        return Err(Error::InvalidConfig("iteration count must be >= 1".into()));
    }
    let state = init_state(prob, cfg, z0)?;
    resume(prob, cfg, state, k)
}

/// `m` further iterations from an existing state.
pub fn resume(prob: &QpProblem, cfg: &OdeSolverConfig, mut state: OdeSolverState, m: usize) -> Result<OdeSolverState> {
    for _ in 0..m {
        state = iterate_once(prob, cfg, state)?;
    }
    Ok(state)
}

/// TR-BDF2 step of `ż = −∇J(z)` of length `h`; `None` if a Newton solve fails.
fn trbdf2_step(
    prob: &QpProblem,
    cfg: &OdeSolverConfig,
    z: &DVector<f64>,
    grad: &DVector<f64>,
    h: f64,
) -> Result<Option<DVector<f64>>> {
    let g = cfg.gamma;
    // trapezoidal stage: y − z + (γh/2)(∇J(z) + ∇J(y)) = 0
    let c_tr = 0.5 * g * h;
    let rhs_tr = z - grad * c_tr;
    let Some(z_mid) = newton_solve(prob, cfg, c_tr, &rhs_tr, z.clone())? else {
        return Ok(None);
    };
    // BDF2 stage: y + d·h·∇J(y) = a·z_mid − b·z
    let a = 1.0 / (g * (2.0 - g));
    let b = (1.0 - g) * (1.0 - g) / (g * (2.0 - g));
    let d = (1.0 - g) / (2.0 - g);
    let rhs_bdf = &z_mid * a - z * b;
    newton_solve(prob, cfg, d * h, &rhs_bdf, z_mid)
}

/// Solves `y + c·∇J(y) = rhs` by Newton's method with the (piecewise
/// constant for μ = 2) Hessian of `J`.
fn newton_solve(
    prob: &QpProblem,
    cfg: &OdeSolverConfig,
    c: f64,
    rhs: &DVector<f64>,
    mut y: DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let n = y.len();
    for _ in 0..cfg.newton_max {
        let residual = &y + augmented_gradient(prob, &cfg.penalty, &y)? * c - rhs;
        let jac = DMatrix::identity(n, n) + augmented_hessian(prob, &cfg.penalty, &y)? * c;
        let Some(chol) = jac.cholesky() else {
            return Ok(None);
        };
        let delta = chol.solve(&residual);
        y -= &delta;
        if !y.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        if delta.amax() <= cfg.newton_tol * (1.0 + y.amax()) {
            return Ok(Some(y));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_d(phi: f64, aff: f64) -> QpProblem {
        QpProblem::unconstrained(DMatrix::from_element(1, 1, phi), DVector::from_element(1, aff)).unwrap()
    }

    fn penalized_one_d() -> (QpProblem, OdeSolverConfig) {
        // (z−2)² = z² − 4z + 4 s.t. z ≤ 1
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -4.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
        )
        .unwrap()
        .with_constant(4.0);
        let cfg = OdeSolverConfig {
            penalty: PenaltyConfig::new(100.0, 2.0).unwrap(),
            ..Default::default()
        };
        (prob, cfg)
    }

    #[test]
    fn init_state_step_rule() {
        let cfg = OdeSolverConfig::default();
        let s = init_state(&one_d(1.0, 0.0), &cfg, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(s.step_size, 0.5_f64.sqrt(), max_relative = 1e-15);
        assert_eq!(s.cost_trace, vec![2.0]);

        let s = init_state(&one_d(1.0, 0.0), &cfg, &DVector::zeros(1)).unwrap();
        assert_eq!(s.step_size, 1.0);

        let boxed = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = init_state(&boxed, &cfg, &DVector::from_element(1, 5.0)).unwrap();
        assert_eq!(s.iterate[0], 1.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OdeSolverConfig {
            gamma: 2.5,
            ..Default::default()
        };
        assert!(init_state(&one_d(1.0, 0.0), &cfg, &DVector::zeros(1)).is_err());
        let cfg = OdeSolverConfig {
            step_shrink: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(run(&one_d(1.0, 0.0), &OdeSolverConfig::default(), &DVector::zeros(1), 0).is_err());
    }

    #[test]
    fn one_step_decreases_bowl() {
        let cfg = OdeSolverConfig::default();
        let prob = one_d(1.0, 0.0);
        let s = run(&prob, &cfg, &DVector::from_element(1, 1.0), 1).unwrap();
        assert!(s.cost_trace[1] < s.cost_trace[0]);
        assert!(s.iterate[0].abs() < 1.0);
    }

    #[test]
    fn stationary_start_is_a_fixed_point() {
        let cfg = OdeSolverConfig::default();
        let prob = one_d(1.0, -2.0); // minimiser z = 1
        let z0 = DVector::from_element(1, 1.0);
        let s = run(&prob, &cfg, &z0, 3).unwrap();
        assert_eq!(s.iterate, z0);
        assert_eq!(s.cost_trace.len(), 4);
        assert!(s.cost_trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn converges_to_penalized_optimum() {
        let (prob, cfg) = penalized_one_d();
        let zstar = 102.0 / 101.0;
        let s = run(&prob, &cfg, &DVector::zeros(1), 200).unwrap();
        assert!((s.iterate[0] - zstar).abs() < 1e-6, "{}", s.iterate[0]);
    }

    #[test]
    fn short_run_monotone_with_decrease() {
        let (prob, cfg) = penalized_one_d();
        let s = run(&prob, &cfg, &DVector::zeros(1), 20).unwrap();
        assert!(s.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.cost_trace[0] - s.cost_trace[20] >= 1e-12);
    }

    #[test]
    fn composition_matches_manual_iteration() {
        let (prob, cfg) = penalized_one_d();
        let z0 = DVector::from_element(1, -3.0);
        let mut s = init_state(&prob, &cfg, &z0).unwrap();
        let one = iterate_once(&prob, &cfg, s.clone()).unwrap();
        assert_eq!(run(&prob, &cfg, &z0, 1).unwrap(), one);
        for _ in 0..5 {
            s = iterate_once(&prob, &cfg, s).unwrap();
        }
        assert_eq!(run(&prob, &cfg, &z0, 5).unwrap(), s);
    }
}
