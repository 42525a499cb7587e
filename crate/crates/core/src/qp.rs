//! Condensed QP problem shared by both solvers.
//!
//! The objective is `zᵀΦz + zᵀφ` (no ½ factor) subject to `Γz ≤ γ` and a box
//! `z̲ ≤ z ≤ z̄`. The penalty-augmented cost used by the gradient-flow solver
//! and by the period adaptation adds `α·Σ max(violation, 0)^μ` over every
//! polyhedral row and both box sides, plus a strictly positive floor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Relative tolerance of the symmetric/PSD checks performed at construction.
const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    hessian: DMatrix<f64>,
    affine: DVector<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_bound: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    /// Additive constant of the objective. Zero for a bare QP; the MPC
    /// builder stores the state-dependent part of the tracking cost here so
    /// that the objective equals the full predicted cost.
    constant: f64,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        affine: DVector<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_bound: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = affine.len();
        check_dim("hessian rows", n, hessian.nrows())?;
        check_dim("hessian cols", n, hessian.ncols())?;
        check_dim("inequality matrix cols", n, ineq_matrix.ncols())?;
        check_dim("inequality bound", ineq_matrix.nrows(), ineq_bound.len())?;
        check_dim("lower bound", n, lower.len())?;
        check_dim("upper bound", n, upper.len())?;
        for i in 0..n {
            if lower[i] > upper[i] || lower[i].is_nan() || upper[i].is_nan() {
                return Err(Error::InvalidConfig(format!(
                    "box bound {i}: lower {} > upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        check_psd(&hessian)?;
        Ok(Self {
            hessian,
            affine,
            ineq_matrix,
            ineq_bound,
            lower,
            upper,
            constant: 0.0,
        })
    }

    /// Problem with no polyhedral rows and an unbounded box.
    pub fn unconstrained(hessian: DMatrix<f64>, affine: DVector<f64>) -> Result<Self> {
        let n = affine.len();
        Self::new(
            hessian,
            affine,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    /// Builds a problem sharing this one's Hessian and constraint matrix but
    /// with a new affine term, right-hand side and constant. No PSD re-check.
    pub fn refreshed(&self, affine: DVector<f64>, ineq_bound: DVector<f64>, constant: f64) -> Result<Self> {
        check_dim("affine term", self.n_z(), affine.len())?;
        check_dim("inequality bound", self.n_c(), ineq_bound.len())?;
        Ok(Self {
            hessian: self.hessian.clone(),
            affine,
            ineq_matrix: self.ineq_matrix.clone(),
            ineq_bound,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            constant,
        })
    }

    pub fn n_z(&self) -> usize {
        self.affine.len()
    }

    pub fn n_c(&self) -> usize {
        self.ineq_bound.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn affine(&self) -> &DVector<f64> {
        &self.affine
    }

    pub fn ineq_matrix(&self) -> &DMatrix<f64> {
        &self.ineq_matrix
    }

    pub fn ineq_bound(&self) -> &DVector<f64> {
        &self.ineq_bound
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `zᵀΦz + zᵀφ`, without the constant.
    pub fn quadratic_cost(&self, z: &DVector<f64>) -> Result<f64> {
        check_dim("decision vector", self.n_z(), z.len())?;
        Ok(z.dot(&(&self.hessian * z)) + z.dot(&self.affine))
    }

    /// Quadratic cost plus the stored constant.
    pub fn objective(&self, z: &DVector<f64>) -> Result<f64> {
        Ok(self.quadratic_cost(z)? + self.constant)
    }

    /// Componentwise `Γz − γ`.
    pub fn ineq_residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("decision vector", self.n_z(), z.len())?;
        Ok(&self.ineq_matrix * z - &self.ineq_bound)
    }

    /// Largest positive violation of any polyhedral row or box side.
    pub fn max_violation(&self, z: &DVector<f64>) -> Result<f64> {
        let r = self.ineq_residual(z)?;
        let mut worst = r.iter().fold(0.0_f64, |m, &v| m.max(v));
        for i in 0..self.n_z() {
            worst = worst.max(z[i] - self.upper[i]).max(self.lower[i] - z[i]);
        }
        Ok(worst)
    }

    /// Largest positive violation over the polyhedral rows only.
    pub fn max_ineq_violation(&self, z: &DVector<f64>) -> Result<f64> {
        let r = self.ineq_residual(z)?;
        Ok(r.iter().fold(0.0_f64, |m, &v| m.max(v)))
    }

    pub fn project_to_box(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            z.len(),
            z.iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(self.lower[i], self.upper[i])),
        )
    }

    pub fn in_box(&self, z: &DVector<f64>) -> bool {
        z.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Ok(());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveSemidefinite("non-finite entry".into()));
    }
    let scale = m.norm();
    let tol = PSD_TOL * scale;
    let asym = (m - m.transpose()).amax();
    if asym > tol {
        return Err(Error::NotPositiveSemidefinite(format!(
            "asymmetry {asym:e} exceeds {tol:e}"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig < -tol {
        return Err(Error::NotPositiveSemidefinite(format!(
            "smallest eigenvalue {min_eig:e} below -{tol:e}"
        )));
    }
    Ok(())
}

/// Penalty weight `α` and exponent `μ` of the augmented cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    weight: f64,
    exponent: f64,
}

impl PenaltyConfig {
    pub fn new(weight: f64, exponent: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "penalty weight must be positive, got {weight}"
            )));
        }
        if !(exponent >= 2.0 && exponent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "penalty exponent must be >= 2, got {exponent}"
            )));
        }
        Ok(Self { weight, exponent })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `α·max(r,0)^μ`
    fn value(&self, r: f64) -> f64 {
        if r > 0.0 {
            self.weight * r.powf(self.exponent)
        } else {
            0.0
        }
    }

    /// Derivative of [`Self::value`] with respect to `r`.
    fn slope(&self, r: f64) -> f64 {
        if r > 0.0 {
            self.weight * self.exponent * r.powf(self.exponent - 1.0)
        } else {
            0.0
        }
    }

    /// Second derivative; one-sided at `r = 0`, so zero there.
    fn curvature(&self, r: f64) -> f64 {
        if r > 0.0 {
            let mu = self.exponent;
            self.weight * mu * (mu - 1.0) * r.powf(mu - 2.0)
        } else {
            0.0
        }
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            weight: 1e4,
            exponent: 2.0,
        }
    }
}

/// `J(z) = objective(z) + α·Σ max(Γz−γ,0)^μ + box penalties + floor`.
pub fn augmented_cost(prob: &QpProblem, cfg: &PenaltyConfig, z: &DVector<f64>, floor: f64) -> Result<f64> {
    let mut j = prob.objective(z)? + floor;
    let r = prob.ineq_residual(z)?;
    j += r.iter().map(|&v| cfg.value(v)).sum::<f64>();
    for i in 0..prob.n_z() {
        j += cfg.value(z[i] - prob.upper[i]) + cfg.value(prob.lower[i] - z[i]);
    }
    Ok(j)
}

/// Exact gradient of [`augmented_cost`].
pub fn augmented_gradient(prob: &QpProblem, cfg: &PenaltyConfig, z: &DVector<f64>) -> Result<DVector<f64>> {
    let r = prob.ineq_residual(z)?;
    let mut g = &prob.hessian * z * 2.0 + &prob.affine;
    for (i, &ri) in r.iter().enumerate() {
        let s = cfg.slope(ri);
        if s != 0.0 {
            g.axpy(s, &prob.ineq_matrix.row(i).transpose(), 1.0);
        }
    }
    for i in 0..prob.n_z() {
        g[i] += cfg.slope(z[i] - prob.upper[i]) - cfg.slope(prob.lower[i] - z[i]);
    }
    Ok(g)
}

/// Hessian of [`augmented_cost`] on the current penalty region. For `μ = 2`
/// it is piecewise constant: `2Φ + 2α·Σ_active Γᵢᵀ Γᵢ` plus box diagonals.
pub fn augmented_hessian(prob: &QpProblem, cfg: &PenaltyConfig, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r = prob.ineq_residual(z)?;
    let mut h = &prob.hessian * 2.0;
    for (i, &ri) in r.iter().enumerate() {
        let c = cfg.curvature(ri);
        if c != 0.0 {
            let row = prob.ineq_matrix.row(i);
            h.ger(c, &row.transpose(), &row.transpose(), 1.0);
        }
    }
    for i in 0..prob.n_z() {
        h[(i, i)] += cfg.curvature(z[i] - prob.upper[i]) + cfg.curvature(prob.lower[i] - z[i]);
    }
    Ok(h)
}

/// First-order optimality residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity_residual: f64,
    pub max_primal_violation: f64,
    pub complementarity_residual: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual
            .max(self.max_primal_violation)
            .max(self.complementarity_residual)
    }
}

/// Multipliers are laid out as `[λ_ineq (n_c), λ_lower (n_z), λ_upper (n_z)]`.
pub fn kkt_report(prob: &QpProblem, z: &DVector<f64>, multipliers: &DVector<f64>) -> Result<KktReport> {
    let (n, m) = (prob.n_z(), prob.n_c());
    check_dim("decision vector", n, z.len())?;
    check_dim("multipliers", m + 2 * n, multipliers.len())?;
    if let Some((index, &value)) = multipliers.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeMultiplier { index, value });
    }
    let lam_c = multipliers.rows(0, m);
    let lam_lo = multipliers.rows(m, n);
    let lam_up = multipliers.rows(m + n, n);

    let stat = &prob.hessian * z * 2.0 + &prob.affine + prob.ineq_matrix.transpose() * lam_c + lam_up - lam_lo;
    let r = prob.ineq_residual(z)?;

    // λ·slack with the convention 0·∞ = 0 for inactive infinite bounds.
    let comp = |lam: f64, slack: f64| if lam == 0.0 { 0.0 } else { (lam * slack).abs() };
    let mut complementarity = 0.0_f64;
    for i in 0..m {
        complementarity = complementarity.max(comp(lam_c[i], r[i]));
    }
    for i in 0..n {
        complementarity = complementarity
            .max(comp(lam_lo[i], z[i] - prob.lower[i]))
            .max(comp(lam_up[i], prob.upper[i] - z[i]));
    }

    Ok(KktReport {
        stationarity_residual: stat.amax(),
        max_primal_violation: prob.max_violation(z)?,
        complementarity_residual: complementarity,
    })
}
