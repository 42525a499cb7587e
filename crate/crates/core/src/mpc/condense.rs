use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::qp::QpProblem;

use super::model::{LtiModel, OperatingPoint};
use super::param::ControlParametrization;

/// Weights of `Σ_j ‖x(j)‖²_Q + ‖u(j)‖²_R + ‖v(j)‖²_ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcWeights {
    pub q_state: DMatrix<f64>,
    pub r_input: DMatrix<f64>,
    pub rho_violation: DMatrix<f64>,
}

/// Bounds in absolute units. `du_*` are per-sample increments.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcBounds {
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub du_min: DVector<f64>,
    pub du_max: DVector<f64>,
    pub yc_min: DVector<f64>,
    pub yc_max: DVector<f64>,
    pub constrained_outputs: Vec<usize>,
}

impl MpcBounds {
    /// Builds bounds from a low/high table, swapping any output pair listed
    /// in the wrong order.
    pub fn from_table(
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        du_abs: DVector<f64>,
        mut yc_low: DVector<f64>,
        mut yc_high: DVector<f64>,
        constrained_outputs: Vec<usize>,
    ) -> Self {
        for i in 0..yc_low.len().min(yc_high.len()) {
            if yc_low[i] > yc_high[i] {
                warn!(
                    "output bound {i}: low {} above high {}; swapping",
                    yc_low[i], yc_high[i]
                );
                std::mem::swap(&mut yc_low[i], &mut yc_high[i]);
            }
        }
        Self {
            u_min,
            u_max,
            du_min: -du_abs.abs(),
            du_max: du_abs.abs(),
            yc_min: yc_low,
            yc_max: yc_high,
            constrained_outputs,
        }
    }

    /// Level and turbine-temperature bands with the actuator limits of the
    /// reference refrigerator (temperature band sorted to `[9, 16]`).
    pub fn refrigerator() -> Self {
        Self::from_table(
            DVector::from_vec(vec![20.0, 20.0, 0.0]),
            DVector::from_vec(vec![60.0, 60.0, 150.0]),
            DVector::from_vec(vec![0.5, 10.0, 0.1]),
            DVector::from_vec(vec![59.0, 16.0]),
            DVector::from_vec(vec![61.0, 9.0]),
            vec![0, 1],
        )
    }

    fn validate(&self, n_u: usize, n_y: usize) -> Result<()> {
        for v in [&self.u_min, &self.u_max, &self.du_min, &self.du_max] {
            check_dim("input bound", n_u, v.len())?;
        }
        let nc = self.constrained_outputs.len();
        check_dim("output bound", nc, self.yc_min.len())?;
        check_dim("output bound", nc, self.yc_max.len())?;
        if let Some(&i) = self.constrained_outputs.iter().find(|&&i| i >= n_y) {
            return Err(Error::InvalidConfig(format!("constrained output {i} out of range")));
        }
        for i in 0..n_u {
            if self.u_min[i] > self.u_max[i] || self.du_min[i] > self.du_max[i] {
                return Err(Error::InvalidConfig(format!("input {i}: crossed bounds")));
            }
        }
        for i in 0..nc {
            if self.yc_min[i] > self.yc_max[i] {
                return Err(Error::InvalidConfig(format!("constrained output {i}: crossed bounds")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormulationOptions {
    /// Number of increment rows kept, in gap-major order; `None` keeps all.
    pub rate_rows: Option<usize>,
    /// Upper bound of every virtual violation input.
    pub virtual_upper: f64,
}

impl Default for FormulationOptions {
    fn default() -> Self {
        Self {
            rate_rows: Some(38),
            virtual_upper: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RateRow {
    instant: usize,
    input: usize,
    /// samples between this decision instant and the previous one (or `u_prev`)
    gap: f64,
    upper: bool,
}

/// Condensed MPC problem structure. Hessian, constraint matrix and box are
/// built once; [`MpcFormulation::problem`] only refreshes `φ`, `γ` and the
/// constant for the current state, previous input and disturbance forecast.
#[derive(Debug, Clone)]
pub struct MpcFormulation {
    model: LtiModel,
    par: ControlParametrization,
    weights: MpcWeights,
    bounds: MpcBounds,
    op: OperatingPoint,
    /// forced state response `x(j) ∋ S_j p`, j = 1..N
    forced: Vec<DMatrix<f64>>,
    rate_rows: Vec<RateRow>,
    base: QpProblem,
}

impl MpcFormulation {
    pub fn new(
        model: LtiModel,
        par: ControlParametrization,
        weights: MpcWeights,
        bounds: MpcBounds,
        op: OperatingPoint,
        options: FormulationOptions,
    ) -> Result<Self> {
        let (n, nu) = (model.n_states(), model.n_inputs());
        op.validate(&model)?;
        bounds.validate(nu, model.n_outputs())?;
        check_dim("physical inputs", nu, par.n_physical())?;
        check_dim("virtual inputs", 2 * bounds.constrained_outputs.len(), par.n_virtual())?;
        check_dim("Q rows", n, weights.q_state.nrows())?;
        check_dim("R rows", nu, weights.r_input.nrows())?;
        check_dim("rho rows", par.n_virtual(), weights.rho_violation.nrows())?;
        if !(options.virtual_upper > 0.0) {
            return Err(Error::InvalidConfig("virtual input upper bound must be positive".into()));
        }

        let np = par.n_params();
        let horizon = par.horizon();
        let mut forced = Vec::with_capacity(horizon);
        let mut s = DMatrix::zeros(n, np);
        for j in 1..=horizon {
            let e_phys = par.sample_rows(j).rows(0, nu).into_owned();
            s = &model.a * &s + &model.b * e_phys;
            forced.push(s.clone());
        }

        let mut hessian = DMatrix::zeros(np, np);
        for j in 1..=horizon {
            let sj = &forced[j - 1];
            let rows = par.sample_rows(j);
            let e_phys = rows.rows(0, nu);
            let e_virt = rows.rows(nu, par.n_virtual());
            hessian += sj.transpose() * &weights.q_state * sj;
            hessian += e_phys.transpose() * &weights.r_input * e_phys;
            hessian += e_virt.transpose() * &weights.rho_violation * e_virt;
        }
        hessian = (&hessian + hessian.transpose()) * 0.5;

        let rate_rows = build_rate_rows(&par, options.rate_rows)?;
        let n_out_rows = 2 * par.check_instants().len() * bounds.constrained_outputs.len();
        let mut gamma = DMatrix::zeros(n_out_rows + rate_rows.len(), np);
        let mut row = 0;
        for &c in par.check_instants() {
            let sc = &forced[c - 1];
            let rows = par.sample_rows(c);
            for (m, &out) in bounds.constrained_outputs.iter().enumerate() {
                let mut y_row = model.c.row(out) * sc;
                y_row += model.d.row(out) * rows.rows(0, nu);
                let v_up = rows.row(nu + 2 * m);
                let v_lo = rows.row(nu + 2 * m + 1);
                gamma.row_mut(row).copy_from(&(&y_row - v_up));
                gamma.row_mut(row + 1).copy_from(&(-&y_row - v_lo));
                row += 2;
            }
        }
        for rr in &rate_rows {
            let sign = if rr.upper { 1.0 } else { -1.0 };
            gamma[(row, par.param_index(rr.instant, rr.input))] = sign;
            if rr.instant > 0 {
                gamma[(row, par.param_index(rr.instant - 1, rr.input))] = -sign;
            }
            row += 1;
        }

        let mut lower = DVector::zeros(np);
        let mut upper = DVector::zeros(np);
        for k in 0..par.decision_instants().len() {
            for i in 0..nu {
                let idx = par.param_index(k, i);
                lower[idx] = bounds.u_min[i] - op.u0[i];
                upper[idx] = bounds.u_max[i] - op.u0[i];
            }
            for v in 0..par.n_virtual() {
                let idx = par.param_index(k, nu + v);
                lower[idx] = 0.0;
                upper[idx] = options.virtual_upper;
            }
        }
        let n_rows = gamma.nrows();
        let base = QpProblem::new(hessian, DVector::zeros(np), gamma, DVector::zeros(n_rows), lower, upper)?;

        Ok(Self {
            model,
            par,
            weights,
            bounds,
            op,
            forced,
            rate_rows,
            base,
        })
    }

    pub fn model(&self) -> &LtiModel {
        &self.model
    }

    pub fn parametrization(&self) -> &ControlParametrization {
        &self.par
    }

    pub fn weights(&self) -> &MpcWeights {
        &self.weights
    }

    pub fn bounds(&self) -> &MpcBounds {
        &self.bounds
    }

    pub fn operating_point(&self) -> &OperatingPoint {
        &self.op
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        self.base.hessian()
    }

    pub fn ineq_matrix(&self) -> &DMatrix<f64> {
        self.base.ineq_matrix()
    }

    pub fn n_output_rows(&self) -> usize {
        self.base.n_c() - self.rate_rows.len()
    }

    pub fn n_rate_rows(&self) -> usize {
        self.rate_rows.len()
    }

    /// Deviation-coordinate actuator box `[u_min − u0, u_max − u0]`.
    pub fn input_box(&self) -> (DVector<f64>, DVector<f64>) {
        (&self.bounds.u_min - &self.op.u0, &self.bounds.u_max - &self.op.u0)
    }

    /// Forecast matrix (one column per sample) holding `w` constant.
    pub fn hold_forecast(&self, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.model.n_disturbances(), self.par.horizon(), |r, _| w[r])
    }

    /// Unforced response `x(j)` for `j = 1..N` with the disturbance forecast.
    pub fn free_response(&self, x: &DVector<f64>, w_forecast: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        check_dim("state", self.model.n_states(), x.len())?;
        check_dim("forecast rows", self.model.n_disturbances(), w_forecast.nrows())?;
        check_dim("forecast length", self.par.horizon(), w_forecast.ncols())?;
        let mut out = Vec::with_capacity(self.par.horizon());
        let mut state = x.clone();
        for j in 0..self.par.horizon() {
            state = &self.model.a * &state + &self.model.f * w_forecast.column(j);
            out.push(state.clone());
        }
        Ok(out)
    }

    /// QP at state `x` (deviation), previous input `u_prev` (deviation) and
    /// disturbance forecast `w_forecast` (deviation, one column per sample).
    pub fn problem(&self, x: &DVector<f64>, u_prev: &DVector<f64>, w_forecast: &DMatrix<f64>) -> Result<QpProblem> {
        let full = DVector::from_element(self.par.n_physical(), 1.0);
        self.problem_with_first_move(x, u_prev, w_forecast, &full)
    }

    /// [`Self::problem`] with the increment limits of the first knot scaled
    /// per physical input by `first_move` (in `[0, 1]`), for an input that
    /// has been held for less than a full sample.
    pub fn problem_with_first_move(
        &self,
        x: &DVector<f64>,
        u_prev: &DVector<f64>,
        w_forecast: &DMatrix<f64>,
        first_move: &DVector<f64>,
    ) -> Result<QpProblem> {
        check_dim("previous input", self.model.n_inputs(), u_prev.len())?;
        check_dim("first-move scale", self.par.n_physical(), first_move.len())?;
        if first_move.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidConfig("first-move scale must lie in [0, 1]".into()));
        }
        let free = self.free_response(x, w_forecast)?;
        let q = &self.weights.q_state;
        let mut affine = DVector::zeros(self.par.n_params());
        let mut constant = 0.0;
        for (sj, cj) in self.forced.iter().zip(&free) {
            let qc = q * cj;
            affine += sj.transpose() * &qc * 2.0;
            constant += cj.dot(&qc);
        }

        let mut rhs = DVector::zeros(self.base.n_c());
        let mut row = 0;
        for &c in self.par.check_instants() {
            let y_free = &self.model.c * &free[c - 1] + &self.model.g * w_forecast.column(c - 1);
            for (m, &out) in self.bounds.constrained_outputs.iter().enumerate() {
                let hi = self.bounds.yc_max[m] - self.op.y0[out];
                let lo = self.bounds.yc_min[m] - self.op.y0[out];
                rhs[row] = hi - y_free[out];
                rhs[row + 1] = -lo + y_free[out];
                row += 2;
            }
        }
        for rr in &self.rate_rows {
            let i = rr.input;
            let gap = if rr.instant == 0 { rr.gap * first_move[i] } else { rr.gap };
            rhs[row] = if rr.upper {
                gap * self.bounds.du_max[i]
            } else {
                -gap * self.bounds.du_min[i]
            };
            if rr.instant == 0 {
                rhs[row] += if rr.upper { u_prev[i] } else { -u_prev[i] };
            }
            row += 1;
        }
        self.base.refreshed(affine, rhs, constant)
    }

    /// Nearest-in-spirit feasible point: `p` projected on the box, physical
    /// knots clamped into every increment limit (walking from `u_prev`),
    /// then each virtual input raised uniformly until its output rows hold.
    pub fn feasible_start(
        &self,
        prob: &QpProblem,
        p: &DVector<f64>,
        u_prev: &DVector<f64>,
        first_move: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("parameter vector", self.par.n_params(), p.len())?;
        check_dim("previous input", self.par.n_physical(), u_prev.len())?;
        check_dim("first-move scale", self.par.n_physical(), first_move.len())?;
        let mut z = prob.project_to_box(p);
        let instants = self.par.decision_instants();
        for i in 0..self.par.n_physical() {
            let mut prev = u_prev[i];
            for k in 0..instants.len() {
                let gap = if k == 0 { instants[0] as f64 * first_move[i] } else { (instants[k] - instants[k - 1]) as f64 };
                let idx = self.par.param_index(k, i);
                let lo = (prev + gap * self.bounds.du_min[i]).max(prob.lower()[idx]);
                let hi = (prev + gap * self.bounds.du_max[i]).min(prob.upper()[idx]);
                z[idx] = if lo <= hi { z[idx].clamp(lo, hi) } else { prev.clamp(prob.lower()[idx], prob.upper()[idx]) };
                prev = z[idx];
            }
        }
        let residual = prob.ineq_residual(&z)?;
        let n_out = self.bounds.constrained_outputs.len();
        let mut lift = vec![0.0f64; 2 * n_out];
        for (r, &res) in residual.iter().take(self.n_output_rows()).enumerate() {
            let slot = r % (2 * n_out);
            lift[slot] = lift[slot].max(res);
        }
        let nu = self.par.n_physical();
        for (slot, &l) in lift.iter().enumerate() {
            if l <= 0.0 {
                continue;
            }
            let l = l * (1.0 + 1e-12) + 1e-12;
            for k in 0..instants.len() {
                let idx = self.par.param_index(k, nu + slot);
                z[idx] = (z[idx] + l).min(prob.upper()[idx]);
            }
        }
        Ok(z)
    }

    /// Predicted-cost split at `p` by explicit rollout: `(Σ‖x‖²_Q + ‖u‖²_R, Σ‖v‖²_ρ)`.
    pub fn open_loop_split(&self, x: &DVector<f64>, w_forecast: &DMatrix<f64>, p: &DVector<f64>) -> Result<(f64, f64)> {
        let profile = self.par.expand_profile(p)?;
        let nu = self.par.n_physical();
        let nv = self.par.n_virtual();
        let mut state = x.clone();
        check_dim("forecast length", self.par.horizon(), w_forecast.ncols())?;
        let (mut dev, mut cst) = (0.0, 0.0);
        for j in 0..self.par.horizon() {
            let u = profile.view((0, j), (nu, 1)).into_owned();
            let v = profile.view((nu, j), (nv, 1)).into_owned();
            state = &self.model.a * &state + &self.model.b * &u + &self.model.f * w_forecast.column(j);
            dev += state.dot(&(&self.weights.q_state * &state)) + u.dot(&(&self.weights.r_input * &u));
            cst += v.dot(&(&self.weights.rho_violation * &v));
        }
        Ok((dev, cst))
    }

    /// Constrained outputs `y^c` (deviation) at every sample under `p`.
    pub fn predicted_constrained_outputs(
        &self,
        x: &DVector<f64>,
        w_forecast: &DMatrix<f64>,
        p: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let profile = self.par.expand_profile(p)?;
        let nu = self.par.n_physical();
        let outs = &self.bounds.constrained_outputs;
        let mut y = DMatrix::zeros(outs.len(), self.par.horizon());
        let mut state = x.clone();
        for j in 0..self.par.horizon() {
            let u = profile.view((0, j), (nu, 1)).column(0).into_owned();
            let w: DVector<f64> = w_forecast.column(j).into_owned();
            state = self.model.step(&state, &u, &w);
            let full = self.model.output(&state, &u, &w);
            for (m, &o) in outs.iter().enumerate() {
                y[(m, j)] = full[o];
            }
        }
        Ok(y)
    }
}

fn build_rate_rows(par: &ControlParametrization, keep: Option<usize>) -> Result<Vec<RateRow>> {
    let mut rows = Vec::new();
    let instants = par.decision_instants();
    for k in 0..instants.len() {
        let gap = if k == 0 { instants[0] } else { instants[k] - instants[k - 1] } as f64;
        for input in 0..par.n_physical() {
            for upper in [true, false] {
                rows.push(RateRow {
                    instant: k,
                    input,
                    gap,
                    upper,
                });
            }
        }
    }
    if let Some(n) = keep {
        if n > rows.len() {
            return Err(Error::InvalidConfig(format!(
                "{n} rate rows requested but only {} exist",
                rows.len()
            )));
        }
        rows.truncate(n);
    }
    Ok(rows)
}

/// One-shot condensing; prefer keeping an [`MpcFormulation`] around to reuse
/// the Hessian and constraint matrix.
#[allow(clippy::too_many_arguments)]
pub fn condense(
    model: &LtiModel,
    par: &ControlParametrization,
    weights: &MpcWeights,
    bounds: &MpcBounds,
    op: &OperatingPoint,
    x: &DVector<f64>,
    u_prev: &DVector<f64>,
    w_forecast: &DMatrix<f64>,
) -> Result<QpProblem> {
    MpcFormulation::new(
        model.clone(),
        par.clone(),
        weights.clone(),
        bounds.clone(),
        op.clone(),
        FormulationOptions::default(),
    )?
    .problem(x, u_prev, w_forecast)
}
