//! Closed-loop execution of the iteration-limited MPC scheme.
//!
//! Each update window lasts `q` iteration quanta (plus the preparation time
//! in hardware-faithful mode). While the plant runs under the profile
//! delivered at the window start, the controller predicts the state at the
//! window end, hot-starts from the shifted profile and performs exactly `q`
//! solver iterations on the QP for that predicted state. The result is
//! delivered at the window end.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::active_set::{self, SolveStatus, WorkingSet};
use crate::adapt::{collect_inputs, update_q, AdaptationConfig, AdaptationDiagnostics};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{expm, logm};
use crate::metrics::stage_cost;
use crate::mpc::{LtiModel, MpcFormulation, StepMatrices};
use crate::ode::{self, OdeSolverConfig};
use crate::qp::{augmented_cost, QpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Ode,
    ActiveSet,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Ode => "ode",
            SolverKind::ActiveSet => "active_set",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(SolverKind::Ode),
            "active_set" | "active-set" | "as" => Ok(SolverKind::ActiveSet),
            other => Err(Error::InvalidConfig(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// Every second of the updating period is spent iterating.
    Nominal,
    /// Each window first spends `prep_time` preparing the problem.
    HardwareFaithful,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeBudget {
    pub sec_per_iter_ode: f64,
    pub sec_per_iter_activeset: f64,
    /// Computing power relative to the reference device.
    pub normalized_power: f64,
    pub prep_time: f64,
    pub mode: BudgetMode,
}

impl Default for ComputeBudget {
    fn default() -> Self {
        Self {
            sec_per_iter_ode: 0.25,
            sec_per_iter_activeset: 0.48,
            normalized_power: 1.0,
            prep_time: 0.5,
            mode: BudgetMode::Nominal,
        }
    }
}

impl ComputeBudget {
    pub fn with_power(mut self, p: f64) -> Self {
        self.normalized_power = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sec_per_iter_ode", self.sec_per_iter_ode),
            ("sec_per_iter_activeset", self.sec_per_iter_activeset),
            ("normalized_power", self.normalized_power),
            ("prep_time", self.prep_time),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Wall-clock time of one iteration on this device.
    pub fn quantum(&self, kind: SolverKind) -> f64 {
        let per_iter = match kind {
            SolverKind::Ode => self.sec_per_iter_ode,
            SolverKind::ActiveSet => self.sec_per_iter_activeset,
        };
        per_iter / self.normalized_power
    }

    /// Time charged before the first iteration of every window.
    pub fn overhead(&self) -> f64 {
        match self.mode {
            BudgetMode::Nominal => 0.0,
            BudgetMode::HardwareFaithful => self.prep_time,
        }
    }

    /// Length of a window delivering after `q` iterations.
    pub fn window(&self, kind: SolverKind, q: usize) -> f64 {
        self.overhead() + q as f64 * self.quantum(kind)
    }
}

/// Iterations that fit in an updating period of `tau_u` seconds.
pub fn iterations_allowed(budget: &ComputeBudget, kind: SolverKind, tau_u: f64) -> Result<usize> {
    budget.validate()?;
    let quantum = budget.quantum(kind);
    let usable = tau_u - budget.overhead();
    // relative slack absorbs representation error in products like 5·1/0.25
    let n = (usable / quantum * (1.0 + 1e-12)).floor();
    if !(n >= 1.0) {
        return Err(Error::BudgetTooSmall {
            tau_u,
            per_iter: quantum,
        });
    }
    Ok(n as usize)
}

/// Piecewise-constant heat-load profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub duration: f64,
    /// Breakpoints (seconds, first one at 0) and the load held from each.
    pub times: Vec<f64>,
    pub heat_load: Vec<f64>,
}

impl Scenario {
    pub fn new(label: impl Into<String>, duration: f64, times: Vec<f64>, heat_load: Vec<f64>) -> Result<Self> {
        let s = Self {
            label: label.into(),
            duration,
            times,
            heat_load,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(label: impl Into<String>, duration: f64, load: f64) -> Self {
        Self::new(label, duration, vec![0.0], vec![load]).expect("constant scenario is valid")
    }

    fn validate(&self) -> Result<()> {
        check_dim("scenario samples", self.times.len(), self.heat_load.len())?;
        if self.times.first() != Some(&0.0) {
            return Err(Error::InvalidConfig("scenario must start at t = 0".into()));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("scenario times must be strictly increasing".into()));
        }
        if !(self.duration > 0.0) || *self.times.last().unwrap() > self.duration {
            return Err(Error::InvalidConfig("scenario duration must cover all samples".into()));
        }
        if self.heat_load.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("scenario contains non-finite load".into()));
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        self.heat_load[k.saturating_sub(1)]
    }

    /// Breakpoints strictly inside `(from, to)`.
    fn changes_within(&self, from: f64, to: f64) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().copied().filter(move |&s| s > from && s < to)
    }

    /// Sub-scenario on `[from, from + duration)`, re-based to start at 0.
    pub fn slice(&self, label: impl Into<String>, from: f64, duration: f64) -> Result<Self> {
        let mut times = vec![0.0];
        let mut loads = vec![self.value_at(from)];
        for s in self.changes_within(from, from + duration) {
            times.push(s - from);
            loads.push(self.value_at(s));
        }
        Self::new(label, duration, times, loads)
    }

    pub fn read_csv(path: &Path, label: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_s", "heat_load_W"] {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: "expected header `time_s,heat_load_W`".into(),
            });
        }
        let (mut times, mut loads) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |idx: usize| -> Result<f64> {
                rec.get(idx).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: i + 2,
                    msg: format!("bad value in column {idx}"),
                })
            };
            times.push(parse(0)?);
            loads.push(parse(1)?);
        }
        // the final row marks the end of the scenario
        let duration = *times.last().ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            msg: "empty scenario".into(),
        })?;
        if times.len() > 1 {
            times.pop();
            loads.pop();
        }
        Self::new(label, duration, times, loads)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_s", "heat_load_W"])?;
        for (t, v) in self.times.iter().zip(&self.heat_load) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        let last = *self.heat_load.last().unwrap();
        w.write_record([self.duration.to_string(), last.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Exact zero-order-hold propagation over arbitrary intervals.
#[derive(Debug, Clone)]
struct Propagator {
    log_aug: DMatrix<f64>,
    dims: (usize, usize, usize),
    sample_period: f64,
    cache: HashMap<u64, StepMatrices>,
}

impl Propagator {
    fn new(model: &LtiModel) -> Result<Self> {
        let (n, nu, nw) = (model.n_states(), model.n_inputs(), model.n_disturbances());
        let dim = n + nu + nw;
        let mut m = DMatrix::identity(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&model.a);
        m.view_mut((0, n), (n, nu)).copy_from(&model.b);
        m.view_mut((0, n + nu), (n, nw)).copy_from(&model.f);
        Ok(Self {
            log_aug: logm(&m)?,
            dims: (n, nu, nw),
            sample_period: model.sample_period,
            cache: HashMap::new(),
        })
    }

    fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, duration: f64) -> DVector<f64> {
        let (n, nu, nw) = self.dims;
        let log_aug = &self.log_aug;
        let tau = self.sample_period;
        let mats = self.cache.entry(duration.to_bits()).or_insert_with(|| {
            let p = expm(&(log_aug * (duration / tau)));
            StepMatrices {
                a: p.view((0, 0), (n, n)).into_owned(),
                b: p.view((0, n), (n, nu)).into_owned(),
                f: p.view((0, n + nu), (n, nw)).into_owned(),
                duration,
            }
        });
        mats.step(x, u, w)
    }
}

/// The true plant. Its model may differ from the controller's.
#[derive(Debug, Clone)]
pub struct PlantSim {
    pub model: LtiModel,
    /// Amplitude of uniform white state noise injected per second of
    /// simulated time (0 disables).
    pub noise_scale: f64,
    pub seed: u64,
    /// Actuators slew at most `du` per model sample: a command change after
    /// a hold shorter than one sample is limited pro rata. Larger steps are
    /// cut back and the controller predicts with the limited inputs.
    pub rate_limited: bool,
}

impl PlantSim {
    pub fn new(model: LtiModel) -> Self {
        Self {
            model,
            noise_scale: 0.0,
            seed: 0,
            rate_limited: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMode {
    /// Hold the disturbance measured at the window start.
    HoldLast,
    /// Read the scenario ahead of time.
    Perfect,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub formulation: MpcFormulation,
    pub solver: SolverKind,
    pub ode: OdeSolverConfig,
    pub forecast: ForecastMode,
    /// Re-initialise the ODE step size from the hot-start gradient each window.
    pub reinit_step: bool,
    /// Iterations granted per window regardless of `q` (window timing still
    /// follows `q`). Used for unlimited reference runs.
    pub iteration_override: Option<usize>,
    /// Repair the shifted profile into the feasible set before iterating.
    pub repair_hot_start: bool,
}

impl ControllerConfig {
    pub fn new(formulation: MpcFormulation, solver: SolverKind) -> Self {
        Self {
            formulation,
            solver,
            ode: OdeSolverConfig::default(),
            forecast: ForecastMode::HoldLast,
            reinit_step: true,
            iteration_override: None,
            repair_hot_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Fixed { q: usize },
    Adaptive { q0: usize, cfg: AdaptationConfig },
}

impl Schedule {
    fn label(&self) -> String {
        match self {
            Schedule::Fixed { q } => format!("fixed_q{q}"),
            Schedule::Adaptive { q0, cfg } => format!("adaptive_q0_{q0}_delta{}_qmax{}", cfg.delta, cfg.q_max),
        }
    }
}

/// One update window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub q: usize,
    pub iterations_used: usize,
    pub status: String,
    pub clipped: bool,
    pub j_k: f64,
    pub j_k_plus: f64,
    pub j_hat_next: f64,
    pub j_next: f64,
    /// Algorithm diagnostics (NaN when the schedule is fixed).
    pub e_r: f64,
    pub d_r: f64,
    pub k_r: f64,
    pub gamma: f64,
    pub q_next: usize,
    /// Predicted deviation and violation costs of the delivered profile.
    pub dev: f64,
    pub cst: f64,
    /// Largest polyhedral violation of the delivered profile.
    pub max_violation: f64,
    /// Stage cost of the true plant at the window end.
    pub inst: f64,
    pub heat_load: f64,
    pub y: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    /// Cost trace of the window's solve (not written to CSV).
    pub trace: Vec<f64>,
}

impl WindowRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub solver: SolverKind,
    pub sample_period: f64,
    pub windows: Vec<WindowRecord>,
    /// Simulated time (may end inside a final partial window).
    pub end_time: f64,
    pub clip_events: usize,
    /// Applied-input changes cut back by the actuator slew limit.
    pub rate_limited_events: usize,
}

impl RunRecord {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let first = self.windows.first();
        let ny = first.map_or(0, |r| r.y.len());
        let nu = first.map_or(0, |r| r.u_applied.len());
        let nv = first.map_or(0, |r| r.v.len());
        let mut header: Vec<String> = [
            "k", "t_start", "t_end", "q", "iterations_used", "status", "clipped", "J_k", "J_k_plus", "J_hat_next",
            "J_next", "E_r", "D_r", "K_r", "Gamma", "q_next", "dev", "cst", "max_violation", "inst", "heat_load",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..ny).map(|i| format!("y{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        header.extend((0..nv).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for r in &self.windows {
            let mut row = vec![
                r.index.to_string(),
                r.t_start.to_string(),
                r.t_end.to_string(),
                r.q.to_string(),
                r.iterations_used.to_string(),
                r.status.clone(),
                (r.clipped as u8).to_string(),
            ];
            for v in [
                r.j_k, r.j_k_plus, r.j_hat_next, r.j_next, r.e_r, r.d_r, r.k_r, r.gamma,
            ] {
                row.push(v.to_string());
            }
            row.push(r.q_next.to_string());
            for v in [r.dev, r.cst, r.max_violation, r.inst, r.heat_load] {
                row.push(v.to_string());
            }
            row.extend(r.y.iter().chain(&r.u_applied).chain(&r.v).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// `J_{k+1}/Ĵ_{k+1}` of window `k`: 1 when prediction was exact.
pub fn mismatch_ratio(record: &RunRecord, k: usize) -> f64 {
    let w = &record.windows[k];
    w.j_next / w.j_hat_next
}

struct Controller<'a> {
    cfg: &'a ControllerConfig,
    scenario: &'a Scenario,
    propagator: Propagator,
    step_size: Option<f64>,
    working_set: Option<WorkingSet>,
}

impl Controller<'_> {
    fn w_dev(&self, t: f64) -> f64 {
        self.scenario.value_at(t) - self.cfg.formulation.operating_point().w0[0]
    }

    /// Disturbance forecast over the horizon starting at `t0`, decided at `t_meas`.
    fn forecast(&self, t_meas: f64, t0: f64) -> DMatrix<f64> {
        let form = &self.cfg.formulation;
        let tau = form.model().sample_period;
        let horizon = form.parametrization().horizon();
        match self.cfg.forecast {
            ForecastMode::HoldLast => DMatrix::from_element(1, horizon, self.w_dev(t_meas)),
            ForecastMode::Perfect => DMatrix::from_fn(1, horizon, |_, j| self.w_dev(t0 + j as f64 * tau)),
        }
    }

    fn solve(&mut self, prob: &QpProblem, p_plus: &DVector<f64>, q: usize) -> Result<(DVector<f64>, Vec<f64>, usize, String)> {
        let iters = self.cfg.iteration_override.unwrap_or(q);
        let penalty = &self.cfg.ode.penalty;
        let floor = self.cfg.ode.floor;
        match self.cfg.solver {
            SolverKind::Ode => {
                let mut state = ode::init_state(prob, &self.cfg.ode, p_plus)?;
                if let (false, Some(h)) = (self.cfg.reinit_step, self.step_size) {
                    state.step_size = h;
                }
                let state = ode::resume(prob, &self.cfg.ode, state, iters)?;
                if state.cost_trace.len() != iters + 1 {
                    return Err(Error::Contract(format!(
                        "ODE solver returned {} costs for {iters} iterations",
                        state.cost_trace.len()
                    )));
                }
                self.step_size = Some(state.step_size);
                Ok((state.iterate, state.cost_trace, iters, "iterated".into()))
            }
            SolverKind::ActiveSet => {
                let start = augmented_cost(prob, penalty, &prob.project_to_box(p_plus), floor)?;
                let res = active_set::solve(prob, self.working_set.as_ref(), p_plus, iters)?;
                if res.iterations_used > iters {
                    return Err(Error::Contract(format!(
                        "active-set solver used {} of {iters} iterations",
                        res.iterations_used
                    )));
                }
                let end = augmented_cost(prob, penalty, &res.iterate, floor)?;
                if res.status == SolveStatus::InfeasibleSubproblem {
                    warn!("active-set subproblem reported infeasible; delivering last iterate");
                }
                self.working_set = Some(res.working_set);
                Ok((res.iterate, vec![start, end], res.iterations_used, res.status.as_str().into()))
            }
        }
    }
}

/// Share of a full per-sample increment available at `t` to an input that
/// last changed at `since`: actuators slew at `du` per model sample.
fn held_fraction(t: f64, since: f64, tau: f64) -> f64 {
    ((t - since) / tau).clamp(0.0, 1.0)
}

/// Control held on `[t, t_next)` from a profile delivered at `t_del`.
fn applied_control(profile: &DMatrix<f64>, n_phys: usize, tau: f64, t_del: f64, t: f64) -> DVector<f64> {
    let j = (((t - t_del) / tau) + 1e-9).floor().max(0.0) as usize;
    let col = j.min(profile.ncols() - 1);
    profile.view((0, col), (n_phys, 1)).column(0).into_owned()
}

/// Event times in `(t, t_end)`: control sample boundaries and, when
/// `scenario` is given, load changes.
fn segment_points(t: f64, t_end: f64, t_del: f64, tau: f64, scenario: Option<&Scenario>) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::new();
    let mut m = ((t - t_del) / tau + 1e-9).floor() as i64 + 1;
    loop {
        let s = t_del + m as f64 * tau;
        if s >= t_end - 1e-9 {
            break;
        }
        if s > t + 1e-9 {
            pts.push(s);
        }
        m += 1;
    }
    if let Some(sc) = scenario {
        pts.extend(sc.changes_within(t + 1e-9, t_end - 1e-9));
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.push(t_end);
    pts
}

/// Runs the scheme over the whole scenario.
pub fn run_closed_loop(
    plant: &PlantSim,
    ctrl: &ControllerConfig,
    scenario: &Scenario,
    budget: &ComputeBudget,
    schedule: Schedule,
) -> Result<RunRecord> {
    budget.validate()?;
    let form = &ctrl.formulation;
    let par = form.parametrization();
    let model = form.model();
    check_dim("plant states", model.n_states(), plant.model.n_states())?;
    check_dim("plant inputs", model.n_inputs(), plant.model.n_inputs())?;
    check_dim("plant disturbances", 1, plant.model.n_disturbances())?;
    let (q_max, mut q) = match schedule {
        Schedule::Fixed { q } => (usize::MAX, q),
        Schedule::Adaptive { q0, cfg } => {
            cfg.validate()?;
            (cfg.q_max, q0)
        }
    };
    if q < 1 || q > q_max.max(1) || (matches!(schedule, Schedule::Adaptive { .. }) && q < 2) {
        return Err(Error::InvalidConfig(format!("initial q = {q} outside the admissible range")));
    }
    let q_longest = match schedule {
        Schedule::Fixed { q } => q,
        Schedule::Adaptive { cfg, .. } => cfg.q_max,
    };
    let longest = budget.window(ctrl.solver, q_longest);
    if longest > par.horizon() as f64 * form.model().sample_period {
        return Err(Error::InvalidConfig(format!("window of {longest} s exceeds the prediction horizon")));
    }

    let tau = model.sample_period;
    let nu = par.n_physical();
    let nv = par.n_virtual();
    let op = form.operating_point().clone();
    let (u_lo, u_hi) = form.input_box();
    let weights = form.weights();
    let bounds = form.bounds();
    let mut plant_prop = Propagator::new(&plant.model)?;
    let mut controller = Controller {
        cfg: ctrl,
        scenario,
        propagator: Propagator::new(model)?,
        step_size: None,
        working_set: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(plant.seed);
    let penalty = ctrl.ode.penalty;
    let floor = ctrl.ode.floor;

    let mut x = DVector::zeros(model.n_states());
    let mut u_last = DVector::zeros(nu);
    let mut p = DVector::zeros(par.n_params());
    let mut t = 0.0;
    let fc0 = controller.forecast(0.0, 0.0);
    let mut j_k = augmented_cost(&form.problem(&x, &u_last, &fc0)?, &penalty, &p, floor)?;

    let mut windows = Vec::new();
    let mut clip_events = 0;
    let mut rate_limited_events = 0;
    // when each applied input last changed
    let mut u_since = vec![f64::NEG_INFINITY; nu];
    let end = scenario.duration;
    while t < end - 1e-9 {
        let t_full = t + budget.window(ctrl.solver, q);
        let partial = t_full > end + 1e-9;
        let t_next = t_full.min(end);
        let profile = par.expand_profile(&p)?;

        // plant and controller prediction over the window
        let mut x_true = x.clone();
        let mut x_hat = x.clone();
        let w_meas = controller.w_dev(t);
        let mut applied = Vec::new();
        let mut s = t;
        for e in segment_points(t, t_next, t, tau, Some(scenario)) {
            let mut u = applied_control(&profile, nu, tau, t, s);
            for i in 0..nu {
                if plant.rate_limited {
                    let held = held_fraction(s, u_since[i], tau);
                    let lo = u_last[i] + held * bounds.du_min[i];
                    let hi = u_last[i] + held * bounds.du_max[i];
                    if u[i] < lo - 1e-12 || u[i] > hi + 1e-12 {
                        rate_limited_events += 1;
                    }
                    u[i] = u[i].clamp(lo, hi);
                }
                if u[i] != u_last[i] {
                    u_since[i] = s;
                }
            }
            u_last = u.clone();
            applied.push((s, e, u));
            s = e;
        }
        for (s, e, u) in &applied {
            let w = DVector::from_element(1, controller.w_dev(*s));
            x_true = plant_prop.step(&x_true, u, &w, e - s);
            if plant.noise_scale > 0.0 {
                let amp = plant.noise_scale * (e - s).sqrt();
                x_true.iter_mut().for_each(|v| *v += amp * rng.random_range(-1.0..1.0));
            }
            let w_fc = match ctrl.forecast {
                ForecastMode::HoldLast => w_meas,
                ForecastMode::Perfect => controller.w_dev(*s),
            };
            x_hat = controller.propagator.step(&x_hat, u, &DVector::from_element(1, w_fc), e - s);
        }
        if partial {
            t = t_next;
            break;
        }

        let fc = controller.forecast(t, t_next);
        let first_move = DVector::from_fn(nu, |i, _| held_fraction(t_next, u_since[i], tau));
        let prob_hat = form.problem_with_first_move(&x_hat, &u_last, &fc, &first_move)?;
        let mut p_plus = par.shift_by(&p, (t_next - t) / tau)?;
        if ctrl.repair_hot_start {
            p_plus = form.feasible_start(&prob_hat, &p_plus, &u_last, &first_move)?;
        }
        let (iterate, trace, iterations_used, status) = controller.solve(&prob_hat, &p_plus, q)?;
        let p_new = prob_hat.project_to_box(&iterate);
        let clipped = (&p_new - &iterate).amax() > 1e-12;
        if clipped {
            clip_events += 1;
            debug!("window at t={t_next}: delivered profile clipped to actuator box");
        }
        let j_k_plus = trace[0];
        let j_hat_next = augmented_cost(&prob_hat, &penalty, &p_new, floor)?;
        let prob_true = form.problem_with_first_move(&x_true, &u_last, &fc, &first_move)?;
        let j_next = augmented_cost(&prob_true, &penalty, &p_new, floor)?;

        let mut diag: Option<AdaptationDiagnostics> = None;
        let mut q_next = q;
        if let Schedule::Adaptive { cfg, .. } = schedule {
            let mut tr = trace.clone();
            *tr.last_mut().unwrap() = j_hat_next;
            let inputs = collect_inputs(&tr, j_k, j_next, q)?;
            let d = update_q(&inputs, &cfg)?;
            q_next = d.q_next;
            diag = Some(d);
        }

        let (dev, cst) = form.open_loop_split(&x_hat, &fc, &p_new)?;
        let max_violation = prob_hat.max_ineq_violation(&p_new)?;
        let w_now = DVector::from_element(1, controller.w_dev(t_next));
        let y_dev = plant.model.output(&x_true, &u_last, &w_now);
        let mut v_true = DVector::zeros(nv);
        for (m, &o) in bounds.constrained_outputs.iter().enumerate() {
            let y_abs = y_dev[o] + op.y0[o];
            if 2 * m + 1 < nv {
                v_true[2 * m] = (y_abs - bounds.yc_max[m]).max(0.0);
                v_true[2 * m + 1] = (bounds.yc_min[m] - y_abs).max(0.0);
            }
        }
        let inst = stage_cost(&x_true, &u_last, &v_true, weights);
        debug_assert!(u_last.iter().zip(u_lo.iter().zip(u_hi.iter())).all(|(u, (lo, hi))| *u >= lo - 1e-9 && *u <= hi + 1e-9));

        windows.push(WindowRecord {
            index: windows.len(),
            t_start: t,
            t_end: t_next,
            q,
            iterations_used,
            status,
            clipped,
            j_k,
            j_k_plus,
            j_hat_next,
            j_next,
            e_r: diag.map_or(f64::NAN, |d| d.e_r),
            d_r: diag.map_or(f64::NAN, |d| d.d_r),
            k_r: diag.map_or(f64::NAN, |d| d.k_r),
            gamma: diag.map_or(f64::NAN, |d| d.gamma),
            q_next,
            dev,
            cst,
            max_violation,
            inst,
            heat_load: scenario.value_at(t_next),
            y: (&y_dev + &op.y0).iter().copied().collect(),
            u_applied: (&u_last + &op.u0).iter().copied().collect(),
            v: p_new.rows(nu, nv).iter().copied().collect(),
            x: x_true.iter().copied().collect(),
            trace,
        });

        x = x_true;
        p = p_new;
        j_k = j_next;
        q = q_next;
        t = t_next;
    }

    let record = RunRecord {
        label: format!("{}_{}", ctrl.solver.as_str(), schedule.label()),
        solver: ctrl.solver,
        sample_period: tau,
        windows,
        end_time: t,
        clip_events,
        rate_limited_events,
    };
    let mut problems = check_invariants(&record, ctrl, budget);
    if (record.end_time - end).abs() > 1e-9 * end.max(1.0) {
        problems.push(format!("run ended at {} s, scenario lasts {end} s", record.end_time));
    }
    if !problems.is_empty() {
        return Err(Error::Contract(problems.join("; ")));
    }
    Ok(record)
}

/// Checks the per-run invariants: budget honesty, actuator safety, window
/// timing, cost positivity and (for the ODE solver) monotone cost traces.
/// Returns one message per violation.
pub fn check_invariants(record: &RunRecord, ctrl: &ControllerConfig, budget: &ComputeBudget) -> Vec<String> {
    let mut out = Vec::new();
    let (lo, hi) = ctrl.formulation.input_box();
    let u0 = &ctrl.formulation.operating_point().u0;
    let mut t = 0.0;
    let n = record.windows.len();
    for (k, w) in record.windows.iter().enumerate() {
        let granted = ctrl.iteration_override.unwrap_or(w.q);
        let honest = match record.solver {
            SolverKind::Ode => w.iterations_used == granted,
            SolverKind::ActiveSet => w.iterations_used <= granted,
        };
        if !honest {
            out.push(format!("window {k}: {} iterations used, {granted} granted", w.iterations_used));
        }
        for (i, u) in w.u_applied.iter().enumerate() {
            let d = u - u0[i];
            if d < lo[i] - 1e-9 || d > hi[i] + 1e-9 {
                out.push(format!("window {k}: input {i} = {u} outside its box"));
            }
        }
        if (w.t_start - t).abs() > 1e-9 {
            out.push(format!("window {k}: starts at {} instead of {t}", w.t_start));
        }
        let expected = budget.window(record.solver, w.q);
        if k + 1 < n && (w.duration() - expected).abs() > 1e-9 * expected.max(1.0) {
            out.push(format!("window {k}: lasts {} s, expected {expected} s", w.duration()));
        }
        for (name, v) in [("J_k", w.j_k), ("J_k_plus", w.j_k_plus), ("J_hat_next", w.j_hat_next), ("J_next", w.j_next)] {
            if !(v > 0.0) || !v.is_finite() {
                out.push(format!("window {k}: {name} = {v} not positive"));
            }
        }
        if record.solver == SolverKind::Ode && w.trace.windows(2).any(|p| p[1] > p[0]) {
            out.push(format!("window {k}: ODE cost trace increases"));
        }
        t = w.t_end;
    }
    out
}
