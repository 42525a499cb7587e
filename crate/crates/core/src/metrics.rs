//! Run-level performance indicators and the two sweep experiments.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::adapt::AdaptationConfig;
use crate::error::{Error, Result};
use crate::mpc::MpcWeights;
use crate::sim::{
    iterations_allowed, run_closed_loop, ComputeBudget, ControllerConfig, PlantSim, RunRecord, Scenario, Schedule,
    SolverKind,
};

/// Stage cost `‖x‖²_Q + ‖u‖²_R + ‖v‖²_ρ` in deviation variables.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, weights: &MpcWeights) -> f64 {
    x.dot(&(&weights.q_state * x)) + u.dot(&(&weights.r_input * u)) + v.dot(&(&weights.rho_violation * v))
}

/// Totals over a run. Window terms are weighted by the window length in
/// model samples so runs with different updating periods are comparable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub dev_total: f64,
    pub cst_total: f64,
    pub closed_loop_total: f64,
    pub c1: f64,
    pub c2: f64,
    pub n_sim: usize,
}

impl CostBreakdown {
    pub fn open_loop_total(&self) -> f64 {
        self.dev_total + self.cst_total
    }

    pub fn from_record(record: &RunRecord) -> Self {
        let mut out = CostBreakdown {
            n_sim: record.windows.len(),
            ..Default::default()
        };
        for w in &record.windows {
            let weight = w.duration() / record.sample_period;
            out.dev_total += weight * w.dev;
            out.cst_total += weight * w.cst;
            out.closed_loop_total += weight * w.inst;
        }
        let (c1, c2) = violation_stats(record);
        out.c1 = c1;
        out.c2 = c2;
        out
    }
}

/// Per-window predicted `(dev, cst)` of the delivered profiles.
pub fn open_loop_costs(record: &RunRecord) -> (Vec<f64>, Vec<f64>) {
    record.windows.iter().map(|w| (w.dev, w.cst)).unzip()
}

/// `(c1, c2)`: the largest and the mean per-window polyhedral violation of
/// the delivered profiles.
pub fn violation_stats(record: &RunRecord) -> (f64, f64) {
    violation_stats_of(record.windows.iter().map(|w| w.max_violation))
}

pub fn violation_stats_of(per_window: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for v in per_window {
        let v = v.max(0.0);
        max = max.max(v);
        sum += v;
        n += 1;
    }
    (max, if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub segment: String,
    pub axis_value: f64,
    pub mode: String,
    /// `false` when the budget does not allow a single iteration.
    pub available: bool,
    pub iterations: usize,
    pub breakdown: CostBreakdown,
    /// Headline cost divided by the reference run's.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub crossover: Option<f64>,
}

impl SweepResult {
    pub fn row(&self, segment: &str, mode: &str, axis_value: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.segment == segment && r.mode == mode && r.axis_value == axis_value)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "segment",
            "axis",
            "mode",
            "available",
            "iterations",
            "dev_total",
            "cst_total",
            "open_loop_total",
            "closed_loop_total",
            "c1",
            "c2",
            "n_sim",
            "normalized",
        ])?;
        for r in &self.rows {
            let b = &r.breakdown;
            w.write_record([
                r.segment.clone(),
                r.axis_value.to_string(),
                r.mode.clone(),
                (r.available as u8).to_string(),
                r.iterations.to_string(),
                b.dev_total.to_string(),
                b.cst_total.to_string(),
                b.open_loop_total().to_string(),
                b.closed_loop_total.to_string(),
                b.c1.to_string(),
                b.c2.to_string(),
                b.n_sim.to_string(),
                r.normalized.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Linear-interpolated point where `a − b` first turns negative along `axis`.
pub fn crossover(axis: &[f64], a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let diffs: Vec<Option<f64>> = a.iter().zip(b).map(|(x, y)| Some((*x)? - (*y)?)).collect();
    for i in 0..axis.len() {
        let Some(d) = diffs[i] else { continue };
        if d < 0.0 {
            return match i.checked_sub(1).and_then(|j| diffs[j].map(|dp| (j, dp))) {
                Some((j, dp)) if dp >= 0.0 => Some(axis[j] + (axis[i] - axis[j]) * dp / (dp - d)),
                _ => Some(axis[i]),
            };
        }
    }
    None
}

/// Iteration cap of unlimited reference runs.
pub const REFERENCE_CAP: usize = 1000;

/// Active-set solver run to optimality in every window (same timing as the
/// active-set solver at unit power).
pub fn reference_run(plant: &PlantSim, ctrl: &ControllerConfig, scenario: &Scenario, budget: &ComputeBudget) -> Result<RunRecord> {
    let mut cfg = ctrl.clone();
    cfg.solver = SolverKind::ActiveSet;
    cfg.iteration_override = Some(REFERENCE_CAP);
    let unit = budget.with_power(1.0);
    let q = iterations_allowed(&unit, SolverKind::ActiveSet, ctrl.formulation.model().sample_period)?;
    run_closed_loop(plant, &cfg, scenario, &unit, Schedule::Fixed { q })
}

fn normalize(value: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        value / reference
    } else {
        value
    }
}

/// Fixed-q runs of both solvers for every normalized power on `axis`, with
/// `q` set by [`iterations_allowed`] over one model sample. Headline cost:
/// closed-loop total. Crossover: first power where the active-set solver
/// beats the ODE solver.
pub fn sweep_power(
    plant: &PlantSim,
    ctrl: &ControllerConfig,
    scenario: &Scenario,
    budget: &ComputeBudget,
    axis: &[f64],
) -> Result<SweepResult> {
    if axis.is_empty() || axis.iter().any(|&p| !(p > 0.0)) || axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("power axis must be positive and strictly increasing".into()));
    }
    let tau_u = ctrl.formulation.model().sample_period;
    let reference = CostBreakdown::from_record(&reference_run(plant, ctrl, scenario, budget)?);
    let jobs: Vec<(f64, SolverKind)> = axis
        .iter()
        .flat_map(|&p| [SolverKind::Ode, SolverKind::ActiveSet].map(|k| (p, k)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(power, kind)| -> Result<SweepRow> {
            let b = budget.with_power(power);
            let mut row = SweepRow {
                segment: scenario.label.clone(),
                axis_value: power,
                mode: kind.as_str().into(),
                available: false,
                iterations: 0,
                breakdown: CostBreakdown::default(),
                normalized: f64::NAN,
            };
            let Ok(q) = iterations_allowed(&b, kind, tau_u) else {
                return Ok(row);
            };
            let mut cfg = ctrl.clone();
            cfg.solver = kind;
            let rec = run_closed_loop(plant, &cfg, scenario, &b, Schedule::Fixed { q })?;
            row.available = true;
            row.iterations = q;
            row.breakdown = CostBreakdown::from_record(&rec);
            row.normalized = normalize(row.breakdown.closed_loop_total, reference.closed_loop_total);
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let series = |kind: SolverKind| -> Vec<Option<f64>> {
        axis.iter()
            .map(|&p| {
                rows.iter()
                    .find(|r| r.axis_value == p && r.mode == kind.as_str() && r.available)
                    .map(|r| r.breakdown.closed_loop_total)
            })
            .collect()
    };
    let cross = crossover(axis, &series(SolverKind::ActiveSet), &series(SolverKind::Ode));
    let mut rows = rows;
    rows.push(SweepRow {
        segment: scenario.label.clone(),
        axis_value: 1.0,
        mode: "reference".into(),
        available: true,
        iterations: REFERENCE_CAP,
        breakdown: reference,
        normalized: 1.0,
    });
    Ok(SweepResult {
        axis: axis.to_vec(),
        rows,
        crossover: cross,
    })
}

/// Per segment: ODE runs at every fixed `q` on `q_axis` plus one adaptive
/// run (axis value 0). Headline cost: open-loop total.
pub fn sweep_period(
    plant: &PlantSim,
    ctrl: &ControllerConfig,
    segments: &[Scenario],
    budget: &ComputeBudget,
    q_axis: &[usize],
    adapt: &AdaptationConfig,
    q0: usize,
) -> Result<SweepResult> {
    adapt.validate()?;
    if q_axis.iter().any(|&q| q < 2 || q > adapt.q_max) {
        return Err(Error::InvalidConfig(format!("q values must lie in 2..={}", adapt.q_max)));
    }
    let mut cfg = ctrl.clone();
    cfg.solver = SolverKind::Ode;
    let mut jobs: Vec<(usize, Option<usize>)> = Vec::new();
    for s in 0..segments.len() {
        jobs.extend(q_axis.iter().map(|&q| (s, Some(q))));
        jobs.push((s, None));
    }
    let results: Vec<(usize, Option<usize>, CostBreakdown)> = jobs
        .par_iter()
        .map(|&(s, q)| {
            let schedule = match q {
                Some(q) => Schedule::Fixed { q },
                None => Schedule::Adaptive { q0, cfg: *adapt },
            };
            let rec = run_closed_loop(plant, &cfg, &segments[s], budget, schedule)?;
            Ok((s, q, CostBreakdown::from_record(&rec)))
        })
        .collect::<Result<_>>()?;
    let references: Vec<CostBreakdown> = segments
        .par_iter()
        .map(|seg| Ok(CostBreakdown::from_record(&reference_run(plant, ctrl, seg, budget)?)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (s, q, b) in results {
        let reference = references[s].open_loop_total();
        rows.push(SweepRow {
            segment: segments[s].label.clone(),
            axis_value: q.map_or(0.0, |q| q as f64),
            mode: if q.is_some() { "fixed".into() } else { "adaptive".into() },
            available: true,
            iterations: q.unwrap_or(q0),
            breakdown: b,
            normalized: normalize(b.open_loop_total(), reference),
        });
    }
    Ok(SweepResult {
        axis: q_axis.iter().map(|&q| q as f64).collect(),
        rows,
        crossover: None,
    })
}

/// For every segment of a period sweep: `(argmin fixed q, best fixed cost,
/// adaptive cost)`, on normalized cost.
pub fn period_summary(result: &SweepResult) -> BTreeMap<String, (f64, f64, f64)> {
    let mut out: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for r in &result.rows {
        let e = out.entry(r.segment.clone()).or_insert((f64::NAN, f64::INFINITY, f64::NAN));
        if r.mode == "fixed" && r.normalized < e.1 {
            e.0 = r.axis_value;
            e.1 = r.normalized;
        } else if r.mode == "adaptive" {
            e.2 = r.normalized;
        }
    }
    out
}

/// `key = value` lines.
pub fn write_summary<W: Write>(mut out: W, entries: &[(String, String)]) -> Result<()> {
    for (k, v) in entries {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(())
}

pub fn breakdown_entries(prefix: &str, b: &CostBreakdown) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}dev_total"), b.dev_total.to_string()),
        (format!("{prefix}cst_total"), b.cst_total.to_string()),
        (format!("{prefix}open_loop_total"), b.open_loop_total().to_string()),
        (format!("{prefix}closed_loop_total"), b.closed_loop_total.to_string()),
        (format!("{prefix}c1"), b.c1.to_string()),
        (format!("{prefix}c2"), b.c2.to_string()),
        (format!("{prefix}n_sim"), b.n_sim.to_string()),
    ]
}
