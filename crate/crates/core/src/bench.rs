//! Seeded benchmark plant and heat-load scenarios.
//!
//! The plant is a stable continuous-time system with real time constants
//! spread between 10 s and 600 s, discretized with a zero-order hold. The
//! heat load enters through the same channel as the heater input. Output 0
//! behaves like a bath level, output 1 like a turbine outlet temperature;
//! the remaining outputs are unconstrained measurements.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::expm;
use crate::mpc::{ControlParametrization, FormulationOptions, LtiModel, MpcBounds, MpcFormulation, MpcWeights, OperatingPoint};
use crate::qp::PenaltyConfig;
use crate::sim::{ControllerConfig, Scenario, SolverKind};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub seed: u64,
    pub n_states: usize,
    pub n_outputs: usize,
    pub sample_period: f64,
    pub min_time_constant: f64,
    pub max_time_constant: f64,
    /// Relative strength of the off-diagonal (upper-triangular) coupling.
    pub coupling: f64,
    /// Steady-state gains from the heat load to outputs 0 and 1 (per W).
    pub load_gain: [f64; 2],
    /// Steady-state gains from the first two inputs to outputs 0 and 1.
    pub valve_gain: [[f64; 2]; 2],
    pub baseline_load: f64,
    /// Amplitude of the random part of the output rows.
    pub output_noise: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_states: 12,
            n_outputs: 4,
            sample_period: 5.0,
            min_time_constant: 10.0,
            max_time_constant: 600.0,
            coupling: 0.3,
            load_gain: [-0.05, 0.12],
            valve_gain: [[0.08, -0.02], [-0.03, -0.25]],
            baseline_load: 60.0,
            output_noise: 0.02,
        }
    }
}

/// Continuous-time matrices `(A_c, B_c, F_c, C)` of the benchmark.
fn continuous(spec: &PlantSpec) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_states;
    let (lo, hi) = (spec.min_time_constant.ln(), spec.max_time_constant.ln());
    let mut tc: Vec<f64> = (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64 + rng.random_range(-0.1..0.1)).exp())
        .collect();
    tc.sort_by(f64::total_cmp);

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -1.0 / tc[i];
        for j in i + 1..n {
            a[(i, j)] = spec.coupling * rng.random_range(-1.0..1.0) / tc[i].max(tc[j]);
        }
    }
    let mut b = DMatrix::zeros(n, 3);
    for i in 0..n {
        for k in 0..3 {
            b[(i, k)] = rng.random_range(0.2..1.0) / tc[i];
        }
    }
    let f = b.columns(2, 1).into_owned();
    let mut c = DMatrix::zeros(spec.n_outputs, n);
    for r in 0..spec.n_outputs {
        for i in 0..n {
            c[(r, i)] = spec.output_noise * rng.random_range(-1.0..1.0);
        }
    }
    (a, b, f, c)
}

/// Solves for the two constrained output rows so that the steady-state gains
/// of inputs 0, 1 and the load match `spec`. Each row is the given random row
/// plus a correction in the span of three fixed directions.
fn calibrate_outputs(spec: &PlantSpec, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &mut DMatrix<f64>) -> Result<()> {
    let dc = (-a)
        .clone()
        .try_inverse()
        .ok_or_else(|| crate::Error::Numerical("singular continuous-time A".into()))?
        * b;
    // gains of a row c are c·dc (1×3); solve c' = c + Σ α_k dc_colᵀ-direction
    let basis = dc.transpose(); // 3×n, rows span the correction space
    let gram = &basis * basis.transpose();
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| crate::Error::Numerical("degenerate input directions".into()))?;
    for r in 0..2 {
        let target = DVector::from_vec(vec![spec.valve_gain[r][0], spec.valve_gain[r][1], spec.load_gain[r]]);
        let row: DVector<f64> = c.row(r).transpose();
        let current = &basis * &row;
        let alpha = &gram_inv * (target - current);
        let corrected = row + basis.transpose() * alpha;
        c.row_mut(r).copy_from(&corrected.transpose());
    }
    Ok(())
}

/// The discrete benchmark model and its operating point.
pub fn benchmark_plant(spec: &PlantSpec) -> Result<(LtiModel, OperatingPoint)> {
    let (a, b, f, mut c) = continuous(spec);
    calibrate_outputs(spec, &a, &b, &mut c)?;
    let n = spec.n_states;
    let dim = n + 4;
    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (n, n)).copy_from(&a);
    m.view_mut((0, n), (n, 3)).copy_from(&b);
    m.view_mut((0, n + 3), (n, 1)).copy_from(&f);
    let e = expm(&(m * spec.sample_period));
    let model = LtiModel::new(
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, 3)).into_owned(),
        e.view((0, n + 3), (n, 1)).into_owned(),
        c,
        DMatrix::zeros(spec.n_outputs, 3),
        DMatrix::zeros(spec.n_outputs, 1),
        spec.sample_period,
    )?;
    let mut y0 = DVector::zeros(spec.n_outputs);
    y0[0] = 60.0;
    y0[1] = 12.5;
    let op = OperatingPoint {
        x0: DVector::zeros(n),
        u0: DVector::from_vec(vec![40.0, 40.0, 75.0]),
        y0,
        w0: DVector::from_element(1, spec.baseline_load),
    };
    Ok((model, op))
}

/// Output-tracking weights `Q = Cᵀ W C + εI` on the constrained outputs.
pub fn benchmark_weights(model: &LtiModel) -> MpcWeights {
    let n = model.n_states();
    let wy = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 10.0]));
    let cc = model.c.rows(0, 2).into_owned();
    let q = cc.transpose() * wy * &cc + DMatrix::identity(n, n) * 1e-3;
    MpcWeights {
        q_state: (&q + q.transpose()) * 0.5,
        r_input: DMatrix::from_diagonal(&DVector::from_vec(vec![0.05, 0.01, 0.01])),
        rho_violation: DMatrix::identity(4, 4) * 1e4,
    }
}

/// The refrigerator limits with the temperature band already in order.
pub fn benchmark_bounds() -> MpcBounds {
    MpcBounds::from_table(
        DVector::from_vec(vec![20.0, 20.0, 0.0]),
        DVector::from_vec(vec![60.0, 60.0, 150.0]),
        DVector::from_vec(vec![0.5, 10.0, 0.1]),
        DVector::from_vec(vec![59.0, 9.0]),
        DVector::from_vec(vec![61.0, 16.0]),
        vec![0, 1],
    )
}

pub fn benchmark_formulation(model: &LtiModel, op: &OperatingPoint, horizon: usize) -> Result<MpcFormulation> {
    let par = if horizon == 100 {
        ControlParametrization::reference()
    } else {
        ControlParametrization::reference_with_horizon(horizon)?
    };
    let options = FormulationOptions {
        rate_rows: Some(38.min(6 * par.decision_instants().len())),
        ..Default::default()
    };
    MpcFormulation::new(
        model.clone(),
        par,
        benchmark_weights(model),
        benchmark_bounds(),
        op.clone(),
        options,
    )
}

/// Penalty weight of the benchmark controller. Large enough that the ODE
/// solver's soft relaxation stays close to the exact QP once it has enough
/// iterations.
pub const BENCHMARK_PENALTY: f64 = 1e7;

/// Controller used by the shipped experiments: holds the last measured load,
/// quadratic penalty with weight [`BENCHMARK_PENALTY`].
pub fn benchmark_controller(form: MpcFormulation, solver: SolverKind) -> ControllerConfig {
    let mut c = ControllerConfig::new(form, solver);
    c.ode.penalty = PenaltyConfig::new(BENCHMARK_PENALTY, 2.0).expect("valid penalty");
    c
}

/// Index of the segment used by the compute-power sweep.
pub const POWER_SEGMENT: usize = 1;

const HOUR: f64 = 3600.0;

fn from_steps(label: &str, base: f64, steps: &[(f64, f64)]) -> Scenario {
    let mut times = vec![0.0];
    let mut loads = vec![base];
    for &(t, v) in steps {
        if t == 0.0 {
            loads[0] = v;
        } else {
            times.push(t);
            loads.push(v);
        }
    }
    Scenario::new(label, HOUR, times, loads).expect("hand-written scenario is valid")
}

/// Six one-hour heat-load segments.
pub fn scenario_segments(base: f64, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ripple: Vec<(f64, f64)> = (1..12).map(|k| (300.0 * k as f64, base + rng.random_range(-2.0..2.0))).collect();
    let quiet = from_steps("quiet", base, &ripple);
    let step = from_steps("step", base, &[(600.0, base + 40.0), (2400.0, base)]);
    let pulses: Vec<(f64, f64)> = (0..12)
        .flat_map(|k| {
            let t = 150.0 + 280.0 * k as f64;
            [(t, base + 30.0), (t + 60.0, base)]
        })
        .collect();
    let pulses = from_steps("pulses", base, &pulses);
    let stairs: Vec<(f64, f64)> = (1..24).map(|k| (150.0 * k as f64, base + 3.0 * (k % 8) as f64)).collect();
    let stairs = from_steps("stairs", base, &stairs);
    let mut t = 0.0;
    let mut random_steps = Vec::new();
    while t < HOUR - 200.0 {
        t += rng.random_range(120.0..480.0);
        if t >= HOUR {
            break;
        }
        random_steps.push(((t / 5.0).round() * 5.0, base + rng.random_range(-25.0..45.0)));
    }
    random_steps.dedup_by(|a, b| a.0 == b.0);
    let random = from_steps("random", base, &random_steps);
    let mixed = from_steps(
        "mixed",
        base,
        &[
            (300.0, base + 50.0),
            (420.0, base),
            (1200.0, base + 20.0),
            (1260.0, base + 45.0),
            (1320.0, base + 20.0),
            (2100.0, base - 20.0),
            (2900.0, base + 35.0),
            (2960.0, base),
        ],
    );
    vec![quiet, step, pulses, stairs, random, mixed]
}

/// One hour with a load step at 600 s.
pub fn transient_scenario(base: f64) -> Scenario {
    from_steps("transient", base, &[(600.0, base + 40.0)])
}

/// The six segments laid end to end.
pub fn concatenate(label: &str, segments: &[Scenario]) -> Result<Scenario> {
    let mut times = Vec::new();
    let mut loads = Vec::new();
    let mut offset = 0.0;
    for s in segments {
        for (t, v) in s.times.iter().zip(&s.heat_load) {
            let at = offset + t;
            if loads.last() != Some(v) {
                times.push(at);
                loads.push(*v);
            }
        }
        offset += s.duration;
    }
    Scenario::new(label, offset, times, loads)
}
