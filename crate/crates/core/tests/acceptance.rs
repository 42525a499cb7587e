//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, dvector, DVector};

use rtmpc::active_set::{self, SolveStatus};
use rtmpc::adapt::{update_q, AdaptationConfig, AdaptationInputs};
use rtmpc::bench::{benchmark_controller, benchmark_formulation, benchmark_plant, scenario_segments, transient_scenario, PlantSpec};
use rtmpc::metrics::{period_summary, reference_run, sweep_period, sweep_power, CostBreakdown};
use rtmpc::mpc::{file, LtiModel, OperatingPoint};
use rtmpc::ode::{self, OdeSolverConfig};
use rtmpc::qp::{kkt_report, PenaltyConfig, QpProblem};
use rtmpc::sim::{
    iterations_allowed, mismatch_ratio, run_closed_loop, ComputeBudget, ForecastMode, PlantSim, Scenario, Schedule,
    SolverKind,
};

const SEGMENTS: [&str; 6] = ["quiet", "step", "pulses", "stairs", "random", "mixed"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// The shipped plant, checked against the seeded generator.
fn shipped_plant() -> (LtiModel, OperatingPoint) {
    let shipped = file::read(&data("benchmark_plant.txt")).expect("shipped model file");
    assert_eq!(shipped, benchmark_plant(&PlantSpec::default()).unwrap(), "shipped model differs from generator");
    shipped
}

fn shipped_scenario(label: &str) -> Scenario {
    let s = Scenario::read_csv(&data(&format!("scenario_{label}.csv")), label).expect("shipped scenario");
    let spec = PlantSpec::default();
    let generated = if label == "transient" {
        transient_scenario(spec.baseline_load)
    } else {
        scenario_segments(spec.baseline_load, spec.seed)
            .into_iter()
            .find(|g| g.label == label)
            .unwrap()
    };
    assert_eq!(s, generated, "shipped scenario {label} differs from generator");
    s
}

fn timed(limit: Duration, o: Outcome, t0: Instant) -> Outcome {
    let el = t0.elapsed();
    outcome(o.pass && el < limit, format!("{} [{:.1} s, limit {} s]", o.detail, el.as_secs_f64(), limit.as_secs()))
}

fn ac1() -> Outcome {
    let t0 = Instant::now();
    let cfg = AdaptationConfig::new(20, 2).unwrap();
    let a = update_q(
        &AdaptationInputs {
            q: 4,
            j_k: 10.0,
            j_k_plus: 12.0,
            j_hat_next: 6.0,
            j_next: 6.6,
            j_last: 6.0,
            j_prev_last: 6.5,
            j_first: 12.0,
        },
        &cfg,
    )
    .unwrap();
    // hand substitution: E = 6/12, D = 6.6·12/(6·10), ΔD/Δq = (D − 1)/4,
    // ΔE/Δq = (6 − 6.5)/12, ΔK/Δq = E·ΔD/Δq + D·ΔE/Δq
    let (e, d) = (0.5, 1.32);
    let dk = e * 0.08 + d * (-0.5 / 12.0);
    let l = (e * d as f64).ln();
    let dtr = (-l + 4.0 / (e * d) * dk) / (l * l);
    let first = (a.e_r - e).abs() < 1e-15
        && (a.d_r - d).abs() < 1e-14
        && (a.dk_dq - dk).abs() < 1e-14
        && (a.dtr_dq - dtr).abs() < 1e-12
        && (a.dtr_dq - 1.880).abs() < 1e-3
        && a.q_next == 2;
    let b = update_q(
        &AdaptationInputs {
            q: 2,
            j_k: 10.0,
            j_k_plus: 20.0,
            j_hat_next: 15.0,
            j_next: 16.0,
            j_last: 15.0,
            j_prev_last: 16.0,
            j_first: 20.0,
        },
        &cfg,
    )
    .unwrap();
    let d2 = 16.0 * 20.0 / (15.0 * 10.0);
    let g2 = 0.75 * (d2 - 1.0) / 2.0 + d2 * (-1.0 / 20.0);
    let second = (b.k_r - 1.6).abs() < 1e-14 && (b.gamma - g2).abs() < 1e-14 && b.dtr_dq.is_nan() && b.q_next == 2;

    let mut rng = common::rng(11);
    let mut bad = 0;
    for _ in 0..10_000 {
        use rand::Rng;
        let q_max = rng.random_range(2..40);
        let delta = rng.random_range(1..=q_max);
        let cfg = AdaptationConfig::new(q_max, delta).unwrap();
        let mut v = [0.0; 7];
        v.iter_mut().for_each(|x| *x = 10f64.powf(rng.random_range(-3.0..3.0)));
        let inp = AdaptationInputs {
            q: rng.random_range(2..=q_max),
            j_k: v[0],
            j_k_plus: v[1],
            j_hat_next: v[2],
            j_next: v[3],
            j_last: v[4],
            j_prev_last: v[5],
            j_first: v[6],
        };
        let r = update_q(&inp, &cfg).unwrap();
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = AdaptationInputs {
            j_k: inp.j_k * s,
            j_k_plus: inp.j_k_plus * s,
            j_hat_next: inp.j_hat_next * s,
            j_next: inp.j_next * s,
            j_last: inp.j_last * s,
            j_prev_last: inp.j_prev_last * s,
            j_first: inp.j_first * s,
            ..inp
        };
        let rs = update_q(&scaled, &cfg).unwrap();
        // the unclamped move is exactly 0 or ±δ
        let raw = (inp.q as i64 - r.q_next as i64).unsigned_abs() as usize;
        let step_ok = raw == 0 || raw == delta || r.q_next == 2 || r.q_next == q_max;
        let tie = r.gamma.abs() < 1e-9 * (1.0 + r.gamma.abs());
        if !(2..=q_max).contains(&r.q_next) || !step_ok || (!tie && rs.q_next != r.q_next) {
            bad += 1;
        }
    }
    timed(
        Duration::from_secs(1),
        outcome(first && second && bad == 0, format!("worked examples {first}/{second}, {bad} of 10000 random checks failed")),
        t0,
    )
}

fn ac2() -> Outcome {
    use rand::Rng;
    let t0 = Instant::now();
    let mut rng = common::rng(2);
    let mut violations = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=60);
        let m = rng.random_range(0..=120);
        let prob = common::random_convex_qp(&mut rng, n, m);
        let z0 = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let st = ode::run(&prob, &OdeSolverConfig::default(), &z0, 50).unwrap();
        violations += st.cost_trace.windows(2).filter(|w| w[1] > w[0]).count();
    }
    timed(Duration::from_secs(30), outcome(violations == 0, format!("{violations} cost increases over 200 QPs x 50 iterations")), t0)
}

fn ac3() -> Outcome {
    use rand::Rng;
    let t0 = Instant::now();
    let mut rng = common::rng(3);
    let (mut worst_err, mut worst_kkt, mut not_optimal) = (0.0f64, 0.0f64, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(0..=6);
        let prob = common::random_feasible_qp(&mut rng, n, m);
        let res = active_set::solve(&prob, None, &DVector::zeros(n), 500).unwrap();
        if res.status != SolveStatus::Optimal {
            not_optimal += 1;
            continue;
        }
        let (z, _) = common::brute_force_optimum(&prob);
        worst_err = worst_err.max((&res.iterate - z).amax());
        worst_kkt = worst_kkt.max(kkt_report(&prob, &res.iterate, &res.multipliers).unwrap().max_residual());
    }
    // (z − 2)² with z ≤ 1 at α = 100
    let prob = QpProblem::new(dmatrix![1.0], dvector![-4.0], dmatrix![1.0], dvector![1.0], dvector![f64::NEG_INFINITY], dvector![f64::INFINITY])
        .unwrap()
        .with_constant(4.0);
    let cfg = OdeSolverConfig {
        penalty: PenaltyConfig::new(100.0, 2.0).unwrap(),
        ..Default::default()
    };
    let st = ode::run(&prob, &cfg, &dvector![0.0], 200).unwrap();
    let ode_err = (st.iterate[0] - 102.0 / 101.0).abs();
    let pass = not_optimal == 0 && worst_err <= 1e-6 && worst_kkt <= 1e-8 && ode_err <= 1e-6;
    timed(
        Duration::from_secs(60),
        outcome(
            pass,
            format!("max |z - z_enum| {worst_err:.1e}, max KKT {worst_kkt:.1e}, {not_optimal} not optimal, ODE |z - 102/101| {ode_err:.1e}"),
        ),
        t0,
    )
}

fn ac4() -> Outcome {
    let b = ComputeBudget::default();
    let a = iterations_allowed(&b, SolverKind::ActiveSet, 5.0).unwrap();
    let o = iterations_allowed(&b, SolverKind::Ode, 5.0).unwrap();
    outcome(a == 10 && o == 20, format!("active-set {a}, ODE {o}"))
}

fn ac5() -> Outcome {
    let (model, op) = shipped_plant();
    let form = benchmark_formulation(&model, &op, 100).unwrap();
    let (nz, no, nr) = (form.hessian().nrows(), form.n_output_rows(), form.n_rate_rows());
    outcome(nz == 49 && no == 56 && nr == 38, format!("{nz} variables, {no} output rows, {nr} rate rows"))
}

fn ac6() -> Outcome {
    let t0 = Instant::now();
    let (model, op) = shipped_plant();
    let ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100).unwrap(), SolverKind::Ode);
    let scenario = shipped_scenario("step");
    let axis = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let r = sweep_power(&PlantSim::new(model), &ctrl, &scenario, &ComputeBudget::default(), &axis).unwrap();
    let bf = |mode: &str, p: f64| r.row("step", mode, p).unwrap().breakdown.closed_loop_total;
    let (o1, a1, o8, a8) = (bf("ode", 1.0), bf("active_set", 1.0), bf("ode", 8.0), bf("active_set", 8.0));
    let pass = o1 <= a1 && a8 < o8 && r.crossover.is_some();
    timed(
        Duration::from_secs(600),
        outcome(
            pass,
            format!("P=1: ODE {o1:.4e} vs active-set {a1:.4e}; P=8: ODE {o8:.4e} vs active-set {a8:.4e}; crossover {:?}", r.crossover),
        ),
        t0,
    )
}

fn ac7() -> Outcome {
    let t0 = Instant::now();
    let (model, op) = shipped_plant();
    let ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100).unwrap(), SolverKind::Ode);
    let segments: Vec<Scenario> = SEGMENTS.iter().map(|s| shipped_scenario(s)).collect();
    let r = sweep_period(
        &PlantSim::new(model),
        &ctrl,
        &segments,
        &ComputeBudget::default(),
        &[4, 8, 12, 16, 20],
        &AdaptationConfig::new(20, 2).unwrap(),
        10,
    )
    .unwrap();
    let summary = period_summary(&r);
    let mut argmins: Vec<u64> = summary.values().map(|v| v.0 as u64).collect();
    argmins.sort();
    argmins.dedup();
    let worst = summary.values().map(|v| v.2 / v.1).fold(0.0, f64::max);
    let per: Vec<String> = summary
        .iter()
        .map(|(s, v)| format!("{s} q*={} ratio {:.3}", v.0, v.2 / v.1))
        .collect();
    timed(
        Duration::from_secs(600),
        outcome(
            argmins.len() >= 2 && worst <= 1.15,
            format!("{} distinct argmin q, worst adaptive/best {worst:.3} (bound 1.15); {}", argmins.len(), per.join(", ")),
        ),
        t0,
    )
}

fn ac8() -> Outcome {
    let (model, op) = shipped_plant();
    let ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100).unwrap(), SolverKind::ActiveSet);
    let plant = PlantSim::new(model);
    let scenario = shipped_scenario("transient");
    let budget = ComputeBudget::default();
    let capped = run_closed_loop(&plant, &ctrl, &scenario, &budget, Schedule::Fixed { q: 10 }).unwrap();
    let full = reference_run(&plant, &ctrl, &scenario, &budget).unwrap();
    let (c, f) = (CostBreakdown::from_record(&capped), CostBreakdown::from_record(&full));
    outcome(
        c.c1 > f.c1 && c.closed_loop_total > f.closed_loop_total,
        format!("capped c1 {:.3e} BF {:.4e}; uncapped c1 {:.3e} BF {:.4e}", c.c1, c.closed_loop_total, f.c1, f.closed_loop_total),
    )
}

fn ac9() -> Outcome {
    let (model, op) = shipped_plant();
    let mut ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100).unwrap(), SolverKind::Ode);
    ctrl.forecast = ForecastMode::Perfect;
    let scenario = shipped_scenario("transient");
    let rec = run_closed_loop(&PlantSim::new(model), &ctrl, &scenario, &ComputeBudget::default(), Schedule::Fixed { q: 20 }).unwrap();
    let worst = (0..rec.windows.len()).map(|k| (mismatch_ratio(&rec, k) - 1.0).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-9 && rec.end_time == 3600.0,
        format!("{} windows over {} s, max |ratio - 1| = {worst:.1e}", rec.windows.len(), rec.end_time),
    )
}

fn ac10() -> Outcome {
    let (model, op) = shipped_plant();
    let form = benchmark_formulation(&model, &op, 100).unwrap();
    let mut plant = PlantSim::new(model);
    plant.noise_scale = 1e-3;
    plant.seed = 5;
    let budget = ComputeBudget::default();
    let mut same = true;
    let runs = [
        (SolverKind::Ode, "mixed", Schedule::Adaptive { q0: 10, cfg: AdaptationConfig::default() }),
        (SolverKind::ActiveSet, "transient", Schedule::Fixed { q: 10 }),
    ];
    for (kind, seg, schedule) in runs {
        let ctrl = benchmark_controller(form.clone(), kind);
        let scenario = shipped_scenario(seg);
        let csv = || {
            let mut buf = Vec::new();
            run_closed_loop(&plant, &ctrl, &scenario, &budget, schedule).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        same &= csv() == csv();
    }
    let ctrl = benchmark_controller(form, SolverKind::Ode);
    let short = shipped_scenario("step").slice("step_short", 500.0, 900.0).unwrap();
    let sweep = || {
        let mut buf = Vec::new();
        sweep_power(&plant, &ctrl, &short, &budget, &[0.5, 1.0, 2.0]).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    same &= sweep() == sweep();
    outcome(same, "two closed-loop runs (with seeded plant noise) and one power sweep, each repeated")
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("AC1 adaptation arithmetic", ac1),
        ("AC2 ODE monotonicity", ac2),
        ("AC3 solver correctness", ac3),
        ("AC4 budget counts", ac4),
        ("AC5 problem dimensions", ac5),
        ("AC6 solver vs computing power", ac6),
        ("AC7 fixed vs adaptive period", ac7),
        ("AC8 iteration-cap degradation", ac8),
        ("AC9 perfect-model identity", ac9),
        ("AC10 determinism", ac10),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
