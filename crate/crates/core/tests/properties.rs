mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rtmpc::active_set;
use rtmpc::adapt::{update_q, AdaptationConfig, AdaptationInputs};
use rtmpc::bench::{benchmark_formulation, benchmark_plant, PlantSpec};
use rtmpc::ode::{self, OdeSolverConfig};
use rtmpc::qp::{augmented_cost, augmented_gradient, kkt_report, PenaltyConfig};

fn pos() -> impl Strategy<Value = f64> {
    1e-3f64..1e3
}

prop_compose! {
    fn adaptation_inputs()(q in 2usize..=20, v in prop::array::uniform7(pos())) -> AdaptationInputs {
        AdaptationInputs {
            q,
            j_k: v[0],
            j_k_plus: v[1],
            j_hat_next: v[2],
            j_next: v[3],
            j_last: v[4],
            j_prev_last: v[5],
            j_first: v[6],
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..8, m in 0usize..8) {
        let mut rng = common::rng(seed);
        let prob = common::random_convex_qp(&mut rng, n, m);
        let cfg = PenaltyConfig::new(50.0, 2.0).unwrap();
        let z = DVector::from_fn(n, |i, _| ((seed >> (i % 32)) & 7) as f64 * 0.37 - 1.3);
        let g = augmented_gradient(&prob, &cfg, &z).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (augmented_cost(&prob, &cfg, &zp, 0.0).unwrap() - augmented_cost(&prob, &cfg, &zm, 0.0).unwrap()) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() <= 1e-4 * (1.0 + fd.abs()), "component {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn augmented_cost_is_midpoint_convex(seed in any::<u64>(), n in 1usize..10, m in 0usize..12, mu in 2.0f64..4.0) {
        let mut rng = common::rng(seed);
        let prob = common::random_convex_qp(&mut rng, n, m);
        let cfg = PenaltyConfig::new(30.0, mu).unwrap();
        let a = common::random_convex_qp(&mut rng, n, 0).affine().clone();
        let b = -a.clone() * 1.5;
        let mid = (&a + &b) * 0.5;
        let f = |z: &DVector<f64>| augmented_cost(&prob, &cfg, z, 1.0).unwrap();
        prop_assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-9 * (1.0 + f(&a).abs() + f(&b).abs()));
    }

    #[test]
    fn augmented_cost_bounds_quadratic_cost(seed in any::<u64>(), n in 1usize..10, m in 0usize..12) {
        let mut rng = common::rng(seed);
        let prob = common::random_convex_qp(&mut rng, n, m);
        let cfg = PenaltyConfig::default();
        let z = common::random_convex_qp(&mut rng, n, 0).affine().clone();
        prop_assert!(augmented_cost(&prob, &cfg, &z, 1.0).unwrap() >= prob.quadratic_cost(&z).unwrap() + 1.0 - 1e-12);
    }

    #[test]
    fn ode_trace_never_rises_and_stays_in_box(seed in any::<u64>(), n in 2usize..20, m in 0usize..30) {
        let mut rng = common::rng(seed);
        let prob = common::random_convex_qp(&mut rng, n, m);
        let z0 = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin() * 3.0);
        let state = ode::run(&prob, &OdeSolverConfig::default(), &z0, 15).unwrap();
        prop_assert_eq!(state.cost_trace.len(), 16);
        for w in state.cost_trace.windows(2) {
            prop_assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
        prop_assert!(prob.in_box(&state.iterate));
    }

    #[test]
    fn ode_run_is_composable(seed in any::<u64>(), n in 2usize..8, k in 1usize..6) {
        let mut rng = common::rng(seed);
        let prob = common::random_convex_qp(&mut rng, n, 4);
        let cfg = OdeSolverConfig::default();
        let z0 = DVector::from_element(n, 0.5);
        let whole = ode::run(&prob, &cfg, &z0, k).unwrap();
        let mut state = ode::init_state(&prob, &cfg, &z0).unwrap();
        for _ in 0..k {
            state = ode::iterate_once(&prob, &cfg, state).unwrap();
        }
        prop_assert_eq!(whole, state);
    }

    #[test]
    fn active_set_matches_enumeration(seed in any::<u64>(), n in 1usize..=4, m in 0usize..=6) {
        let mut rng = common::rng(seed);
        let prob = common::random_feasible_qp(&mut rng, n, m);
        let res = active_set::solve(&prob, None, &DVector::zeros(n), 200).unwrap();
        prop_assert_eq!(res.status, active_set::SolveStatus::Optimal);
        let (z_star, _) = common::brute_force_optimum(&prob);
        prop_assert!((&res.iterate - &z_star).amax() < 1e-6, "{} vs {}", res.iterate, z_star);
        prop_assert!(kkt_report(&prob, &res.iterate, &res.multipliers).unwrap().max_residual() <= 1e-8);
    }

    #[test]
    fn active_set_warm_start_agrees(seed in any::<u64>(), n in 1usize..=6, m in 0usize..=8) {
        let mut rng = common::rng(seed);
        let prob = common::random_feasible_qp(&mut rng, n, m);
        let cold = active_set::solve(&prob, None, &DVector::zeros(n), 200).unwrap();
        let warm = active_set::solve(&prob, Some(&cold.working_set), &cold.iterate, 200).unwrap();
        prop_assert!((&cold.iterate - &warm.iterate).amax() < 1e-8);
        prop_assert!(warm.iterations_used <= 1);
    }

    #[test]
    fn capped_active_set_respects_cap(seed in any::<u64>(), cap in 1usize..4) {
        let mut rng = common::rng(seed);
        let prob = common::random_feasible_qp(&mut rng, 6, 10);
        let res = active_set::solve(&prob, None, &DVector::from_element(6, 2.0), cap).unwrap();
        prop_assert!(res.iterations_used <= cap);
        prop_assert!(prob.in_box(&res.iterate));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn update_q_stays_admissible(inp in adaptation_inputs(), delta in 1usize..5, q_max in 4usize..30) {
        let cfg = AdaptationConfig::new(q_max, delta.min(q_max)).unwrap();
        let inp = AdaptationInputs { q: inp.q.min(q_max), ..inp };
        let d = update_q(&inp, &cfg).unwrap();
        prop_assert!((2..=q_max).contains(&d.q_next));
        let step = d.q_next.abs_diff(inp.q);
        prop_assert!(step == 0 || step == cfg.delta || d.q_next == 2 || d.q_next == q_max);
    }

    #[test]
    fn update_q_is_scale_invariant(inp in adaptation_inputs(), s in 1e-3f64..1e3) {
        let cfg = AdaptationConfig::default();
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
        let a = update_q(&inp, &cfg).unwrap();
        let b = update_q(&scaled, &cfg).unwrap();
        prop_assert!((a.k_r - b.k_r).abs() <= 1e-9 * a.k_r.abs().max(1.0));
        if a.gamma.abs() > 1e-9 * (1.0 + a.gamma.abs()) {
            prop_assert_eq!(a.q_next, b.q_next);
        }
    }
}

fn benchmark() -> rtmpc::mpc::MpcFormulation {
    let (model, op) = benchmark_plant(&PlantSpec::default()).unwrap();
    benchmark_formulation(&model, &op, 100).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn condensed_linear_term_is_affine(seed in any::<u64>(), a in 0.0f64..1.0) {
        let form = benchmark();
        let mut rng = common::rng(seed);
        let n = form.model().n_states();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| common::random_convex_qp(rng, n, 0).affine().clone();
        let (x1, x2) = (draw(&mut rng), draw(&mut rng));
        let u = DVector::zeros(3);
        let w = form.hold_forecast(&DVector::from_element(1, 2.0));
        let p1 = form.problem(&x1, &u, &w).unwrap();
        let p2 = form.problem(&x2, &u, &w).unwrap();
        let pm = form.problem(&(&x1 * a + &x2 * (1.0 - a)), &u, &w).unwrap();
        let lin = p1.affine() * a + p2.affine() * (1.0 - a);
        prop_assert!((pm.affine() - lin).amax() <= 1e-8 * (1.0 + pm.affine().amax()));
        let bnd = p1.ineq_bound() * a + p2.ineq_bound() * (1.0 - a);
        prop_assert!((pm.ineq_bound() - bnd).amax() <= 1e-8 * (1.0 + pm.ineq_bound().amax()));
        // Hessian and rows do not depend on the state
        prop_assert_eq!(p1.hessian(), p2.hessian());
        prop_assert_eq!(p1.ineq_matrix(), p2.ineq_matrix());
    }

    #[test]
    fn violation_inputs_can_soften_any_output_row(seed in any::<u64>()) {
        let form = benchmark();
        let mut rng = common::rng(seed);
        let n = form.model().n_states();
        let x = common::random_convex_qp(&mut rng, n, 0).affine() * 5.0;
        let prob = form.problem(&x, &DVector::zeros(3), &form.hold_forecast(&DVector::zeros(1))).unwrap();
        let par = form.parametrization();
        let mut p = DVector::zeros(prob.n_z());
        // large enough slack on every virtual input at every instant
        for k in 0..par.decision_instants().len() {
            for v in 0..par.n_virtual() {
                p[par.param_index(k, par.n_physical() + v)] = 1e4;
            }
        }
        let r = prob.ineq_residual(&p).unwrap();
        prop_assert!(r.rows(0, form.n_output_rows()).max() <= 0.0);
    }
}

#[test]
fn hessian_of_benchmark_is_symmetric_psd() {
    let form = benchmark();
    let h: &DMatrix<f64> = form.hessian();
    assert!((h - h.transpose()).amax() <= 1e-9 * h.amax());
    let eig = h.clone().symmetric_eigen();
    assert!(eig.eigenvalues.min() >= -1e-9 * h.amax());
}
