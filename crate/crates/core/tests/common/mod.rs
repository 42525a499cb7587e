//! Random problem generators and independent oracles shared by the test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtmpc::qp::QpProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Convex QP with a possibly singular Hessian, random rows (not necessarily
/// jointly feasible) and a box that is finite on roughly half the variables.
pub fn random_convex_qp(rng: &mut ChaCha8Rng, n_z: usize, n_c: usize) -> QpProblem {
    let rank = rng.random_range(1..=n_z);
    let m = uniform(rng, rank, n_z);
    let hessian = m.transpose() * &m / n_z as f64;
    let affine = DVector::from_fn(n_z, |_, _| rng.random_range(-2.0..2.0));
    let gamma = uniform(rng, n_c, n_z);
    let bound = DVector::from_fn(n_c, |_, _| rng.random_range(-0.5..2.0));
    let mut lo = DVector::from_element(n_z, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(n_z, f64::INFINITY);
    for i in 0..n_z {
        if rng.random_bool(0.5) {
            lo[i] = rng.random_range(-3.0..0.0);
            hi[i] = lo[i] + rng.random_range(0.5..4.0);
        }
    }
    QpProblem::new(hessian, affine, gamma, bound, lo, hi).unwrap()
}

/// Strictly convex QP whose rows and box all contain a known point.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, n_z: usize, n_c: usize) -> QpProblem {
    let m = uniform(rng, n_z, n_z);
    let hessian = m.transpose() * &m + DMatrix::identity(n_z, n_z) * 0.1;
    let affine = DVector::from_fn(n_z, |_, _| rng.random_range(-3.0..3.0));
    let gamma = uniform(rng, n_c, n_z);
    let z_f = DVector::from_fn(n_z, |_, _| rng.random_range(-0.5..0.5));
    let bound = &gamma * &z_f + DVector::from_fn(n_c, |_, _| rng.random_range(0.0..0.5));
    let mut lo = DVector::from_element(n_z, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(n_z, f64::INFINITY);
    for i in 0..n_z {
        if rng.random_bool(0.6) {
            lo[i] = z_f[i] - rng.random_range(0.0..1.0);
        }
        if rng.random_bool(0.6) {
            hi[i] = z_f[i] + rng.random_range(0.0..1.0);
        }
    }
    QpProblem::new(hessian, affine, gamma, bound, lo, hi).unwrap()
}

/// Exhaustive active-set enumeration: solves the equality-constrained KKT
/// system for every subset of the finite constraints and keeps the feasible
/// stationary point of least objective. Only for tiny problems.
pub fn brute_force_optimum(prob: &QpProblem) -> (DVector<f64>, f64) {
    let n = prob.n_z();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for j in 0..prob.n_c() {
        rows.push((prob.ineq_matrix().row(j).transpose(), prob.ineq_bound()[j]));
    }
    for i in 0..n {
        let mut e = DVector::zeros(n);
        if prob.lower()[i].is_finite() {
            e[i] = -1.0;
            rows.push((e.clone(), -prob.lower()[i]));
        }
        if prob.upper()[i].is_finite() {
            e[i] = 1.0;
            rows.push((e, prob.upper()[i]));
        }
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << rows.len()) {
        let set: Vec<usize> = (0..rows.len()).filter(|k| mask >> k & 1 == 1).collect();
        if set.len() > n {
            continue;
        }
        let dim = n + set.len();
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(prob.hessian() * 2.0));
        rhs.rows_mut(0, n).copy_from(&(-prob.affine()));
        for (r, &k) in set.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = rows[k].0[c];
                kkt[(c, n + r)] = rows[k].0[c];
            }
            rhs[n + r] = rows[k].1;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        if rows.iter().any(|(a, b)| a.dot(&z) > b + 1e-9) {
            continue;
        }
        let f = prob.objective(&z).unwrap();
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z, f));
        }
    }
    best.expect("feasible problem has a stationary vertex")
}
