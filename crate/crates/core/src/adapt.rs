//! Updating-period adaptation from observed cost ratios.
//!
//! Per window the controller observes the solver's contraction `E = Ĵ/J⁺`
//! and the degradation caused by disturbances and shifting
//! `D = (J_{k+1}·J⁺)/(Ĵ·J_k)`, and moves the iteration count `q` by `δ`
//! in the direction that lowers the predicted response time.

use crate::error::{Error, Result};

/// The eight scalars consumed by one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationInputs {
    pub q: usize,
    /// Cost delivered at the start of the window.
    pub j_k: f64,
    /// Cost of the hot start at the predicted state.
    pub j_k_plus: f64,
    /// Cost of the delivered iterate at the predicted state.
    pub j_hat_next: f64,
    /// Cost of the delivered iterate at the true state.
    pub j_next: f64,
    pub j_last: f64,
    pub j_prev_last: f64,
    pub j_first: f64,
}

impl AdaptationInputs {
    fn validate(&self) -> Result<()> {
        let values = [
            self.j_k,
            self.j_k_plus,
            self.j_hat_next,
            self.j_next,
            self.j_last,
            self.j_prev_last,
            self.j_first,
        ];
        if let Some(&v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveCost(v));
        }
        if self.q == 0 {
            return Err(Error::InvalidConfig("q must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationConfig {
    pub q_max: usize,
    pub delta: usize,
    /// Half-width of the band around `K = 1` where the response-time slope
    /// is replaced by `ΔK/Δq`.
    pub k_r_guard: f64,
}

impl AdaptationConfig {
    pub fn new(q_max: usize, delta: usize) -> Result<Self> {
        let cfg = Self {
            q_max,
            delta,
            k_r_guard: 1e-9,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_max < 2 {
            return Err(Error::InvalidConfig(format!("q_max must be >= 2, got {}", self.q_max)));
        }
        if self.delta == 0 || self.delta > self.q_max {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in 1..={}, got {}",
                self.q_max, self.delta
            )));
        }
        if !(self.k_r_guard >= 0.0) {
            return Err(Error::InvalidConfig("k_r_guard must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            q_max: 20,
            delta: 2,
            k_r_guard: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationDiagnostics {
    pub e_r: f64,
    pub d_r: f64,
    pub k_r: f64,
    pub dd_dq: f64,
    pub de_dq: f64,
    pub dk_dq: f64,
    /// `NaN` when `K ≥ 1` (not needed) or inside the guard band.
    pub dtr_dq: f64,
    pub gamma: f64,
    pub q_next: usize,
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

pub fn update_q(inp: &AdaptationInputs, cfg: &AdaptationConfig) -> Result<AdaptationDiagnostics> {
    inp.validate()?;
    cfg.validate()?;
    let q = inp.q as f64;
    let e_r = inp.j_hat_next / inp.j_k_plus;
    let d_r = (inp.j_next * inp.j_k_plus) / (inp.j_hat_next * inp.j_k);
    let k_r = e_r * d_r;
    let dd_dq = (d_r - 1.0) / q;
    let de_dq = (inp.j_last - inp.j_prev_last) / inp.j_first;
    let dk_dq = e_r * dd_dq + d_r * de_dq;

    let (dtr_dq, gamma) = if k_r >= 1.0 {
        (f64::NAN, dk_dq)
    } else {
        let log_k = k_r.ln();
        if log_k.abs() < cfg.k_r_guard {
            (f64::NAN, dk_dq)
        } else {
            let dtr = (-log_k + (q / k_r) * dk_dq) / (log_k * log_k);
            (dtr, dtr)
        }
    };

    let stepped = inp.q as i64 - cfg.delta as i64 * sign(gamma);
    let q_next = stepped.clamp(2, cfg.q_max as i64) as usize;
    Ok(AdaptationDiagnostics {
        e_r,
        d_r,
        k_r,
        dd_dq,
        de_dq,
        dk_dq,
        dtr_dq,
        gamma,
        q_next,
    })
}

/// Extracts the solver-side inputs from a cost trace of `q + 1` entries
/// (initial point, then one per iteration).
pub fn collect_inputs(trace: &[f64], j_k: f64, j_next: f64, q: usize) -> Result<AdaptationInputs> {
    if q == 0 {
        return Err(Error::InvalidConfig("q must be positive".into()));
    }
    if trace.len() < q + 1 {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            needed: q + 1,
        });
    }
    Ok(AdaptationInputs {
        q,
        j_k,
        j_k_plus: trace[0],
        j_hat_next: trace[q],
        j_next,
        j_last: trace[q],
        j_prev_last: trace[q - 1],
        j_first: trace[0],
    })
}
