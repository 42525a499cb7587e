//! One step of the updating-period rule in each of its branches.

use rtmpc::adapt::{update_q, AdaptationConfig, AdaptationInputs};

fn main() -> rtmpc::Result<()> {
    let cfg = AdaptationConfig::new(20, 2)?;
    let cases = [
        AdaptationInputs {
            q: 4,
            j_k: 10.0,
            j_k_plus: 12.0,
            j_hat_next: 6.0,
            j_next: 6.6,
            j_last: 6.0,
            j_prev_last: 6.5,
            j_first: 12.0,
        },
        AdaptationInputs {
            q: 2,
            j_k: 10.0,
            j_k_plus: 20.0,
            j_hat_next: 15.0,
            j_next: 16.0,
            j_last: 15.0,
            j_prev_last: 16.0,
            j_first: 20.0,
        },
        // fast in-window progress and no degradation: q grows
        AdaptationInputs {
            q: 8,
            j_k: 10.0,
            j_k_plus: 10.0,
            j_hat_next: 5.0,
            j_next: 5.0,
            j_last: 5.0,
            j_prev_last: 6.0,
            j_first: 10.0,
        },
    ];
    for inp in &cases {
        let d = update_q(inp, &cfg)?;
        println!(
            "q = {:2}: E = {:.3} D = {:.3} K = {:.3} gamma = {:+.4} -> q = {}",
            inp.q, d.e_r, d.d_r, d.k_r, d.gamma, d.q_next
        );
    }
    Ok(())
}
