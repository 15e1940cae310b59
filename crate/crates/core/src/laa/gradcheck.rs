//! Central-difference verification of the analytic gradients through the
//! whole stack (LSTM window, ReLU layer, linear head).
//!
//! Inputs are redrawn whenever a ReLU pre-activation sits within 1e-3 of
//! zero: a finite-difference step of 1e-5 can move a pre-activation by at
//! most a few times 1e-5, so that margin keeps every probe on one side of
//! the kink and the quotient valid.

use rand::Rng;

use super::{LaaGrads, LaaParams, StackScratch};
use crate::rng::substream;
use crate::sim::SystemKind;

const FD_STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;
/// Entries whose analytic and numeric values both sit below the
/// finite-difference noise floor are compared absolutely against it.
const DENOM_FLOOR: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub configs: usize,
    pub checked_params: usize,
    pub max_rel_err: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_rel_err < REL_TOL
    }
}

fn loss(params: &LaaParams, window: &[Vec<f64>], target: &[f64], scratch: &mut StackScratch) -> f64 {
    params.window_forward(window.iter().map(|v| v.as_slice()), scratch);
    scratch.yhat.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Check every parameter of `n_configs` freshly initialized stacks, cycling
/// through both system shapes and window lengths 2 and 3.
pub fn gradcheck_stack(n_configs: usize, seed: u64) -> GradCheckReport {
    let mut report =
        GradCheckReport { configs: n_configs, checked_params: 0, max_rel_err: 0.0, failures: 0 };
    for cfg_i in 0..n_configs {
        let system =
            if cfg_i % 2 == 0 { SystemKind::Linear } else { SystemKind::Cartpole };
        let window_len = 2 + (cfg_i / 2) % 2;
        let n_x = super::input_dim(system, true);
        let n_o = system.est_dim();
        let mut params = LaaParams::init(n_x, n_o, substream(seed, "gc-params", cfg_i as u64).gen());
        let mut scratch = StackScratch::new(&params);
        let mut grads = LaaGrads::zeros_like(&params);
        let mut draw_rng = substream(seed, "gc-data", cfg_i as u64);

        let mut attempts = 0;
        let (window, target) = loop {
            let window: Vec<Vec<f64>> = (0..window_len)
                .map(|_| (0..n_x).map(|_| draw_rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let target: Vec<f64> = (0..n_o).map(|_| draw_rng.gen_range(-1.0..1.0)).collect();
            let _ = loss(&params, &window, &target, &mut scratch);
            if scratch.fc1_tape.pre.iter().all(|p| p.abs() > KINK_MARGIN) {
                break (window, target);
            }
            attempts += 1;
            assert!(attempts < 200, "could not draw inputs clear of every ReLU kink");
        };

        let _ = loss(&params, &window, &target, &mut scratch);
        let dy: Vec<f64> =
            scratch.yhat.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        grads.fill_zero();
        params.window_backward(&dy, &mut scratch, &mut grads);
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

        for ti in 0..analytic.len() {
            for k in 0..analytic[ti].len() {
                let orig = params.tensors_mut()[ti][k];
                params.tensors_mut()[ti][k] = orig + FD_STEP;
                let lp = loss(&params, &window, &target, &mut scratch);
                params.tensors_mut()[ti][k] = orig - FD_STEP;
                let lm = loss(&params, &window, &target, &mut scratch);
                params.tensors_mut()[ti][k] = orig;
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                let a = analytic[ti][k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
                report.checked_params += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                }
                if rel >= REL_TOL {
                    report.failures += 1;
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let report = gradcheck_stack(4, 2024);
        assert!(
            report.passed(),
            "max rel err {:.3e}, {} failures of {}",
            report.max_rel_err,
            report.failures,
            report.checked_params
        );
        // Both stack shapes, all eight tensors, every entry.
        let linear_params = 4 * (12 * 64 + 64 * 64 + 2 * 64) + 64 * 64 + 64 + 4 * 64 + 4;
        let cartpole_params = 4 * (9 * 64 + 64 * 64 + 2 * 64) + 64 * 64 + 64 + 3 * 64 + 3;
        assert_eq!(report.checked_params, 2 * (linear_params + cartpole_params));
    }
}
