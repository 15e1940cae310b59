//! Adam with classic L2 regularization: the decay term is added to the raw
//! gradient before the moment updates (not applied decoupled after them).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-3 }
    }
}

/// First and second moment estimates, one pair of buffers per parameter
/// tensor, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn for_shapes(lens: &[usize]) -> Self {
        AdamState {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One optimizer step over parallel lists of parameter and gradient tensors.
pub fn adam_step(cfg: &AdamConfig, st: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), st.m.len());
    st.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(st.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(st.t as i32);
    for (k, (theta, grad)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(theta.len(), grad.len());
        let (m, v) = (&mut st.m[k], &mut st.v[k]);
        for j in 0..theta.len() {
            let g = grad[j] + cfg.weight_decay * theta[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut st = AdamState::for_shapes(&[3]);
        let mut theta = vec![1.0, -2.0, 0.5];
        let grads = vec![0.0; 3];
        for _ in 0..5 {
            adam_step(&cfg, &mut st, &mut [&mut theta], &[&grads]);
        }
        assert_eq!(theta, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_against_gradient_by_about_lr() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..AdamConfig::default() };
        let mut st = AdamState::for_shapes(&[2]);
        let mut theta = vec![0.0, 0.0];
        adam_step(&cfg, &mut st, &mut [&mut theta], &[&[1.0, -4.0][..]]);
        // After bias correction, |step| = lr / (1 + eps/|g|-ish) ~ lr.
        assert!((theta[0] + 0.1).abs() < 1e-6, "{}", theta[0]);
        assert!((theta[1] - 0.1).abs() < 1e-6, "{}", theta[1]);
    }

    #[test]
    fn three_steps_match_scalar_recursion() {
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::for_shapes(&[1]);
        let mut theta = vec![0.7];
        let raw_grads = [0.3, -0.2, 0.5];

        // Independent scalar recursion, written out longhand.
        let mut x = 0.7f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, rg) in raw_grads.iter().enumerate() {
            let g = rg + 0.1 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }

        for rg in raw_grads {
            adam_step(&cfg, &mut st, &mut [&mut theta], &[&[rg][..]]);
        }
        assert!((theta[0] - x).abs() < 1e-12, "{} vs {x}", theta[0]);
    }

    #[test]
    fn decay_pulls_parameters_toward_zero() {
        let cfg = AdamConfig { lr: 0.01, weight_decay: 1.0, ..AdamConfig::default() };
        let mut st = AdamState::for_shapes(&[1]);
        let mut theta = vec![2.0];
        let grads = vec![0.0];
        for _ in 0..10 {
            adam_step(&cfg, &mut st, &mut [&mut theta], &[&grads]);
        }
        assert!(theta[0] < 2.0 && theta[0] > 0.0, "decay should shrink: {}", theta[0]);
    }
}
