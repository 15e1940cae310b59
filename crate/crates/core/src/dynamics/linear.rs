//! Planar vehicle: double integrator in x and y with additive Gaussian
//! process noise and hard clamps on position and velocity.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

pub const POS_LIMIT: f64 = 1000.0;
pub const VEL_LIMIT: f64 = 10.0;
pub const CONTROL_LIMIT: f64 = 3.0;

/// State order is `[px, py, vx, vy]` throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl LinearState {
    pub fn origin() -> Self {
        LinearState { px: 0.0, py: 0.0, vx: 0.0, vy: 0.0 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.px, self.py, self.vx, self.vy]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    /// Slot length in seconds.
    pub dt: f64,
    /// Variance of the per-slot Gaussian noise on every state entry.
    pub noise_var: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { dt: 0.1, noise_var: 0.2 }
    }
}

/// Acceleration command, each axis uniform on `[-3, 3]`.
pub fn sample_control(rng: &mut impl Rng) -> [f64; 2] {
    [
        rng.gen_range(-CONTROL_LIMIT..=CONTROL_LIMIT),
        rng.gen_range(-CONTROL_LIMIT..=CONTROL_LIMIT),
    ]
}

/// One slot of the double integrator: positions pick up `v dt + u dt^2 / 2`,
/// velocities pick up `u dt`, then Gaussian noise is added to every entry and
/// the clamps are applied (noise first, clamp second, so the stored state
/// always respects the limits).
pub fn step(
    state: &LinearState,
    control: [f64; 2],
    params: &LinearParams,
    rng: &mut impl Rng,
) -> Result<LinearState> {
    if !state.is_finite() || !control.iter().all(|u| u.is_finite()) {
        return Err(Error::NonFinite("linear step input".into()));
    }
    let dt = params.dt;
    let half = 0.5 * dt * dt;
    let noise = Normal::new(0.0, params.noise_var.sqrt())
        .map_err(|e| Error::InvalidConfig(format!("linear noise: {e}")))?;
    let mut px = state.px + state.vx * dt + control[0] * half + noise.sample(rng);
    let mut py = state.py + state.vy * dt + control[1] * half + noise.sample(rng);
    let mut vx = state.vx + control[0] * dt + noise.sample(rng);
    let mut vy = state.vy + control[1] * dt + noise.sample(rng);
    px = px.clamp(-POS_LIMIT, POS_LIMIT);
    py = py.clamp(-POS_LIMIT, POS_LIMIT);
    vx = vx.clamp(-VEL_LIMIT, VEL_LIMIT);
    vy = vy.clamp(-VEL_LIMIT, VEL_LIMIT);
    Ok(LinearState { px, py, vx, vy })
}

/// Full sensor reading for slot `t`: state followed by the control in effect,
/// `[px, py, vx, vy, ux, uy]`.
pub fn measure(state: &LinearState, control: [f64; 2]) -> Vec<f64> {
    vec![state.px, state.py, state.vx, state.vy, control[0], control[1]]
}
