//! Cartpole: a pole balancing on a cart that is shoved left or right with a
//! fixed-magnitude force each slot. No process noise; all randomness comes
//! from the force direction.

use rand::Rng;

use crate::{Error, Result};

pub const CART_VEL_LIMIT: f64 = 10.0;

/// State order is `[x, x_dot, theta, theta_dot]`; `theta` is measured from
/// the upright position and is not wrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartpoleState {
    pub fn upright() -> Self {
        CartpoleState { x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CartpoleParams {
    /// Slot length in seconds.
    pub dt: f64,
    pub gravity: f64,
    pub m_cart: f64,
    pub m_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    /// Magnitude of the bang-bang force.
    pub force_mag: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            dt: 0.01,
            gravity: 9.8,
            m_cart: 5.0,
            m_pole: 1.0,
            half_length: 1.0,
            force_mag: 10.0,
        }
    }
}

impl CartpoleParams {
    fn check(&self) -> Result<()> {
        if self.m_cart + self.m_pole <= 0.0 || self.half_length <= 0.0 {
            return Err(Error::InvalidConfig("cartpole masses/length must be positive".into()));
        }
        Ok(())
    }
}

/// Angular and cart accelerations for the given pose and applied force.
pub fn accels(theta: f64, theta_dot: f64, force: f64, p: &CartpoleParams) -> Result<(f64, f64)> {
    p.check()?;
    if !(theta.is_finite() && theta_dot.is_finite() && force.is_finite()) {
        return Err(Error::NonFinite("cartpole accels input".into()));
    }
    let total_mass = p.m_cart + p.m_pole;
    let (sin_t, cos_t) = theta.sin_cos();
    let temp = (-force - p.m_pole * p.half_length * theta_dot * theta_dot * sin_t) / total_mass;
    let denom = p.half_length * (4.0 / 3.0 - p.m_pole * cos_t * cos_t / total_mass);
    if denom == 0.0 {
        return Err(Error::InvalidConfig("cartpole: degenerate mass ratio".into()));
    }
    let theta_dd = (p.gravity * sin_t + cos_t * temp) / denom;
    let x_dd = (force + p.m_pole * p.half_length * (theta_dot * theta_dot * sin_t - theta_dd * cos_t))
        / total_mass;
    Ok((theta_dd, x_dd))
}

/// One slot with semi-implicit Euler: velocities first (cart velocity
/// clamped), then positions from the updated velocities.
pub fn step(state: &CartpoleState, force: f64, p: &CartpoleParams) -> Result<CartpoleState> {
    if !state.is_finite() {
        return Err(Error::NonFinite("cartpole step input".into()));
    }
    let (theta_dd, x_dd) = accels(state.theta, state.theta_dot, force, p)?;
    let theta_dot = state.theta_dot + theta_dd * p.dt;
    let x_dot = (state.x_dot + x_dd * p.dt).clamp(-CART_VEL_LIMIT, CART_VEL_LIMIT);
    let theta = state.theta + theta_dot * p.dt;
    let x = state.x + x_dot * p.dt;
    Ok(CartpoleState { x, x_dot, theta, theta_dot })
}

/// Force for one slot: `+force_mag` or `-force_mag` with equal probability.
pub fn sample_force(rng: &mut impl Rng, p: &CartpoleParams) -> f64 {
    if rng.gen::<bool>() {
        p.force_mag
    } else {
        -p.force_mag
    }
}

/// Sensor reading `[theta, theta_dot, x_dot, force]`; the cart position is
/// not observed.
pub fn measure(state: &CartpoleState, force: f64) -> Vec<f64> {
    vec![state.theta, state.theta_dot, state.x_dot, force]
}
