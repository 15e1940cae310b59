//! Discrete-time plant models sampled once per slot.
//!
//! Both systems follow the same convention: the measurement taken in slot `t`
//! captures the state *before* the transition, together with the control (or
//! force) applied during that slot.

pub mod cartpole;
pub mod linear;

pub use cartpole::{CartpoleParams, CartpoleState, CART_VEL_LIMIT};
pub use linear::{LinearParams, LinearState};
