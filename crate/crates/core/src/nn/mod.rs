//! Dense kernels for the estimator: one LSTM cell, two fully connected
//! layers, exact backpropagation through time, and Adam with classic L2
//! decay. Everything is hand-rolled f64 on flat arrays; the shapes involved
//! (inputs of 9 or 12, hidden width 64) are too small for a tensor library
//! to pay for itself.

pub mod adam;
pub mod fc;
pub mod lstm;
pub mod mat;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fc::{Activation, FcGrads, FcParams, FcTape};
pub use lstm::{LstmGrads, LstmParams, LstmScratch, LstmState, TapeCache, GATE_ORDER};
pub use mat::Mat;

/// Multiply-accumulate count for one estimator forward pass: the four LSTM
/// gate blocks (input weights, two bias adds, recurrent weights), the cell
/// and output elementwise work, the 64x64 hidden layer, and the readout.
pub fn op_count(n_x: u64, n_h: u64, n_o: u64) -> u64 {
    4 * (n_x * n_h + 2 * n_h + n_h * n_h) + 4 * n_h + 2 * n_h * n_h + n_h * n_o
}
