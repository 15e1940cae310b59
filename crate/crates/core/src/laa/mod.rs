//! The age-aware LSTM estimator.
//!
//! Each slot the estimator consumes its own previous estimate, the freshest
//! delivered measurement, and the ages of that measurement and of the newest
//! known control, and emits an estimate of the current plant output. The
//! stack is a single LSTM cell (64 units) followed by a ReLU layer and a
//! linear head; it is trained from an experience-replay buffer with
//! truncated backpropagation through time.

mod checkpoint;
mod eval;
mod gradcheck;
mod replay;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use eval::{evaluate, LaaEstimator};
pub use gradcheck::{gradcheck_stack, GradCheckReport};
pub use replay::{Experience, ReplayMemory};
pub use train::{train, TrainConfig, TrainReport};

use rand_chacha::ChaCha8Rng;

use crate::network::noisy_age;
use crate::nn::{
    Activation, FcGrads, FcParams, FcTape, LstmGrads, LstmParams, LstmScratch, LstmState,
    TapeCache,
};
use crate::rng::substream;
use crate::sim::{AgeMode, ControlMode, SlotOutcome, SystemKind};
use crate::{Error, Result};

pub const HIDDEN: usize = 64;
const AGE_SCALE: f64 = 100.0;

pub fn input_dim(system: SystemKind, with_ages: bool) -> usize {
    system.est_dim() + system.meas_dim() + if with_ages { 2 } else { 0 }
}

/// Fixed per-feature divisors chosen from the known variable ranges, so the
/// network sees inputs of order one.
pub fn input_scaling(system: SystemKind, with_ages: bool) -> Vec<f64> {
    let mut s = Vec::with_capacity(input_dim(system, with_ages));
    match system {
        SystemKind::Linear => {
            // prev estimate [px, py, vx, vy], then measurement
            // [px, py, vx, vy, ux, uy].
            s.extend([1000.0, 1000.0, 10.0, 10.0]);
            s.extend([1000.0, 1000.0, 10.0, 10.0, 3.0, 3.0]);
        }
        SystemKind::Cartpole => {
            // prev estimate [theta, theta_dot, x_dot], then measurement
            // [theta, theta_dot, x_dot, force].
            s.extend([std::f64::consts::PI, 10.0, 10.0]);
            s.extend([std::f64::consts::PI, 10.0, 10.0, 10.0]);
        }
    }
    if with_ages {
        s.extend([AGE_SCALE, AGE_SCALE]);
    }
    s
}

/// One slot's estimator input in raw (unscaled) units.
#[derive(Debug, Clone)]
pub struct EstimatorInput {
    pub prev_estimate: Vec<f64>,
    pub latest: Vec<f64>,
    /// `(age_y, age_u)`; `None` when age inputs are disabled.
    pub ages: Option<(f64, f64)>,
}

impl EstimatorInput {
    pub fn write_features(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.prev_estimate);
        out.extend_from_slice(&self.latest);
        if let Some((age_y, age_u)) = self.ages {
            out.push(age_y);
            out.push(age_u);
        }
    }
}

/// Assemble the input for the current slot.
///
/// With known controls, the control entries of the freshest measurement are
/// replaced by the current true control and the control age is zero. With
/// networked controls, the freshest delivered control stands as-is and both
/// age entries share the measurement age. In noisy-age mode, one noise draw
/// per slot corrupts the age.
pub fn build_input(
    outcome: &SlotOutcome,
    prev_estimate: &[f64],
    control: ControlMode,
    age: AgeMode,
    noisy_rng: &mut ChaCha8Rng,
) -> EstimatorInput {
    let mut latest = outcome.latest.clone();
    if control == ControlMode::Known {
        let cd = outcome.control.len();
        let base = latest.len() - cd;
        latest[base..].copy_from_slice(&outcome.control);
    }
    let ages = match age {
        AgeMode::None => None,
        AgeMode::True | AgeMode::Noisy => {
            let a = match age {
                AgeMode::True => outcome.age as f64,
                _ => noisy_age(outcome.age as f64, noisy_rng),
            };
            let age_u = match control {
                ControlMode::Known => 0.0,
                ControlMode::Networked => a,
            };
            Some((a, age_u))
        }
    };
    EstimatorInput { prev_estimate: prev_estimate.to_vec(), latest, ages }
}

/// The full learnable stack: LSTM cell, ReLU layer, linear head.
#[derive(Debug, Clone)]
pub struct LaaParams {
    pub lstm: LstmParams,
    pub fc1: FcParams,
    pub fc2: FcParams,
}

impl LaaParams {
    pub fn init(n_x: usize, n_o: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "init", 0);
        let bound = 1.0 / (HIDDEN as f64).sqrt();
        LaaParams {
            lstm: LstmParams::init(n_x, HIDDEN, bound, &mut rng),
            fc1: FcParams::init(HIDDEN, HIDDEN, bound, &mut rng),
            fc2: FcParams::init(HIDDEN, n_o, bound, &mut rng),
        }
    }

    pub fn n_x(&self) -> usize {
        self.lstm.n_x
    }

    pub fn n_o(&self) -> usize {
        self.fc2.n_out()
    }

    pub fn op_count(&self) -> u64 {
        crate::nn::op_count(self.n_x() as u64, HIDDEN as u64, self.n_o() as u64)
    }

    pub fn tensor_lens(&self) -> [usize; 8] {
        [
            self.lstm.w_ih.data.len(),
            self.lstm.w_hh.data.len(),
            self.lstm.b_ih.len(),
            self.lstm.b_hh.len(),
            self.fc1.w.data.len(),
            self.fc1.b.len(),
            self.fc2.w.data.len(),
            self.fc2.b.len(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensor_lens().iter().sum()
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.lstm.w_ih.data,
            &self.lstm.w_hh.data,
            &self.lstm.b_ih,
            &self.lstm.b_hh,
            &self.fc1.w.data,
            &self.fc1.b,
            &self.fc2.w.data,
            &self.fc2.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        let LaaParams { lstm, fc1, fc2 } = self;
        [
            &mut lstm.w_ih.data,
            &mut lstm.w_hh.data,
            &mut lstm.b_ih,
            &mut lstm.b_hh,
            &mut fc1.w.data,
            &mut fc1.b,
            &mut fc2.w.data,
            &mut fc2.b,
        ]
    }

    /// Forward from zero recurrent state over a window of scaled feature
    /// vectors, recording activations; the head output for the last step is
    /// left in `scratch.yhat`.
    pub fn window_forward<'a, I>(&self, window: I, scratch: &mut StackScratch)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        scratch.state.reset();
        scratch.tape.reset();
        let mut any = false;
        for x in window {
            self.lstm.forward_step(x, &mut scratch.state, &mut scratch.tape);
            any = true;
        }
        assert!(any, "window must contain at least one step");
        self.fc1.forward(
            &scratch.state.h,
            Activation::Relu,
            &mut scratch.h1,
            Some(&mut scratch.fc1_tape),
        );
        self.fc2.forward(
            &scratch.h1,
            Activation::Linear,
            &mut scratch.yhat,
            Some(&mut scratch.fc2_tape),
        );
    }

    /// Backpropagate `dy` (gradient w.r.t. the head output) through the
    /// recorded window, accumulating into `grads`.
    pub fn window_backward(&self, dy: &[f64], scratch: &mut StackScratch, grads: &mut LaaGrads) {
        self.fc2.backward(
            &scratch.fc2_tape,
            Activation::Linear,
            dy,
            &mut grads.fc2,
            &mut scratch.d_h1,
            &mut scratch.dpre,
        );
        self.fc1.backward(
            &scratch.fc1_tape,
            Activation::Relu,
            &scratch.d_h1,
            &mut grads.fc1,
            &mut scratch.dh,
            &mut scratch.dpre,
        );
        self.lstm.backward(&scratch.tape, &scratch.dh, None, &mut grads.lstm, &mut scratch.lstm_scratch);
    }
}

#[derive(Debug, Clone)]
pub struct LaaGrads {
    pub lstm: LstmGrads,
    pub fc1: FcGrads,
    pub fc2: FcGrads,
}

impl LaaGrads {
    pub fn zeros_like(p: &LaaParams) -> Self {
        LaaGrads {
            lstm: LstmGrads::zeros_like(&p.lstm),
            fc1: FcGrads::zeros_like(&p.fc1),
            fc2: FcGrads::zeros_like(&p.fc2),
        }
    }

    pub fn fill_zero(&mut self) {
        self.lstm.fill_zero();
        self.fc1.fill_zero();
        self.fc2.fill_zero();
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.lstm.w_ih.data,
            &self.lstm.w_hh.data,
            &self.lstm.b_ih,
            &self.lstm.b_hh,
            &self.fc1.w.data,
            &self.fc1.b,
            &self.fc2.w.data,
            &self.fc2.b,
        ]
    }
}

/// Reusable buffers for window forward/backward passes.
pub struct StackScratch {
    state: LstmState,
    tape: TapeCache,
    fc1_tape: FcTape,
    fc2_tape: FcTape,
    h1: Vec<f64>,
    pub yhat: Vec<f64>,
    d_h1: Vec<f64>,
    dh: Vec<f64>,
    dpre: Vec<f64>,
    lstm_scratch: LstmScratch,
}

impl StackScratch {
    pub fn new(params: &LaaParams) -> Self {
        StackScratch {
            state: LstmState::zeros(HIDDEN),
            tape: TapeCache::new(params.n_x(), HIDDEN, true),
            fc1_tape: FcTape::default(),
            fc2_tape: FcTape::default(),
            h1: vec![0.0; HIDDEN],
            yhat: vec![0.0; params.n_o()],
            d_h1: vec![0.0; HIDDEN],
            dh: vec![0.0; HIDDEN],
            dpre: Vec::new(),
            lstm_scratch: LstmScratch::new(),
        }
    }
}

/// A trained (or fresh) estimator with its recurrent inference state.
pub struct LaaModel {
    pub params: LaaParams,
    pub scaling: Vec<f64>,
    pub system: SystemKind,
    pub with_ages: bool,
    pub init_seed: u64,
    state: LstmState,
    prev_estimate: Vec<f64>,
    infer_tape: TapeCache,
    scaled: Vec<f64>,
    h1: Vec<f64>,
    out: Vec<f64>,
}

impl LaaModel {
    pub fn new(system: SystemKind, with_ages: bool, seed: u64) -> Self {
        let n_x = input_dim(system, with_ages);
        let params = LaaParams::init(n_x, system.est_dim(), seed);
        LaaModel::from_parts(params, input_scaling(system, with_ages), system, with_ages, seed)
    }

    pub fn from_parts(
        params: LaaParams,
        scaling: Vec<f64>,
        system: SystemKind,
        with_ages: bool,
        init_seed: u64,
    ) -> Self {
        assert_eq!(params.n_x(), scaling.len());
        assert_eq!(params.n_x(), input_dim(system, with_ages));
        assert_eq!(params.n_o(), system.est_dim());
        let n_o = params.n_o();
        let n_x = params.n_x();
        LaaModel {
            infer_tape: TapeCache::new(n_x, HIDDEN, false),
            state: LstmState::zeros(HIDDEN),
            prev_estimate: vec![0.0; n_o],
            scaled: vec![0.0; n_x],
            h1: vec![0.0; HIDDEN],
            out: vec![0.0; n_o],
            params,
            scaling,
            system,
            with_ages,
            init_seed,
        }
    }

    pub fn reset_episode(&mut self) {
        self.state.reset();
        self.prev_estimate.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn prev_estimate(&self) -> &[f64] {
        &self.prev_estimate
    }

    /// Divide raw features by the scaling vector.
    pub fn scale_features(&self, raw: &[f64], out: &mut Vec<f64>) {
        assert_eq!(raw.len(), self.scaling.len());
        out.clear();
        out.extend(raw.iter().zip(&self.scaling).map(|(v, s)| v / s));
    }

    /// One inference step on already-scaled features; updates the recurrent
    /// state and the fed-back previous estimate, and returns the estimate in
    /// raw units.
    pub fn estimate_scaled(&mut self, scaled: &[f64]) -> &[f64] {
        self.params.lstm.forward_step(scaled, &mut self.state, &mut self.infer_tape);
        self.params.fc1.forward(&self.state.h, Activation::Relu, &mut self.h1, None);
        self.params.fc2.forward(&self.h1, Activation::Linear, &mut self.out, None);
        self.prev_estimate.copy_from_slice(&self.out);
        &self.out
    }

    /// One inference step from a raw-unit input.
    pub fn estimate(&mut self, input: &EstimatorInput) -> Result<&[f64]> {
        let mut buf = std::mem::take(&mut self.scaled);
        input.write_features(&mut buf);
        if buf.len() != self.scaling.len() {
            let msg = format!("input has {} features, model expects {}", buf.len(), self.scaling.len());
            self.scaled = buf;
            return Err(Error::DimensionMismatch(msg));
        }
        for (v, s) in buf.iter_mut().zip(&self.scaling) {
            *v /= s;
        }
        let _ = self.estimate_scaled(&buf);
        self.scaled = buf;
        Ok(&self.out)
    }
}
