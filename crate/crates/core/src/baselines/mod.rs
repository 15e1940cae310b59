//! Model-based baselines: a time-varying Kalman filter for the linear plant
//! and an unscented filter for both plants, each wrapped in the same
//! rewind-and-replay driver.
//!
//! Measurements arrive late: a packet received at slot `t` describes the
//! plant as of `t - age`. The driver keeps per-slot posterior checkpoints
//! and logs of every applied measurement and every known control; on each
//! delivery it rewinds to the measurement's believed generation slot and
//! re-filters forward, so the posterior at `t` always equals the one an
//! in-order filter would have produced from the same information.

mod tvkf;
mod ukf;

pub use tvkf::{LinearCore, TvkfEstimator};
pub use ukf::{ukf_for, CartpoleModel, LinearModel, TransitionModel, UkfEstimator, UnscentedCore};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::sim::ControlMode;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBelief {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KalmanBelief {
    /// Zero mean, unit covariance.
    pub fn standard(dim: usize) -> Self {
        KalmanBelief { x: DVector::zeros(dim), p: DMatrix::identity(dim, dim) }
    }
}

/// One slot-ahead prediction plus one measurement update; the driver passes
/// the control that governs the predicted transition.
pub trait FilterCore {
    fn dim(&self) -> usize;
    fn ctrl_dim(&self) -> usize;
    fn predict(&self, belief: &mut KalmanBelief, control: &[f64]);
    /// Returns the innovation and its covariance.
    fn update(&self, belief: &mut KalmanBelief, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

/// Kalman measurement update for an identity observation. Joseph-form
/// covariance update keeps `P` symmetric positive semidefinite; the
/// innovation covariance is regularized if it fails to invert.
pub fn identity_update(
    belief: &mut KalmanBelief,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = belief.x.len();
    let s = symmetrized(&(&belief.p + r));
    let s_inv = s.clone().try_inverse().unwrap_or_else(|| {
        (&s + DMatrix::identity(dim, dim) * 1e-9)
            .try_inverse()
            .expect("regularized innovation covariance inverts")
    });
    let k = &belief.p * &s_inv;
    let innovation = z - &belief.x;
    belief.x += &k * &innovation;
    let ikc = DMatrix::identity(dim, dim) - &k;
    belief.p = symmetrized(&(&ikc * &belief.p * ikc.transpose() + &k * r * k.transpose()));
    (innovation, s)
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// A measurement as the driver sees it: the observed state subvector, the
/// control revealed by the packet (networked mode only), and the generation
/// slot the estimator believes it has.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub z: DVector<f64>,
    pub control: Option<Vec<f64>>,
    pub believed_gen: u64,
}

pub struct ReplayFilter<C: FilterCore> {
    core: C,
    control_mode: ControlMode,
    initial: KalmanBelief,
    /// `posteriors[k-1]` is the belief of the state at slot `k`.
    posteriors: Vec<KalmanBelief>,
    meas_log: BTreeMap<u64, Vec<DVector<f64>>>,
    ctrl_log: BTreeMap<u64, Vec<f64>>,
    true_ctrls: Vec<Vec<f64>>,
    innovations: BTreeMap<u64, (DVector<f64>, DMatrix<f64>)>,
    zero_ctrl: Vec<f64>,
    slot: u64,
}

impl<C: FilterCore> ReplayFilter<C> {
    pub fn new(core: C, control_mode: ControlMode, initial: KalmanBelief) -> Self {
        assert_eq!(initial.x.len(), core.dim());
        let zero_ctrl = vec![0.0; core.ctrl_dim()];
        ReplayFilter {
            core,
            control_mode,
            initial,
            posteriors: Vec::new(),
            meas_log: BTreeMap::new(),
            ctrl_log: BTreeMap::new(),
            true_ctrls: Vec::new(),
            innovations: BTreeMap::new(),
            zero_ctrl,
            slot: 0,
        }
    }

    /// Control governing the transition from slot `k` to `k + 1`.
    fn control_at(&self, k: u64) -> &[f64] {
        match self.control_mode {
            ControlMode::Known => &self.true_ctrls[(k - 1) as usize],
            ControlMode::Networked => self
                .ctrl_log
                .range(..=k)
                .next_back()
                .map(|(_, c)| c.as_slice())
                .unwrap_or(&self.zero_ctrl),
        }
    }

    fn refilter(&mut self, from: u64, to: u64) {
        let mut b = if from <= 1 {
            self.initial.clone()
        } else {
            self.posteriors[(from - 2) as usize].clone()
        };
        for k in from..=to {
            if k >= 2 {
                let ctrl = self.control_at(k - 1);
                self.core.predict(&mut b, ctrl);
            }
            if let Some(zs) = self.meas_log.get(&k).cloned() {
                for z in &zs {
                    let (innovation, s) = self.core.update(&mut b, z);
                    self.innovations.insert(k, (innovation, s));
                }
            }
            let idx = (k - 1) as usize;
            if idx == self.posteriors.len() {
                self.posteriors.push(b.clone());
            } else {
                self.posteriors[idx] = b.clone();
            }
        }
    }

    /// Advance to slot `t`. `true_control` is recorded only in known-controls
    /// mode; a delivery rewinds to its believed generation slot.
    pub fn step(&mut self, t: u64, true_control: &[f64], delivery: Option<Delivery>) -> &KalmanBelief {
        assert_eq!(t, self.slot + 1, "slots must advance one at a time");
        self.slot = t;
        if self.control_mode == ControlMode::Known {
            assert_eq!(true_control.len(), self.core.ctrl_dim());
            self.true_ctrls.push(true_control.to_vec());
        }
        let mut from = t;
        if let Some(d) = delivery {
            let g = d.believed_gen.clamp(1, t);
            assert_eq!(d.z.len(), self.core.dim());
            self.meas_log.entry(g).or_default().push(d.z);
            if self.control_mode == ControlMode::Networked {
                if let Some(c) = d.control {
                    assert_eq!(c.len(), self.core.ctrl_dim());
                    self.ctrl_log.insert(g, c);
                }
            }
            from = g;
        }
        self.refilter(from, t);
        self.belief(t)
    }

    pub fn belief(&self, t: u64) -> &KalmanBelief {
        &self.posteriors[(t - 1) as usize]
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Innovation and its covariance from the most recent update applied at
    /// each generation slot.
    pub fn innovations(&self) -> &BTreeMap<u64, (DVector<f64>, DMatrix<f64>)> {
        &self.innovations
    }

    pub fn core(&self) -> &C {
        &self.core
    }
}

/// Believed generation slot from a (possibly noisy) age, clamped to valid
/// slots.
pub fn believed_gen(slot: u64, age: f64) -> u64 {
    let rounded = age.round().max(0.0) as u64;
    slot.saturating_sub(rounded).max(1)
}
