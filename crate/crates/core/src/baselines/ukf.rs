//! Unscented filter over the rewind driver.
//!
//! Sigma points carry the belief through the plant transition; the
//! measurement map is the identity on the filter state, for which the
//! sigma-point update collapses exactly to the Kalman form, so only the
//! prediction needs points.
//!
//! With the conventional small spread (alpha = 1e-3) the center weight is
//! about -1e6 and the naive weighted sum cancels catastrophically in f64.
//! The mean is therefore recombined in deviation form: the propagated
//! center point plus weighted deviations from it, which is algebraically
//! identical (the weights sum to one) but keeps every addend small.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{believed_gen, identity_update, Delivery, FilterCore, KalmanBelief, ReplayFilter};
use crate::dynamics::{cartpole, CartpoleParams, LinearParams, CART_VEL_LIMIT};
use crate::network::noisy_age;
use crate::sim::{AgeMode, ControlMode, SlotEstimator, SlotOutcome, SystemKind};
use crate::{Error, Result};

/// One-slot state transition with additive process noise and an identity
/// observation with additive measurement noise.
pub trait TransitionModel: Clone {
    fn dim(&self) -> usize;
    fn ctrl_dim(&self) -> usize;
    fn propagate(&self, x: &DVector<f64>, control: &[f64], out: &mut DVector<f64>);
    fn process_noise(&self) -> &DMatrix<f64>;
    fn meas_noise(&self) -> &DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(params: &LinearParams, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let core = super::LinearCore::new(params, q.clone(), r.clone());
        let (a, b) = core.transition();
        LinearModel { a: a.clone(), b: b.clone(), q, r }
    }

    pub fn standard() -> Self {
        let params = LinearParams::default();
        LinearModel::new(
            &params,
            DMatrix::identity(4, 4) * params.noise_var,
            DMatrix::identity(4, 4) * 1e-6,
        )
    }
}

impl TransitionModel for LinearModel {
    fn dim(&self) -> usize {
        4
    }
    fn ctrl_dim(&self) -> usize {
        2
    }
    fn propagate(&self, x: &DVector<f64>, control: &[f64], out: &mut DVector<f64>) {
        *out = &self.a * x + &self.b * DVector::from_column_slice(control);
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn meas_noise(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// Closed cartpole dynamics on `[theta, theta_dot, x_dot]`; the cart
/// position feeds back into nothing and is not observed, so it stays out of
/// the filter state. The step mirrors the simulator: velocities first, cart
/// velocity clamped.
#[derive(Debug, Clone)]
pub struct CartpoleModel {
    params: CartpoleParams,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CartpoleModel {
    pub fn new(params: CartpoleParams, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        assert_eq!(q.shape(), (3, 3));
        assert_eq!(r.shape(), (3, 3));
        CartpoleModel { params, q, r }
    }

    /// Small process noise (the plant itself is deterministic; this absorbs
    /// the force the filter does not know between deliveries) and near-zero
    /// measurement noise.
    pub fn standard() -> Self {
        CartpoleModel::new(
            CartpoleParams::default(),
            DMatrix::identity(3, 3) * 1e-3,
            DMatrix::identity(3, 3) * 1e-6,
        )
    }
}

impl TransitionModel for CartpoleModel {
    fn dim(&self) -> usize {
        3
    }
    fn ctrl_dim(&self) -> usize {
        1
    }
    fn propagate(&self, x: &DVector<f64>, control: &[f64], out: &mut DVector<f64>) {
        let (theta, theta_dot, x_dot) = (x[0], x[1], x[2]);
        let (theta_dd, x_dd) = cartpole::accels(theta, theta_dot, control[0], &self.params)
            .expect("sigma point stays finite");
        let dt = self.params.dt;
        let new_theta_dot = theta_dot + theta_dd * dt;
        let new_x_dot = (x_dot + x_dd * dt).clamp(-CART_VEL_LIMIT, CART_VEL_LIMIT);
        let new_theta = theta + new_theta_dot * dt;
        out[0] = new_theta;
        out[1] = new_theta_dot;
        out[2] = new_x_dot;
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn meas_noise(&self) -> &DMatrix<f64> {
        &self.r
    }
}

#[derive(Debug, Clone)]
pub struct UnscentedCore<M: TransitionModel> {
    model: M,
    alpha: f64,
    beta: f64,
    kappa: f64,
}

impl<M: TransitionModel> UnscentedCore<M> {
    pub fn new(model: M) -> Self {
        UnscentedCore { model, alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    /// Square root of `scale * P`: Cholesky when `P` admits one, otherwise a
    /// symmetric eigendecomposition with eigenvalues clipped at 1e-9.
    fn scaled_sqrt(&self, p: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
        let m = super::symmetrized(p) * scale;
        if let Some(chol) = m.clone().cholesky() {
            return chol.l();
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut root = eig.eigenvectors.clone();
        for (j, ev) in eig.eigenvalues.iter().enumerate() {
            let s = ev.max(1e-9).sqrt();
            root.column_mut(j).scale_mut(s);
        }
        root
    }
}

impl<M: TransitionModel> FilterCore for UnscentedCore<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn ctrl_dim(&self) -> usize {
        self.model.ctrl_dim()
    }

    fn predict(&self, belief: &mut KalmanBelief, control: &[f64]) {
        let n = self.model.dim();
        let nf = n as f64;
        let lambda = self.alpha * self.alpha * (nf + self.kappa) - nf;
        let scale = nf + lambda;
        let w_i = 1.0 / (2.0 * scale);
        let wc0 = lambda / scale + (1.0 - self.alpha * self.alpha + self.beta);

        let root = self.scaled_sqrt(&belief.p, scale);
        let mut center = DVector::zeros(n);
        self.model.propagate(&belief.x, control, &mut center);

        let mut spread = Vec::with_capacity(2 * n);
        let mut point = DVector::zeros(n);
        let mut out = DVector::zeros(n);
        for j in 0..n {
            for sign in [1.0f64, -1.0] {
                point.copy_from(&belief.x);
                point.axpy(sign, &root.column(j).into_owned(), 1.0);
                self.model.propagate(&point, control, &mut out);
                spread.push(out.clone());
            }
        }

        // Mean in deviation form: weights sum to one, so
        // mean = center + sum_i w_i (point_i - center).
        let mut mean = center.clone();
        for s in &spread {
            mean.axpy(w_i, &(s - &center), 1.0);
        }

        let d0 = &center - &mean;
        let mut p = &d0 * d0.transpose() * wc0;
        for s in &spread {
            let d = s - &mean;
            p += &d * d.transpose() * w_i;
        }
        p += self.model.process_noise();

        belief.x = mean;
        belief.p = super::symmetrized(&p);
    }

    fn update(&self, belief: &mut KalmanBelief, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        identity_update(belief, z, self.model.meas_noise())
    }
}

/// Unscented baseline over the lossy network, for either plant.
pub struct UkfEstimator<M: TransitionModel> {
    control: ControlMode,
    age: AgeMode,
    core: UnscentedCore<M>,
    filter: ReplayFilter<UnscentedCore<M>>,
}

impl<M: TransitionModel> UkfEstimator<M> {
    pub fn with_model(model: M, control: ControlMode, age: AgeMode) -> Result<Self> {
        if age == AgeMode::None {
            return Err(Error::InvalidConfig(
                "the unscented baseline needs an age signal to place deliveries in time".into(),
            ));
        }
        let core = UnscentedCore::new(model);
        let filter =
            ReplayFilter::new(core.clone(), control, KalmanBelief::standard(core.dim()));
        Ok(UkfEstimator { control, age, core, filter })
    }

    pub fn filter(&self) -> &ReplayFilter<UnscentedCore<M>> {
        &self.filter
    }
}

impl UkfEstimator<LinearModel> {
    pub fn linear(control: ControlMode, age: AgeMode) -> Result<Self> {
        Self::with_model(LinearModel::standard(), control, age)
    }
}

impl UkfEstimator<CartpoleModel> {
    pub fn cartpole(control: ControlMode, age: AgeMode) -> Result<Self> {
        Self::with_model(CartpoleModel::standard(), control, age)
    }
}

/// Build the unscented baseline for a system without naming the model type.
pub fn ukf_for(
    system: SystemKind,
    control: ControlMode,
    age: AgeMode,
) -> Result<Box<dyn SlotEstimator>> {
    Ok(match system {
        SystemKind::Linear => Box::new(UkfEstimator::linear(control, age)?),
        SystemKind::Cartpole => Box::new(UkfEstimator::cartpole(control, age)?),
    })
}

impl<M: TransitionModel> SlotEstimator for UkfEstimator<M> {
    fn reset(&mut self, _episode: u64) {
        self.filter = ReplayFilter::new(
            self.core.clone(),
            self.control,
            KalmanBelief::standard(self.core.dim()),
        );
    }

    fn estimate(&mut self, outcome: &SlotOutcome, noisy_rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.core.dim();
        let delivery = outcome.delivered.as_ref().map(|pkt| {
            let age = match self.age {
                AgeMode::True => outcome.age as f64,
                _ => noisy_age(outcome.age as f64, noisy_rng),
            };
            let vals = &pkt.measurement.values;
            Delivery {
                z: DVector::from_column_slice(&vals[..dim]),
                control: (self.control == ControlMode::Networked).then(|| vals[dim..].to_vec()),
                believed_gen: believed_gen(outcome.slot, age),
            }
        });
        let belief = self.filter.step(outcome.slot, &outcome.control, delivery);
        belief.x.as_slice().to_vec()
    }
}
