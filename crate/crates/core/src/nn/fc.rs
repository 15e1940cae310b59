//! Fully connected layers with optional ReLU.

use rand::Rng;

use super::mat::{axpy, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone)]
pub struct FcParams {
    /// `[n_out, n_in]`.
    pub w: Mat,
    pub b: Vec<f64>,
}

impl FcParams {
    pub fn init(n_in: usize, n_out: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let mut p = FcParams { w: Mat::zeros(n_out, n_in), b: vec![0.0; n_out] };
        for v in p.w.data.iter_mut().chain(p.b.iter_mut()) {
            *v = rng.gen_range(-bound..bound);
        }
        p
    }

    pub fn n_in(&self) -> usize {
        self.w.cols
    }

    pub fn n_out(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64], act: Activation, out: &mut [f64], tape: Option<&mut FcTape>) {
        debug_assert_eq!(out.len(), self.n_out());
        out.copy_from_slice(&self.b);
        self.w.matvec_acc(x, out);
        if let Some(t) = tape {
            t.x.clear();
            t.x.extend_from_slice(x);
            t.pre.clear();
            t.pre.extend_from_slice(out);
        }
        if act == Activation::Relu {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// `dy` is the loss gradient on the layer output (after the activation);
    /// parameter gradients accumulate into `grads` and the input gradient is
    /// written to `dx`.
    pub fn backward(
        &self,
        tape: &FcTape,
        act: Activation,
        dy: &[f64],
        grads: &mut FcGrads,
        dx: &mut [f64],
        dpre: &mut Vec<f64>,
    ) {
        dpre.clear();
        dpre.extend_from_slice(dy);
        if act == Activation::Relu {
            for (d, &p) in dpre.iter_mut().zip(&tape.pre) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        grads.w.outer_acc(dpre, &tape.x);
        axpy(1.0, dpre, &mut grads.b);
        dx.iter_mut().for_each(|v| *v = 0.0);
        self.w.tvec_acc(dpre, dx);
    }
}

#[derive(Debug, Clone, Default)]
pub struct FcTape {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl FcGrads {
    pub fn zeros_like(p: &FcParams) -> Self {
        FcGrads { w: Mat::zeros(p.n_out(), p.n_in()), b: vec![0.0; p.n_out()] }
    }

    pub fn fill_zero(&mut self) {
        self.w.fill_zero();
        self.b.iter_mut().for_each(|v| *v = 0.0);
    }
}
