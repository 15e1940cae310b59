//! Single LSTM cell with an explicit tape for exact backpropagation through
//! time. Gate blocks are stacked in the order input, forget, cell, output
//! ("ifgo") inside the weight matrices and bias vectors.

use rand::Rng;

use super::mat::{axpy, Mat};

pub const GATE_ORDER: &str = "ifgo";

#[derive(Debug, Clone)]
pub struct LstmParams {
    pub n_x: usize,
    pub n_h: usize,
    /// `[4 n_h, n_x]`, gate blocks stacked by row.
    pub w_ih: Mat,
    /// `[4 n_h, n_h]`.
    pub w_hh: Mat,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl LstmParams {
    /// All weights and biases uniform on `(-bound, bound)`.
    pub fn init(n_x: usize, n_h: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let mut p = LstmParams {
            n_x,
            n_h,
            w_ih: Mat::zeros(4 * n_h, n_x),
            w_hh: Mat::zeros(4 * n_h, n_h),
            b_ih: vec![0.0; 4 * n_h],
            b_hh: vec![0.0; 4 * n_h],
        };
        for v in p
            .w_ih
            .data
            .iter_mut()
            .chain(p.w_hh.data.iter_mut())
            .chain(p.b_ih.iter_mut())
            .chain(p.b_hh.iter_mut())
        {
            *v = rng.gen_range(-bound..bound);
        }
        p
    }

    /// One step. `h` and `c` in `state` are replaced; when a tape is given,
    /// everything the backward pass needs is recorded on it.
    pub fn forward_step(&self, x: &[f64], state: &mut LstmState, tape: &mut TapeCache) {
        debug_assert_eq!(x.len(), self.n_x);
        let n_h = self.n_h;
        let TapeCache { steps, len, gates, record } = tape;
        if *len == steps.len() {
            steps.push(LstmStepTape::new(self.n_x, n_h));
        }
        let st = &mut steps[*len];
        *len += 1;

        st.x.copy_from_slice(x);
        st.h_prev.copy_from_slice(&state.h);
        st.c_prev.copy_from_slice(&state.c);

        gates.copy_from_slice(&self.b_ih);
        for (g, b) in gates.iter_mut().zip(&self.b_hh) {
            *g += b;
        }
        self.w_ih.matvec_acc(x, gates);
        self.w_hh.matvec_acc(&state.h, gates);

        for j in 0..n_h {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[n_h + j]);
            let g = gates[2 * n_h + j].tanh();
            let o = sigmoid(gates[3 * n_h + j]);
            let c = f * state.c[j] + i * g;
            let tc = c.tanh();
            st.i[j] = i;
            st.f[j] = f;
            st.g[j] = g;
            st.o[j] = o;
            st.tanh_c[j] = tc;
            state.c[j] = c;
            state.h[j] = o * tc;
        }
        if !*record {
            *len = 0;
        }
    }

    /// Accumulate parameter gradients for the recorded window. `dh_last` is
    /// the loss gradient on the final hidden state; `dh_steps`, when given,
    /// adds a gradient on every step's hidden state (used by tests that probe
    /// the full recurrence).
    pub fn backward(
        &self,
        tape: &TapeCache,
        dh_last: &[f64],
        dh_steps: Option<&[Vec<f64>]>,
        grads: &mut LstmGrads,
        scratch: &mut LstmScratch,
    ) {
        let n_h = self.n_h;
        let steps = tape.len;
        assert!(steps > 0, "backward needs at least one recorded step");
        scratch.resize(self.n_x, n_h);
        let LstmScratch { dh, dc, da, dh_prev } = scratch;
        dh.iter_mut().for_each(|v| *v = 0.0);
        dc.iter_mut().for_each(|v| *v = 0.0);
        axpy(1.0, dh_last, dh);

        for t in (0..steps).rev() {
            let st = &tape.steps[t];
            if let Some(seq) = dh_steps {
                if t + 1 < steps {
                    axpy(1.0, &seq[t], dh);
                }
            }
            for j in 0..n_h {
                let (i, f, g, o, tc) = (st.i[j], st.f[j], st.g[j], st.o[j], st.tanh_c[j]);
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                da[j] = dcj * g * i * (1.0 - i);
                da[n_h + j] = dcj * st.c_prev[j] * f * (1.0 - f);
                da[2 * n_h + j] = dcj * i * (1.0 - g * g);
                da[3 * n_h + j] = dh[j] * tc * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            grads.w_ih.outer_acc(da, &st.x);
            grads.w_hh.outer_acc(da, &st.h_prev);
            axpy(1.0, da, &mut grads.b_ih);
            axpy(1.0, da, &mut grads.b_hh);
            dh_prev.iter_mut().for_each(|v| *v = 0.0);
            self.w_hh.tvec_acc(da, dh_prev);
            std::mem::swap(dh, dh_prev);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(n_h: usize) -> Self {
        LstmState { h: vec![0.0; n_h], c: vec![0.0; n_h] }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Per-step activations recorded during the forward pass.
#[derive(Debug, Clone)]
pub struct LstmStepTape {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LstmStepTape {
    fn new(n_x: usize, n_h: usize) -> Self {
        LstmStepTape {
            x: vec![0.0; n_x],
            h_prev: vec![0.0; n_h],
            c_prev: vec![0.0; n_h],
            i: vec![0.0; n_h],
            f: vec![0.0; n_h],
            g: vec![0.0; n_h],
            o: vec![0.0; n_h],
            tanh_c: vec![0.0; n_h],
        }
    }
}

/// Reusable tape. With `record` off it only provides scratch space, so the
/// same forward code serves both inference and training.
#[derive(Debug, Clone)]
pub struct TapeCache {
    steps: Vec<LstmStepTape>,
    len: usize,
    gates: Vec<f64>,
    record: bool,
}

impl TapeCache {
    pub fn new(n_x: usize, n_h: usize, record: bool) -> Self {
        TapeCache { steps: Vec::with_capacity(if record { 8 } else { 1 }), len: 0, gates: vec![0.0; 4 * n_h], record }
        .with_first(n_x, n_h)
    }

    fn with_first(mut self, n_x: usize, n_h: usize) -> Self {
        self.steps.push(LstmStepTape::new(n_x, n_h));
        self
    }

    pub fn reset(&mut self) {
        self.len = 0;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w_ih: Mat,
    pub w_hh: Mat,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros_like(p: &LstmParams) -> Self {
        LstmGrads {
            w_ih: Mat::zeros(4 * p.n_h, p.n_x),
            w_hh: Mat::zeros(4 * p.n_h, p.n_h),
            b_ih: vec![0.0; 4 * p.n_h],
            b_hh: vec![0.0; 4 * p.n_h],
        }
    }

    pub fn fill_zero(&mut self) {
        self.w_ih.fill_zero();
        self.w_hh.fill_zero();
        self.b_ih.iter_mut().for_each(|v| *v = 0.0);
        self.b_hh.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Debug, Default, Clone)]
pub struct LstmScratch {
    dh: Vec<f64>,
    dc: Vec<f64>,
    da: Vec<f64>,
    dh_prev: Vec<f64>,
}

impl LstmScratch {
    pub fn new() -> Self {
        LstmScratch::default()
    }

    fn resize(&mut self, _n_x: usize, n_h: usize) {
        self.dh.resize(n_h, 0.0);
        self.dc.resize(n_h, 0.0);
        self.da.resize(4 * n_h, 0.0);
        self.dh_prev.resize(n_h, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    /// Straight-line reference: the same cell written as explicit loops with
    /// no shared kernels, used as an independent oracle.
    fn reference_forward(p: &LstmParams, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n_h = p.n_h;
        let mut h = vec![0.0; n_h];
        let mut c = vec![0.0; n_h];
        for x in xs {
            let mut pre = vec![0.0; 4 * n_h];
            for r in 0..4 * n_h {
                let mut s = p.b_ih[r] + p.b_hh[r];
                for (k, xv) in x.iter().enumerate() {
                    s += p.w_ih.data[r * p.n_x + k] * xv;
                }
                for (k, hv) in h.iter().enumerate() {
                    s += p.w_hh.data[r * n_h + k] * hv;
                }
                pre[r] = s;
            }
            let mut new_h = vec![0.0; n_h];
            let mut new_c = vec![0.0; n_h];
            for j in 0..n_h {
                let i = 1.0 / (1.0 + (-pre[j]).exp());
                let f = 1.0 / (1.0 + (-pre[n_h + j]).exp());
                let g = pre[2 * n_h + j].tanh();
                let o = 1.0 / (1.0 + (-pre[3 * n_h + j]).exp());
                new_c[j] = f * c[j] + i * g;
                new_h[j] = o * new_c[j].tanh();
            }
            h = new_h;
            c = new_c;
        }
        (h, c)
    }

    fn random_inputs(n_x: usize, steps: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = substream(seed, "x", 0);
        (0..steps).map(|_| (0..n_x).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        let mut rng = substream(1, "init", 0);
        let p = LstmParams::init(5, 7, 1.0 / (7f64).sqrt(), &mut rng);
        let xs = random_inputs(5, 4, 9);
        let mut state = LstmState::zeros(7);
        let mut tape = TapeCache::new(5, 7, true);
        for x in &xs {
            p.forward_step(x, &mut state, &mut tape);
        }
        let (h_ref, c_ref) = reference_forward(&p, &xs);
        for j in 0..7 {
            assert!((state.h[j] - h_ref[j]).abs() < 1e-12);
            assert!((state.c[j] - c_ref[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_and_inputs_keep_state_at_zero() {
        let p = LstmParams {
            n_x: 3,
            n_h: 4,
            w_ih: Mat::zeros(16, 3),
            w_hh: Mat::zeros(16, 4),
            b_ih: vec![0.0; 16],
            b_hh: vec![0.0; 16],
        };
        let mut state = LstmState::zeros(4);
        let mut tape = TapeCache::new(3, 4, false);
        p.forward_step(&[0.0; 3], &mut state, &mut tape);
        assert!(state.h.iter().all(|&v| v == 0.0));
        assert!(state.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_stays_bounded() {
        let mut rng = substream(2, "init", 0);
        let p = LstmParams::init(4, 6, 2.0, &mut rng);
        let mut state = LstmState::zeros(6);
        let mut tape = TapeCache::new(4, 6, false);
        for x in random_inputs(4, 50, 3) {
            p.forward_step(&x, &mut state, &mut tape);
            assert!(state.h.iter().all(|v| v.abs() <= 1.0), "|h| <= 1 by construction");
        }
    }

    #[test]
    fn init_respects_uniform_bound() {
        let mut rng = substream(4, "init", 1);
        let bound = 1.0 / 8.0;
        let p = LstmParams::init(12, 64, bound, &mut rng);
        let all = p.w_ih.data.iter().chain(&p.w_hh.data).chain(&p.b_ih).chain(&p.b_hh);
        let mut max_abs = 0.0f64;
        for &v in all {
            assert!(v.abs() < bound);
            max_abs = max_abs.max(v.abs());
        }
        assert!(max_abs > bound * 0.9, "draws should fill the range, max {max_abs}");
    }

    #[test]
    fn backward_matches_finite_differences_through_time() {
        // Loss: sum over steps of dot(ones, h_t) plus the final h again, so
        // both the per-step and the final-gradient paths are exercised.
        let n_x = 3;
        let n_h = 5;
        let steps = 4;
        let mut rng = substream(7, "init", 2);
        let p = LstmParams::init(n_x, n_h, 1.0 / (n_h as f64).sqrt(), &mut rng);
        let xs = random_inputs(n_x, steps, 11);

        let loss = |p: &LstmParams| -> f64 {
            let mut state = LstmState::zeros(n_h);
            let mut tape = TapeCache::new(n_x, n_h, false);
            let mut total = 0.0;
            for (t, x) in xs.iter().enumerate() {
                p.forward_step(x, &mut state, &mut tape);
                total += state.h.iter().sum::<f64>();
                if t == steps - 1 {
                    total += state.h.iter().sum::<f64>();
                }
            }
            total
        };

        let mut state = LstmState::zeros(n_h);
        let mut tape = TapeCache::new(n_x, n_h, true);
        for x in &xs {
            p.forward_step(x, &mut state, &mut tape);
        }
        let mut grads = LstmGrads::zeros_like(&p);
        let mut scratch = LstmScratch::new();
        let dh_steps: Vec<Vec<f64>> = (0..steps).map(|_| vec![1.0; n_h]).collect();
        p.backward(&tape, &vec![2.0; n_h], Some(&dh_steps), &mut grads, &mut scratch);

        let mut p_mut = p.clone();
        let h = 1e-5;
        let tensors: [(&[f64], fn(&mut LstmParams) -> &mut [f64]); 4] = [
            (&grads.w_ih.data, |p| &mut p.w_ih.data),
            (&grads.w_hh.data, |p| &mut p.w_hh.data),
            (&grads.b_ih, |p| &mut p.b_ih),
            (&grads.b_hh, |p| &mut p.b_hh),
        ];
        for (analytic, access) in tensors {
            for k in 0..analytic.len() {
                let orig = access(&mut p_mut)[k];
                access(&mut p_mut)[k] = orig + h;
                let up = loss(&p_mut);
                access(&mut p_mut)[k] = orig - h;
                let down = loss(&p_mut);
                access(&mut p_mut)[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (analytic[k] - numeric).abs() / denom < 1e-5,
                    "gradient mismatch: analytic {} numeric {}",
                    analytic[k],
                    numeric
                );
            }
        }
    }

    #[test]
    fn reset_restores_identical_outputs() {
        let mut rng = substream(5, "init", 3);
        let p = LstmParams::init(4, 6, 0.2, &mut rng);
        let xs = random_inputs(4, 5, 17);
        let run = || {
            let mut state = LstmState::zeros(6);
            let mut tape = TapeCache::new(4, 6, false);
            for x in &xs {
                p.forward_step(x, &mut state, &mut tape);
            }
            state.h.clone()
        };
        assert_eq!(run(), run());
    }
}
