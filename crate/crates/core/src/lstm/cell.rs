//! LSTM and simple-RNN cells: one forward step and its exact backward step.

use rand::Rng;

use super::tensor::{add_assign, all_finite, sigmoid, Matrix};
use crate::error::{Error, Result};

/// Weights of one LSTM layer, one input and one recurrent matrix plus a
/// bias per gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w_fx: Matrix,
    pub w_fh: Matrix,
    pub b_f: Vec<f64>,
    pub w_ix: Matrix,
    pub w_ih: Matrix,
    pub b_i: Vec<f64>,
    pub w_cx: Matrix,
    pub w_ch: Matrix,
    pub b_c: Vec<f64>,
    pub w_ox: Matrix,
    pub w_oh: Matrix,
    pub b_o: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = || Matrix::zeros(hidden, input);
        let wh = || Matrix::zeros(hidden, hidden);
        let b = || vec![0.0; hidden];
        LstmLayerParams {
            w_fx: wx(),
            w_fh: wh(),
            b_f: b(),
            w_ix: wx(),
            w_ih: wh(),
            b_i: b(),
            w_cx: wx(),
            w_ch: wh(),
            b_c: b(),
            w_ox: wx(),
            w_oh: wh(),
            b_o: b(),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)` with `fan_in = input + hidden`,
    /// biases zero.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        let mut p = Self::zeros(input, hidden);
        for m in [
            &mut p.w_fx, &mut p.w_fh, &mut p.w_ix, &mut p.w_ih,
            &mut p.w_cx, &mut p.w_ch, &mut p.w_ox, &mut p.w_oh,
        ] {
            *m = Matrix::uniform(m.rows, m.cols, bound, rng);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_fx.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.w_fx.rows
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_fx", &self.w_fx.data[..]),
            ("w_fh", &self.w_fh.data[..]),
            ("b_f", &self.b_f[..]),
            ("w_ix", &self.w_ix.data[..]),
            ("w_ih", &self.w_ih.data[..]),
            ("b_i", &self.b_i[..]),
            ("w_cx", &self.w_cx.data[..]),
            ("w_ch", &self.w_ch.data[..]),
            ("b_c", &self.b_c[..]),
            ("w_ox", &self.w_ox.data[..]),
            ("w_oh", &self.w_oh.data[..]),
            ("b_o", &self.b_o[..]),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_fx.data[..],
            &mut self.w_fh.data[..],
            &mut self.b_f[..],
            &mut self.w_ix.data[..],
            &mut self.w_ih.data[..],
            &mut self.b_i[..],
            &mut self.w_cx.data[..],
            &mut self.w_ch.data[..],
            &mut self.b_c[..],
            &mut self.w_ox.data[..],
            &mut self.w_oh.data[..],
            &mut self.b_o[..],
        ]
    }
}

/// Hidden and cell state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Output of one step, with the gate activations kept for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmStep {
    pub fn state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

fn preactivation(wx: &Matrix, wh: &Matrix, b: &[f64], x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    wx.mul_vec_add(x, &mut z);
    wh.mul_vec_add(h, &mut z);
    z
}

/// One LSTM step:
/// `f, i, o = σ(W·x + W·h + b)`, `C̃ = tanh(W·x + W·h + b)`,
/// `C = f∘C_prev + i∘C̃`, `h = o∘tanh(C)`.
pub fn forward_cell(params: &LstmLayerParams, x: &[f64], prev: &LstmState) -> Result<LstmStep> {
    if !all_finite(x) || !all_finite(&prev.h) || !all_finite(&prev.c) {
        return Err(Error::NumericalFault("lstm cell input"));
    }
    let p = params;
    let mut forget = preactivation(&p.w_fx, &p.w_fh, &p.b_f, x, &prev.h);
    let mut input = preactivation(&p.w_ix, &p.w_ih, &p.b_i, x, &prev.h);
    let mut candidate = preactivation(&p.w_cx, &p.w_ch, &p.b_c, x, &prev.h);
    let mut output = preactivation(&p.w_ox, &p.w_oh, &p.b_o, x, &prev.h);
    forget.iter_mut().for_each(|z| *z = sigmoid(*z));
    input.iter_mut().for_each(|z| *z = sigmoid(*z));
    candidate.iter_mut().for_each(|z| *z = z.tanh());
    output.iter_mut().for_each(|z| *z = sigmoid(*z));
    let c: Vec<f64> = (0..forget.len())
        .map(|k| forget[k] * prev.c[k] + input[k] * candidate[k])
        .collect();
    let h: Vec<f64> = c.iter().zip(&output).map(|(c, o)| o * c.tanh()).collect();
    if !all_finite(&h) {
        return Err(Error::NumericalFault("lstm cell output"));
    }
    Ok(LstmStep {
        forget,
        input,
        candidate,
        output,
        c,
        h,
    })
}

/// Gradients flowing out of one backward LSTM step.
pub struct CellBackward {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backward through one step. `dh` is the total gradient reaching `h_t`,
/// `dc` the gradient reaching `C_t` from step `t+1`. Parameter gradients are
/// accumulated into `grads`.
pub fn backward_cell(
    params: &LstmLayerParams,
    grads: &mut LstmLayerParams,
    x: &[f64],
    prev: &LstmState,
    step: &LstmStep,
    dh: &[f64],
    dc: &[f64],
) -> CellBackward {
    let n = dh.len();
    let mut dzf = vec![0.0; n];
    let mut dzi = vec![0.0; n];
    let mut dzc = vec![0.0; n];
    let mut dzo = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let tc = step.c[k].tanh();
        let o = step.output[k];
        let f = step.forget[k];
        let i = step.input[k];
        let g = step.candidate[k];
        dzo[k] = dh[k] * tc * o * (1.0 - o);
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dzf[k] = dct * prev.c[k] * f * (1.0 - f);
        dzi[k] = dct * g * i * (1.0 - i);
        dzc[k] = dct * i * (1.0 - g * g);
        dc_prev[k] = dct * f;
    }
    let mut dx = vec![0.0; x.len()];
    let mut dh_prev = vec![0.0; n];
    let gates = [
        (&params.w_fx, &params.w_fh, &dzf),
        (&params.w_ix, &params.w_ih, &dzi),
        (&params.w_cx, &params.w_ch, &dzc),
        (&params.w_ox, &params.w_oh, &dzo),
    ];
    for (wx, wh, dz) in gates {
        wx.tmul_vec_add(dz, &mut dx);
        wh.tmul_vec_add(dz, &mut dh_prev);
    }
    grads.w_fx.add_outer(&dzf, x);
    grads.w_fh.add_outer(&dzf, &prev.h);
    add_assign(&mut grads.b_f, &dzf);
    grads.w_ix.add_outer(&dzi, x);
    grads.w_ih.add_outer(&dzi, &prev.h);
    add_assign(&mut grads.b_i, &dzi);
    grads.w_cx.add_outer(&dzc, x);
    grads.w_ch.add_outer(&dzc, &prev.h);
    add_assign(&mut grads.b_c, &dzc);
    grads.w_ox.add_outer(&dzo, x);
    grads.w_oh.add_outer(&dzo, &prev.h);
    add_assign(&mut grads.b_o, &dzo);
    CellBackward {
        dx,
        dh_prev,
        dc_prev,
    }
}

/// Simple recurrent layer `h = tanh(W_x·x + W_h·h_prev + b_h)` with a
/// learned initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayerParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b_h: Vec<f64>,
    pub h0: Vec<f64>,
}

impl RnnLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        RnnLayerParams {
            w_x: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
            h0: vec![0.0; hidden],
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        RnnLayerParams {
            w_x: Matrix::uniform(hidden, input, bound, rng),
            w_h: Matrix::uniform(hidden, hidden, bound, rng),
            b_h: vec![0.0; hidden],
            h0: vec![0.0; hidden],
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_x", &self.w_x.data[..]),
            ("w_h", &self.w_h.data[..]),
            ("b_h", &self.b_h[..]),
            ("h0", &self.h0[..]),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_x.data[..],
            &mut self.w_h.data[..],
            &mut self.b_h[..],
            &mut self.h0[..],
        ]
    }
}

pub fn forward_rnn_cell(params: &RnnLayerParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if !all_finite(x) || !all_finite(h_prev) {
        return Err(Error::NumericalFault("rnn cell input"));
    }
    let mut h = preactivation(&params.w_x, &params.w_h, &params.b_h, x, h_prev);
    h.iter_mut().for_each(|z| *z = z.tanh());
    Ok(h)
}

/// Returns `(dx, dh_prev)`.
pub fn backward_rnn_cell(
    params: &RnnLayerParams,
    grads: &mut RnnLayerParams,
    x: &[f64],
    h_prev: &[f64],
    h: &[f64],
    dh: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let dz: Vec<f64> = dh.iter().zip(h).map(|(d, h)| d * (1.0 - h * h)).collect();
    let mut dx = vec![0.0; x.len()];
    let mut dh_prev = vec![0.0; h.len()];
    params.w_x.tmul_vec_add(&dz, &mut dx);
    params.w_h.tmul_vec_add(&dz, &mut dh_prev);
    grads.w_x.add_outer(&dz, x);
    grads.w_h.add_outer(&dz, h_prev);
    add_assign(&mut grads.b_h, &dz);
    (dx, dh_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;

    #[test]
    fn zero_weights_give_half_gates() {
        let p = LstmLayerParams::zeros(3, 4);
        let s = forward_cell(&p, &[0.3, -1.0, 2.0], &LstmState::zeros(4)).unwrap();
        assert!(s.forget.iter().chain(&s.input).chain(&s.output).all(|&g| g == 0.5));
        assert!(s.candidate.iter().chain(&s.c).chain(&s.h).all(|&v| v == 0.0));
    }

    #[test]
    fn open_forget_gate_keeps_cell() {
        let mut p = LstmLayerParams::zeros(2, 3);
        p.b_f = vec![30.0; 3];
        let prev = LstmState {
            h: vec![0.0; 3],
            c: vec![0.7, -1.5, 2.0],
        };
        let s = forward_cell(&p, &[1.0, 1.0], &prev).unwrap();
        for (c, c0) in s.c.iter().zip(&prev.c) {
            assert!((c - c0).abs() < 1e-12 * c0.abs().max(1.0));
        }
    }

    /// Straight-line transcription of the gate equations, unit by unit.
    fn reference_step(p: &LstmLayerParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let n = p.b_f.len();
        let mut c_out = vec![0.0; n];
        let mut h_out = vec![0.0; n];
        for k in 0..n {
            let lin = |w_x: &Matrix, w_h: &Matrix, b: &[f64]| {
                let mut s = b[k];
                for j in 0..x.len() {
                    s += w_x.data[k * x.len() + j] * x[j];
                }
                for j in 0..n {
                    s += w_h.data[k * n + j] * h[j];
                }
                s
            };
            let f = sig(lin(&p.w_fx, &p.w_fh, &p.b_f));
            let i = sig(lin(&p.w_ix, &p.w_ih, &p.b_i));
            let g = lin(&p.w_cx, &p.w_ch, &p.b_c).tanh();
            let o = sig(lin(&p.w_ox, &p.w_oh, &p.b_o));
            c_out[k] = f * c[k] + i * g;
            h_out[k] = o * c_out[k].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn matches_reference_transcription() {
        let mut rng = rng_from(11);
        for _ in 0..20 {
            let mut p = LstmLayerParams::init(4, 3, &mut rng);
            for b in [&mut p.b_f, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
                b.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let prev = LstmState {
                h: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                c: (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            };
            let s = forward_cell(&p, &x, &prev).unwrap();
            let (h, c) = reference_step(&p, &x, &prev.h, &prev.c);
            for k in 0..3 {
                assert!((s.h[k] - h[k]).abs() <= 1e-12 * h[k].abs().max(1e-300));
                assert!((s.c[k] - c[k]).abs() <= 1e-12 * c[k].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let p = LstmLayerParams::zeros(1, 1);
        assert!(matches!(
            forward_cell(&p, &[f64::NAN], &LstmState::zeros(1)),
            Err(Error::NumericalFault(_))
        ));
        let r = RnnLayerParams::zeros(1, 1);
        assert!(forward_rnn_cell(&r, &[f64::INFINITY], &[0.0]).is_err());
    }
}
