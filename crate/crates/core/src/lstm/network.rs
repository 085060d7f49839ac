use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::cell::{
    backward_cell, backward_rnn_cell, forward_cell, forward_rnn_cell, LstmLayerParams, LstmState,
    LstmStep, RnnLayerParams,
};
use super::tensor::{add_assign, all_finite, softmax, Matrix};
use crate::error::{Error, Result};
use crate::util::{argmax, rng_from};

/// Probability floor inside the cross-entropy log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Rnn,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Rnn => "rnn",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "rnn" => Ok(CellKind::Rnn),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Architecture of a network, everything except the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub cell: CellKind,
    pub dropout: f64,
    /// Maximum number of context actions fed to the network.
    pub window: usize,
    /// Start each window from the state left by the preceding window instead
    /// of zeros.
    pub carry_state: bool,
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 {
            return bad("vocabulary is empty".into());
        }
        if !(1..=3).contains(&self.layers) {
            return bad(format!("layer count must be 1..=3, got {}", self.layers));
        }
        if self.hidden == 0 || self.emb_dim == 0 {
            return bad("hidden size and embedding size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Lstm(LstmLayerParams),
    Rnn(RnnLayerParams),
}

/// Every trainable tensor. Gradients and optimizer accumulators share this
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `V × emb_dim`, one row per action id.
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `V × hidden`
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

impl Params {
    fn build(shape: &NetworkShape, rng: Option<&mut ChaCha8Rng>) -> Self {
        let mut rng = rng;
        let layers = (0..shape.layers)
            .map(|l| {
                let input = if l == 0 { shape.emb_dim } else { shape.hidden };
                match (shape.cell, rng.as_deref_mut()) {
                    (CellKind::Lstm, Some(r)) => LayerParams::Lstm(LstmLayerParams::init(input, shape.hidden, r)),
                    (CellKind::Lstm, None) => LayerParams::Lstm(LstmLayerParams::zeros(input, shape.hidden)),
                    (CellKind::Rnn, Some(r)) => LayerParams::Rnn(RnnLayerParams::init(input, shape.hidden, r)),
                    (CellKind::Rnn, None) => LayerParams::Rnn(RnnLayerParams::zeros(input, shape.hidden)),
                }
            })
            .collect();
        let (embedding, out_w) = match rng {
            Some(r) => (
                Matrix::uniform(shape.vocab_size, shape.emb_dim, 1.0 / (shape.vocab_size as f64).sqrt(), r),
                Matrix::uniform(shape.vocab_size, shape.hidden, 1.0 / (shape.hidden as f64).sqrt(), r),
            ),
            None => (
                Matrix::zeros(shape.vocab_size, shape.emb_dim),
                Matrix::zeros(shape.vocab_size, shape.hidden),
            ),
        };
        Params {
            embedding,
            layers,
            out_w,
            out_b: vec![0.0; shape.vocab_size],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Named tensors in checkpoint order: embedding, each layer's tensors,
    /// output weights, output bias.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![("embedding".to_string(), &self.embedding.data[..])];
        for (l, layer) in self.layers.iter().enumerate() {
            let named = match layer {
                LayerParams::Lstm(p) => p.tensors(),
                LayerParams::Rnn(p) => p.tensors(),
            };
            out.extend(named.into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out.push(("out_w".into(), &self.out_w.data[..]));
        out.push(("out_b".into(), &self.out_b[..]));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embedding.data[..]];
        for layer in &mut self.layers {
            match layer {
                LayerParams::Lstm(p) => out.extend(p.tensors_mut()),
                LayerParams::Rnn(p) => out.extend(p.tensors_mut()),
            }
        }
        out.push(&mut self.out_w.data[..]);
        out.push(&mut self.out_b[..]);
        out
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            add_assign(a, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| all_finite(t))
    }
}

/// Recurrent state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerState {
    Lstm(LstmState),
    Rnn(Vec<f64>),
}

impl LayerState {
    pub fn h(&self) -> &[f64] {
        match self {
            LayerState::Lstm(s) => &s.h,
            LayerState::Rnn(h) => h,
        }
    }
}

/// Inverted-dropout masks on the edges between stacked layers, indexed
/// `[boundary][step][unit]`. Entries are `0` or `1/(1-rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Vec<Vec<f64>>>);

pub enum Mode<'a> {
    /// Dropout off, nothing random.
    Infer,
    /// Training pass with masks sampled from `rng`.
    Train(&'a mut ChaCha8Rng),
    /// Training pass with caller-provided masks.
    TrainWithMasks(&'a DropoutMasks),
}

#[derive(Debug, Clone)]
enum StepCache {
    Lstm { x: Vec<f64>, prev: LstmState, step: LstmStep },
    Rnn { x: Vec<f64>, h_prev: Vec<f64>, h: Vec<f64> },
}

/// Everything one forward pass over a window produced.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub ids: Vec<u32>,
    /// Softmax output per step, `V` entries each.
    pub probs: Vec<Vec<f64>>,
    /// Masks used between layers; `None` for an inference pass.
    pub masks: Option<DropoutMasks>,
    /// State after the last step of each layer.
    pub final_state: Vec<LayerState>,
    steps: Vec<Vec<StepCache>>,
    carried_init: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork {
    pub shape: NetworkShape,
    pub params: Params,
}

/// Mean over steps of `-ln max(p[target], 1e-12)`.
pub fn loss(probs: &[Vec<f64>], targets: &[u32]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::Misaligned(format!(
            "{} outputs vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(p, &t)| -p[t as usize].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / probs.len() as f64)
}

impl LstmNetwork {
    /// Weights uniform in `±1/sqrt(fan_in)` from `seed`, biases zero.
    pub fn new(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng_from(seed);
        Ok(LstmNetwork {
            shape,
            params: Params::build(&shape, Some(&mut rng)),
        })
    }

    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(LstmNetwork {
            shape,
            params: Params::build(&shape, None),
        })
    }

    pub fn zero_state(&self) -> Vec<LayerState> {
        self.params
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Lstm(p) => LayerState::Lstm(LstmState::zeros(p.hidden_size())),
                LayerParams::Rnn(p) => LayerState::Rnn(p.h0.clone()),
            })
            .collect()
    }

    fn sample_masks(&self, steps: usize, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let rate = self.shape.dropout;
        let keep = 1.0 / (1.0 - rate);
        DropoutMasks(
            (1..self.shape.layers)
                .map(|_| {
                    (0..steps)
                        .map(|_| {
                            (0..self.shape.hidden)
                                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Runs the network over `ids`, one embedded action per step, starting
    /// from `init` (zeros, or the learned `h0` for RNN layers, when `None`).
    pub fn forward_sequence(
        &self,
        ids: &[u32],
        mode: Mode<'_>,
        init: Option<&[LayerState]>,
    ) -> Result<ForwardCache> {
        let v = self.shape.vocab_size;
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::IdOutOfRange { id: bad, vocab_size: v });
        }
        let masks = match mode {
            Mode::Infer => None,
            Mode::Train(rng) => Some(self.sample_masks(ids.len(), rng)),
            Mode::TrainWithMasks(m) => {
                let ok = m.0.len() == self.shape.layers - 1
                    && m.0.iter().all(|b| {
                        b.len() == ids.len() && b.iter().all(|s| s.len() == self.shape.hidden)
                    });
                if !ok {
                    return Err(Error::Config("dropout mask shape does not match the window".into()));
                }
                Some(m.clone())
            }
        };
        let mut state: Vec<LayerState> = match init {
            Some(s) => s.to_vec(),
            None => self.zero_state(),
        };
        let mut steps: Vec<Vec<StepCache>> = vec![Vec::with_capacity(ids.len()); self.shape.layers];
        let mut probs = Vec::with_capacity(ids.len());
        for (t, &id) in ids.iter().enumerate() {
            let mut x = self.params.embedding.row(id as usize).to_vec();
            for (l, layer) in self.params.layers.iter().enumerate() {
                if l > 0 {
                    if let Some(m) = &masks {
                        for (xi, mi) in x.iter_mut().zip(&m.0[l - 1][t]) {
                            *xi *= mi;
                        }
                    }
                }
                let (cache, next) = match (layer, &state[l]) {
                    (LayerParams::Lstm(p), LayerState::Lstm(prev)) => {
                        let step = forward_cell(p, &x, prev)?;
                        let next = LayerState::Lstm(step.state());
                        (StepCache::Lstm { x, prev: prev.clone(), step }, next)
                    }
                    (LayerParams::Rnn(p), LayerState::Rnn(h_prev)) => {
                        let h = forward_rnn_cell(p, &x, h_prev)?;
                        let next = LayerState::Rnn(h.clone());
                        (StepCache::Rnn { x, h_prev: h_prev.clone(), h }, next)
                    }
                    _ => return Err(Error::Config("initial state does not match cell kind".into())),
                };
                x = next.h().to_vec();
                state[l] = next;
                steps[l].push(cache);
            }
            let mut logits = self.params.out_b.clone();
            self.params.out_w.mul_vec_add(&x, &mut logits);
            let p = softmax(&logits);
            if !all_finite(&p) {
                return Err(Error::NumericalFault("softmax output"));
            }
            probs.push(p);
        }
        Ok(ForwardCache {
            ids: ids.to_vec(),
            probs,
            masks,
            final_state: state,
            steps,
            carried_init: init.is_some(),
        })
    }

    /// Accumulates the gradient of the window loss (mean cross-entropy over
    /// its steps) into `grads`, which must have this network's layout.
    /// Returns the loss.
    pub fn backward_into(&self, cache: &ForwardCache, targets: &[u32], grads: &mut Params) -> Result<f64> {
        let steps = cache.ids.len();
        if targets.len() != steps || cache.probs.len() != steps {
            return Err(Error::MissingCache("one target per forward step"));
        }
        if cache.steps.len() != self.shape.layers || cache.steps.iter().any(|s| s.len() != steps) {
            return Err(Error::MissingCache("per-layer step caches"));
        }
        if self.shape.layers > 1 && self.shape.dropout > 0.0 && cache.masks.is_none() {
            return Err(Error::MissingCache("dropout masks (forward ran in inference mode)"));
        }
        let window_loss = loss(&cache.probs, targets)?;
        if steps == 0 {
            return Ok(window_loss);
        }
        let scale = 1.0 / steps as f64;
        let hidden = self.shape.hidden;

        // output layer
        let mut d_above: Vec<Vec<f64>> = Vec::with_capacity(steps);
        for t in 0..steps {
            let target = targets[t] as usize;
            let p = &cache.probs[t];
            let h_top = match &cache.steps[self.shape.layers - 1][t] {
                StepCache::Lstm { step, .. } => &step.h,
                StepCache::Rnn { h, .. } => h,
            };
            let mut dh = vec![0.0; hidden];
            if p[target] >= PROB_FLOOR {
                let mut dlogits: Vec<f64> = p.iter().map(|&q| q * scale).collect();
                dlogits[target] -= scale;
                grads.out_w.add_outer(&dlogits, h_top);
                add_assign(&mut grads.out_b, &dlogits);
                self.params.out_w.tmul_vec_add(&dlogits, &mut dh);
            }
            d_above.push(dh);
        }

        for l in (0..self.shape.layers).rev() {
            let mut d_below: Vec<Vec<f64>> = vec![Vec::new(); steps];
            match (&self.params.layers[l], &mut grads.layers[l]) {
                (LayerParams::Lstm(p), LayerParams::Lstm(g)) => {
                    let mut dh_next = vec![0.0; hidden];
                    let mut dc_next = vec![0.0; hidden];
                    for t in (0..steps).rev() {
                        let StepCache::Lstm { x, prev, step } = &cache.steps[l][t] else {
                            return Err(Error::MissingCache("lstm step"));
                        };
                        let mut dh = d_above[t].clone();
                        add_assign(&mut dh, &dh_next);
                        let back = backward_cell(p, g, x, prev, step, &dh, &dc_next);
                        dh_next = back.dh_prev;
                        dc_next = back.dc_prev;
                        d_below[t] = back.dx;
                    }
                }
                (LayerParams::Rnn(p), LayerParams::Rnn(g)) => {
                    let mut dh_next = vec![0.0; hidden];
                    for t in (0..steps).rev() {
                        let StepCache::Rnn { x, h_prev, h } = &cache.steps[l][t] else {
                            return Err(Error::MissingCache("rnn step"));
                        };
                        let mut dh = d_above[t].clone();
                        add_assign(&mut dh, &dh_next);
                        let (dx, dh_prev) = backward_rnn_cell(p, g, x, h_prev, h, &dh);
                        dh_next = dh_prev;
                        d_below[t] = dx;
                    }
                    if !cache.carried_init {
                        add_assign(&mut g.h0, &dh_next);
                    }
                }
                _ => return Err(Error::Config("gradient layout does not match network".into())),
            }
            if l > 0 {
                if let Some(m) = &cache.masks {
                    for (d, mask) in d_below.iter_mut().zip(&m.0[l - 1]) {
                        for (di, mi) in d.iter_mut().zip(mask) {
                            *di *= mi;
                        }
                    }
                }
                d_above = d_below;
            } else {
                for (t, dx) in d_below.iter().enumerate() {
                    add_assign(grads.embedding.row_mut(cache.ids[t] as usize), dx);
                }
            }
        }
        Ok(window_loss)
    }

    /// Loss and gradients of one window.
    pub fn backward(&self, cache: &ForwardCache, targets: &[u32]) -> Result<(f64, Params)> {
        let mut grads = self.params.zeros_like();
        let l = self.backward_into(cache, targets, &mut grads)?;
        Ok((l, grads))
    }

    /// Inference-mode window loss.
    pub fn window_loss(&self, inputs: &[u32], targets: &[u32], init: Option<&[LayerState]>) -> Result<f64> {
        let cache = self.forward_sequence(inputs, Mode::Infer, init)?;
        loss(&cache.probs, targets)
    }

    /// State reached by running `ids` in inference mode from the default
    /// initial state.
    pub fn burn_in(&self, ids: &[u32]) -> Result<Vec<LayerState>> {
        Ok(self.forward_sequence(ids, Mode::Infer, None)?.final_state)
    }

    /// Next-action distribution after the most recent `window` actions of
    /// `context`, plus its argmax (ties to the lowest id).
    pub fn predict_next(&self, context: &[u32]) -> Result<(u32, Vec<f64>)> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let w = self.shape.window;
        let start = context.len().saturating_sub(w);
        let init = if self.shape.carry_state && start > 0 {
            Some(self.burn_in(&context[start.saturating_sub(w)..start])?)
        } else {
            None
        };
        let cache = self.forward_sequence(&context[start..], Mode::Infer, init.as_deref())?;
        let last = cache.probs.into_iter().last().expect("non-empty context");
        let best = argmax(&last).expect("non-empty vocabulary") as u32;
        Ok((best, last))
    }
}

impl crate::eval::Predictor for LstmNetwork {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        self.predict_next(context).map(|(id, _)| Some(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn shape(layers: usize, cell: CellKind, dropout: f64) -> NetworkShape {
        NetworkShape {
            vocab_size: 7,
            emb_dim: 5,
            hidden: 6,
            layers,
            cell,
            dropout,
            window: 9,
            carry_state: false,
        }
    }

    #[test]
    fn outputs_are_distributions() {
        let net = LstmNetwork::new(shape(2, CellKind::Lstm, 0.3), 4).unwrap();
        let cache = net.forward_sequence(&[0, 3, 6, 2, 2], Mode::Infer, None).unwrap();
        for p in &cache.probs {
            assert_eq!(p.len(), 7);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
    }

    #[test]
    fn zero_dropout_train_equals_infer() {
        let net = LstmNetwork::new(shape(3, CellKind::Lstm, 0.0), 1).unwrap();
        let ids = [1, 2, 3, 4, 5, 6, 0];
        let a = net.forward_sequence(&ids, Mode::Infer, None).unwrap();
        let b = net
            .forward_sequence(&ids, Mode::Train(&mut rng_from(9)), None)
            .unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn single_layer_matches_manual_cell_iteration() {
        let net = LstmNetwork::new(shape(1, CellKind::Lstm, 0.0), 2).unwrap();
        let ids = [4, 1, 1, 5];
        let cache = net.forward_sequence(&ids, Mode::Infer, None).unwrap();
        let LayerParams::Lstm(p) = &net.params.layers[0] else { unreachable!() };
        let mut state = LstmState::zeros(6);
        for (t, &id) in ids.iter().enumerate() {
            let step = forward_cell(p, net.params.embedding.row(id as usize), &state).unwrap();
            let mut logits = net.params.out_b.clone();
            net.params.out_w.mul_vec_add(&step.h, &mut logits);
            assert_eq!(softmax(&logits), cache.probs[t]);
            state = step.state();
        }
    }

    #[test]
    fn gates_stay_in_range() {
        let net = LstmNetwork::new(shape(2, CellKind::Lstm, 0.0), 8).unwrap();
        let cache = net
            .forward_sequence(&[0, 1, 2, 3, 4, 5, 6, 0, 1], Mode::Infer, None)
            .unwrap();
        for layer in &cache.steps {
            for s in layer {
                let StepCache::Lstm { step, .. } = s else { unreachable!() };
                for g in step.forget.iter().chain(&step.input).chain(&step.output) {
                    assert!(*g > 0.0 && *g < 1.0);
                }
                assert!(step.candidate.iter().all(|c| *c > -1.0 && *c < 1.0));
            }
        }
    }

    #[test]
    fn loss_cases() {
        let uniform = vec![vec![0.25; 4]];
        assert!((loss(&uniform, &[2]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss(&[vec![0.0, 1.0]], &[1]).unwrap(), 0.0);
        // floor keeps the loss finite
        assert!((loss(&[vec![0.0, 1.0]], &[0]).unwrap() - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(loss(&uniform, &[]).is_err());
    }

    #[test]
    fn id_out_of_range_and_empty_context() {
        let net = LstmNetwork::new(shape(1, CellKind::Lstm, 0.0), 2).unwrap();
        assert!(matches!(
            net.forward_sequence(&[7], Mode::Infer, None),
            Err(Error::IdOutOfRange { id: 7, .. })
        ));
        assert!(matches!(net.predict_next(&[]), Err(Error::EmptyContext)));
    }

    #[test]
    fn zero_output_weights_predict_lowest_id() {
        let mut net = LstmNetwork::new(shape(2, CellKind::Lstm, 0.0), 2).unwrap();
        net.params.out_w = Matrix::zeros(7, 6);
        let (id, dist) = net.predict_next(&[3, 4, 5]).unwrap();
        assert_eq!(id, 0);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inference_needs_masks_for_backward() {
        let net = LstmNetwork::new(shape(2, CellKind::Lstm, 0.5), 2).unwrap();
        let cache = net.forward_sequence(&[1, 2], Mode::Infer, None).unwrap();
        assert!(matches!(net.backward(&cache, &[2, 3]), Err(Error::MissingCache(_))));
        let cache = net.forward_sequence(&[1, 2], Mode::Train(&mut rng_from(1)), None).unwrap();
        assert!(net.backward(&cache, &[2]).is_err());
        assert!(net.backward(&cache, &[2, 3]).is_ok());
    }

    #[test]
    fn masked_unit_gets_no_gradient_through_its_edge() {
        let net = LstmNetwork::new(shape(2, CellKind::Lstm, 0.5), 5).unwrap();
        let ids = [1, 2, 3];
        let mut masks = DropoutMasks(vec![vec![vec![2.0; 6]; 3]]);
        for t in 0..3 {
            masks.0[0][t][4] = 0.0;
        }
        let cache = net.forward_sequence(&ids, Mode::TrainWithMasks(&masks), None).unwrap();
        let (_, g) = net.backward(&cache, &[2, 3, 4]).unwrap();
        let LayerParams::Lstm(g1) = &g.layers[1] else { unreachable!() };
        // column 4 of every input matrix of layer 2 only sees the dropped unit
        for w in [&g1.w_fx, &g1.w_ix, &g1.w_cx, &g1.w_ox] {
            for r in 0..6 {
                assert_eq!(w.row(r)[4], 0.0);
            }
        }
    }

    #[test]
    fn output_bias_gradient_identity() {
        let net = LstmNetwork::new(shape(1, CellKind::Lstm, 0.0), 3).unwrap();
        let ids = [0, 5, 2, 2];
        let targets = [5, 2, 2, 6];
        let cache = net.forward_sequence(&ids, Mode::Infer, None).unwrap();
        let (_, g) = net.backward(&cache, &targets).unwrap();
        for k in 0..7 {
            let expected: f64 = (0..4)
                .map(|t| cache.probs[t][k] - f64::from(targets[t] as usize == k))
                .sum::<f64>()
                / 4.0;
            assert!((g.out_b[k] - expected).abs() < 1e-14);
        }
    }
}
