use nextaction::lstm::network::{loss, CellKind, LayerState, LstmNetwork, Mode, NetworkShape};
use nextaction::util::rng_from;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
// Below this magnitude gradients are compared absolutely.
const FLOOR: f64 = 1e-5;

fn shape(cell: CellKind, dropout: f64) -> NetworkShape {
    NetworkShape {
        vocab_size: 7,
        emb_dim: 5,
        hidden: 6,
        layers: 2,
        cell,
        dropout,
        window: 9,
        carry_state: false,
    }
}

/// Worst relative error per parameter tensor between the analytic gradient
/// and central differences of the loss under the same dropout masks.
fn worst_errors(net: &mut LstmNetwork, seed: u64, init: Option<Vec<LayerState>>) -> Vec<(String, f64)> {
    let mut rng = rng_from(seed ^ 0xABCD);
    let v = net.shape.vocab_size as u32;
    let inputs: Vec<u32> = (0..9).map(|_| rng.gen_range(0..v)).collect();
    let targets: Vec<u32> = (0..9).map(|_| rng.gen_range(0..v)).collect();
    let cache = net
        .forward_sequence(&inputs, Mode::Train(&mut rng), init.as_deref())
        .unwrap();
    let masks = cache.masks.clone().unwrap();
    let (_, grads) = net.backward(&cache, &targets).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();

    let eval = |net: &LstmNetwork| {
        let c = net
            .forward_sequence(&inputs, Mode::TrainWithMasks(&masks), init.as_deref())
            .unwrap();
        loss(&c.probs, &targets).unwrap()
    };
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..a.len() {
            let orig = net.params.tensors_mut()[ti][k];
            net.params.tensors_mut()[ti][k] = orig + STEP;
            let up = eval(net);
            net.params.tensors_mut()[ti][k] = orig - STEP;
            let down = eval(net);
            net.params.tensors_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let denom = a[k].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max((a[k] - numeric).abs() / denom);
        }
        out.push((name.clone(), worst));
    }
    out
}

fn check(cell: CellKind, dropout: f64) {
    for seed in 0..10u64 {
        let mut net = LstmNetwork::new(shape(cell, dropout), seed).unwrap();
        for (name, err) in worst_errors(&mut net, seed, None) {
            assert!(err <= TOLERANCE, "{cell:?} seed {seed} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn lstm_gradients_match_finite_differences() {
    check(CellKind::Lstm, 0.0);
}

#[test]
fn lstm_gradients_with_dropout_masks() {
    check(CellKind::Lstm, 0.3);
}

#[test]
fn rnn_gradients_match_finite_differences() {
    check(CellKind::Rnn, 0.25);
}

#[test]
fn gradients_from_a_carried_state() {
    for cell in [CellKind::Lstm, CellKind::Rnn] {
        let mut net = LstmNetwork::new(shape(cell, 0.0), 42).unwrap();
        let init = net.burn_in(&[1, 4, 2, 2, 6]).unwrap();
        for (name, err) in worst_errors(&mut net, 42, Some(init)) {
            assert!(err <= TOLERANCE, "{cell:?} {name}: relative error {err:e}");
        }
    }
}
