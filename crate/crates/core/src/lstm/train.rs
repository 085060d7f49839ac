//! Truncated-BPTT training with RMSprop, and the CV / grid-search drivers.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::network::{CellKind, LayerState, LstmNetwork, Mode, NetworkShape, Params};
use super::optim::RmsProp;
use crate::error::{Error, Result};
use crate::eval::{self, CvRun, FoldPlan, Predictor};
use crate::ingest::{Corpus, StudentSequence};
use crate::util::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Context length `W`; training windows hold `W + 1` actions.
    pub window: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
    pub hidden_size: usize,
    pub layers: usize,
    pub emb_dim: usize,
    pub cell: CellKind,
    pub carry_state: bool,
    /// Share of training students held out to monitor accuracy per epoch.
    pub hill_climb_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            window: 10,
            batch_size: 32,
            dropout: 0.2,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            seed: 0,
            hidden_size: 64,
            layers: 1,
            emb_dim: 64,
            cell: CellKind::Lstm,
            carry_state: false,
            hill_climb_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self, vocab_size: usize) -> NetworkShape {
        NetworkShape {
            vocab_size,
            emb_dim: self.emb_dim,
            hidden: self.hidden_size,
            layers: self.layers,
            cell: self.cell,
            dropout: self.dropout,
            window: self.window,
            carry_state: self.carry_state,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.window < 1 {
            return bad("window must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop decay must be in [0,1) and epsilon > 0".into());
        }
        if !(self.hill_climb_fraction > 0.0 && self.hill_climb_fraction < 1.0) {
            return bad("hill-climb fraction must be in (0,1)".into());
        }
        self.shape(1).validate()
    }

    /// Key/value view for report metadata.
    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), self.learning_rate.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("window".into(), self.window.to_string()),
            ("batch".into(), self.batch_size.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("rmsprop_decay".into(), self.rmsprop_decay.to_string()),
            ("rmsprop_epsilon".into(), self.rmsprop_epsilon.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("nodes".into(), self.hidden_size.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("emb_dim".into(), self.emb_dim.to_string()),
            ("cell".into(), self.cell.name().into()),
            ("carry_state".into(), self.carry_state.to_string()),
            ("hill_climb_fraction".into(), self.hill_climb_fraction.to_string()),
        ]
    }
}

/// A training window: `len` actions of sequence `seq` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub seq: usize,
    pub start: usize,
    pub len: usize,
}

/// Windows of `w + 1` actions advancing by `w`, so every transition of the
/// sequence is a target exactly once and input spans never overlap. The last
/// window may be shorter but always has at least two actions.
pub fn make_windows(sequences: &[&StudentSequence], w: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, s) in sequences.iter().enumerate() {
        let n = s.actions.len();
        let mut start = 0;
        while start + 1 < n {
            out.push(Window {
                seq: i,
                start,
                len: (w + 1).min(n - start),
            });
            start += w;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub hillclimb_accuracy: Option<f64>,
}

/// `epoch,train_loss,hillclimb_accuracy` rows; an empty hold-out leaves the
/// last column blank.
pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,hillclimb_accuracy\n");
    for e in curve {
        let acc = e.hillclimb_accuracy.map_or_else(String::new, |a| a.to_string());
        out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, acc));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedLstm {
    pub network: LstmNetwork,
    pub curve: Vec<EpochStats>,
}

impl Predictor for TrainedLstm {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        self.network.predict(context)
    }
}

fn window_gradient(
    net: &LstmNetwork,
    sequences: &[&StudentSequence],
    w: Window,
    seed: u64,
) -> Result<(f64, Params)> {
    let actions = &sequences[w.seq].actions[w.start..w.start + w.len];
    let (inputs, targets) = (&actions[..w.len - 1], &actions[1..]);
    let init: Option<Vec<LayerState>> = if net.shape.carry_state && w.start > 0 {
        let from = w.start.saturating_sub(net.shape.window);
        Some(net.burn_in(&sequences[w.seq].actions[from..w.start])?)
    } else {
        None
    };
    let mut rng = rng_from(seed);
    let cache = net.forward_sequence(inputs, Mode::Train(&mut rng), init.as_deref())?;
    net.backward(&cache, targets)
}

/// Mean gradient of a batch. Windows are processed in parallel but summed in
/// batch order, so the result does not depend on the worker count.
fn batch_gradient(
    net: &LstmNetwork,
    sequences: &[&StudentSequence],
    batch: &[Window],
    seeds: &[u64],
) -> Result<(Params, f64)> {
    let parts: Vec<Result<(f64, Params)>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&w, &seed)| window_gradient(net, sequences, w, seed))
        .collect();
    let mut total = net.params.zeros_like();
    let mut loss_sum = 0.0;
    for p in parts {
        let (l, g) = p?;
        total.add_assign(&g);
        loss_sum += l;
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, loss_sum))
}

fn holdout_accuracy(net: &LstmNetwork, holdout: &[&StudentSequence]) -> Result<Option<f64>> {
    let scores: Vec<Result<Option<f64>>> = holdout
        .par_iter()
        .map(|s| eval::sequence_accuracy(net, &s.actions))
        .collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in scores {
        if let Some(p) = s? {
            sum += p;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Trains a fresh network on `train`, recording loss and hold-out accuracy
/// after every epoch. Returns the final-epoch network.
pub fn train(
    train: &[&StudentSequence],
    hill_climb: &[&StudentSequence],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<TrainedLstm> {
    cfg.validate()?;
    let windows = make_windows(train, cfg.window);
    if windows.is_empty() {
        return Err(Error::Config("no training sequence has two or more actions".into()));
    }
    let mut net = LstmNetwork::new(cfg.shape(vocab_size), derive_seed(cfg.seed, 1))?;
    let mut opt = RmsProp::new(&net.params, cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    let mut rng = rng_from(derive_seed(cfg.seed, 2));
    let mut order: Vec<Window> = windows;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let (grads, l) = batch_gradient(&net, train, batch, &seeds)?;
            if !grads.all_finite() {
                return Err(Error::NumericalFault("gradient"));
            }
            opt.step(&mut net.params, &grads);
            loss_sum += l;
        }
        curve.push(EpochStats {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            hillclimb_accuracy: holdout_accuracy(&net, hill_climb)?,
        });
    }
    Ok(TrainedLstm {
        network: net,
        curve,
    })
}

/// Holds out `cfg.hill_climb_fraction` of the students, then trains.
pub fn train_with_holdout(
    sequences: &[&StudentSequence],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<TrainedLstm> {
    if sequences.is_empty() {
        return Err(Error::Config("cannot train on an empty corpus".into()));
    }
    let (kept, held) = eval::hill_climb_split(sequences, cfg.hill_climb_fraction, derive_seed(cfg.seed, 3))?;
    train(&kept, &held, vocab_size, cfg)
}

fn model_name(cfg: &TrainConfig) -> String {
    format!(
        "{}(layers={},nodes={},lr={})",
        cfg.cell.name(),
        cfg.layers,
        cfg.hidden_size,
        cfg.learning_rate
    )
}

/// Cross-validated network; each fold trains with its own derived seed.
pub fn cross_validate(corpus: &Corpus, cfg: &TrainConfig, plan: &FoldPlan) -> Result<CvRun<TrainedLstm>> {
    cfg.validate()?;
    let v = corpus.vocab_size;
    let mut run = eval::cross_validate(
        &model_name(cfg),
        |train, fold| {
            let fold_cfg = TrainConfig {
                seed: eval::fold_seed(cfg.seed, fold),
                ..*cfg
            };
            train_with_holdout(train, v, &fold_cfg)
        },
        corpus,
        plan,
    )?;
    for (k, val) in cfg.describe() {
        run.report.metadata.insert(k, val);
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub layers: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub point: GridPoint,
    pub per_fold_accuracy: Vec<f64>,
    pub cv_accuracy: f64,
}

/// Full product of the three axes in layers-major order.
pub fn grid(layers: &[usize], nodes: &[usize], rates: &[f64]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &l in layers {
        for &n in nodes {
            for &r in rates {
                out.push(GridPoint {
                    layers: l,
                    hidden_size: n,
                    learning_rate: r,
                });
            }
        }
    }
    out
}

/// Cross-validates every point not rejected by `skip` and returns the rows
/// sorted by CV accuracy, best first (ties keep grid order).
pub fn grid_search<S>(
    corpus: &Corpus,
    base: &TrainConfig,
    points: &[GridPoint],
    skip: S,
    plan: &FoldPlan,
) -> Result<Vec<GridRow>>
where
    S: Fn(&GridPoint) -> bool,
{
    if points.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut rows = Vec::new();
    for p in points.iter().filter(|p| !skip(p)) {
        let cfg = TrainConfig {
            layers: p.layers,
            hidden_size: p.hidden_size,
            learning_rate: p.learning_rate,
            ..*base
        };
        let run = cross_validate(corpus, &cfg, plan)?;
        rows.push(GridRow {
            point: *p,
            per_fold_accuracy: run.report.per_fold_accuracy,
            cv_accuracy: run.report.cv_accuracy,
        });
    }
    rows.sort_by(|a, b| b.cv_accuracy.total_cmp(&a.cv_accuracy));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, actions: Vec<u32>) -> StudentSequence {
        StudentSequence {
            student_id: id.into(),
            actions,
            certified: true,
        }
    }

    #[test]
    fn windows_cover_every_transition_once() {
        let s = seq("a", (0..23).collect());
        let refs = [&s];
        let ws = make_windows(&refs, 10);
        assert_eq!(
            ws.iter().map(|w| (w.start, w.len)).collect::<Vec<_>>(),
            vec![(0, 11), (10, 11), (20, 3)]
        );
        let targets: usize = ws.iter().map(|w| w.len - 1).sum();
        assert_eq!(targets, 22);
        // a leftover single action would make an empty window
        let s = seq("b", (0..21).collect());
        let refs = [&s];
        assert_eq!(make_windows(&refs, 10).len(), 2);
        let s = seq("c", vec![4]);
        assert!(make_windows(&[&s], 10).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { window: 0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { layers: 4, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn cycle_corpus(students: usize, len: usize) -> Vec<StudentSequence> {
        (0..students)
            .map(|i| seq(&format!("s{i:02}"), (0..len).map(|t| ((t + i) % 3) as u32).collect()))
            .collect()
    }

    #[test]
    fn learns_a_deterministic_cycle() {
        let data = cycle_corpus(20, 40);
        let refs: Vec<&StudentSequence> = data.iter().collect();
        let cfg = TrainConfig {
            hidden_size: 16,
            emb_dim: 8,
            layers: 1,
            epochs: 30,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let trained = train_with_holdout(&refs, 3, &cfg).unwrap();
        let last = trained.curve.last().unwrap();
        assert_eq!(last.hillclimb_accuracy, Some(1.0));
        assert_eq!(trained.network.predict_next(&[0]).unwrap().0, 1);
        assert_eq!(trained.network.predict_next(&[2, 0, 1]).unwrap().0, 2);
        assert!(curve_csv(&trained.curve).starts_with("epoch,train_loss,hillclimb_accuracy\n1,"));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let data = cycle_corpus(6, 25);
        let refs: Vec<&StudentSequence> = data.iter().collect();
        let cfg = TrainConfig {
            hidden_size: 8,
            emb_dim: 4,
            layers: 2,
            epochs: 2,
            batch_size: 4,
            dropout: 0.3,
            seed: 77,
            ..Default::default()
        };
        let a = train_with_holdout(&refs, 3, &cfg).unwrap();
        let b = train_with_holdout(&refs, 3, &cfg).unwrap();
        assert_eq!(a.network, b.network);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| train_with_holdout(&refs, 3, &cfg).unwrap());
        assert_eq!(a.network, c.network);
    }

    #[test]
    fn windows_in_a_batch_are_independent() {
        let data = cycle_corpus(3, 30);
        let refs: Vec<&StudentSequence> = data.iter().collect();
        let cfg = TrainConfig { hidden_size: 5, emb_dim: 3, layers: 2, dropout: 0.4, ..Default::default() };
        let net = LstmNetwork::new(cfg.shape(3), 9).unwrap();
        let ws = make_windows(&refs, 10);
        let (a, b) = (ws[0], ws[4]);
        let (alone_a, _) = batch_gradient(&net, &refs, &[a], &[1]).unwrap();
        let (alone_b, _) = batch_gradient(&net, &refs, &[b], &[2]).unwrap();
        let (both, _) = batch_gradient(&net, &refs, &[a, b], &[1, 2]).unwrap();
        let mut expected = alone_a;
        expected.add_assign(&alone_b);
        expected.scale(0.5);
        for ((_, x), (_, y)) in both.tensors().into_iter().zip(expected.tensors()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn grid_shape() {
        let data = cycle_corpus(10, 12);
        let corpus = Corpus {
            vocab_size: 3,
            sequences: data,
        };
        let plan = eval::make_folds(&corpus.student_ids(), 5, 1).unwrap();
        let base = TrainConfig {
            epochs: 1,
            emb_dim: 4,
            ..Default::default()
        };
        let points = grid(&[1, 2], &[4, 8], &[0.01]);
        let rows = grid_search(&corpus, &base, &points, |_| false, &plan).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.per_fold_accuracy.len() == 5));
        assert!(rows.windows(2).all(|w| w[0].cv_accuracy >= w[1].cv_accuracy));
        let skipped = grid_search(&corpus, &base, &points, |p| p.layers == 2, &plan).unwrap();
        assert_eq!(skipped.len(), 2);
    }
}
