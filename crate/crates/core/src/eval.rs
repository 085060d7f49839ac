//! Student-level k-fold cross-validation with per-sequence (macro) accuracy,
//! prediction streams, pairwise agreement tables and cohort transfer.
//!
//! Every model is scored on positions `t = 2..T` of each sequence: the
//! prediction for action `t` may only see actions `1..t-1`. A model that
//! declines to predict is scored as wrong.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, StudentSequence};
use crate::util::{derive_seed, rng_from};

/// Anything that maps a non-empty context of action ids to a next action.
/// `None` means "no prediction".
pub trait Predictor {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        (**self).predict(context)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        (**self).predict(context)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

/// Sorts the student ids, shuffles them with `seed` and deals them
/// round-robin, so fold sizes differ by at most one.
pub fn make_folds<S: AsRef<str>>(students: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be >= 2, got {k}")));
    }
    let mut ids: Vec<&str> = students.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < k {
        return Err(Error::Config(format!(
            "{} students cannot fill {k} folds",
            ids.len()
        )));
    }
    ids.shuffle(&mut rng_from(seed));
    let assignment = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    pub fn fold_of(&self, student: &str) -> Option<usize> {
        self.assignment.get(student).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Training sequences (all other folds) and validation sequences for
    /// `fold`, both in corpus order.
    pub fn split<'a>(
        &self,
        corpus: &'a Corpus,
        fold: usize,
    ) -> Result<(Vec<&'a StudentSequence>, Vec<&'a StudentSequence>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in &corpus.sequences {
            match self.fold_of(&s.student_id) {
                Some(f) if f == fold => test.push(s),
                Some(_) => train.push(s),
                None => {
                    return Err(Error::Config(format!(
                        "student {} is not covered by the fold plan",
                        s.student_id
                    )))
                }
            }
        }
        Ok((train, test))
    }
}

/// Student-level holdout of `ceil(fraction * n)` sequences. At least one
/// sequence always stays in the training part.
pub fn hill_climb_split<'a>(
    train: &[&'a StudentSequence],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a StudentSequence>, Vec<&'a StudentSequence>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must be in (0,1), got {fraction}"
        )));
    }
    let n = train.len();
    let holdout = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| train[a].student_id.cmp(&train[b].student_id));
    order.shuffle(&mut rng_from(seed));
    let mut held = vec![false; n];
    for &i in &order[..holdout] {
        held[i] = true;
    }
    let (mut kept, mut out) = (Vec::new(), Vec::new());
    for (i, s) in train.iter().enumerate() {
        if held[i] {
            out.push(*s);
        } else {
            kept.push(*s);
        }
    }
    Ok((kept, out))
}

/// One scored position: action number `t` (1-based) of a student's sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub student_id: String,
    pub t: usize,
    pub predicted: Option<u32>,
    pub truth: u32,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.truth)
    }
}

/// `student_id \t t \t predicted_id \t true_id` per scored position, `-`
/// standing in for "no prediction".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionStream {
    pub records: Vec<PredictionRecord>,
}

impl PredictionStream {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 24);
        for r in &self.records {
            let predicted = r
                .predicted
                .map_or_else(|| "-".to_string(), |p| p.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.student_id, r.t, predicted, r.truth
            ));
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::format(origin, format!("line {}: bad prediction record", n + 1));
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            let predicted = match parts[2] {
                "-" => None,
                p => Some(p.parse().map_err(|_| bad())?),
            };
            records.push(PredictionRecord {
                student_id: parts[0].to_string(),
                t: parts[1].parse().map_err(|_| bad())?,
                predicted,
                truth: parts[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(PredictionStream { records })
    }

    pub fn correct_count(&self) -> usize {
        self.records.iter().filter(|r| r.correct()).count()
    }
}

/// Predictions for positions `2..=T` of `actions`.
pub fn predict_positions<P: Predictor + ?Sized>(model: &P, actions: &[u32]) -> Result<Vec<Option<u32>>> {
    (1..actions.len())
        .map(|t| model.predict(&actions[..t]))
        .collect()
}

/// Proportion of correctly predicted positions `2..=T`; `None` for
/// sequences shorter than two actions.
pub fn sequence_accuracy<P: Predictor + ?Sized>(model: &P, actions: &[u32]) -> Result<Option<f64>> {
    if actions.len() < 2 {
        return Ok(None);
    }
    let predictions = predict_positions(model, actions)?;
    let correct = predictions
        .iter()
        .zip(&actions[1..])
        .filter(|(p, &truth)| **p == Some(truth))
        .count();
    Ok(Some(correct as f64 / predictions.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub student_id: String,
    pub fold: usize,
    pub correct: usize,
    pub scored: usize,
    pub proportion: f64,
}

/// Scores of one validation fold.
#[derive(Debug, Clone, Default)]
pub struct FoldEval {
    pub scores: Vec<SequenceScore>,
    pub predictions: Vec<PredictionRecord>,
    pub skipped: usize,
}

impl FoldEval {
    /// Mean of per-sequence proportions.
    pub fn accuracy(&self) -> Option<f64> {
        if self.scores.is_empty() {
            None
        } else {
            Some(self.scores.iter().map(|s| s.proportion).sum::<f64>() / self.scores.len() as f64)
        }
    }
}

pub fn evaluate_sequences<P: Predictor + ?Sized>(
    model: &P,
    sequences: &[&StudentSequence],
    fold: usize,
) -> Result<FoldEval> {
    let mut out = FoldEval::default();
    for s in sequences {
        if s.actions.len() < 2 {
            out.skipped += 1;
            continue;
        }
        let predictions = predict_positions(model, &s.actions)?;
        let mut correct = 0;
        for (i, (&p, &truth)) in predictions.iter().zip(&s.actions[1..]).enumerate() {
            if p == Some(truth) {
                correct += 1;
            }
            out.predictions.push(PredictionRecord {
                student_id: s.student_id.clone(),
                t: i + 2,
                predicted: p,
                truth,
            });
        }
        out.scores.push(SequenceScore {
            student_id: s.student_id.clone(),
            fold,
            correct,
            scored: predictions.len(),
            proportion: correct as f64 / predictions.len() as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    /// Effective configuration and input checksums.
    pub metadata: BTreeMap<String, String>,
    pub folds: usize,
    pub per_fold_accuracy: Vec<f64>,
    pub cv_accuracy: f64,
    /// Pooled over every scored position of every fold.
    pub pooled_correct: usize,
    pub pooled_total: usize,
    pub skipped_sequences: usize,
    /// Share of predictions served by each gram order, index 0 = order 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff_usage: Option<Vec<f64>>,
    pub per_sequence: Vec<SequenceScore>,
}

impl EvalReport {
    /// Builds a report from ordered fold evaluations. Fails when a fold has
    /// no scoreable sequence, since its accuracy is undefined.
    pub fn assemble(model: impl Into<String>, folds: Vec<FoldEval>) -> Result<(Self, PredictionStream)> {
        let mut per_fold = Vec::with_capacity(folds.len());
        let mut per_sequence = Vec::new();
        let mut records = Vec::new();
        let mut skipped = 0;
        for (i, f) in folds.into_iter().enumerate() {
            per_fold.push(
                f.accuracy()
                    .ok_or_else(|| Error::Config(format!("fold {i} has no scoreable sequence")))?,
            );
            skipped += f.skipped;
            per_sequence.extend(f.scores);
            records.extend(f.predictions);
        }
        let cv_accuracy = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
        let stream = PredictionStream { records };
        let report = EvalReport {
            model: model.into(),
            metadata: BTreeMap::new(),
            folds: per_fold.len(),
            per_fold_accuracy: per_fold,
            cv_accuracy,
            pooled_correct: stream.correct_count(),
            pooled_total: stream.records.len(),
            skipped_sequences: skipped,
            backoff_usage: None,
            per_sequence,
        };
        Ok((report, stream))
    }

    pub fn micro_accuracy(&self) -> f64 {
        self.pooled_correct as f64 / self.pooled_total.max(1) as f64
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))
    }

    /// `fold,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy\n");
        for (i, a) in self.per_fold_accuracy.iter().enumerate() {
            out.push_str(&format!("{i},{a}\n"));
        }
        out
    }
}

/// Result of [`cross_validate`]: the report, the pooled prediction stream in
/// fold order, and the model fitted for each fold.
#[derive(Debug)]
pub struct CvRun<M> {
    pub report: EvalReport,
    pub predictions: PredictionStream,
    pub models: Vec<M>,
}

/// Fits one model per fold on the other folds and scores it on the held-out
/// fold. Folds run in parallel; results are merged in fold order.
pub fn cross_validate<M, F>(
    name: &str,
    factory: F,
    corpus: &Corpus,
    plan: &FoldPlan,
) -> Result<CvRun<M>>
where
    M: Predictor + Send,
    F: Fn(&[&StudentSequence], usize) -> Result<M> + Sync,
{
    let per_fold: Vec<Result<(FoldEval, M)>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = plan.split(corpus, fold)?;
            let model = factory(&train, fold)?;
            let eval = evaluate_sequences(&model, &test, fold)?;
            Ok((eval, model))
        })
        .collect();
    let mut evals = Vec::with_capacity(plan.k);
    let mut models = Vec::with_capacity(plan.k);
    for r in per_fold {
        let (e, m) = r?;
        evals.push(e);
        models.push(m);
    }
    let (mut report, predictions) = EvalReport::assemble(name, evals)?;
    report
        .metadata
        .insert("folds.seed".into(), plan.seed.to_string());
    Ok(CvRun {
        report,
        predictions,
        models,
    })
}

/// Applies an already trained model to another cohort, reported as a single
/// fold.
pub fn transfer_eval<P: Predictor + ?Sized>(
    name: &str,
    model: &P,
    cohort: &Corpus,
) -> Result<(EvalReport, PredictionStream)> {
    let seqs: Vec<&StudentSequence> = cohort.sequences.iter().collect();
    let eval = evaluate_sequences(model, &seqs, 0)?;
    EvalReport::assemble(name, vec![eval])
}

/// Per-fold seed used by model factories.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, 0xF01D_0000 + fold as u64)
}

/// 2x2 counts of model A and model B being right or wrong on the same
/// positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub both_correct: usize,
    pub a_correct_b_incorrect: usize,
    pub a_incorrect_b_correct: usize,
    pub both_incorrect: usize,
}

impl AgreementTable {
    pub fn total(&self) -> usize {
        self.both_correct + self.a_correct_b_incorrect + self.a_incorrect_b_correct + self.both_incorrect
    }

    pub fn a_correct(&self) -> usize {
        self.both_correct + self.a_correct_b_incorrect
    }

    pub fn b_correct(&self) -> usize {
        self.both_correct + self.a_incorrect_b_correct
    }
}

pub fn agreement(a: &[Option<u32>], b: &[Option<u32>], truths: &[u32]) -> Result<AgreementTable> {
    if a.len() != b.len() || a.len() != truths.len() {
        return Err(Error::Misaligned(format!(
            "lengths {} / {} / {}",
            a.len(),
            b.len(),
            truths.len()
        )));
    }
    let mut t = AgreementTable::default();
    for ((pa, pb), &truth) in a.iter().zip(b).zip(truths) {
        match (*pa == Some(truth), *pb == Some(truth)) {
            (true, true) => t.both_correct += 1,
            (true, false) => t.a_correct_b_incorrect += 1,
            (false, true) => t.a_incorrect_b_correct += 1,
            (false, false) => t.both_incorrect += 1,
        }
    }
    Ok(t)
}

/// Agreement between two persisted streams. Records are matched by
/// `(student_id, t)`; both streams must cover the same positions with the
/// same truths.
pub fn stream_agreement(a: &PredictionStream, b: &PredictionStream) -> Result<AgreementTable> {
    if a.records.len() != b.records.len() {
        return Err(Error::Misaligned(format!(
            "{} vs {} records",
            a.records.len(),
            b.records.len()
        )));
    }
    let mut b_index: BTreeMap<(&str, usize), &PredictionRecord> = BTreeMap::new();
    for r in &b.records {
        b_index.insert((r.student_id.as_str(), r.t), r);
    }
    let mut pa = Vec::with_capacity(a.records.len());
    let mut pb = Vec::with_capacity(a.records.len());
    let mut truths = Vec::with_capacity(a.records.len());
    for r in &a.records {
        let other = b_index
            .get(&(r.student_id.as_str(), r.t))
            .ok_or_else(|| Error::Misaligned(format!("{} t={} missing", r.student_id, r.t)))?;
        if other.truth != r.truth {
            return Err(Error::Misaligned(format!(
                "{} t={} has different truths",
                r.student_id, r.t
            )));
        }
        pa.push(r.predicted);
        pb.push(other.predicted);
        truths.push(r.truth);
    }
    agreement(&pa, &pb, &truths)
}
