//! Gram-count tables with recursive backoff.
//!
//! A table of order `N` stores, for every order `k` in `1..=N`, how often
//! each `(k-1)`-action context was followed by each next action. Only grams
//! whose next action sits at position 2 or later are counted, so the order-1
//! table holds continuation counts with an empty context.
//!
//! Prediction uses the longest context (at most `N-1` actions) that has at
//! least one observed continuation and returns its most frequent next
//! action, ties going to the lowest id. No smoothing is applied.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{self, CvRun, EvalReport, FoldEval, FoldPlan, Predictor};
use crate::ingest::{Corpus, StudentSequence};

#[derive(Debug, Clone, PartialEq, Eq)]
struct ContextStats {
    total: u64,
    best: u32,
    next: BTreeMap<u32, u64>,
}

impl ContextStats {
    fn new() -> Self {
        ContextStats {
            total: 0,
            best: 0,
            next: BTreeMap::new(),
        }
    }

    fn refresh_best(&mut self) {
        // BTreeMap iterates in ascending id order; strict > keeps the lowest id on ties
        let mut best = (0u32, 0u64);
        for (&id, &c) in &self.next {
            if c > best.1 {
                best = (id, c);
            }
        }
        self.best = best.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackoffPrediction {
    pub predicted: u32,
    pub order_used: usize,
    /// Maximum-likelihood next-action distribution at `order_used`.
    pub distribution: Option<BTreeMap<u32, f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramTable {
    max_order: usize,
    vocab_size: usize,
    /// `orders[k-1]` maps a `(k-1)`-id context to its continuation counts.
    orders: Vec<HashMap<Vec<u32>, ContextStats>>,
}

impl NGramTable {
    pub fn new(max_order: usize, vocab_size: usize) -> Result<Self> {
        if max_order < 1 {
            return Err(Error::Config(format!("max_order must be >= 1, got {max_order}")));
        }
        Ok(NGramTable {
            max_order,
            vocab_size,
            orders: vec![HashMap::new(); max_order],
        })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn add(&mut self, order: usize, context: &[u32], next: u32, count: u64) {
        let stats = self.orders[order - 1]
            .entry(context.to_vec())
            .or_insert_with(ContextStats::new);
        stats.total += count;
        *stats.next.entry(next).or_insert(0) += count;
    }

    /// Counts every gram of every order whose next action is at position
    /// `t >= 2` and whose context fits inside the sequence.
    pub fn add_sequence(&mut self, actions: &[u32]) {
        for t in 1..actions.len() {
            let next = actions[t];
            for order in 1..=self.max_order.min(t + 1) {
                let context = &actions[t + 1 - order..t];
                self.add(order, context, next, 1);
            }
        }
    }

    fn finish(&mut self) {
        for table in &mut self.orders {
            for stats in table.values_mut() {
                stats.refresh_best();
            }
        }
    }

    pub fn count(&self, context: &[u32], next: u32) -> u64 {
        self.stats(context)
            .and_then(|s| s.next.get(&next).copied())
            .unwrap_or(0)
    }

    pub fn context_total(&self, context: &[u32]) -> u64 {
        self.stats(context).map_or(0, |s| s.total)
    }

    fn stats(&self, context: &[u32]) -> Option<&ContextStats> {
        self.orders.get(context.len())?.get(context)
    }

    /// Every stored `(context, next, count)` triple, sorted by order, then
    /// context, then next id.
    pub fn entries(&self) -> Vec<(Vec<u32>, u32, u64)> {
        let mut out = Vec::new();
        for table in &self.orders {
            let mut contexts: Vec<&Vec<u32>> = table.keys().collect();
            contexts.sort_unstable();
            for ctx in contexts {
                for (&next, &c) in &table[ctx].next {
                    out.push((ctx.clone(), next, c));
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.orders[0].is_empty()
    }

    /// Backoff prediction using at most `limit` as the gram order.
    pub fn predict_with_limit(
        &self,
        context: &[u32],
        limit: usize,
        with_distribution: bool,
    ) -> Result<BackoffPrediction> {
        let top = limit.min(self.max_order).min(context.len() + 1).max(1);
        for order in (1..=top).rev() {
            let ctx = &context[context.len() + 1 - order..];
            if let Some(stats) = self.orders[order - 1].get(ctx) {
                let distribution = with_distribution.then(|| {
                    stats
                        .next
                        .iter()
                        .map(|(&id, &c)| (id, c as f64 / stats.total as f64))
                        .collect()
                });
                return Ok(BackoffPrediction {
                    predicted: stats.best,
                    order_used: order,
                    distribution,
                });
            }
        }
        Err(Error::Unfitted)
    }

    pub fn predict_next(&self, context: &[u32]) -> Result<BackoffPrediction> {
        self.predict_with_limit(context, self.max_order, false)
    }

    /// `#NGRAM max_order=<N> V=<int>` then `order \t ctx,ids \t next \t count`.
    pub fn to_text(&self) -> String {
        let mut out = format!("#NGRAM max_order={} V={}\n", self.max_order, self.vocab_size);
        for (ctx, next, count) in self.entries() {
            let ctx_text: Vec<String> = ctx.iter().map(u32::to_string).collect();
            out.push_str(&format!(
                "{}\t{}\t{next}\t{count}\n",
                ctx.len() + 1,
                ctx_text.join(",")
            ));
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("#NGRAM max_order="))
            .ok_or_else(|| bad("missing #NGRAM header".into()))?;
        let (n, v) = header
            .split_once(" V=")
            .ok_or_else(|| bad("header missing V".into()))?;
        let max_order: usize = n.parse().map_err(|_| bad(format!("bad max_order {n:?}")))?;
        let vocab_size: usize = v.parse().map_err(|_| bad(format!("bad V {v:?}")))?;
        let mut table = NGramTable::new(max_order, vocab_size)?;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(bad(format!("line {lineno}: expected 4 fields")));
            }
            let order: usize = parts[0]
                .parse()
                .map_err(|_| bad(format!("line {lineno}: bad order")))?;
            let ctx: Vec<u32> = if parts[1].is_empty() {
                Vec::new()
            } else {
                parts[1]
                    .split(',')
                    .map(|x| x.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("line {lineno}: bad context")))?
            };
            let next: u32 = parts[2]
                .parse()
                .map_err(|_| bad(format!("line {lineno}: bad next id")))?;
            let count: u64 = parts[3]
                .parse()
                .map_err(|_| bad(format!("line {lineno}: bad count")))?;
            if order < 1 || order > max_order || ctx.len() + 1 != order {
                return Err(bad(format!("line {lineno}: order/context mismatch")));
            }
            if next as usize >= vocab_size || ctx.iter().any(|&c| c as usize >= vocab_size) {
                return Err(bad(format!("line {lineno}: id out of range")));
            }
            table.add(order, &ctx, next, count);
        }
        table.finish();
        Ok(table)
    }
}

impl Predictor for NGramTable {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        self.predict_next(context).map(|p| Some(p.predicted))
    }
}

/// A fitted table used as a lower-order model.
#[derive(Debug, Clone, Copy)]
pub struct Truncated<'a> {
    pub table: &'a NGramTable,
    pub order: usize,
}

impl Predictor for Truncated<'_> {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        self.table
            .predict_with_limit(context, self.order, false)
            .map(|p| Some(p.predicted))
    }
}

/// Fits a table over `sequences`. Sequences are sharded across workers and
/// the partial tables merged; integer addition makes the result independent
/// of the sharding.
pub fn fit_sequences(sequences: &[&StudentSequence], max_order: usize, vocab_size: usize) -> Result<NGramTable> {
    let mut table = NGramTable::new(max_order, vocab_size)?;
    let shard = (sequences.len() / rayon::current_num_threads().max(1)).max(16);
    let partials: Vec<NGramTable> = sequences
        .par_chunks(shard)
        .map(|chunk| {
            let mut t = NGramTable::new(max_order, vocab_size).expect("validated order");
            for s in chunk {
                t.add_sequence(&s.actions);
            }
            t
        })
        .collect();
    for part in partials {
        for (k, map) in part.orders.into_iter().enumerate() {
            for (ctx, stats) in map {
                for (next, c) in stats.next {
                    table.add(k + 1, &ctx, next, c);
                }
            }
        }
    }
    table.finish();
    Ok(table)
}

pub fn fit(corpus: &Corpus, max_order: usize) -> Result<NGramTable> {
    if max_order < 1 {
        return Err(Error::Config(format!("max_order must be >= 1, got {max_order}")));
    }
    if corpus.sequences.is_empty() {
        return Err(Error::Config("cannot fit an n-gram table on an empty corpus".into()));
    }
    let refs: Vec<&StudentSequence> = corpus.sequences.iter().collect();
    fit_sequences(&refs, max_order, corpus.vocab_size)
}

/// Number of scored positions served by each order; index 0 is order 1.
pub fn backoff_counts(table: &NGramTable, sequences: &[&StudentSequence]) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; table.max_order];
    for s in sequences {
        for t in 1..s.actions.len() {
            let p = table.predict_next(&s.actions[..t])?;
            counts[p.order_used - 1] += 1;
        }
    }
    Ok(counts)
}

pub fn usage_fractions(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

/// Share of predictions on `eval` served by each gram order.
pub fn backoff_usage(table: &NGramTable, eval: &Corpus) -> Result<Vec<f64>> {
    let refs: Vec<&StudentSequence> = eval.sequences.iter().collect();
    Ok(usage_fractions(&backoff_counts(table, &refs)?))
}

/// Cross-validated n-gram of order `max_order`, with the order-usage
/// histogram pooled over all folds.
pub fn cross_validate(corpus: &Corpus, max_order: usize, plan: &FoldPlan) -> Result<CvRun<NGramTable>> {
    if max_order < 1 {
        return Err(Error::Config(format!("max_order must be >= 1, got {max_order}")));
    }
    let v = corpus.vocab_size;
    let mut run = eval::cross_validate(
        &format!("{max_order}-gram"),
        |train, _| fit_sequences(train, max_order, v),
        corpus,
        plan,
    )?;
    let mut counts = vec![0u64; max_order];
    for (fold, table) in run.models.iter().enumerate() {
        let (_, test) = plan.split(corpus, fold)?;
        for (c, add) in counts.iter_mut().zip(backoff_counts(table, &test)?) {
            *c += add;
        }
    }
    run.report.backoff_usage = Some(usage_fractions(&counts));
    run.report.metadata.insert("max_order".into(), max_order.to_string());
    Ok(run)
}

/// CV accuracy for each order in `orders`. One table of the largest order is
/// fitted per fold and queried with each smaller order limit, which is
/// equivalent to fitting each order separately.
pub fn sweep_orders(corpus: &Corpus, orders: &[usize], plan: &FoldPlan) -> Result<Vec<EvalReport>> {
    let top = *orders
        .iter()
        .max()
        .ok_or_else(|| Error::Config("empty order list".into()))?;
    if orders.contains(&0) {
        return Err(Error::Config("gram orders must be >= 1".into()));
    }
    let v = corpus.vocab_size;
    let per_fold: Vec<Result<Vec<FoldEval>>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = plan.split(corpus, fold)?;
            let table = fit_sequences(&train, top, v)?;
            orders
                .iter()
                .map(|&order| {
                    eval::evaluate_sequences(&Truncated { table: &table, order }, &test, fold)
                })
                .collect()
        })
        .collect();
    let mut by_order: Vec<Vec<FoldEval>> = vec![Vec::with_capacity(plan.k); orders.len()];
    for fold in per_fold {
        for (slot, e) in by_order.iter_mut().zip(fold?) {
            slot.push(e);
        }
    }
    by_order
        .into_iter()
        .zip(orders)
        .map(|(folds, &order)| {
            let (mut report, _) = EvalReport::assemble(format!("{order}-gram"), folds)?;
            report.metadata.insert("max_order".into(), order.to_string());
            report.metadata.insert("folds.seed".into(), plan.seed.to_string());
            Ok(report)
        })
        .collect()
}
