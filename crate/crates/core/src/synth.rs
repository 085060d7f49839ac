//! Seeded MOOC-like corpora with a known transition kernel.
//!
//! Actions `0..syllabus_length` are course pages in syllabus order; the rest
//! are forum threads. From state `(prev2, prev1)` the next action is:
//!
//! * with `p_advance` the advance target: the syllabus successor of `prev1`
//!   (wrapping), or for a forum `prev1` the successor of a syllabus `prev2`
//!   (order 2 only), else `(7 * prev1) mod syllabus_length`;
//! * with `p_repeat` the action `prev1` again;
//! * with `p_jump` a uniform forum thread (any action when there are none).
//!
//! Uncertified students move `1 - uncertified_advance_scale` of the advance
//! mass to jumps. Every student starts on the first syllabus page.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::util::{argmax, derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub syllabus_length: usize,
    pub students_certified: usize,
    pub students_uncertified: usize,
    pub mean_sequence_length: usize,
    pub p_advance: f64,
    pub p_repeat: f64,
    pub p_jump: f64,
    pub markov_order: usize,
    pub seed: u64,
    /// Multiplier on `p_advance` for the uncertified cohort.
    pub uncertified_advance_scale: f64,
    /// Per-step chance of an extra one-off profile event that ingestion's
    /// frequency threshold removes.
    pub noise_rate: f64,
    /// Syllabus lines naming pages nobody visits.
    pub unmatched_syllabus_items: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 60,
            syllabus_length: 55,
            students_certified: 200,
            students_uncertified: 200,
            mean_sequence_length: 200,
            p_advance: 0.6,
            p_repeat: 0.25,
            p_jump: 0.15,
            markov_order: 2,
            seed: 1,
            uncertified_advance_scale: 0.5,
            noise_rate: 0.01,
            unmatched_syllabus_items: 5,
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let probs = [self.p_advance, self.p_repeat, self.p_jump];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("transition probabilities must lie in [0,1]".into());
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("p_advance + p_repeat + p_jump = {total}, expected 1"));
        }
        if self.vocab_size == 0
            || self.syllabus_length == 0
            || self.students_certified == 0
            || self.students_uncertified == 0
            || self.mean_sequence_length == 0
        {
            return bad("vocabulary, syllabus, cohort sizes and length must be positive".into());
        }
        if self.syllabus_length > self.vocab_size {
            return bad("syllabus_length exceeds vocab_size".into());
        }
        if !(1..=2).contains(&self.markov_order) {
            return bad(format!("markov_order must be 1 or 2, got {}", self.markov_order));
        }
        if !(0.0..=1.0).contains(&self.uncertified_advance_scale) {
            return bad("uncertified_advance_scale must lie in [0,1]".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0,1)".into());
        }
        Ok(())
    }

    /// Overrides fields named in `kv`; unknown keys are an error.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            match k.as_str() {
                "vocab_size" => self.vocab_size = parse_field(k, v)?,
                "syllabus_length" => self.syllabus_length = parse_field(k, v)?,
                "students_certified" => self.students_certified = parse_field(k, v)?,
                "students_uncertified" => self.students_uncertified = parse_field(k, v)?,
                "mean_sequence_length" => self.mean_sequence_length = parse_field(k, v)?,
                "p_advance" => self.p_advance = parse_field(k, v)?,
                "p_repeat" => self.p_repeat = parse_field(k, v)?,
                "p_jump" => self.p_jump = parse_field(k, v)?,
                "markov_order" => self.markov_order = parse_field(k, v)?,
                "seed" => self.seed = parse_field(k, v)?,
                "uncertified_advance_scale" => self.uncertified_advance_scale = parse_field(k, v)?,
                "noise_rate" => self.noise_rate = parse_field(k, v)?,
                "unmatched_syllabus_items" => self.unmatched_syllabus_items = parse_field(k, v)?,
                other => return Err(Error::Config(format!("unknown synth key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "vocab_size = {}\nsyllabus_length = {}\nstudents_certified = {}\nstudents_uncertified = {}\n\
             mean_sequence_length = {}\np_advance = {}\np_repeat = {}\np_jump = {}\nmarkov_order = {}\n\
             seed = {}\nuncertified_advance_scale = {}\nnoise_rate = {}\nunmatched_syllabus_items = {}\n",
            self.vocab_size,
            self.syllabus_length,
            self.students_certified,
            self.students_uncertified,
            self.mean_sequence_length,
            self.p_advance,
            self.p_repeat,
            self.p_jump,
            self.markov_order,
            self.seed,
            self.uncertified_advance_scale,
            self.noise_rate,
            self.unmatched_syllabus_items
        )
    }

    fn lengths(&self, certified: bool) -> (usize, usize) {
        let m = self.mean_sequence_length;
        if certified {
            ((m / 2).max(2), (3 * m / 2).max(2))
        } else {
            ((m / 10).max(2), m.max(2))
        }
    }

    /// Kernel of the certified (`true`) or uncertified cohort.
    pub fn kernel(&self, certified: bool) -> Result<GeneratorModel> {
        self.validate()?;
        let (p_adv, p_jump) = if certified {
            (self.p_advance, self.p_jump)
        } else {
            let a = self.p_advance * self.uncertified_advance_scale;
            (a, self.p_jump + (self.p_advance - a))
        };
        let (v, l) = (self.vocab_size, self.syllabus_length);
        let forums: Vec<usize> = (l..v).collect();
        let mut rows = vec![vec![0.0; v]; (v + 1) * v];
        for p2 in std::iter::once(None).chain((0..v).map(Some)) {
            for p1 in 0..v {
                let row = &mut rows[state_index(v, p2, p1)];
                let target = if p1 < l {
                    (p1 + 1) % l
                } else {
                    match p2 {
                        Some(s) if self.markov_order == 2 && s < l => (s + 1) % l,
                        _ => (7 * p1) % l,
                    }
                };
                row[target] += p_adv;
                row[p1] += self.p_repeat;
                if forums.is_empty() {
                    row.iter_mut().for_each(|x| *x += p_jump / v as f64);
                } else {
                    for &f in &forums {
                        row[f] += p_jump / forums.len() as f64;
                    }
                }
            }
        }
        GeneratorModel::from_rows(v, self.markov_order, rows, self.lengths(certified))
    }
}

fn state_index(v: usize, prev2: Option<usize>, prev1: usize) -> usize {
    prev2.map_or(0, |p| p + 1) * v + prev1
}

/// Explicit next-action distribution for every `(prev2, prev1)` state, with
/// the sequence-length range used when sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    vocab_size: usize,
    markov_order: usize,
    rows: Vec<Vec<f64>>,
    lengths: (usize, usize),
}

impl GeneratorModel {
    /// `rows[(prev2 + 1) * V + prev1]`, with `prev2 = None` at index `prev1`.
    /// Order-1 kernels only read the `None` rows.
    pub fn from_rows(
        vocab_size: usize,
        markov_order: usize,
        rows: Vec<Vec<f64>>,
        lengths: (usize, usize),
    ) -> Result<Self> {
        if rows.len() != (vocab_size + 1) * vocab_size {
            return Err(Error::Config("kernel has the wrong number of rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            let s: f64 = r.iter().sum();
            if r.len() != vocab_size || r.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("kernel row {i} is not a distribution")));
            }
        }
        if lengths.0 < 2 || lengths.0 > lengths.1 {
            return Err(Error::Config("sequence lengths must satisfy 2 <= min <= max".into()));
        }
        Ok(GeneratorModel {
            vocab_size,
            markov_order,
            rows,
            lengths,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn markov_order(&self) -> usize {
        self.markov_order
    }

    pub fn row(&self, prev2: Option<u32>, prev1: u32) -> &[f64] {
        let p2 = if self.markov_order == 2 { prev2.map(|p| p as usize) } else { None };
        &self.rows[state_index(self.vocab_size, p2, prev1 as usize)]
    }

    /// Bayes-optimal next action; ties go to the lowest id.
    pub fn best(&self, prev2: Option<u32>, prev1: u32) -> u32 {
        argmax(self.row(prev2, prev1)).expect("non-empty row") as u32
    }

    fn sample_next(&self, prev2: Option<u32>, prev1: u32, rng: &mut ChaCha8Rng) -> u32 {
        let row = self.row(prev2, prev1);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u32;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
    }

    /// One sequence with a length drawn uniformly from the model's range.
    pub fn sample_sequence(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let len = rng.gen_range(self.lengths.0..=self.lengths.1);
        let mut out = Vec::with_capacity(len);
        out.push(0);
        while out.len() < len {
            let n = out.len();
            let prev2 = (n >= 2).then(|| out[n - 2]);
            let next = self.sample_next(prev2, out[n - 1], rng);
            out.push(next);
        }
        out
    }

    /// Share of positions `2..=T` where the kernel argmax is right.
    pub fn bayes_accuracy(&self, actions: &[u32]) -> Option<f64> {
        if actions.len() < 2 {
            return None;
        }
        let hits = (1..actions.len())
            .filter(|&t| {
                let prev2 = (t >= 2).then(|| actions[t - 2]);
                self.best(prev2, actions[t - 1]) == actions[t]
            })
            .count();
        Some(hits as f64 / (actions.len() - 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    /// Mean per-sequence accuracy of the kernel argmax.
    pub accuracy: f64,
    pub std_error: f64,
    pub sequences: usize,
}

/// Monte-Carlo accuracy of the Bayes-optimal predictor over `horizon`
/// freshly sampled sequences.
pub fn oracle_accuracy(model: &GeneratorModel, horizon: usize, seed: u64) -> Result<OracleEstimate> {
    if horizon < 2 {
        return Err(Error::Config("oracle horizon must be at least 2 sequences".into()));
    }
    let scores: Vec<f64> = (0..horizon)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(derive_seed(seed, i as u64));
            let s = model.sample_sequence(&mut rng);
            model.bayes_accuracy(&s).expect("sampled sequences have length >= 2")
        })
        .collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(OracleEstimate {
        accuracy: mean,
        std_error: (var / n).sqrt(),
        sequences: scores.len(),
    })
}

/// A generated student, with actions as generator indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthStudent {
    pub student_id: String,
    pub certified: bool,
    pub actions: Vec<u32>,
    /// Positions (before which) a one-off profile event is emitted.
    pub noise_before: Vec<usize>,
}

const CERTIFIED_TAG: u64 = 1;
const UNCERTIFIED_TAG: u64 = 2;

fn cohort(cfg: &SynthConfig, certified: bool) -> Result<Vec<SynthStudent>> {
    let model = cfg.kernel(certified)?;
    let (n, prefix, tag) = if certified {
        (cfg.students_certified, 'c', CERTIFIED_TAG)
    } else {
        (cfg.students_uncertified, 'u', UNCERTIFIED_TAG)
    };
    let base = derive_seed(cfg.seed, tag);
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(derive_seed(base, i as u64));
            let actions = model.sample_sequence(&mut rng);
            let noise_before = (0..actions.len())
                .filter(|_| rng.gen::<f64>() < cfg.noise_rate)
                .collect();
            SynthStudent {
                student_id: format!("{prefix}{:04}", i + 1),
                certified,
                actions,
                noise_before,
            }
        })
        .collect())
}

/// Certified students first, then uncertified, each in id order.
pub fn generate_students(cfg: &SynthConfig) -> Result<Vec<SynthStudent>> {
    let mut out = cohort(cfg, true)?;
    out.extend(cohort(cfg, false)?);
    Ok(out)
}

/// Token the ingestion rules extract for generator action `a`.
pub fn action_token(cfg: &SynthConfig, a: u32) -> String {
    let (_, page, object) = event_fields(cfg, a);
    match (object, page) {
        (Some(o), _) => o,
        (None, Some(p)) => p,
        (None, None) => "forum_search".into(),
    }
}

/// `(event_type, page, object_name)` of the log record for action `a`.
fn event_fields(cfg: &SynthConfig, a: u32) -> (&'static str, Option<String>, Option<String>) {
    let a = a as usize;
    if a < cfg.syllabus_length {
        let page = format!("courseware/item_{a:03}");
        match a % 4 {
            3 => ("save_problem_check", Some(page), Some(format!("i4x://course/problem/p{a:03}"))),
            1 => ("play_video", Some(page), None),
            _ => ("page_view", Some(page), None),
        }
    } else {
        let j = a - cfg.syllabus_length;
        if j == 0 {
            ("forum_search", None, None)
        } else {
            ("forum_view", Some(format!("forum/thread_{j:03}")), None)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub log: String,
    pub roster: String,
    pub syllabus: String,
}

fn base_time() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2013-03-01T00:00:00Z")
        .expect("constant timestamp")
        .with_timezone(&Utc)
}

/// Renders students as event log, roster and syllabus texts. Timestamps
/// advance one second per record across the whole log.
pub fn render(cfg: &SynthConfig, students: &[SynthStudent]) -> SynthFiles {
    let mut log = String::new();
    let mut clock = base_time();
    let opt = |s: &Option<String>| s.clone().unwrap_or_else(|| "-".into());
    let mut emit = |log: &mut String, sid: &str, ev: &str, page: &Option<String>, obj: &Option<String>| {
        log.push_str(&format!(
            "{}\t{sid}\t{ev}\t{}\t{}\n",
            clock.format("%Y-%m-%dT%H:%M:%SZ"),
            opt(page),
            opt(obj)
        ));
        clock += Duration::seconds(1);
    };
    let mut roster = String::new();
    for s in students {
        roster.push_str(&format!("{}\t{}\n", s.student_id, s.certified as u8));
        let mut noise = s.noise_before.iter().peekable();
        for (t, &a) in s.actions.iter().enumerate() {
            if noise.next_if(|&&p| p == t).is_some() {
                emit(&mut log, &s.student_id, "profile_view", &Some(format!("profile/{}", s.student_id)), &None);
            }
            let (ev, page, obj) = event_fields(cfg, a);
            emit(&mut log, &s.student_id, ev, &page, &obj);
        }
    }
    let mut syllabus = String::from("# course order\n");
    let l = cfg.syllabus_length;
    let gap = l / (cfg.unmatched_syllabus_items + 1);
    let mut extra = 0;
    for i in 0..l {
        if extra < cfg.unmatched_syllabus_items && gap > 0 && i > 0 && i % gap == 0 {
            syllabus.push_str(&format!("courseware/unreleased_{extra:03}\n"));
            extra += 1;
        }
        syllabus.push_str(&action_token(cfg, i as u32));
        syllabus.push('\n');
    }
    for k in extra..cfg.unmatched_syllabus_items {
        syllabus.push_str(&format!("courseware/unreleased_{k:03}\n"));
    }
    SynthFiles {
        log,
        roster,
        syllabus,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthFiles> {
    let students = generate_students(cfg)?;
    Ok(render(cfg, &students))
}

/// Writes `events.tsv`, `roster.tsv` and `syllabus.txt` into `dir`.
pub fn write_files(files: &SynthFiles, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for (name, text) in [
        ("events.tsv", &files.log),
        ("roster.tsv", &files.roster),
        ("syllabus.txt", &files.syllabus),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    }
    Ok(())
}
