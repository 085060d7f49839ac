//! Event-log ingestion: record parsing, action extraction, the frequency
//! filtered vocabulary and the encoded per-student corpus.
//!
//! Log records are tab-separated lines
//! `timestamp \t student_id \t event_type \t page \t object_name` where an
//! absent optional field is written as `-` and lines starting with `#` are
//! comments. The roster is `student_id \t certified(0|1)`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, FixedOffset};
use rayon::prelude::*;

use crate::error::{Error, Result};

const ABSENT: &str = "-";
const PROBLEM_CHECK: &str = "save_problem_check";
const CORPUS_MAGIC: &[u8; 5] = b"NACT1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub timestamp: DateTime<FixedOffset>,
    pub student_id: String,
    pub event_type: String,
    pub page: Option<String>,
    pub object_name: Option<String>,
}

/// The atomic unit every model predicts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionToken(pub String);

impl ActionToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn optional(field: &str) -> Option<String> {
    if field.is_empty() || field == ABSENT {
        None
    } else {
        Some(field.to_string())
    }
}

/// Parses one log record. `line_no` is 1-based and only used for errors.
pub fn parse_event(line: &str, line_no: usize) -> Result<RawEvent> {
    let malformed = |reason: String| Error::MalformedRecord {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(malformed(format!("expected 5 fields, found {}", fields.len())));
    }
    let timestamp = DateTime::parse_from_rfc3339(fields[0])
        .map_err(|e| malformed(format!("bad timestamp {:?}: {e}", fields[0])))?;
    if fields[1].is_empty() || fields[1] == ABSENT {
        return Err(malformed("empty student_id".into()));
    }
    if fields[2].is_empty() || fields[2] == ABSENT {
        return Err(malformed("empty event_type".into()));
    }
    Ok(RawEvent {
        timestamp,
        student_id: fields[1].to_string(),
        event_type: fields[2].to_string(),
        page: optional(fields[3]),
        object_name: optional(fields[4]),
    })
}

/// Problem checks are identified by their object name; otherwise the page
/// wins when present, and the event type is the fallback. A problem check
/// without an object name falls through to the page/event-type rule.
pub fn extract_action(event: &RawEvent) -> ActionToken {
    if event.event_type == PROBLEM_CHECK {
        if let Some(object) = &event.object_name {
            return ActionToken(object.clone());
        }
    }
    match &event.page {
        Some(page) => ActionToken(page.clone()),
        None => ActionToken(event.event_type.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedPolicy {
    /// Skip bad records and count them.
    Skip,
    /// Stop at the first bad record.
    Abort,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLog {
    pub events: Vec<RawEvent>,
    pub malformed: usize,
    /// First few skipped-record errors, for diagnostics.
    pub malformed_examples: Vec<String>,
}

/// Parses a whole log. Records are parsed in parallel but returned in input
/// order, so the result does not depend on the worker count.
pub fn parse_log(text: &str, policy: MalformedPolicy) -> Result<ParsedLog> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l))
        .collect();
    let parsed: Vec<Result<RawEvent>> = lines
        .par_iter()
        .map(|&(n, l)| parse_event(l, n))
        .collect();
    let mut out = ParsedLog::default();
    out.events.reserve(parsed.len());
    for r in parsed {
        match r {
            Ok(ev) => out.events.push(ev),
            Err(e) if policy == MalformedPolicy::Skip => {
                out.malformed += 1;
                if out.malformed_examples.len() < 5 {
                    out.malformed_examples.push(e.to_string());
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Bijection between retained action tokens and dense ids.
///
/// Ids are assigned by descending count, ties broken by lexicographic token
/// order, so the same input always yields the same numbering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
}

impl Vocabulary {
    /// Builds the vocabulary from global token counts. Merging per-worker
    /// count maps before calling this is order independent.
    pub fn from_counts(counts: &BTreeMap<String, u64>, min_count: u64) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut kept: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut vocab = Vocabulary {
            token_to_id: HashMap::with_capacity(kept.len()),
            id_to_token: Vec::with_capacity(kept.len()),
            counts: Vec::with_capacity(kept.len()),
            min_count,
        };
        for (id, (token, count)) in kept.into_iter().enumerate() {
            vocab.token_to_id.insert(token.clone(), id as u32);
            vocab.id_to_token.push(token.clone());
            vocab.counts.push(count);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// `#V=<int> min_count=<int>` header followed by `token \t id \t count`
    /// lines in id order.
    pub fn to_text(&self) -> String {
        let mut out = format!("#V={} min_count={}\n", self.len(), self.min_count);
        for (id, (token, count)) in self.id_to_token.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{token}\t{id}\t{count}\n"));
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let header = header
            .strip_prefix("#V=")
            .ok_or_else(|| bad("header must start with #V=".into()))?;
        let (v, min) = header
            .split_once(" min_count=")
            .ok_or_else(|| bad("header missing min_count".into()))?;
        let v: usize = v.parse().map_err(|_| bad(format!("bad V {v:?}")))?;
        let min_count: u64 = min.parse().map_err(|_| bad(format!("bad min_count {min:?}")))?;
        let mut vocab = Vocabulary {
            token_to_id: HashMap::with_capacity(v),
            id_to_token: Vec::with_capacity(v),
            counts: Vec::with_capacity(v),
            min_count,
        };
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", n + 2)));
            }
            let id: usize = parts[1].parse().map_err(|_| bad(format!("line {}: bad id", n + 2)))?;
            let count: u64 = parts[2]
                .parse()
                .map_err(|_| bad(format!("line {}: bad count", n + 2)))?;
            if id != vocab.id_to_token.len() {
                return Err(bad(format!("line {}: ids must be dense and sorted", n + 2)));
            }
            if vocab.token_to_id.insert(parts[0].to_string(), id as u32).is_some() {
                return Err(bad(format!("line {}: duplicate token", n + 2)));
            }
            vocab.id_to_token.push(parts[0].to_string());
            vocab.counts.push(count);
        }
        if vocab.len() != v {
            return Err(bad(format!("header says V={v}, found {}", vocab.len())));
        }
        Ok(vocab)
    }
}

pub fn count_tokens<'a, I>(tokens: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a ActionToken>,
{
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.0.clone()).or_insert(0) += 1;
    }
    counts
}

/// Counts tokens and drops those seen fewer than `min_count` times.
pub fn build_vocabulary<'a, I>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a ActionToken>,
{
    Vocabulary::from_counts(&count_tokens(tokens), min_count)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentSequence {
    pub student_id: String,
    pub actions: Vec<u32>,
    pub certified: bool,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Encoded sequences over a vocabulary of `vocab_size` actions. The token
/// strings live in the [`Vocabulary`] artifact written next to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub sequences: Vec<StudentSequence>,
}

impl Corpus {
    pub fn total_actions(&self) -> usize {
        self.sequences.iter().map(|s| s.actions.len()).sum()
    }

    pub fn student_ids(&self) -> Vec<&str> {
        self.sequences.iter().map(|s| s.student_id.as_str()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.total_actions() * 4);
        out.extend_from_slice(CORPUS_MAGIC);
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.sequences.len() as u32).to_le_bytes());
        for s in &self.sequences {
            out.extend_from_slice(&(s.student_id.len() as u32).to_le_bytes());
            out.extend_from_slice(s.student_id.as_bytes());
            out.push(u8::from(s.certified));
            out.extend_from_slice(&(s.actions.len() as u32).to_le_bytes());
            for &a in &s.actions {
                out.extend_from_slice(&a.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(origin, "truncated magic"))?;
        if &magic != CORPUS_MAGIC {
            return Err(Error::format(origin, "not an NACT1 corpus"));
        }
        let vocab_size = read_u32(&mut r, origin, "V")? as usize;
        let count = read_u32(&mut r, origin, "sequence count")? as usize;
        let mut sequences = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let id_len = read_u32(&mut r, origin, "student id length")? as usize;
            let mut id = vec![0u8; id_len.min(r.len())];
            read_into(&mut r, &mut id, origin, "student id")?;
            if id.len() != id_len {
                return Err(Error::format(origin, "truncated student id"));
            }
            let mut flag = [0u8; 1];
            read_into(&mut r, &mut flag, origin, "certified flag")?;
            let student_id = String::from_utf8(id)
                .map_err(|_| Error::format(origin, "student id is not UTF-8"))?;
            if flag[0] > 1 {
                return Err(Error::format(origin, "certified flag must be 0 or 1"));
            }
            let len = read_u32(&mut r, origin, "sequence length")? as usize;
            let mut actions = Vec::with_capacity(len.min(r.len() / 4));
            for _ in 0..len {
                let a = read_u32(&mut r, origin, "action id")?;
                if a as usize >= vocab_size {
                    return Err(Error::format(origin, format!("action id {a} >= V")));
                }
                actions.push(a);
            }
            sequences.push(StudentSequence {
                student_id,
                actions,
                certified: flag[0] == 1,
            });
        }
        if !r.is_empty() {
            return Err(Error::format(origin, "trailing bytes after corpus"));
        }
        Ok(Corpus {
            vocab_size,
            sequences,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn read_into(r: &mut &[u8], buf: &mut [u8], origin: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(origin, format!("truncated {what}")))
}

fn read_u32(r: &mut &[u8], origin: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_into(r, &mut b, origin, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn parse_roster(text: &str, origin: &Path) -> Result<HashMap<String, bool>> {
    let mut roster = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        let certified = match parts.as_slice() {
            [id, "1"] if !id.is_empty() => true,
            [id, "0"] if !id.is_empty() => false,
            _ => {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected student_id<TAB>0|1", n + 1),
                ))
            }
        };
        roster.insert(parts[0].to_string(), certified);
    }
    Ok(roster)
}

/// Tallies from [`encode_corpus`]. The retained action count always equals
/// `events - dropped_token_events`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub events: usize,
    pub dropped_token_events: usize,
    pub dropped_students: usize,
    pub unrostered_students: usize,
    pub retained_actions: usize,
}

/// Groups events per student, drops events whose token was filtered out of
/// the vocabulary and orders each sequence by timestamp (stable, so equal
/// timestamps keep input order). Students are emitted sorted by id.
pub fn encode_corpus(
    events: &[RawEvent],
    vocab: &Vocabulary,
    roster: &HashMap<String, bool>,
) -> (Corpus, EncodeStats) {
    let mut stats = EncodeStats {
        events: events.len(),
        ..Default::default()
    };
    let mut per_student: BTreeMap<&str, Vec<(DateTime<FixedOffset>, u32)>> = BTreeMap::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for ev in events {
        seen.insert(ev.student_id.as_str(), ());
        match vocab.id(extract_action(ev).as_str()) {
            Some(id) => per_student
                .entry(ev.student_id.as_str())
                .or_default()
                .push((ev.timestamp, id)),
            None => stats.dropped_token_events += 1,
        }
    }
    stats.dropped_students = seen.len() - per_student.len();
    let mut sequences = Vec::with_capacity(per_student.len());
    for (student, mut timed) in per_student {
        timed.sort_by_key(|&(ts, _)| ts);
        let certified = match roster.get(student) {
            Some(&c) => c,
            None => {
                stats.unrostered_students += 1;
                false
            }
        };
        stats.retained_actions += timed.len();
        sequences.push(StudentSequence {
            student_id: student.to_string(),
            actions: timed.into_iter().map(|(_, id)| id).collect(),
            certified,
        });
    }
    (
        Corpus {
            vocab_size: vocab.len(),
            sequences,
        },
        stats,
    )
}

/// Keeps sequences of the requested cohort with at least `min_actions`
/// actions.
pub fn filter_cohort(corpus: &Corpus, certified: bool, min_actions: usize) -> Result<Corpus> {
    if min_actions < 1 {
        return Err(Error::Config("min_actions must be at least 1".into()));
    }
    Ok(Corpus {
        vocab_size: corpus.vocab_size,
        sequences: corpus
            .sequences
            .iter()
            .filter(|s| s.certified == certified && s.actions.len() >= min_actions)
            .cloned()
            .collect(),
    })
}

/// Everything produced by one ingestion run.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub vocabulary: Vocabulary,
    pub corpus: Corpus,
    pub malformed: usize,
    pub stats: EncodeStats,
}

/// Log text and roster text to vocabulary plus encoded corpus.
pub fn ingest(
    log_text: &str,
    roster_text: &str,
    min_count: u64,
    policy: MalformedPolicy,
) -> Result<Ingested> {
    let parsed = parse_log(log_text, policy)?;
    let roster = parse_roster(roster_text, Path::new("<roster>"))?;
    let tokens: Vec<ActionToken> = parsed.events.par_iter().map(extract_action).collect();
    let vocabulary = build_vocabulary(&tokens, min_count)?;
    let (corpus, stats) = encode_corpus(&parsed.events, &vocabulary, &roster);
    Ok(Ingested {
        vocabulary,
        corpus,
        malformed: parsed.malformed,
        stats,
    })
}
