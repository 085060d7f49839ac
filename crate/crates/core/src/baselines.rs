//! Structural predictors: repeat the last action, follow the syllabus, or
//! follow the syllabus and repeat when the syllabus has nothing to say.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::ingest::Vocabulary;

/// Course-ordered syllabus items resolved against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyllabusMap {
    items: Vec<u32>,
    position_of: HashMap<u32, usize>,
    unmatched: usize,
}

impl SyllabusMap {
    /// `lines`: one token per line in course order; `#` comments and blank
    /// lines are ignored. Tokens missing from the vocabulary are skipped and
    /// tallied.
    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut items = Vec::new();
        let mut unmatched = 0;
        for line in text.lines() {
            let token = line.trim();
            if token.is_empty() || token.starts_with('#') {
                continue;
            }
            if !seen.insert(token) {
                return Err(Error::DuplicateItem(token.to_string()));
            }
            match vocab.id(token) {
                Some(id) => items.push(id),
                None => unmatched += 1,
            }
        }
        Ok(Self::from_items(items, unmatched))
    }

    pub fn from_items(items: Vec<u32>, unmatched: usize) -> Self {
        let position_of = items.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        SyllabusMap {
            items,
            position_of,
            unmatched,
        }
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    /// Number of syllabus lines that matched a vocabulary token.
    pub fn coverage(&self) -> usize {
        self.items.len()
    }

    pub fn unmatched(&self) -> usize {
        self.unmatched
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.position_of.get(&id).copied()
    }

    /// Next item in course order; `None` for the final item and for actions
    /// outside the syllabus.
    pub fn successor(&self, id: u32) -> Option<u32> {
        self.position(id).and_then(|k| self.items.get(k + 1).copied())
    }
}

pub fn load_syllabus(path: &Path, vocab: &Vocabulary) -> Result<SyllabusMap> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    SyllabusMap::from_text(&text, vocab)
}

pub fn repeat_predict(context: &[u32]) -> Result<u32> {
    context.last().copied().ok_or(Error::EmptyContext)
}

pub fn syllabus_predict(context: &[u32], syllabus: &SyllabusMap) -> Result<Option<u32>> {
    let last = repeat_predict(context)?;
    Ok(syllabus.successor(last))
}

/// Syllabus successor when there is one, otherwise the last action (this
/// includes the final syllabus item).
pub fn syllabus_repeat_predict(context: &[u32], syllabus: &SyllabusMap) -> Result<u32> {
    let last = repeat_predict(context)?;
    Ok(syllabus.successor(last).unwrap_or(last))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Repeat,
    Syllabus,
    SyllabusRepeat,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Repeat => "repeat",
            BaselineKind::Syllabus => "syllabus",
            BaselineKind::SyllabusRepeat => "syllabus+repeat",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeat" => Ok(BaselineKind::Repeat),
            "syllabus" => Ok(BaselineKind::Syllabus),
            "combined" | "syllabus+repeat" => Ok(BaselineKind::SyllabusRepeat),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

/// A baseline bound to its syllabus so it can be scored like any model.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub syllabus: SyllabusMap,
}

impl Predictor for Baseline {
    fn predict(&self, context: &[u32]) -> Result<Option<u32>> {
        match self.kind {
            BaselineKind::Repeat => repeat_predict(context).map(Some),
            BaselineKind::Syllabus => syllabus_predict(context, &self.syllabus),
            BaselineKind::SyllabusRepeat => syllabus_repeat_predict(context, &self.syllabus).map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::sequence_accuracy;
    use crate::ingest::{build_vocabulary, ActionToken};

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let toks: Vec<ActionToken> = tokens.iter().map(|t| ActionToken(t.to_string())).collect();
        build_vocabulary(&toks, 1).unwrap()
    }

    #[test]
    fn loads_and_counts_unmatched() {
        let v = vocab(&["a", "b", "c"]);
        let s = SyllabusMap::from_text("a\nb\nc\n", &v).unwrap();
        assert_eq!(s.coverage(), 3);
        assert_eq!(s.unmatched(), 0);
        let s = SyllabusMap::from_text("# course\na\nzz\n", &v).unwrap();
        assert_eq!(s.items(), &[v.id("a").unwrap()]);
        assert_eq!(s.unmatched(), 1);
        assert!(matches!(
            SyllabusMap::from_text("a\nb\na\n", &v),
            Err(Error::DuplicateItem(_))
        ));
    }

    #[test]
    fn repeat_rules() {
        assert_eq!(repeat_predict(&[0, 0, 1]).unwrap(), 1);
        assert!(repeat_predict(&[]).is_err());
        let b = Baseline { kind: BaselineKind::Repeat, syllabus: SyllabusMap::from_items(vec![], 0) };
        assert_eq!(sequence_accuracy(&b, &[3, 3, 3, 3]).unwrap(), Some(1.0));
    }

    #[test]
    fn syllabus_rules() {
        let (a, b, c, x) = (0, 1, 2, 9);
        let s = SyllabusMap::from_items(vec![a, b, c], 0);
        assert_eq!(syllabus_predict(&[b], &s).unwrap(), Some(c));
        assert_eq!(syllabus_predict(&[c], &s).unwrap(), None);
        assert_eq!(syllabus_predict(&[x], &s).unwrap(), None);
        assert_eq!(syllabus_repeat_predict(&[x], &s).unwrap(), x);
        assert_eq!(syllabus_repeat_predict(&[a], &s).unwrap(), b);
        assert_eq!(syllabus_repeat_predict(&[c], &s).unwrap(), c);
    }
}
