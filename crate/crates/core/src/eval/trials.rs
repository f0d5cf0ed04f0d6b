//! Trial lists and score sets with their text formats.
//!
//! Trial file: `model_id<TAB>utt_id<TAB>target|nontarget`.
//! Score file: `model_id<TAB>utt_id<TAB>score`, sorted by key. Scores are
//! printed with the shortest decimal that reads back to the same `f64`
//! (never in exponent form), so files round-trip byte-for-byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub model_id: String,
    pub utt_id: String,
    pub is_target: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    trials: Vec<Trial>,
}

impl TrialSet {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &trials {
            if !seen.insert((t.model_id.as_str(), t.utt_id.as_str())) {
                return Err(Error::InvalidArgument(format!("duplicate trial {} {}", t.model_id, t.utt_id)));
            }
        }
        Ok(Self { trials })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |why: &str| Error::format("trial", format!("line {}: {why}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let is_target = match f[2] {
                "target" => true,
                "nontarget" => false,
                _ => return Err(bad("label must be 'target' or 'nontarget'")),
            };
            trials.push(Trial { model_id: f[0].to_string(), utt_id: f[1].to_string(), is_target });
        }
        Self::new(trials)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let label = if t.is_target { "target" } else { "nontarget" };
            let _ = writeln!(out, "{}\t{}\t{label}", t.model_id, t.utt_id);
        }
        out
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub system_id: String,
    scores: BTreeMap<(String, String), f64>,
}

impl ScoreSet {
    pub fn new(system_id: impl Into<String>) -> Self {
        Self { system_id: system_id.into(), scores: BTreeMap::new() }
    }

    pub fn insert(&mut self, model_id: impl Into<String>, utt_id: impl Into<String>, score: f64) -> Result<()> {
        if score.is_nan() {
            return Err(Error::Numerical("NaN score".into()));
        }
        self.scores.insert((model_id.into(), utt_id.into()), score);
        Ok(())
    }

    pub fn get(&self, model_id: &str, utt_id: &str) -> Option<f64> {
        // BTreeMap<(String, String)> cannot be probed with borrowed pairs
        self.scores.get(&(model_id.to_string(), utt_id.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.scores.iter().map(|((m, u), s)| (m.as_str(), u.as_str(), *s))
    }

    pub fn same_keys(&self, other: &ScoreSet) -> bool {
        self.scores.len() == other.scores.len() && self.scores.keys().zip(other.scores.keys()).all(|(a, b)| a == b)
    }

    /// Applies `f` to every score.
    pub fn map(&self, system_id: impl Into<String>, mut f: impl FnMut(f64) -> f64) -> ScoreSet {
        ScoreSet { system_id: system_id.into(), scores: self.scores.iter().map(|(k, v)| (k.clone(), f(*v))).collect() }
    }

    pub fn parse(system_id: impl Into<String>, text: &str) -> Result<Self> {
        let mut set = Self::new(system_id);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |why: &str| Error::format("score", format!("line {}: {why}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let s: f64 = f[2].parse().map_err(|_| bad("bad score"))?;
            if !s.is_finite() {
                return Err(bad("score must be finite"));
            }
            if set.get(f[0], f[1]).is_some() {
                return Err(bad("duplicate key"));
            }
            set.insert(f[0], f[1], s)?;
        }
        Ok(set)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((m, u), s) in &self.scores {
            let _ = writeln!(out, "{m}\t{u}\t{s}");
        }
        out
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::parse(id, &fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Target and non-target scores of `trials`, in trial order.
pub fn split_scores(trials: &TrialSet, scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tar = Vec::new();
    let mut non = Vec::new();
    for t in trials.trials() {
        let s = scores
            .get(&t.model_id, &t.utt_id)
            .ok_or_else(|| Error::Missing { what: "score", key: format!("{} {}", t.model_id, t.utt_id) })?;
        if t.is_target {
            tar.push(s);
        } else {
            non.push(s);
        }
    }
    Ok((tar, non))
}
