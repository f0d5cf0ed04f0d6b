//! Hard phonetic alignments and the unit-to-class map.
//!
//! Alignment text format, one segment per line:
//! `utt_id<TAB>start_frame<TAB>end_frame<TAB>unit` (end exclusive).
//! Class map text format: a `C=<n>` header, then `unit<TAB>class_index`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSegment {
    pub utt_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub unit: String,
}

impl AlignmentSegment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame == self.start_frame
    }
}

/// Segments grouped by utterance, each group sorted and non-overlapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentSet {
    by_utt: BTreeMap<String, Vec<AlignmentSegment>>,
}

impl AlignmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment; it must start at or after the end of the previous
    /// segment of the same utterance.
    pub fn push(&mut self, seg: AlignmentSegment) -> Result<()> {
        if seg.start_frame >= seg.end_frame {
            return Err(Error::format(
                "alignment",
                format!("segment {}..{} of '{}' is empty or reversed", seg.start_frame, seg.end_frame, seg.utt_id),
            ));
        }
        let list = self.by_utt.entry(seg.utt_id.clone()).or_default();
        if let Some(prev) = list.last() {
            if seg.start_frame < prev.end_frame {
                return Err(Error::format(
                    "alignment",
                    format!("segments of '{}' overlap or are unsorted at frame {}", seg.utt_id, seg.start_frame),
                ));
            }
        }
        list.push(seg);
        Ok(())
    }

    pub fn get(&self, utt_id: &str) -> Option<&[AlignmentSegment]> {
        self.by_utt.get(utt_id).map(|v| v.as_slice())
    }

    pub fn utterances(&self) -> impl Iterator<Item = (&str, &[AlignmentSegment])> {
        self.by_utt.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn segments(&self) -> impl Iterator<Item = &AlignmentSegment> {
        self.by_utt.values().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.by_utt.is_empty()
    }

    pub fn num_segments(&self) -> usize {
        self.by_utt.values().map(|v| v.len()).sum()
    }

    /// Replaces (or inserts) the segments of one utterance.
    pub fn set_utterance(&mut self, utt_id: &str, segs: Vec<AlignmentSegment>) -> Result<()> {
        self.by_utt.remove(utt_id);
        for s in segs {
            if s.utt_id != utt_id {
                return Err(Error::InvalidArgument(format!("segment of '{}' filed under '{utt_id}'", s.utt_id)));
            }
            self.push(s)?;
        }
        Ok(())
    }

    /// Checks every segment of `utt_id` lies inside `[0, num_frames)`.
    pub fn check_bounds(&self, utt_id: &str, num_frames: usize) -> Result<()> {
        if let Some(segs) = self.get(utt_id) {
            if let Some(s) = segs.iter().find(|s| s.end_frame > num_frames) {
                return Err(Error::format(
                    "alignment",
                    format!("segment {}..{} exceeds the {num_frames} frames of '{utt_id}'", s.start_frame, s.end_frame),
                ));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut set = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |why: &str| Error::format("alignment", format!("line {}: {why}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let start = fields[1].parse().map_err(|_| bad("bad start frame"))?;
            let end = fields[2].parse().map_err(|_| bad("bad end frame"))?;
            set.push(AlignmentSegment {
                utt_id: fields[0].to_string(),
                start_frame: start,
                end_frame: end,
                unit: fields[3].to_string(),
            })?;
        }
        Ok(set)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in self.segments() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", s.utt_id, s.start_frame, s.end_frame, s.unit);
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

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitClassMap {
    num_classes: usize,
    mapping: BTreeMap<String, usize>,
}

impl UnitClassMap {
    pub fn new(num_classes: usize, mapping: BTreeMap<String, usize>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("class map needs at least one class".into()));
        }
        let mut seen = vec![false; num_classes];
        for (unit, &c) in &mapping {
            if c >= num_classes {
                return Err(Error::InvalidArgument(format!("unit '{unit}' maps to class {c} >= {num_classes}")));
            }
            seen[c] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("class {empty} has no units")));
        }
        Ok(Self { num_classes, mapping })
    }

    /// Every unit in one class.
    pub fn single_class<'a>(units: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Self::new(1, units.into_iter().map(|u| (u.to_string(), 0)).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_of(&self, unit: &str) -> Option<usize> {
        self.mapping.get(unit).copied()
    }

    pub fn units(&self) -> impl Iterator<Item = (&str, usize)> {
        self.mapping.iter().map(|(u, &c)| (u.as_str(), c))
    }

    /// Units of class `c`, sorted.
    pub fn members(&self, c: usize) -> Vec<&str> {
        self.units().filter(|(_, k)| *k == c).map(|(u, _)| u).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("classmap", "empty file"))?;
        let n = header
            .strip_prefix("C=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::format("classmap", "missing C=<n> header"))?;
        let mut mapping = BTreeMap::new();
        for line in lines {
            let (unit, class) =
                line.split_once('\t').ok_or_else(|| Error::format("classmap", format!("bad line '{line}'")))?;
            let class =
                class.trim().parse().map_err(|_| Error::format("classmap", format!("bad class index in '{line}'")))?;
            if mapping.insert(unit.to_string(), class).is_some() {
                return Err(Error::format("classmap", format!("unit '{unit}' listed twice")));
            }
        }
        Self::new(n, mapping).map_err(|e| Error::format("classmap", e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("C={}\n", self.num_classes);
        for (u, c) in &self.mapping {
            let _ = writeln!(out, "{u}\t{c}");
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
