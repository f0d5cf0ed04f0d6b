//! Seeded synthetic corpus with unit-aligned utterances.
//!
//! Unit `u` of truth class `k` has mean `center_k * class_separation_scale +
//! unit_jitter * z_u`; speaker `s` shifts it by `delta_{s,u} ~
//! N(0, speaker_shift_scale^2 I)`, and frames are drawn around the shifted
//! mean with identity covariance. Values are rounded to `f32` so the
//! in-memory corpus equals what the FEAT files hold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Trial, TrialSet};
use crate::features::{read_feat_file, write_feat_archive, FeatureMatrix};
use crate::ivector::{read_posteriors_file, write_posteriors_file, PosteriorSet};
use crate::subregion::{AlignmentSegment, AlignmentSet, UnitClassMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorLevel {
    /// One posterior class per unit (the senone-like setting).
    Unit,
    /// One posterior class per truth class.
    Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub num_speakers: usize,
    pub num_units: usize,
    pub num_truth_classes: usize,
    pub segment_frames_min: usize,
    pub segment_frames_max: usize,
    pub enroll_frames: usize,
    pub test_utt_frames: usize,
    pub test_utts_per_speaker: usize,
    pub speaker_shift_scale: f64,
    pub class_separation_scale: f64,
    pub unit_jitter: f64,
    pub dim: usize,
    /// Speakers outside the trial list, used to train UBMs, T and PLDA.
    pub background_speakers: usize,
    pub background_utts_per_speaker: usize,
    pub background_utt_frames: usize,
    pub posterior_level: PosteriorLevel,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_speakers: 20,
            num_units: 10,
            num_truth_classes: 2,
            segment_frames_min: 5,
            segment_frames_max: 15,
            enroll_frames: 3500,
            test_utt_frames: 500,
            test_utts_per_speaker: 5,
            speaker_shift_scale: 0.5,
            class_separation_scale: 4.0,
            unit_jitter: 1.0,
            dim: 12,
            background_speakers: 40,
            background_utts_per_speaker: 4,
            background_utt_frames: 300,
            posterior_level: PosteriorLevel::Unit,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_speakers", self.num_speakers),
            ("num_units", self.num_units),
            ("num_truth_classes", self.num_truth_classes),
            ("segment_frames_min", self.segment_frames_min),
            ("enroll_frames", self.enroll_frames),
            ("test_utt_frames", self.test_utt_frames),
            ("test_utts_per_speaker", self.test_utts_per_speaker),
            ("dim", self.dim),
            ("background_speakers", self.background_speakers),
            ("background_utts_per_speaker", self.background_utts_per_speaker),
            ("background_utt_frames", self.background_utt_frames),
        ];
        if let Some((name, _)) = counts.iter().find(|c| c.1 == 0) {
            return Err(Error::InvalidArgument(format!("corpus spec: {name} must be positive")));
        }
        if self.segment_frames_max < self.segment_frames_min {
            return Err(Error::InvalidArgument("corpus spec: segment_frames_max < segment_frames_min".into()));
        }
        if self.num_truth_classes > self.num_units {
            return Err(Error::InvalidArgument("corpus spec: more truth classes than units".into()));
        }
        for (name, v) in [
            ("speaker_shift_scale", self.speaker_shift_scale),
            ("class_separation_scale", self.class_separation_scale),
            ("unit_jitter", self.unit_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("corpus spec: {name} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn unit_name(u: usize) -> String {
        format!("u{u:02}")
    }

    /// Truth class of unit `u`: round-robin, so every class is populated.
    pub fn truth_class(&self, u: usize) -> usize {
        u % self.num_truth_classes
    }

    pub fn num_posterior_classes(&self) -> usize {
        match self.posterior_level {
            PosteriorLevel::Unit => self.num_units,
            PosteriorLevel::Class => self.num_truth_classes,
        }
    }
}

/// Features, alignments and oracle posteriors of one partition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusSet {
    pub features: Vec<FeatureMatrix>,
    pub alignments: AlignmentSet,
    pub posteriors: Vec<PosteriorSet>,
    /// Utterance to speaker id.
    pub utt2spk: BTreeMap<String, String>,
}

impl CorpusSet {
    pub fn speaker_of(&self, utt_id: &str) -> Option<&str> {
        self.utt2spk.get(utt_id).map(String::as_str)
    }

    pub fn total_frames(&self) -> usize {
        self.features.iter().map(|f| f.num_frames()).sum()
    }

    /// Sets written by [`SyntheticCorpus::write_dir`] can be loaded back.
    pub fn read_dir(dir: &Path, name: &str) -> Result<Self> {
        let features = read_feat_file(&dir.join(format!("{name}.feat")))?;
        let alignments = AlignmentSet::read_file(&dir.join(format!("{name}.ali")))?;
        let posteriors = read_posteriors_file(&dir.join(format!("{name}.post")))?;
        let utt2spk = read_utt2spk(&dir.join(format!("{name}.utt2spk")))?;
        Ok(Self { features, alignments, posteriors, utt2spk })
    }

    fn write_dir(&self, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
        let paths: Vec<PathBuf> =
            ["feat", "ali", "post", "utt2spk"].iter().map(|ext| dir.join(format!("{name}.{ext}"))).collect();
        write_feat_archive(&paths[0], &self.features)?;
        self.alignments.write_file(&paths[1])?;
        write_posteriors_file(&paths[2], &self.posteriors)?;
        write_utt2spk(&paths[3], &self.utt2spk)?;
        Ok(paths)
    }
}

pub fn read_utt2spk(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (u, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::format("utt2spk", format!("line {}: expected utt<TAB>speaker", i + 1)))?;
        out.insert(u.to_string(), s.to_string());
    }
    Ok(out)
}

pub fn write_utt2spk(path: &Path, map: &BTreeMap<String, String>) -> Result<()> {
    let mut text = String::new();
    for (u, s) in map {
        let _ = writeln!(text, "{u}\t{s}");
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    pub background: CorpusSet,
    pub enroll: CorpusSet,
    pub test: CorpusSet,
    pub trials: TrialSet,
    pub classmap: UnitClassMap,
}

struct Generator<'a> {
    spec: &'a CorpusSpec,
    unit_means: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl Generator<'_> {
    fn speaker_offsets(&mut self) -> Vec<Vec<f64>> {
        let s = self.spec.speaker_shift_scale;
        (0..self.spec.num_units).map(|_| (0..self.spec.dim).map(|_| s * normal(&mut self.rng)).collect()).collect()
    }

    fn utterance(
        &mut self,
        set: &mut CorpusSet,
        utt_id: &str,
        spk: &str,
        offsets: &[Vec<f64>],
        frames: usize,
    ) -> Result<()> {
        let spec = self.spec;
        let d = spec.dim;
        let mut data = Vec::with_capacity(frames * d);
        let mut labels = Vec::with_capacity(frames);
        let mut t = 0;
        while t < frames {
            let u = self.rng.random_range(0..spec.num_units);
            let len = self.rng.random_range(spec.segment_frames_min..=spec.segment_frames_max).min(frames - t);
            set.alignments.push(AlignmentSegment {
                utt_id: utt_id.to_string(),
                start_frame: t,
                end_frame: t + len,
                unit: CorpusSpec::unit_name(u),
            })?;
            for _ in 0..len {
                for (m, o) in self.unit_means[u].iter().zip(&offsets[u]) {
                    let x = m + o + normal(&mut self.rng);
                    data.push(x as f32 as f64);
                }
                labels.push(match spec.posterior_level {
                    PosteriorLevel::Unit => u,
                    PosteriorLevel::Class => spec.truth_class(u),
                });
            }
            t += len;
        }
        set.features.push(FeatureMatrix::new(utt_id, d, data)?);
        set.posteriors.push(PosteriorSet::one_hot(utt_id, spec.num_posterior_classes(), &labels)?);
        set.utt2spk.insert(utt_id.to_string(), spk.to_string());
        Ok(())
    }
}

/// Builds the whole corpus from the spec; the same spec gives the same corpus.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let centers: Vec<Vec<f64>> =
        (0..spec.num_truth_classes).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
    let unit_means = (0..spec.num_units)
        .map(|u| {
            let c = &centers[spec.truth_class(u)];
            (0..d).map(|i| c[i] * spec.class_separation_scale + spec.unit_jitter * normal(&mut rng)).collect()
        })
        .collect();
    let mut g = Generator { spec, unit_means, rng };

    let mut background = CorpusSet::default();
    for b in 0..spec.background_speakers {
        let spk = format!("bg{b:03}");
        let off = g.speaker_offsets();
        for k in 0..spec.background_utts_per_speaker {
            g.utterance(&mut background, &format!("{spk}_u{k:02}"), &spk, &off, spec.background_utt_frames)?;
        }
    }

    let mut enroll = CorpusSet::default();
    let mut test = CorpusSet::default();
    let mut speakers = Vec::with_capacity(spec.num_speakers);
    for s in 0..spec.num_speakers {
        let spk = format!("spk{s:03}");
        let off = g.speaker_offsets();
        g.utterance(&mut enroll, &format!("{spk}_enr"), &spk, &off, spec.enroll_frames)?;
        for k in 0..spec.test_utts_per_speaker {
            g.utterance(&mut test, &format!("{spk}_t{k:02}"), &spk, &off, spec.test_utt_frames)?;
        }
        speakers.push(spk);
    }

    let mut trials = Vec::with_capacity(speakers.len() * test.features.len());
    for model in &speakers {
        for f in &test.features {
            trials.push(Trial {
                model_id: model.clone(),
                utt_id: f.utt_id().to_string(),
                is_target: test.speaker_of(f.utt_id()) == Some(model.as_str()),
            });
        }
    }
    let mapping = (0..spec.num_units).map(|u| (CorpusSpec::unit_name(u), spec.truth_class(u))).collect();
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        background,
        enroll,
        test,
        trials: TrialSet::new(trials)?,
        classmap: UnitClassMap::new(spec.num_truth_classes, mapping)?,
    })
}

/// First `k` frames of every utterance, with alignments and posteriors
/// clipped to match.
pub fn truncate_test(set: &CorpusSet, k: usize) -> Result<CorpusSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("truncation length must be >= 1".into()));
    }
    let mut out = CorpusSet { utt2spk: set.utt2spk.clone(), ..CorpusSet::default() };
    for f in &set.features {
        if f.is_empty() {
            return Err(Error::Empty(format!("utterance '{}' has no frames", f.utt_id())));
        }
        let mut f = f.clone();
        f.truncate(k);
        let t = f.num_frames();
        if let Some(segs) = set.alignments.get(f.utt_id()) {
            let clipped = segs
                .iter()
                .filter(|s| s.start_frame < t)
                .map(|s| AlignmentSegment { end_frame: s.end_frame.min(t), ..s.clone() })
                .collect();
            out.alignments.set_utterance(f.utt_id(), clipped)?;
        }
        out.features.push(f);
    }
    for p in &set.posteriors {
        let mut p = p.clone();
        p.truncate(k);
        out.posteriors.push(p);
    }
    Ok(out)
}

impl SyntheticCorpus {
    /// Writes every artifact plus `manifest.txt` (emitted paths, then the
    /// spec as TOML) and returns the manifest path.
    pub fn write_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, set) in [("background", &self.background), ("enroll", &self.enroll), ("test", &self.test)] {
            paths.extend(set.write_dir(dir, name)?);
        }
        let trials = dir.join("trials.txt");
        self.trials.write_file(&trials)?;
        let classmap = dir.join("classmap.txt");
        self.classmap.write_file(&classmap)?;
        paths.push(trials);
        paths.push(classmap);

        let spec = toml::to_string(&self.spec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut manifest = String::from("# files\n");
        for p in &paths {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let _ = writeln!(manifest, "{name}");
        }
        let _ = write!(manifest, "# spec\n{spec}");
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest)?;
        Ok(path)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let spec_text = manifest
            .split_once("# spec\n")
            .map(|(_, s)| s)
            .ok_or_else(|| Error::format("manifest", "missing spec section"))?;
        let spec: CorpusSpec = toml::from_str(spec_text).map_err(|e| Error::format("manifest", e.to_string()))?;
        Ok(Self {
            spec,
            background: CorpusSet::read_dir(dir, "background")?,
            enroll: CorpusSet::read_dir(dir, "enroll")?,
            test: CorpusSet::read_dir(dir, "test")?,
            trials: TrialSet::read_file(&dir.join("trials.txt"))?,
            classmap: UnitClassMap::read_file(&dir.join("classmap.txt"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{compute_eer, ScoreSet};
    use crate::gmm::{gmm_ubm_score, map_adapt, train_ubm_em, EmConfig};

    fn small() -> CorpusSpec {
        CorpusSpec {
            seed: 9,
            num_speakers: 4,
            num_units: 4,
            enroll_frames: 200,
            test_utt_frames: 60,
            test_utts_per_speaker: 3,
            dim: 3,
            background_speakers: 3,
            background_utts_per_speaker: 2,
            background_utt_frames: 50,
            ..CorpusSpec::default()
        }
    }

    fn tiles(set: &CorpusSet) {
        for f in &set.features {
            let segs = set.alignments.get(f.utt_id()).unwrap();
            let mut t = 0;
            for s in segs {
                assert_eq!(s.start_frame, t);
                assert!(s.end_frame > s.start_frame);
                t = s.end_frame;
            }
            assert_eq!(t, f.num_frames());
        }
    }

    #[test]
    fn counts_and_tiling() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(c.trials.len(), 4 * 12);
        assert_eq!(c.trials.num_targets(), 12);
        assert_eq!(c.enroll.features.len(), 4);
        assert_eq!(c.background.total_frames(), 300);
        for set in [&c.background, &c.enroll, &c.test] {
            tiles(set);
            for p in &set.posteriors {
                assert!(p.raw_rows().iter().all(|r| r.len() == 1 && r[0].1 == 1.0));
            }
        }
        assert_eq!(c.classmap.num_classes(), 2);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(&small()).unwrap().write_dir(a.path()).unwrap();
        generate_corpus(&small()).unwrap().write_dir(b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 15);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
        }
        let back = SyntheticCorpus::read_dir(a.path()).unwrap();
        assert_eq!(back, generate_corpus(&small()).unwrap());
    }

    #[test]
    fn truncation_cases() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(truncate_test(&c.test, 1000).unwrap(), c.test);
        let one = truncate_test(&c.test, 1).unwrap();
        for f in &one.features {
            assert_eq!(f.num_frames(), 1);
            assert_eq!(one.alignments.get(f.utt_id()).unwrap().len(), 1);
        }
        let mid = truncate_test(&c.test, 17).unwrap();
        tiles(&mid);
        assert!(mid.posteriors.iter().all(|p| p.num_frames() == 17));
        assert!(truncate_test(&c.test, 0).is_err());
    }

    #[test]
    fn no_speaker_shift_is_chance() {
        let spec = CorpusSpec {
            seed: 2,
            num_speakers: 10,
            speaker_shift_scale: 0.0,
            enroll_frames: 500,
            test_utt_frames: 100,
            test_utts_per_speaker: 20,
            dim: 4,
            background_speakers: 6,
            ..CorpusSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        assert!(c.trials.len() >= 2000);
        let cfg = EmConfig { num_iters: 5, ..EmConfig::default() };
        let (ubm, _) = train_ubm_em(&c.background.features, 8, &cfg).unwrap();
        let mut scores = ScoreSet::new("gmm");
        for e in &c.enroll.features {
            let spk = c.enroll.speaker_of(e.utt_id()).unwrap();
            let m = map_adapt(&ubm, "ubm", spk, e, 16.0).unwrap();
            for t in &c.test.features {
                scores.insert(spk, t.utt_id(), gmm_ubm_score(&m.gmm, &ubm, t).unwrap()).unwrap();
            }
        }
        let eer = compute_eer(&c.trials, &scores).unwrap().eer;
        assert!((eer - 0.5).abs() <= 0.05, "EER {eer}");
    }
}
