//! Phonetic-aware subregion modelling.
//!
//! Speech units (opaque labels from an external aligner) are clustered into
//! classes; each class gets its own UBM and, per speaker, its own MAP-adapted
//! GMM. Test utterances are scored segment by segment against the models of
//! each segment's class, or frame by frame with soft class posteriors.

mod alignment;
mod io;

pub use alignment::{AlignmentSegment, AlignmentSet, UnitClassMap};
pub use io::{
    read_subregion_speakers, read_subregion_speakers_file, read_subregion_ubms, read_subregion_ubms_file,
    write_subregion_speaker, write_subregion_speakers_file, write_subregion_ubms, write_subregion_ubms_file,
    SUBREGION_MAGIC,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{log_sum_exp, map_adapt_rows, train_ubm_em, DiagGmm, EmConfig};
use crate::kmeans::kmeans;

const UNIT_KMEANS_ITERS: usize = 100;
const POSTERIOR_ROW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SubregionUbmSet {
    ubms: Vec<DiagGmm>,
}

impl SubregionUbmSet {
    pub fn new(ubms: Vec<DiagGmm>) -> Result<Self> {
        let d = ubms
            .first()
            .ok_or_else(|| Error::InvalidArgument("subregion UBM set needs at least one class".into()))?
            .dim();
        if let Some(bad) = ubms.iter().find(|g| g.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: bad.dim() });
        }
        Ok(Self { ubms })
    }

    pub fn num_classes(&self) -> usize {
        self.ubms.len()
    }

    pub fn dim(&self) -> usize {
        self.ubms[0].dim()
    }

    pub fn class(&self, c: usize) -> &DiagGmm {
        &self.ubms[c]
    }

    pub fn classes(&self) -> &[DiagGmm] {
        &self.ubms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubregionSpeakerModel {
    pub speaker_id: String,
    pub gmms: Vec<DiagGmm>,
}

impl SubregionSpeakerModel {
    fn check_against(&self, ubms: &SubregionUbmSet) -> Result<()> {
        if self.gmms.len() != ubms.num_classes() {
            return Err(Error::DimensionMismatch { expected: ubms.num_classes(), actual: self.gmms.len() });
        }
        for (s, u) in self.gmms.iter().zip(ubms.classes()) {
            if s.num_components() != u.num_components() || s.dim() != u.dim() {
                return Err(Error::DimensionMismatch { expected: u.num_components(), actual: s.num_components() });
            }
        }
        Ok(())
    }
}

/// Result of hard-alignment subregion scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubregionScore {
    pub score: f64,
    pub segments_scored: usize,
    /// Segments whose unit has no class in the map.
    pub segments_skipped: usize,
}

fn utt_segments<'a>(alignments: &'a AlignmentSet, feats: &FeatureMatrix) -> Result<&'a [AlignmentSegment]> {
    alignments.check_bounds(feats.utt_id(), feats.num_frames())?;
    Ok(alignments.get(feats.utt_id()).unwrap_or(&[]))
}

/// Mean feature vector of every unit, weighted by frames.
pub fn unit_embeddings(features: &[FeatureMatrix], alignments: &AlignmentSet) -> Result<BTreeMap<String, Vec<f64>>> {
    if alignments.is_empty() {
        return Err(Error::Empty("alignment set".into()));
    }
    let mut sums: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for f in features {
        for seg in utt_segments(alignments, f)? {
            let entry = sums.entry(seg.unit.clone()).or_insert_with(|| (0, vec![0.0; f.dim()]));
            if entry.1.len() != f.dim() {
                return Err(Error::DimensionMismatch { expected: entry.1.len(), actual: f.dim() });
            }
            for t in seg.start_frame..seg.end_frame {
                entry.0 += 1;
                for (s, v) in entry.1.iter_mut().zip(f.row(t)) {
                    *s += v;
                }
            }
        }
    }
    Ok(sums.into_iter().map(|(u, (n, s))| (u, s.into_iter().map(|v| v / n as f64).collect())).collect())
}

/// K-means over unit embeddings, run to convergence or 100 iterations.
pub fn cluster_units(embeddings: &BTreeMap<String, Vec<f64>>, num_classes: usize, seed: u64) -> Result<UnitClassMap> {
    if embeddings.len() < num_classes {
        return Err(Error::InvalidArgument(format!("{} units cannot form {num_classes} classes", embeddings.len())));
    }
    let dim = embeddings.values().next().map(|v| v.len()).unwrap_or(0);
    let points: Vec<f64> = embeddings.values().flatten().copied().collect();
    let km = kmeans(&points, dim, num_classes, UNIT_KMEANS_ITERS, seed)?;
    let mapping = embeddings.keys().cloned().zip(km.assignments).collect();
    UnitClassMap::new(num_classes, mapping)
}

/// Frames of each utterance split by class, in temporal order. Utterances
/// contributing nothing to a class are left out of that class.
fn frames_by_class(
    features: &[FeatureMatrix],
    alignments: &AlignmentSet,
    classmap: &UnitClassMap,
) -> Result<Vec<Vec<FeatureMatrix>>> {
    let c = classmap.num_classes();
    let mut out: Vec<Vec<FeatureMatrix>> = vec![Vec::new(); c];
    let mut unknown = 0usize;
    for f in features {
        let mut per_class: Vec<FeatureMatrix> = (0..c).map(|_| FeatureMatrix::empty(f.utt_id(), f.dim())).collect();
        for seg in utt_segments(alignments, f)? {
            match classmap.class_of(&seg.unit) {
                Some(k) => {
                    for t in seg.start_frame..seg.end_frame {
                        per_class[k].push_row(f.row(t));
                    }
                }
                None => unknown += 1,
            }
        }
        for (k, m) in per_class.into_iter().enumerate() {
            if !m.is_empty() {
                out[k].push(m);
            }
        }
    }
    if unknown > 0 {
        log::warn!("{unknown} segments with units missing from the class map were ignored");
    }
    Ok(out)
}

/// One UBM per class, trained by EM on the frames aligned to that class.
/// Class `c` uses seed `cfg.seed + c`.
pub fn train_subregion_ubms(
    features: &[FeatureMatrix],
    alignments: &AlignmentSet,
    classmap: &UnitClassMap,
    comps_per_class: usize,
    cfg: &EmConfig,
) -> Result<SubregionUbmSet> {
    let pooled = frames_by_class(features, alignments, classmap)?;
    let mut ubms = Vec::with_capacity(pooled.len());
    for (c, utts) in pooled.iter().enumerate() {
        let frames: usize = utts.iter().map(|u| u.num_frames()).sum();
        if frames < comps_per_class.max(1) {
            return Err(Error::StarvedClass { class: c, frames: frames as f64, needed: comps_per_class as f64 });
        }
        let class_cfg = EmConfig { seed: cfg.seed.wrapping_add(c as u64), ..cfg.clone() };
        let (gmm, _) = train_ubm_em(utts, comps_per_class, &class_cfg)?;
        ubms.push(gmm);
    }
    SubregionUbmSet::new(ubms)
}

/// Per-class MAP adaptation from the enrollment frames aligned to each
/// class; classes without enrollment frames copy their UBM.
pub fn enroll_subregion_speaker(
    ubms: &SubregionUbmSet,
    classmap: &UnitClassMap,
    speaker_id: &str,
    features: &[FeatureMatrix],
    alignments: &AlignmentSet,
    relevance: f64,
) -> Result<SubregionSpeakerModel> {
    if classmap.num_classes() != ubms.num_classes() {
        return Err(Error::DimensionMismatch { expected: ubms.num_classes(), actual: classmap.num_classes() });
    }
    let pooled = frames_by_class(features, alignments, classmap)?;
    let gmms = pooled
        .iter()
        .zip(ubms.classes())
        .map(|(utts, ubm)| map_adapt_rows(ubm, utts.iter().flat_map(|u| u.rows()), relevance))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubregionSpeakerModel { speaker_id: speaker_id.to_string(), gmms })
}

/// Log-likelihood ratio of one segment under its class models.
fn segment_llr(
    spk: &DiagGmm,
    ubm: &DiagGmm,
    feats: &FeatureMatrix,
    seg: &AlignmentSegment,
    s1: &mut [f64],
    s2: &mut [f64],
) -> f64 {
    (seg.start_frame..seg.end_frame)
        .map(|t| {
            let x = feats.row(t);
            spk.frame_ll_with(x, s1) - ubm.frame_ll_with(x, s2)
        })
        .sum()
}

/// Average of per-segment LLRs under the segment's class models.
///
/// With `length_normalize` each segment LLR is divided by its frame count
/// before averaging; otherwise raw segment log-ratios are averaged.
pub fn score_subregion(
    spk: &SubregionSpeakerModel,
    ubms: &SubregionUbmSet,
    classmap: &UnitClassMap,
    test: &FeatureMatrix,
    alignments: &AlignmentSet,
    length_normalize: bool,
) -> Result<SubregionScore> {
    spk.check_against(ubms)?;
    if test.dim() != ubms.dim() {
        return Err(Error::DimensionMismatch { expected: ubms.dim(), actual: test.dim() });
    }
    let segs = utt_segments(alignments, test)?;
    let max_c = ubms.classes().iter().map(|g| g.num_components()).max().unwrap_or(1);
    let (mut s1, mut s2) = (vec![0.0; max_c], vec![0.0; max_c]);
    let mut total = 0.0;
    let mut scored = 0usize;
    let mut skipped = 0usize;
    for seg in segs {
        let Some(c) = classmap.class_of(&seg.unit) else {
            skipped += 1;
            continue;
        };
        if c >= ubms.num_classes() {
            return Err(Error::DimensionMismatch { expected: ubms.num_classes(), actual: c + 1 });
        }
        let k = ubms.class(c).num_components();
        let llr = segment_llr(&spk.gmms[c], ubms.class(c), test, seg, &mut s1[..k], &mut s2[..k]);
        total += if length_normalize { llr / seg.len() as f64 } else { llr };
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Empty(format!(
            "utterance '{}' has no scorable segments ({skipped} skipped)",
            test.utt_id()
        )));
    }
    Ok(SubregionScore { score: total / scored as f64, segments_scored: scored, segments_skipped: skipped })
}

/// Frame-averaged LLR with the class mixture weighted by per-frame class
/// posteriors: `log sum_c P(c|x) p(x|spk_c) - log sum_c P(c|x) p(x|ubm_c)`.
pub fn score_subregion_soft(
    spk: &SubregionSpeakerModel,
    ubms: &SubregionUbmSet,
    test: &FeatureMatrix,
    class_posteriors: &[Vec<f64>],
) -> Result<f64> {
    spk.check_against(ubms)?;
    if test.is_empty() {
        return Err(Error::Empty(format!("test utterance '{}' has no frames", test.utt_id())));
    }
    if class_posteriors.len() != test.num_frames() {
        return Err(Error::DimensionMismatch { expected: test.num_frames(), actual: class_posteriors.len() });
    }
    let c = ubms.num_classes();
    let max_c = ubms.classes().iter().map(|g| g.num_components()).max().unwrap_or(1);
    let mut scratch = vec![0.0; max_c];
    let mut num = vec![0.0; c];
    let mut den = vec![0.0; c];
    let mut total = 0.0;
    for (t, (x, post)) in test.rows().zip(class_posteriors).enumerate() {
        if post.len() != c {
            return Err(Error::DimensionMismatch { expected: c, actual: post.len() });
        }
        let sum: f64 = post.iter().sum();
        if (sum - 1.0).abs() > POSTERIOR_ROW_TOL || post.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("posterior row {t} is not normalized (sum {sum})")));
        }
        for k in 0..c {
            let n = ubms.class(k).num_components();
            let lp = post[k].ln();
            num[k] = lp + spk.gmms[k].frame_ll_with(x, &mut scratch[..n]);
            den[k] = lp + ubms.class(k).frame_ll_with(x, &mut scratch[..n]);
        }
        total += log_sum_exp(&num) - log_sum_exp(&den);
    }
    Ok(total / test.num_frames() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{gmm_ubm_score, map_adapt};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(u: &str, s: usize, e: usize, unit: &str) -> AlignmentSegment {
        AlignmentSegment { utt_id: u.into(), start_frame: s, end_frame: e, unit: unit.into() }
    }

    fn aligns(segs: Vec<AlignmentSegment>) -> AlignmentSet {
        let mut a = AlignmentSet::new();
        for s in segs {
            a.push(s).unwrap();
        }
        a
    }

    #[test]
    fn embeddings_weight_by_frames() {
        let f = FeatureMatrix::from_rows("u", &[vec![1.0], vec![1.0], vec![1.0], vec![4.0], vec![9.0]]).unwrap();
        let a = aligns(vec![seg("u", 0, 3, "a"), seg("u", 3, 4, "a"), seg("u", 4, 5, "b")]);
        let e = unit_embeddings(&[f], &a).unwrap();
        // frame-weighted (1+1+1+4)/4, not segment mean (1+4)/2
        assert!((e["a"][0] - 1.75).abs() < 1e-15);
        assert_eq!(e["b"], vec![9.0]);
        assert!(!e.contains_key("c"));
        assert!(unit_embeddings(&[], &AlignmentSet::new()).is_err());
    }

    #[test]
    fn clustering_splits_obvious_groups() {
        let emb: BTreeMap<String, Vec<f64>> =
            [("w", 0.0), ("x", 0.1), ("y", 10.0), ("z", 10.1)].iter().map(|(u, v)| (u.to_string(), vec![*v])).collect();
        for seed in 0..10 {
            let map = cluster_units(&emb, 2, seed).unwrap();
            assert_eq!(map.class_of("w"), map.class_of("x"));
            assert_eq!(map.class_of("y"), map.class_of("z"));
            assert_ne!(map.class_of("w"), map.class_of("y"));
        }
        let singles = cluster_units(&emb, 4, 0).unwrap();
        assert_eq!((0..4).map(|c| singles.members(c).len()).sum::<usize>(), 4);
        assert!(cluster_units(&emb, 5, 0).is_err());
    }

    fn random_gmm(rng: &mut ChaCha8Rng, c: usize, d: usize) -> DiagGmm {
        let mut w: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 0.1).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        DiagGmm::new(
            w,
            (0..c * d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
            (0..c * d).map(|_| rng.random::<f64>() + 0.3).collect(),
        )
        .unwrap()
    }

    fn random_feats(rng: &mut ChaCha8Rng, id: &str, t: usize, d: usize) -> FeatureMatrix {
        FeatureMatrix::new(id, d, (0..t * d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).unwrap()
    }

    #[test]
    fn single_class_enroll_equals_map_adapt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ubm = random_gmm(&mut rng, 3, 2);
        let f = random_feats(&mut rng, "e", 30, 2);
        let a = aligns(vec![seg("e", 0, 10, "a"), seg("e", 10, 30, "b")]);
        let map = UnitClassMap::single_class(["a", "b"]).unwrap();
        let set = SubregionUbmSet::new(vec![ubm.clone()]).unwrap();
        let spk = enroll_subregion_speaker(&set, &map, "s", std::slice::from_ref(&f), &a, 16.0).unwrap();
        let direct = map_adapt(&ubm, "ubm", "s", &f, 16.0).unwrap();
        assert_eq!(spk.gmms[0], direct.gmm);

        let test = random_feats(&mut rng, "t", 12, 2);
        let ta = aligns(vec![seg("t", 0, 12, "a")]);
        let s = score_subregion(&spk, &set, &map, &test, &ta, true).unwrap();
        let g = gmm_ubm_score(&direct.gmm, &ubm, &test).unwrap();
        assert!((s.score - g).abs() < 1e-12);
    }

    #[test]
    fn enrollment_touching_one_class_leaves_others() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let set = SubregionUbmSet::new((0..3).map(|_| random_gmm(&mut rng, 2, 2)).collect()).unwrap();
        let map =
            UnitClassMap::new(3, [("a", 0), ("b", 1), ("c", 2)].iter().map(|(u, c)| (u.to_string(), *c)).collect())
                .unwrap();
        let f = random_feats(&mut rng, "e", 20, 2);
        let a = aligns(vec![seg("e", 0, 20, "c")]);
        let spk = enroll_subregion_speaker(&set, &map, "s", &[f], &a, 4.0).unwrap();
        assert_eq!(spk.gmms[0], *set.class(0));
        assert_eq!(spk.gmms[1], *set.class(1));
        assert_ne!(spk.gmms[2], *set.class(2));

        let none = enroll_subregion_speaker(&set, &map, "s", &[], &AlignmentSet::new(), 4.0).unwrap();
        assert_eq!(none.gmms, set.classes());
        let test = random_feats(&mut rng, "t", 9, 2);
        let ta = aligns(vec![seg("t", 0, 4, "a"), seg("t", 4, 9, "c")]);
        assert_eq!(score_subregion(&none, &set, &map, &test, &ta, true).unwrap().score, 0.0);
    }

    #[test]
    fn score_is_mean_of_segment_llrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = SubregionUbmSet::new((0..2).map(|_| random_gmm(&mut rng, 3, 2)).collect()).unwrap();
        let spk = SubregionSpeakerModel {
            speaker_id: "s".into(),
            gmms: (0..2).map(|_| random_gmm(&mut rng, 3, 2)).collect(),
        };
        let map =
            UnitClassMap::new(2, [("a", 0), ("b", 1)].iter().map(|(u, c)| (u.to_string(), *c)).collect()).unwrap();
        let test = random_feats(&mut rng, "t", 10, 2);
        let ta = aligns(vec![seg("t", 0, 3, "a"), seg("t", 3, 10, "b")]);
        let llr = |c: usize, s: usize, e: usize| -> f64 {
            (s..e)
                .map(|t| {
                    spk.gmms[c].log_likelihood(test.row(t)).unwrap() - set.class(c).log_likelihood(test.row(t)).unwrap()
                })
                .sum()
        };
        let (a, b) = (llr(0, 0, 3), llr(1, 3, 10));
        let norm = score_subregion(&spk, &set, &map, &test, &ta, true).unwrap();
        assert!((norm.score - (a / 3.0 + b / 7.0) / 2.0).abs() < 1e-12);
        let raw = score_subregion(&spk, &set, &map, &test, &ta, false).unwrap();
        assert!((raw.score - (a + b) / 2.0).abs() < 1e-12);

        // perturbing class 0 leaves class-1-only utterances untouched
        let mut spk2 = spk.clone();
        spk2.gmms[0] = random_gmm(&mut rng, 3, 2);
        let only_b = aligns(vec![seg("t", 3, 10, "b")]);
        assert_eq!(
            score_subregion(&spk, &set, &map, &test, &only_b, true).unwrap(),
            score_subregion(&spk2, &set, &map, &test, &only_b, true).unwrap()
        );
    }

    #[test]
    fn unknown_units_are_skipped_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = SubregionUbmSet::new(vec![random_gmm(&mut rng, 2, 1)]).unwrap();
        let map = UnitClassMap::single_class(["a"]).unwrap();
        let test = random_feats(&mut rng, "t", 6, 1);
        let spk = SubregionSpeakerModel { speaker_id: "s".into(), gmms: vec![random_gmm(&mut rng, 2, 1)] };
        let ta = aligns(vec![seg("t", 0, 2, "a"), seg("t", 2, 6, "q")]);
        let s = score_subregion(&spk, &set, &map, &test, &ta, true).unwrap();
        assert_eq!((s.segments_scored, s.segments_skipped), (1, 1));
        let only_unknown = aligns(vec![seg("t", 0, 6, "q")]);
        assert!(score_subregion(&spk, &set, &map, &test, &only_unknown, true).is_err());
    }

    #[test]
    fn soft_score_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set = SubregionUbmSet::new((0..2).map(|_| random_gmm(&mut rng, 2, 2)).collect()).unwrap();
        let spk = SubregionSpeakerModel {
            speaker_id: "s".into(),
            gmms: (0..2).map(|_| random_gmm(&mut rng, 2, 2)).collect(),
        };
        let map =
            UnitClassMap::new(2, [("a", 0), ("b", 1)].iter().map(|(u, c)| (u.to_string(), *c)).collect()).unwrap();
        let test = random_feats(&mut rng, "t", 4, 2);
        let classes = [0usize, 1, 1, 0];
        let one_hot: Vec<Vec<f64>> =
            classes.iter().map(|&c| (0..2).map(|k| if k == c { 1.0 } else { 0.0 }).collect()).collect();
        let ta = aligns(
            classes.iter().enumerate().map(|(t, &c)| seg("t", t, t + 1, if c == 0 { "a" } else { "b" })).collect(),
        );
        let soft = score_subregion_soft(&spk, &set, &test, &one_hot).unwrap();
        let hard = score_subregion(&spk, &set, &map, &test, &ta, true).unwrap().score;
        assert!((soft - hard).abs() < 1e-12);

        let same = SubregionSpeakerModel { speaker_id: "u".into(), gmms: set.classes().to_vec() };
        let half = vec![vec![0.5, 0.5]; 4];
        assert_eq!(score_subregion_soft(&same, &set, &test, &half).unwrap(), 0.0);
        let bad = vec![vec![0.5, 0.6]; 4];
        assert!(score_subregion_soft(&spk, &set, &test, &bad).is_err());
    }

    #[test]
    fn class_training_and_starvation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut rows = Vec::new();
        for t in 0..400 {
            let base = if t < 200 { -8.0 } else { 8.0 };
            rows.push(vec![base + rng.random::<f64>(), base - rng.random::<f64>()]);
        }
        let f = FeatureMatrix::from_rows("u", &rows).unwrap();
        let a = aligns(vec![seg("u", 0, 200, "lo"), seg("u", 200, 400, "hi")]);
        let map =
            UnitClassMap::new(2, [("lo", 0), ("hi", 1)].iter().map(|(u, c)| (u.to_string(), *c)).collect()).unwrap();
        let set = train_subregion_ubms(std::slice::from_ref(&f), &a, &map, 2, &EmConfig::default()).unwrap();
        let gmean = |g: &DiagGmm| (0..g.num_components()).map(|k| g.weights()[k] * g.mean(k)[0]).sum::<f64>();
        assert!((gmean(set.class(0)) + 7.5).abs() < 0.2);
        assert!((gmean(set.class(1)) - 8.5).abs() < 0.2);

        let pooled = UnitClassMap::single_class(["lo", "hi"]).unwrap();
        let cfg = EmConfig::default();
        let one = train_subregion_ubms(std::slice::from_ref(&f), &a, &pooled, 4, &cfg).unwrap();
        let (direct, _) = train_ubm_em(std::slice::from_ref(&f), 4, &cfg).unwrap();
        assert_eq!(*one.class(0), direct);

        let starving =
            UnitClassMap::new(2, [("lo", 0), ("hi", 1)].iter().map(|(u, c)| (u.to_string(), *c)).collect()).unwrap();
        let one_sided = aligns(vec![seg("u", 0, 400, "lo")]);
        assert!(matches!(
            train_subregion_ubms(&[f], &one_sided, &starving, 2, &cfg),
            Err(Error::StarvedClass { class: 1, .. })
        ));
    }
}
