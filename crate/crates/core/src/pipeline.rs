//! End-to-end experiment on a synthetic corpus: every system is trained on
//! the background partition, enrolled on the enrollment partition and scored
//! on long and truncated test utterances.
//!
//! Trial scoring runs in parallel, but each score is computed independently
//! and collected in trial order, so score files do not depend on the thread
//! count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{compute_eer, det_curve, fuse_scores, sweep_alpha, AlphaSweep, ScoreSet, TrialSet};
use crate::features::{FeatureMatrix, MfccConfig};
use crate::gmm::{gmm_ubm_score, map_adapt, train_ubm_em, DiagGmm, EmConfig, SpeakerModel};
use crate::ivector::{
    accumulate_stats, accumulate_stats_external, cosine_score, train_plda, train_supervised_ubm, train_t_matrix,
    BaumWelchStats, IVectorExtractor, LengthNorm, PldaModel,
};
use crate::subregion::{
    cluster_units, enroll_subregion_speaker, score_subregion, train_subregion_ubms, unit_embeddings, AlignmentSet,
    SubregionSpeakerModel, SubregionUbmSet, UnitClassMap,
};
use crate::synthcorpus::{generate_corpus, truncate_test, CorpusSet, CorpusSpec, SyntheticCorpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbmParams {
    /// Pooled UBM size; the default suits real speech, not the small demo.
    pub components: usize,
    pub relevance: f64,
    pub em: EmConfig,
}

impl Default for UbmParams {
    fn default() -> Self {
        Self { components: 1024, relevance: 16.0, em: EmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubregionParams {
    /// Number of unit classes; units are grouped by k-means on their mean
    /// vectors unless `use_truth_classes` is set.
    pub num_classes: usize,
    /// The default keeps six classes near the pooled UBM's total size.
    pub comps_per_class: usize,
    pub relevance: f64,
    pub length_normalize: bool,
    pub use_truth_classes: bool,
}

impl Default for SubregionParams {
    fn default() -> Self {
        Self { num_classes: 6, comps_per_class: 128, relevance: 16.0, length_normalize: true, use_truth_classes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IVectorParams {
    /// Total-variability rank. The default suits full-size UBMs; small
    /// synthetic setups should use 20 or less.
    pub rank: usize,
    pub t_iters: usize,
    pub plda_iters: usize,
    pub length_norm: bool,
    /// Occupancy floor for the supervised (oracle-posterior) UBM.
    pub min_class_occupancy: f64,
}

impl Default for IVectorParams {
    fn default() -> Self {
        Self { rank: 400, t_iters: 5, plda_iters: 10, length_norm: true, min_class_occupancy: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    pub alpha: f64,
    pub normalize: bool,
    pub grid_step: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { alpha: 0.94, normalize: false, grid_step: 0.01 }
    }
}

/// The demo configuration. `seed` has no default and seeds every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub mfcc: MfccConfig,
    #[serde(default)]
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub ubm: UbmParams,
    #[serde(default)]
    pub subregion: SubregionParams,
    #[serde(default)]
    pub ivector: IVectorParams,
    #[serde(default)]
    pub fusion: FusionParams,
    /// Test lengths to evaluate; utterances are truncated to each.
    #[serde(default = "default_test_lengths")]
    pub test_lengths: Vec<usize>,
    #[serde(default = "default_det_points")]
    pub det_points: usize,
}

fn default_test_lengths() -> Vec<usize> {
    vec![50, 500]
}

fn default_det_points() -> usize {
    100
}

impl PipelineConfig {
    /// Default settings everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            mfcc: MfccConfig::default(),
            corpus: CorpusSpec::default(),
            ubm: UbmParams::default(),
            subregion: SubregionParams::default(),
            ivector: IVectorParams::default(),
            fusion: FusionParams::default(),
            test_lengths: default_test_lengths(),
            det_points: default_det_points(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("pipeline config", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Copies the top-level seed into every stage that draws random numbers.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.corpus.seed = self.seed;
        c.ubm.em.seed = self.seed;
        c
    }
}

pub const SYSTEMS: [&str; 7] =
    ["gmm_ubm", "sbm", "ivector_cosine", "dnn_ivector_cosine", "dnn_ivector_plda", "fused", "fused_best"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub test_frames: usize,
    /// System name to EER, in [`SYSTEMS`] order.
    pub eers: Vec<(String, f64)>,
    pub sweep: AlphaSweep,
}

impl ConditionResult {
    pub fn eer(&self, system: &str) -> Option<f64> {
        self.eers.iter().find(|e| e.0 == system).map(|e| e.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub conditions: Vec<ConditionResult>,
    /// `(condition frames, system) -> scores`.
    pub scores: BTreeMap<(usize, String), ScoreSet>,
}

impl DemoReport {
    pub fn condition(&self, frames: usize) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.test_frames == frames)
    }

    /// EER table: one row per system, one column per test length (percent).
    pub fn table(&self) -> String {
        let mut out = String::from("system");
        for c in &self.conditions {
            let _ = write!(out, "\t{}f", c.test_frames);
        }
        out.push('\n');
        for sys in SYSTEMS {
            out.push_str(sys);
            for c in &self.conditions {
                let _ = write!(out, "\t{:.2}", 100.0 * c.eer(sys).unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        for c in &self.conditions {
            let _ = writeln!(out, "# {}f best alpha {}", c.test_frames, c.sweep.best_alpha);
        }
        out
    }
}

/// Trained background models shared by all conditions.
pub struct Systems {
    pub ubm: DiagGmm,
    pub speakers: BTreeMap<String, SpeakerModel>,
    pub classmap: UnitClassMap,
    pub sbm_ubms: SubregionUbmSet,
    pub sbm_speakers: BTreeMap<String, SubregionSpeakerModel>,
    pub gmm_extractor: IVectorExtractor,
    pub dnn_extractor: IVectorExtractor,
    pub gmm_norm: LengthNorm,
    pub dnn_norm: LengthNorm,
    pub plda: PldaModel,
    pub gmm_enroll: BTreeMap<String, Vec<f64>>,
    pub dnn_enroll: BTreeMap<String, Vec<f64>>,
}

fn by_speaker(set: &CorpusSet) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, f) in set.features.iter().enumerate() {
        let spk = set
            .speaker_of(f.utt_id())
            .ok_or_else(|| Error::Missing { what: "utt2spk entry", key: f.utt_id().to_string() })?;
        out.entry(spk.to_string()).or_default().push(i);
    }
    Ok(out)
}

fn gmm_stats(ubm: &DiagGmm, feats: &[FeatureMatrix]) -> Result<Vec<BaumWelchStats>> {
    feats.par_iter().map(|f| accumulate_stats(ubm, f)).collect()
}

fn dnn_stats(ubm: &DiagGmm, set: &CorpusSet) -> Result<Vec<BaumWelchStats>> {
    set.features.par_iter().zip(&set.posteriors).map(|(f, p)| accumulate_stats_external(p, ubm, f)).collect()
}

/// Sum of per-utterance stats, in order, under a new id.
pub fn pooled_stats(id: &str, stats: &[&BaumWelchStats]) -> Result<BaumWelchStats> {
    let first = stats.first().ok_or_else(|| Error::Empty(format!("no stats for '{id}'")))?;
    let mut n = vec![0.0; first.num_components()];
    let mut f = vec![0.0; first.f.len()];
    for s in stats {
        n.iter_mut().zip(&s.n).for_each(|(a, b)| *a += b);
        f.iter_mut().zip(&s.f).for_each(|(a, b)| *a += b);
    }
    BaumWelchStats::new(id, first.dim(), n, f)
}

fn extract_all(ext: &IVectorExtractor, stats: &[BaumWelchStats]) -> Result<Vec<Vec<f64>>> {
    stats.par_iter().map(|s| ext.extract(s)).collect()
}

fn enroll_vectors(
    ext: &IVectorExtractor,
    enroll: &CorpusSet,
    stats: &[BaumWelchStats],
) -> Result<BTreeMap<String, Vec<f64>>> {
    by_speaker(enroll)?
        .into_iter()
        .map(|(spk, idx)| {
            let refs: Vec<&BaumWelchStats> = idx.iter().map(|&i| &stats[i]).collect();
            let pooled = pooled_stats(&spk, &refs)?;
            Ok((spk, ext.extract(&pooled)?))
        })
        .collect()
}

pub fn train_systems(cfg: &PipelineConfig, corpus: &SyntheticCorpus) -> Result<Systems> {
    let bg = &corpus.background;
    info!("training {}-component UBM on {} frames", cfg.ubm.components, bg.total_frames());
    let (ubm, _) = train_ubm_em(&bg.features, cfg.ubm.components, &cfg.ubm.em)?;

    let enroll_groups = by_speaker(&corpus.enroll)?;
    let speakers = enroll_groups
        .par_iter()
        .map(|(spk, idx)| {
            let mut rows = Vec::new();
            for &i in idx {
                rows.extend_from_slice(corpus.enroll.features[i].data());
            }
            let feats = FeatureMatrix::new(spk.clone(), ubm.dim(), rows)?;
            Ok((spk.clone(), map_adapt(&ubm, "ubm", spk, &feats, cfg.ubm.relevance)?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let sp = &cfg.subregion;
    let classmap = if sp.use_truth_classes {
        corpus.classmap.clone()
    } else {
        cluster_units(&unit_embeddings(&bg.features, &bg.alignments)?, sp.num_classes, cfg.seed)?
    };
    let sbm_ubms = train_subregion_ubms(&bg.features, &bg.alignments, &classmap, sp.comps_per_class, &cfg.ubm.em)?;
    let sbm_speakers = enroll_groups
        .par_iter()
        .map(|(spk, idx)| {
            let feats: Vec<FeatureMatrix> = idx.iter().map(|&i| corpus.enroll.features[i].clone()).collect();
            let m =
                enroll_subregion_speaker(&sbm_ubms, &classmap, spk, &feats, &corpus.enroll.alignments, sp.relevance)?;
            Ok((spk.clone(), m))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let ip = &cfg.ivector;
    let bg_gmm_stats = gmm_stats(&ubm, &bg.features)?;
    let (gmm_extractor, _) = train_t_matrix(&bg_gmm_stats, &ubm, ip.rank, ip.t_iters, cfg.seed)?;
    let gmm_norm = LengthNorm::fit(&extract_all(&gmm_extractor, &bg_gmm_stats)?)?;
    let gmm_enroll = enroll_vectors(&gmm_extractor, &corpus.enroll, &gmm_stats(&ubm, &corpus.enroll.features)?)?;

    let k = corpus.spec.num_posterior_classes();
    let sup_ubm = train_supervised_ubm(
        &bg.features,
        &bg.posteriors,
        k,
        ip.min_class_occupancy,
        cfg.ubm.em.variance_floor_fraction,
    )?;
    let bg_dnn_stats = dnn_stats(&sup_ubm, bg)?;
    let (dnn_extractor, _) = train_t_matrix(&bg_dnn_stats, &sup_ubm, ip.rank, ip.t_iters, cfg.seed.wrapping_add(1))?;
    let bg_dnn = extract_all(&dnn_extractor, &bg_dnn_stats)?;
    let dnn_norm = LengthNorm::fit(&bg_dnn)?;
    let labeled: Vec<(String, Vec<f64>)> = bg
        .features
        .iter()
        .zip(&bg_dnn)
        .map(|(f, v)| {
            let spk = bg.speaker_of(f.utt_id()).unwrap_or(f.utt_id()).to_string();
            (spk, plda_input(ip.length_norm, &dnn_norm, v))
        })
        .collect();
    let (plda, _) = train_plda(&labeled, ip.plda_iters)?;
    let dnn_enroll = enroll_vectors(&dnn_extractor, &corpus.enroll, &dnn_stats(&sup_ubm, &corpus.enroll)?)?;

    Ok(Systems {
        ubm,
        speakers,
        classmap,
        sbm_ubms,
        sbm_speakers,
        gmm_extractor,
        dnn_extractor,
        gmm_norm,
        dnn_norm,
        plda,
        gmm_enroll,
        dnn_enroll,
    })
}

fn plda_input(length_norm: bool, norm: &LengthNorm, v: &[f64]) -> Vec<f64> {
    if length_norm {
        norm.apply(v)
    } else {
        v.to_vec()
    }
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, key: &str, what: &'static str) -> Result<&'a T> {
    map.get(key).ok_or_else(|| Error::Missing { what, key: key.to_string() })
}

/// Scores every trial with `f(model_id, utt_id)`, in parallel, in trial order.
pub fn score_trials<F>(system_id: &str, trials: &TrialSet, f: F) -> Result<ScoreSet>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let vals = trials.trials().par_iter().map(|t| f(&t.model_id, &t.utt_id)).collect::<Result<Vec<f64>>>()?;
    let mut out = ScoreSet::new(system_id);
    for (t, v) in trials.trials().iter().zip(vals) {
        out.insert(t.model_id.clone(), t.utt_id.clone(), v)?;
    }
    Ok(out)
}

fn index_features(feats: &[FeatureMatrix]) -> BTreeMap<String, &FeatureMatrix> {
    feats.iter().map(|f| (f.utt_id().to_string(), f)).collect()
}

/// All single-system score sets for one test condition, keyed by system.
pub fn score_condition(
    sys: &Systems,
    test: &CorpusSet,
    alignments: &AlignmentSet,
    trials: &TrialSet,
    length_normalize: bool,
    length_norm_plda: bool,
) -> Result<BTreeMap<String, ScoreSet>> {
    let feats = index_features(&test.features);
    let mut out = BTreeMap::new();

    out.insert(
        "gmm_ubm".to_string(),
        score_trials("gmm_ubm", trials, |m, u| {
            let spk = lookup(&sys.speakers, m, "speaker model")?;
            gmm_ubm_score(&spk.gmm, &sys.ubm, lookup(&feats, u, "test features")?)
        })?,
    );
    out.insert(
        "sbm".to_string(),
        score_trials("sbm", trials, |m, u| {
            let spk = lookup(&sys.sbm_speakers, m, "subregion model")?;
            let f = lookup(&feats, u, "test features")?;
            Ok(score_subregion(spk, &sys.sbm_ubms, &sys.classmap, f, alignments, length_normalize)?.score)
        })?,
    );

    let gmm_test: BTreeMap<String, Vec<f64>> = test
        .features
        .par_iter()
        .map(|f| {
            let s = accumulate_stats(sys.gmm_extractor.ubm(), f)?;
            Ok((f.utt_id().to_string(), sys.gmm_norm.apply(&sys.gmm_extractor.extract(&s)?)))
        })
        .collect::<Result<_>>()?;
    out.insert(
        "ivector_cosine".to_string(),
        score_trials("ivector_cosine", trials, |m, u| {
            let e = sys.gmm_norm.apply(lookup(&sys.gmm_enroll, m, "enrollment i-vector")?);
            cosine_score(&e, lookup(&gmm_test, u, "test i-vector")?)
        })?,
    );

    let dnn_raw: BTreeMap<String, Vec<f64>> = test
        .features
        .par_iter()
        .zip(&test.posteriors)
        .map(|(f, p)| {
            let s = accumulate_stats_external(p, sys.dnn_extractor.ubm(), f)?;
            Ok((f.utt_id().to_string(), sys.dnn_extractor.extract(&s)?))
        })
        .collect::<Result<_>>()?;
    out.insert(
        "dnn_ivector_cosine".to_string(),
        score_trials("dnn_ivector_cosine", trials, |m, u| {
            let e = sys.dnn_norm.apply(lookup(&sys.dnn_enroll, m, "enrollment i-vector")?);
            cosine_score(&e, &sys.dnn_norm.apply(lookup(&dnn_raw, u, "test i-vector")?))
        })?,
    );
    out.insert(
        "dnn_ivector_plda".to_string(),
        score_trials("dnn_ivector_plda", trials, |m, u| {
            let e = plda_input(length_norm_plda, &sys.dnn_norm, lookup(&sys.dnn_enroll, m, "enrollment i-vector")?);
            let t = plda_input(length_norm_plda, &sys.dnn_norm, lookup(&dnn_raw, u, "test i-vector")?);
            sys.plda.score(&e, &t)
        })?,
    );
    Ok(out)
}

/// Generates the corpus, trains every system and scores each test length.
pub fn run_demo(cfg: &PipelineConfig) -> Result<DemoReport> {
    let cfg = cfg.seeded();
    if cfg.test_lengths.is_empty() {
        return Err(Error::InvalidArgument("no test lengths configured".into()));
    }
    let corpus = generate_corpus(&cfg.corpus)?;
    run_on_corpus(&cfg, &corpus)
}

pub fn run_on_corpus(cfg: &PipelineConfig, corpus: &SyntheticCorpus) -> Result<DemoReport> {
    let sys = train_systems(cfg, corpus)?;
    let mut conditions = Vec::new();
    let mut all_scores = BTreeMap::new();
    for &frames in &cfg.test_lengths {
        let test = truncate_test(&corpus.test, frames)?;
        let mut scores = score_condition(
            &sys,
            &test,
            &test.alignments,
            &corpus.trials,
            cfg.subregion.length_normalize,
            cfg.ivector.length_norm,
        )?;
        let fp = &cfg.fusion;
        let (plda, sbm) = (&scores["dnn_ivector_plda"], &scores["sbm"]);
        let sweep = sweep_alpha(plda, sbm, &corpus.trials, fp.grid_step, fp.normalize)?;
        let fused = fuse_scores(plda, sbm, fp.alpha, fp.normalize)?;
        let best = fuse_scores(plda, sbm, sweep.best_alpha, fp.normalize)?;
        scores.insert("fused".to_string(), fused);
        scores.insert("fused_best".to_string(), best);
        let mut eers = Vec::new();
        for name in SYSTEMS {
            eers.push((name.to_string(), compute_eer(&corpus.trials, &scores[name])?.eer));
        }
        info!("{frames}-frame tests: {eers:?}");
        conditions.push(ConditionResult { test_frames: frames, eers, sweep });
        for (name, s) in scores {
            all_scores.insert((frames, name), s);
        }
    }
    Ok(DemoReport { conditions, scores: all_scores })
}

/// Writes score files, DET curves, the sweep and the EER table into `dir`.
pub fn write_report(report: &DemoReport, trials: &TrialSet, det_points: usize, dir: &Path) -> Result<()> {
    let scores_dir = dir.join("scores");
    fs::create_dir_all(&scores_dir)?;
    for ((frames, name), s) in &report.scores {
        s.write_file(&scores_dir.join(format!("{name}_{frames}f.txt")))?;
        det_curve(trials, s, det_points)?.write_csv(&scores_dir.join(format!("{name}_{frames}f.det.csv")))?;
    }
    for c in &report.conditions {
        let mut csv = String::from("alpha,eer\n");
        for (a, e) in &c.sweep.points {
            let _ = writeln!(csv, "{a},{e}");
        }
        fs::write(dir.join(format!("sweep_{}f.csv", c.test_frames)), csv)?;
    }
    fs::write(dir.join("results.txt"), report.table())?;
    Ok(())
}
