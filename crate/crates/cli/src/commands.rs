use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use susr_core::eval::{compute_eer, det_curve, fuse_scores, sweep_alpha, ScoreSet, TrialSet};
use susr_core::features::{
    extract_features, read_feat_file, read_raw_pcm16, read_wav, write_feat_archive, FeatureMatrix,
};
use susr_core::gmm::{
    gmm_ubm_score, map_adapt, read_gmm_file, read_speaker_models_file, train_ubm_em, write_gmm_file,
    write_speaker_models_file, SpeakerModel,
};
use susr_core::ivector::{
    accumulate_stats, accumulate_stats_external, cosine_score, read_extractor_file, read_ivectors_file, read_plda_file,
    read_posteriors_file, read_stats_file, train_plda, train_supervised_ubm, train_t_matrix, write_extractor_file,
    write_ivectors_file, write_plda_file, write_stats_file, BaumWelchStats, IVector, LengthNorm,
};
use susr_core::pipeline::{pooled_stats, run_on_corpus, score_trials, write_report, PipelineConfig};
use susr_core::subregion::{
    cluster_units, enroll_subregion_speaker, read_subregion_speakers_file, read_subregion_ubms_file, score_subregion,
    train_subregion_ubms, unit_embeddings, write_subregion_speakers_file, write_subregion_ubms_file, AlignmentSet,
    UnitClassMap,
};
use susr_core::synthcorpus::{generate_corpus, read_utt2spk};

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Settings resolved from `--config` and `--seed`.
pub struct Ctx {
    cfg: PipelineConfig,
    seed: Option<u64>,
}

impl Ctx {
    pub fn new(config: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let (mut cfg, seed) = match config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let cfg = PipelineConfig::from_toml(&text)?;
                let s = seed.unwrap_or(cfg.seed);
                (cfg, Some(s))
            }
            None => (PipelineConfig::with_seed(0), seed),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(Self { cfg: cfg.seeded(), seed })
    }

    /// The config, after checking that a seed was given somewhere.
    fn seeded(&self) -> Result<&PipelineConfig> {
        if self.seed.is_none() {
            return Err(CliError::Usage("this command needs --seed or a --config with a seed".into()));
        }
        Ok(&self.cfg)
    }
}

fn check_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::Usage(format!("input {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn feats(p: &Path) -> Result<Vec<FeatureMatrix>> {
    Ok(read_feat_file(p)?)
}

fn by_id<T>(items: Vec<T>, id: impl Fn(&T) -> &str) -> BTreeMap<String, T> {
    items.into_iter().map(|t| (id(&t).to_string(), t)).collect()
}

fn get<'a, T>(map: &'a BTreeMap<String, T>, key: &str, what: &'static str) -> susr_core::Result<&'a T> {
    map.get(key).ok_or_else(|| susr_core::Error::Missing { what, key: key.to_string() })
}

/// Utterance indices grouped by speaker, speakers in sorted order.
fn group_by_speaker(ids: &[&str], utt2spk: &BTreeMap<String, String>) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let spk = get(utt2spk, id, "utt2spk entry")?;
        out.entry(spk.clone()).or_default().push(i);
    }
    Ok(out)
}

fn write_scores(s: &ScoreSet, out: &Path) -> Result<()> {
    s.write_file(out)?;
    info!("wrote {} scores to {}", s.len(), out.display());
    Ok(())
}

pub fn run(ctx: &Ctx, cmd: Command) -> Result<()> {
    match cmd {
        Command::Features(FeaturesCmd::Extract { inputs, out, raw_rate }) => {
            let refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
            check_inputs(&refs)?;
            let mfcc = &ctx.cfg.mfcc;
            let mats = inputs
                .par_iter()
                .map(|p| {
                    let pcm = match raw_rate {
                        Some(r) => read_raw_pcm16(p, r)?,
                        None => read_wav(p)?,
                    };
                    extract_features(&pcm, mfcc)
                })
                .collect::<susr_core::Result<Vec<_>>>()?;
            write_feat_archive(&out, &mats)?;
        }
        Command::Synth(SynthCmd::Generate { out }) => {
            let cfg = ctx.seeded()?;
            let corpus = generate_corpus(&cfg.corpus)?;
            let manifest = corpus.write_dir(&out)?;
            println!("{}", manifest.display());
        }
        Command::Ubm(UbmCmd::Train { feats: fp, components, posteriors, iters, out }) => {
            check_inputs(&[&fp])?;
            let utts = feats(&fp)?;
            let cfg = ctx.seeded()?;
            let gmm = match posteriors {
                Some(pp) => {
                    check_inputs(&[&pp])?;
                    let posts = by_id(read_posteriors_file(&pp)?, |p| p.utt_id.as_str());
                    let aligned = utts
                        .iter()
                        .map(|f| get(&posts, f.utt_id(), "posteriors").cloned())
                        .collect::<susr_core::Result<Vec<_>>>()?;
                    let k = aligned.first().map(|p| p.num_classes()).unwrap_or(1);
                    if components.is_some_and(|c| c != k) {
                        return Err(CliError::Usage(format!("--components must equal the posterior class count {k}")));
                    }
                    train_supervised_ubm(
                        &utts,
                        &aligned,
                        k,
                        cfg.ivector.min_class_occupancy,
                        cfg.ubm.em.variance_floor_fraction,
                    )?
                }
                None => {
                    let mut em = cfg.ubm.em.clone();
                    if let Some(i) = iters {
                        em.num_iters = i;
                    }
                    let (g, trace) = train_ubm_em(&utts, components.unwrap_or(cfg.ubm.components), &em)?;
                    info!("EM log-likelihoods: {:?}", trace.log_likelihoods);
                    g
                }
            };
            write_gmm_file(&out, &gmm)?;
        }
        Command::Speaker(SpeakerCmd::Enroll { ubm, feats: fp, utt2spk, relevance, out }) => {
            check_inputs(&[&ubm, &fp, &utt2spk])?;
            let ubm_id = ubm.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let ubm = read_gmm_file(&ubm)?;
            let utts = feats(&fp)?;
            let ids: Vec<&str> = utts.iter().map(|f| f.utt_id()).collect();
            let groups = group_by_speaker(&ids, &read_utt2spk(&utt2spk)?)?;
            let r = relevance.unwrap_or(ctx.cfg.ubm.relevance);
            let models = groups
                .par_iter()
                .map(|(spk, idx)| {
                    let mut rows = Vec::new();
                    for &i in idx {
                        rows.extend_from_slice(utts[i].data());
                    }
                    let m = FeatureMatrix::new(spk.clone(), ubm.dim(), rows)?;
                    map_adapt(&ubm, &ubm_id, spk, &m, r)
                })
                .collect::<susr_core::Result<Vec<SpeakerModel>>>()?;
            write_speaker_models_file(&out, &models)?;
        }
        Command::Score(ScoreCmd::GmmUbm { ubm, models, feats: fp, trials, out }) => {
            check_inputs(&[&ubm, &models, &fp, &trials])?;
            let ubm = read_gmm_file(&ubm)?;
            let models = by_id(read_speaker_models_file(&models)?, |m| m.speaker_id.as_str());
            for m in models.values() {
                m.check_against(&ubm)?;
            }
            let tests = by_id(feats(&fp)?, |f| f.utt_id());
            let trials = TrialSet::read_file(&trials)?;
            let s = score_trials("gmm_ubm", &trials, |m, u| {
                gmm_ubm_score(&get(&models, m, "speaker model")?.gmm, &ubm, get(&tests, u, "test features")?)
            })?;
            write_scores(&s, &out)?;
        }
        Command::Subregion(cmd) => subregion(ctx, cmd)?,
        Command::Ivector(cmd) => ivector(ctx, cmd)?,
        Command::Plda(cmd) => plda(ctx, cmd)?,
        Command::Fuse(a) => {
            check_inputs(&[&a.a, &a.b])?;
            let fused = fuse_scores(
                &ScoreSet::read_file(&a.a)?,
                &ScoreSet::read_file(&a.b)?,
                a.alpha.unwrap_or(ctx.cfg.fusion.alpha),
                a.normalize || ctx.cfg.fusion.normalize,
            )?;
            write_scores(&fused, &a.out)?;
        }
        Command::SweepAlpha(a) => {
            check_inputs(&[&a.a, &a.b, &a.trials])?;
            let sw = sweep_alpha(
                &ScoreSet::read_file(&a.a)?,
                &ScoreSet::read_file(&a.b)?,
                &TrialSet::read_file(&a.trials)?,
                a.step.unwrap_or(ctx.cfg.fusion.grid_step),
                a.normalize || ctx.cfg.fusion.normalize,
            )?;
            if let Some(out) = a.out {
                let mut csv = String::from("alpha,eer\n");
                for (al, e) in &sw.points {
                    csv.push_str(&format!("{al},{e}\n"));
                }
                fs::write(out, csv).map_err(susr_core::Error::from)?;
            }
            println!("best_alpha\t{}\teer\t{}", sw.best_alpha, sw.best_eer);
        }
        Command::Eval(EvalCmd::Eer { trials, scores }) => {
            check_inputs(&[&trials, &scores])?;
            let r = compute_eer(&TrialSet::read_file(&trials)?, &ScoreSet::read_file(&scores)?)?;
            println!("eer\t{}\tthreshold\t{}", r.eer, r.threshold);
        }
        Command::Eval(EvalCmd::Det { trials, scores, points, out }) => {
            check_inputs(&[&trials, &scores])?;
            det_curve(&TrialSet::read_file(&trials)?, &ScoreSet::read_file(&scores)?, points)?.write_csv(&out)?;
        }
        Command::Demo(a) => {
            let cfg = ctx.seeded()?;
            let corpus = generate_corpus(&cfg.corpus)?;
            if a.keep_corpus {
                corpus.write_dir(&a.out.join("corpus"))?;
            }
            let report = run_on_corpus(cfg, &corpus)?;
            write_report(&report, &corpus.trials, cfg.det_points, &a.out)?;
            fs::write(a.out.join("config.toml"), cfg.to_toml()?).map_err(susr_core::Error::from)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn subregion(ctx: &Ctx, cmd: SubregionCmd) -> Result<()> {
    let sp = &ctx.cfg.subregion;
    match cmd {
        SubregionCmd::Cluster { feats: fp, ali, classes, out } => {
            check_inputs(&[&fp, &ali])?;
            let cfg = ctx.seeded()?;
            let emb = unit_embeddings(&feats(&fp)?, &AlignmentSet::read_file(&ali)?)?;
            cluster_units(&emb, classes.unwrap_or(sp.num_classes), cfg.seed)?.write_file(&out)?;
        }
        SubregionCmd::Train { feats: fp, ali, classmap, comps_per_class, out } => {
            check_inputs(&[&fp, &ali, &classmap])?;
            let cfg = ctx.seeded()?;
            let set = train_subregion_ubms(
                &feats(&fp)?,
                &AlignmentSet::read_file(&ali)?,
                &UnitClassMap::read_file(&classmap)?,
                comps_per_class.unwrap_or(sp.comps_per_class),
                &cfg.ubm.em,
            )?;
            write_subregion_ubms_file(&out, &set)?;
        }
        SubregionCmd::Enroll { ubms, classmap, feats: fp, ali, utt2spk, relevance, out } => {
            check_inputs(&[&ubms, &classmap, &fp, &ali, &utt2spk])?;
            let ubms = read_subregion_ubms_file(&ubms)?;
            let classmap = UnitClassMap::read_file(&classmap)?;
            let alignments = AlignmentSet::read_file(&ali)?;
            let utts = feats(&fp)?;
            let ids: Vec<&str> = utts.iter().map(|f| f.utt_id()).collect();
            let groups = group_by_speaker(&ids, &read_utt2spk(&utt2spk)?)?;
            let r = relevance.unwrap_or(sp.relevance);
            let models = groups
                .par_iter()
                .map(|(spk, idx)| {
                    let own: Vec<FeatureMatrix> = idx.iter().map(|&i| utts[i].clone()).collect();
                    enroll_subregion_speaker(&ubms, &classmap, spk, &own, &alignments, r)
                })
                .collect::<susr_core::Result<Vec<_>>>()?;
            write_subregion_speakers_file(&out, &models)?;
        }
        SubregionCmd::Score { ubms, models, classmap, feats: fp, ali, trials, raw_segments, out } => {
            check_inputs(&[&ubms, &models, &classmap, &fp, &ali, &trials])?;
            let ubms = read_subregion_ubms_file(&ubms)?;
            let models = by_id(read_subregion_speakers_file(&models)?, |m| m.speaker_id.as_str());
            let classmap = UnitClassMap::read_file(&classmap)?;
            let alignments = AlignmentSet::read_file(&ali)?;
            let tests = by_id(feats(&fp)?, |f| f.utt_id());
            let trials = TrialSet::read_file(&trials)?;
            let norm = sp.length_normalize && !raw_segments;
            let s = score_trials("sbm", &trials, |m, u| {
                let spk = get(&models, m, "subregion model")?;
                Ok(score_subregion(spk, &ubms, &classmap, get(&tests, u, "test features")?, &alignments, norm)?.score)
            })?;
            write_scores(&s, &out)?;
        }
    }
    Ok(())
}

fn ivector(ctx: &Ctx, cmd: IvectorCmd) -> Result<()> {
    let ip = &ctx.cfg.ivector;
    match cmd {
        IvectorCmd::Stats { ubm, feats: fp, posteriors, out } => {
            check_inputs(&[&ubm, &fp])?;
            let ubm = read_gmm_file(&ubm)?;
            let utts = feats(&fp)?;
            let stats = match posteriors {
                Some(pp) => {
                    check_inputs(&[&pp])?;
                    let posts = by_id(read_posteriors_file(&pp)?, |p| p.utt_id.as_str());
                    utts.par_iter()
                        .map(|f| accumulate_stats_external(get(&posts, f.utt_id(), "posteriors")?, &ubm, f))
                        .collect::<susr_core::Result<Vec<_>>>()?
                }
                None => utts.par_iter().map(|f| accumulate_stats(&ubm, f)).collect::<susr_core::Result<Vec<_>>>()?,
            };
            write_stats_file(&out, &stats)?;
        }
        IvectorCmd::TrainT { ubm, stats, rank, iters, out } => {
            check_inputs(&[&ubm, &stats])?;
            let cfg = ctx.seeded()?;
            let (ext, trace) = train_t_matrix(
                &read_stats_file(&stats)?,
                &read_gmm_file(&ubm)?,
                rank.unwrap_or(ip.rank),
                iters.unwrap_or(ip.t_iters),
                cfg.seed,
            )?;
            info!("T-matrix objectives: {:?}", trace.objectives);
            write_extractor_file(&out, &ext)?;
        }
        IvectorCmd::Extract { extractor, stats, utt2spk, out } => {
            check_inputs(&[&extractor, &stats])?;
            let ext = read_extractor_file(&extractor)?;
            let stats = read_stats_file(&stats)?;
            let units: Vec<BaumWelchStats> = match utt2spk {
                Some(p) => {
                    check_inputs(&[&p])?;
                    let ids: Vec<&str> = stats.iter().map(|s| s.utt_id.as_str()).collect();
                    group_by_speaker(&ids, &read_utt2spk(&p)?)?
                        .iter()
                        .map(|(spk, idx)| pooled_stats(spk, &idx.iter().map(|&i| &stats[i]).collect::<Vec<_>>()))
                        .collect::<susr_core::Result<_>>()?
                }
                None => stats,
            };
            let vs = units
                .par_iter()
                .map(|s| Ok(IVector { utt_id: s.utt_id.clone(), values: ext.extract(s)? }))
                .collect::<susr_core::Result<Vec<_>>>()?;
            write_ivectors_file(&out, &vs)?;
        }
        IvectorCmd::ScoreCosine { enroll, test, trials, center_from, out } => {
            check_inputs(&[&enroll, &test, &trials])?;
            let center = match center_from {
                Some(p) => read_plda_file(&p)?.0,
                None => None,
            };
            let prep = |v: IVector| match &center {
                Some(n) => n.apply(&v.values),
                None => v.values,
            };
            let e = load_vectors(&enroll, prep)?;
            let t = load_vectors(&test, prep)?;
            let s = score_trials("ivector_cosine", &TrialSet::read_file(&trials)?, |m, u| {
                cosine_score(get(&e, m, "enrollment i-vector")?, get(&t, u, "test i-vector")?)
            })?;
            write_scores(&s, &out)?;
        }
    }
    Ok(())
}

fn load_vectors(p: &Path, prep: impl Fn(IVector) -> Vec<f64>) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(read_ivectors_file(p)?.into_iter().map(|v| (v.utt_id.clone(), prep(v))).collect())
}

fn plda(ctx: &Ctx, cmd: PldaCmd) -> Result<()> {
    let ip = &ctx.cfg.ivector;
    match cmd {
        PldaCmd::Train { ivectors, utt2spk, iters, no_length_norm, out } => {
            check_inputs(&[&ivectors, &utt2spk])?;
            let vs = read_ivectors_file(&ivectors)?;
            let spk = read_utt2spk(&utt2spk)?;
            let norm = if ip.length_norm && !no_length_norm {
                Some(LengthNorm::fit(&vs.iter().map(|v| v.values.clone()).collect::<Vec<_>>())?)
            } else {
                None
            };
            let labeled = vs
                .iter()
                .map(|v| {
                    let s = get(&spk, &v.utt_id, "utt2spk entry")?.clone();
                    let x = norm.as_ref().map_or_else(|| v.values.clone(), |n| n.apply(&v.values));
                    Ok((s, x))
                })
                .collect::<susr_core::Result<Vec<_>>>()?;
            let (model, trace) = train_plda(&labeled, iters.unwrap_or(ip.plda_iters))?;
            info!("PLDA log-likelihoods: {:?}", trace.log_likelihoods);
            write_plda_file(&out, norm.as_ref(), &model)?;
        }
        PldaCmd::Score { plda, enroll, test, trials, out } => {
            check_inputs(&[&plda, &enroll, &test, &trials])?;
            let (norm, model) = read_plda_file(&plda)?;
            let prep = |v: IVector| match &norm {
                Some(n) => n.apply(&v.values),
                None => v.values,
            };
            let e = load_vectors(&enroll, prep)?;
            let t = load_vectors(&test, prep)?;
            let s = score_trials("plda", &TrialSet::read_file(&trials)?, |m, u| {
                model.score(get(&e, m, "enrollment i-vector")?, get(&t, u, "test i-vector")?)
            })?;
            write_scores(&s, &out)?;
        }
    }
    Ok(())
}
