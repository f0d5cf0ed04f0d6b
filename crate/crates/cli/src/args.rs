use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "susr", version, about = "Phonetic-aware short-utterance speaker verification")]
pub struct Cli {
    /// Worker threads; 1 makes every floating-point reduction bit-reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Pipeline config (TOML). Supplies defaults and the seed.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed override; required (here or in the config) by randomized stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Acoustic features.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Synthetic corpora.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Universal background models.
    #[command(subcommand)]
    Ubm(UbmCmd),
    /// GMM speaker models.
    #[command(subcommand)]
    Speaker(SpeakerCmd),
    /// Trial scoring with GMM systems.
    #[command(subcommand)]
    Score(ScoreCmd),
    /// Phonetic subregion models.
    #[command(subcommand)]
    Subregion(SubregionCmd),
    /// Baum-Welch statistics, T matrix and i-vectors.
    #[command(subcommand)]
    Ivector(IvectorCmd),
    /// PLDA backend.
    #[command(subcommand)]
    Plda(PldaCmd),
    /// Linear fusion of two score files.
    Fuse(FuseArgs),
    /// EER of the fused system over a grid of fusion weights.
    SweepAlpha(SweepArgs),
    /// Score evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Generate the configured corpus, run every system and write an EER table.
    Demo(DemoArgs),
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCmd {
    /// MFCC (+deltas, VAD, optional CMN) from 16-bit mono audio.
    Extract {
        /// WAV files, or raw little-endian PCM with --raw-rate.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Treat inputs as headerless PCM at this sample rate.
        #[arg(long)]
        raw_rate: Option<u32>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// Write the config's corpus (features, alignments, posteriors, trials).
    Generate {
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum UbmCmd {
    /// EM-trained UBM, or a supervised one when --posteriors is given.
    Train {
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        components: Option<usize>,
        /// Build one component per posterior class in a single pass.
        #[arg(long)]
        posteriors: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpeakerCmd {
    /// MAP-adapt one model per speaker from pooled enrollment frames.
    Enroll {
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        utt2spk: PathBuf,
        #[arg(long)]
        relevance: Option<f64>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScoreCmd {
    /// Frame-averaged speaker/UBM log-likelihood ratio.
    GmmUbm {
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SubregionCmd {
    /// Group units into classes by k-means on their mean vectors.
    Cluster {
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// One UBM per unit class.
    Train {
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        classmap: PathBuf,
        #[arg(long)]
        comps_per_class: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Per-class MAP adaptation for each speaker.
    Enroll {
        #[arg(long)]
        ubms: PathBuf,
        #[arg(long)]
        classmap: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        utt2spk: PathBuf,
        #[arg(long)]
        relevance: Option<f64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Hard-alignment subregion scoring.
    Score {
        #[arg(long)]
        ubms: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        classmap: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Average raw segment log-ratios instead of per-frame ones.
        #[arg(long)]
        raw_segments: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum IvectorCmd {
    /// Baum-Welch statistics from UBM posteriors, or from --posteriors.
    Stats {
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        posteriors: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// EM training of the total-variability matrix.
    TrainT {
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Posterior-mean i-vectors; with --utt2spk, one per speaker from pooled stats.
    Extract {
        #[arg(long)]
        extractor: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        utt2spk: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Cosine similarity of enrollment and test i-vectors.
    ScoreCosine {
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Center both sides on the length-norm center stored in this PLDA file.
        #[arg(long)]
        center_from: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PldaCmd {
    /// Two-covariance PLDA by EM.
    Train {
        #[arg(long)]
        ivectors: PathBuf,
        #[arg(long)]
        utt2spk: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        /// Skip centering and unit-length projection.
        #[arg(long)]
        no_length_norm: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Same/different-speaker log-likelihood ratio per trial.
    Score {
        #[arg(long)]
        plda: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Weight of the first score file.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Z-normalize each score pool before fusing.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub normalize: bool,
    /// CSV of `alpha,eer`; the best point goes to standard output.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Equal error rate and its threshold.
    Eer {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
    },
    /// DET curve as `threshold,far,frr` CSV.
    Det {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the generated corpus under `<out>/corpus`.
    #[arg(long)]
    pub keep_corpus: bool,
}
