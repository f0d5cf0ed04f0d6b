//! Baum-Welch statistics, total-variability modelling and PLDA.

mod extractor;
mod plda;
mod posteriors;
mod stats;

pub use extractor::{
    cosine_score, extract_ivector, read_extractor, read_extractor_file, read_ivectors, read_ivectors_file,
    train_t_matrix, write_extractor, write_extractor_file, write_ivector, write_ivectors_file, IVector,
    IVectorExtractor, TMatrixTrace, EXTRACTOR_MAGIC, IVECTOR_MAGIC,
};
pub use plda::{
    plda_score, read_plda, read_plda_file, train_plda, write_plda, write_plda_file, LengthNorm, PldaModel, PldaTrace,
    PLDA_MAGIC,
};
pub use posteriors::{
    read_posteriors, read_posteriors_file, write_posteriors, write_posteriors_file, PosteriorSet, POSTERIOR_MAGIC,
};
pub use stats::{
    accumulate_stats, accumulate_stats_external, read_stats, read_stats_file, train_supervised_ubm, write_stats,
    write_stats_file, BaumWelchStats, STATS_MAGIC,
};
