//! Seeded fixtures shared by the benchmarks.

use susr_core::features::FeatureMatrix;
use susr_core::gmm::{train_ubm_em, DiagGmm, EmConfig};
use susr_core::synthcorpus::{generate_corpus, CorpusSpec, SyntheticCorpus};

/// A corpus about the size of one demo condition.
pub fn corpus(dim: usize) -> SyntheticCorpus {
    let spec = CorpusSpec { seed: 7, dim, num_speakers: 10, background_speakers: 20, ..CorpusSpec::default() };
    generate_corpus(&spec).expect("bench corpus")
}

/// UBM trained briefly on `utts`.
pub fn ubm(utts: &[FeatureMatrix], components: usize) -> DiagGmm {
    let cfg = EmConfig { num_iters: 3, seed: 7, ..EmConfig::default() };
    train_ubm_em(utts, components, &cfg).expect("bench ubm").0
}
