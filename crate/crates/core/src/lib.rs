//! Phonetic-aware short-utterance speaker verification.
//!
//! Two phonetic-aware systems plus their baselines and the fusion that
//! combines them:
//!
//! * [`gmm`]: diagonal GMM-UBM with mean-only MAP enrollment.
//! * [`subregion`]: per-phonetic-class UBM/GMM pairs scored over aligned
//!   segments or with per-frame class posteriors.
//! * [`ivector`]: Baum-Welch statistics from GMM or external posteriors,
//!   total-variability training, i-vector extraction, cosine and PLDA scoring.
//! * [`eval`]: trials, score files, linear fusion, EER and DET.
//! * [`synthcorpus`]: a seeded phone-structured corpus generator.
//! * [`pipeline`]: the full experiment wired end to end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod ivector;
pub mod kmeans;
pub mod pipeline;
pub mod subregion;
pub mod synthcorpus;

pub use error::{Error, Result};
