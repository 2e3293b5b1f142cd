//! Speech emotion recognition from frame-level features.
//!
//! The crate covers the whole path from audio or precomputed embeddings to
//! cross-validated accuracy:
//!
//! * [`lld`] extracts 34 hand-engineered descriptors per frame;
//! * [`emb`] reads and writes the EMB1 container for frame sequences;
//! * [`dataset`] loads manifests, crops, plans folds and subsamples;
//! * [`models`] holds the pooling heads and the bimodal alignment head,
//!   built on the autodiff core in [`numcore`];
//! * [`train`] trains, evaluates and runs the experiments;
//! * [`report`] writes JSON and CSV results;
//! * [`synth`] generates synthetic corpora for testing.
//!
//! ```
//! use serkit::models::{ModelKind, ModelSpec};
//! use serkit::sequence::SourceKind;
//! use serkit::synth::{generate, SynthConfig};
//! use serkit::train::{run_cv, TrainConfig};
//!
//! let mut data = SynthConfig::separable(SourceKind::Lld);
//! data.per_class_per_session = 2;
//! let set = generate(&data)?;
//!
//! let mut config = TrainConfig::new(ModelSpec::new(ModelKind::MeanPool, 34), SourceKind::Lld);
//! config.epochs = 2;
//! let report = run_cv(&set.records, &set.source, &config)?;
//! assert_eq!(report.folds.len(), 5);
//! assert!(report.folds.iter().all(|f| f.test_size == 8 && f.train_size == 32));
//! # Ok::<(), serkit::Error>(())
//! ```

pub mod dataset;
pub mod emb;
pub mod error;
pub mod lld;
pub mod models;
pub mod numcore;
pub mod report;
pub mod sequence;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/features.md")]
    struct Features;
    #[doc = include_str!("../../../book/src/tape.md")]
    struct TapeChapter;
    #[doc = include_str!("../../../book/src/heads.md")]
    struct Heads;
    #[doc = include_str!("../../../book/src/protocol.md")]
    struct Protocol;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    struct Reproducibility;
}
