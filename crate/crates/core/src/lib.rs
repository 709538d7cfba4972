//! Conformal classification with rank-aware nonconformity scores.
//!
//! The crate provides six nonconformity scores (IP, MS, APS, RAPS, PIP and
//! RePIP), split-conformal calibration, set-level metrics, a repeated-split
//! experiment harness, synthetic data with brute-force oracles, and a
//! tiling pipeline that turns segmentation masks into classification
//! examples.
//!
//! ```
//! use confscore::score::{ProbabilityVector, ScoreKind, ScoreSpec, score_all_classes};
//!
//! let p = ProbabilityVector::new(vec![0.5, 0.3, 0.2]).unwrap();
//! let pip = score_all_classes(&p, &ScoreSpec::new(ScoreKind::Pip), 1.0).unwrap();
//! assert!((pip[2] - 1.45).abs() < 1e-12);
//! ```

pub mod conformal;
pub mod dataprep;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod score;
pub mod seeds;
pub mod synth;

pub use conformal::{calibrate, predict_set, CalibrationRecord, Example, PredictionSet};
pub use error::{Error, Result};
pub use metrics::{AggregateResult, TrialResult};
pub use score::{rank, score_all_classes, ProbabilityVector, Ranking, ScoreKind, ScoreSpec, UMode};
