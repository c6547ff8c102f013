//! Score-based fluctuation tests for parameter instability in linear mixed
//! models, including the self-normalized (SN) family.
//!
//! Typical flow: load a [`LongDataset`], fit with [`fit_ml`], build casewise
//! scores ordered by an auxiliary variable, then compute statistics and attach
//! simulated critical values.

pub mod critvals;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod normalizer;
pub mod scores;
pub mod sim;
pub mod stats;

pub use critvals::{null_distribution, NullCache, NullSpec, NullTable};
pub use data::{ColumnMap, LongDataset};
pub use error::{Error, Result};
pub use model::{fit_ml, information_matrix, FitOptions, FittedLmm, ModelSpec, ThetaVector};
pub use scores::{casewise_scores, cumulative_process, CumProcess, ScoreMatrix};
pub use stats::{SnOptions, StatKind, TestResult};
