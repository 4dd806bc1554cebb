//! Rare-event failure prediction for production-line data.
//!
//! The toolkit streams wide, sparse, row-aligned CSV files and runs a two-stage
//! model: an FTRL-Proximal logistic learner compresses every categorical column
//! into one out-of-fold probability, which is stacked with the numeric and date
//! columns and fed to exact-greedy gradient boosted trees. Out-of-fold scores
//! are then thresholded at the cutoff that maximises the Matthews correlation
//! coefficient.
//!
//! Alongside the model sit exploratory analytics (station traffic and error
//! rates, flow-path census, date periodicity) and a seeded generator of
//! datasets with planted ground truth.

pub mod cli;
pub mod error;
pub mod explore;
pub mod ftrl;
pub mod gbt;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
pub use ingest::{FeatureId, FeatureKind, SparseRow};
