//! Graph-constrained high-dimensional regression inference.
//!
//! Builds penalty weight matrices from external graphs, fits Grace-type
//! penalized estimators, and produces bias-corrected test statistics with
//! asymptotically valid p-values. Includes the lasso/scaled-lasso initial
//! estimators, cross-validated tuning, multiple-testing corrections, and a
//! Monte-Carlo study harness for power and type-I error.

pub mod cv;
pub mod data;
pub mod grace;
pub mod graph;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod pipeline;
pub mod sim;
pub mod stats;

pub use data::{standardize, RegressionData, Standardization};
pub use grace::{fit, FitResult, GracePenaltySpec};
pub use graph::{PenaltyKind, PenaltyMatrix, WeightedGraph};
pub use inference::{BoundVariant, Correction, TestConfig, TestReport};
