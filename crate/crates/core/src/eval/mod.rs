//! Automatic boundary metrics, annotator agreement and disagreement sampling.

mod kappa;
mod metrics;
mod report;
mod sampling;

pub use kappa::{
    binarize, cohen_kappa, cohen_matrix, fleiss_kappa, fleiss_kappa_binary, AnnotationSet, Binarization,
    KappaEntry,
};
pub use metrics::{prf1, ConfusionCounts, LevelScore, LevelScores};
pub use report::{MetricsReport, ReportRow};
pub use sampling::sample_disagreements;
