//! Hypothesis tests and the analysis reports built on them.

pub mod analysis;
pub mod hypothesis;
pub mod special;

pub use hypothesis::{
    bonferroni, chi_square_gof, paired_t_test, pearson, point_biserial, ranks, spearman,
    spearman_with, welch_t_test, SpearmanP, TestResult,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("ranking is degenerate (all values tied)")]
    DegenerateRanking,
    #[error("one of the groups is empty")]
    DegenerateGroups,
    #[error("expected counts must all be positive")]
    InvalidExpected,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;
