//! Empirical loss decomposition of aggregated client models and the
//! similarity diagnostics used alongside it.

pub mod ensemble;
pub mod similarity;
pub mod wens;

pub use ensemble::{
    covariance_lower_bound_check, decompose, decompose_equal_weights, DecompositionReport,
    EnsembleSource, EqualWeightReport, JointEnsemble,
};
pub use similarity::{cka_similarity, mean_pairwise_cka, median_heuristic, mmd_rbf, mmd_rbf_biased, MmdEstimate};
pub use wens::{contract_towards_average, fma_wens_gap, weighted_average, wens_output, FmaWensGap};
