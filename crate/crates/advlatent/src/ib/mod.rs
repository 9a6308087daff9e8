//! Exact information-theoretic laws on finite chains: the ground truth the
//! rest of the workspace is measured against.

pub mod campaign;
pub mod chain;
pub mod dist;
pub mod theorems;

pub use campaign::{run_campaign, CampaignKind, CampaignReport, PermutationMix};
pub use chain::{
    expected_kl, ib_objective, residual_information, theorem1_bound_index, verify_dpi,
    BoundIndex, DpiReport, FiniteMarkovChain, KernelFamily, KernelTarget, PerturbationKernel,
    SymmetricNoise,
};
pub use dist::{
    conditional_mutual_information, mutual_information, FiniteDistribution, MAX_SUPPORT,
};
pub use theorems::{
    corollary1_check, push_depth, theorem2_check, theorem2_check_fixed_latent,
    MatchedDistortionReport, DISTORTION_TOL,
};
