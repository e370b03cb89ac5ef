//! Probability objects and mutual-information machinery: diagonal
//! Gaussians with closed-form KL to the standard-normal prior,
//! reparameterized sampling, and the Donsker-Varadhan bound with a learned
//! statistics network. Analytic and Monte-Carlo oracles live here too so
//! every estimator has an independent check. All quantities are in nats.

mod gaussian;
mod mine;

pub use gaussian::{mc_kl_oracle, DiagonalGaussian, LatentSample, SampleMode};
pub use mine::{
    dv_bound, estimate_mi_from_rows, gaussian_mi_analytic, make_pair_batches, mine_ascent_step,
    train_mine, EmaDenominator, MineNetwork, DIVERGENCE_LIMIT,
};
