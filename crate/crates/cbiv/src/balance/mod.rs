//! Discrepancy functionals that push the learned representation towards
//! independence from the estimated treatment.
//!
//! Binary treatments use an entropic-regularized optimal-transport distance
//! between the representation cloud weighted by the stage-1 propensities
//! (arm 1) and their complements (arm 0). Continuous treatments use the
//! CLUB contrastive upper bound on mutual information with a variational
//! Gaussian fit by alternating maximum-likelihood steps.
//!
//! Neither metric participates in the autodiff of the networks directly;
//! each returns its own gradient with respect to the representations and
//! the trainer chains it into the representation net by hand.

mod club;
mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use club::{club_fit_step, club_mi, club_sigmas, ClubState};
pub use sinkhorn::{weighted_wasserstein, SinkhornEpsilon, SinkhornResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMetric {
    Wasserstein,
    ClubMi,
}

/// Knobs for both metrics. `sinkhorn_epsilon` is the multiple of the
/// batch's median pairwise cost used as the entropic temperature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub metric: BalanceMetric,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub club_update_ratio: usize,
    pub club_lr: f64,
}

impl BalanceConfig {
    pub fn wasserstein() -> Self {
        BalanceConfig {
            metric: BalanceMetric::Wasserstein,
            sinkhorn_epsilon: 0.1,
            sinkhorn_iters: 50,
            club_update_ratio: 1,
            club_lr: 5e-4,
        }
    }

    pub fn club(lr: f64) -> Self {
        BalanceConfig {
            metric: BalanceMetric::ClubMi,
            sinkhorn_epsilon: 0.1,
            sinkhorn_iters: 50,
            club_update_ratio: 1,
            club_lr: lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sinkhorn_epsilon > 0.0) {
            return Err(Error::Config("sinkhorn_epsilon must be positive".into()));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::Config("sinkhorn_iters must be >= 1".into()));
        }
        if self.club_update_ratio == 0 {
            return Err(Error::Config("club_update_ratio must be >= 1".into()));
        }
        if !(self.club_lr >= 0.0) {
            return Err(Error::Config("club_lr must be >= 0".into()));
        }
        Ok(())
    }
}
