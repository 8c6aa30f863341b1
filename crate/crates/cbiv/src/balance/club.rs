//! Contrastive log-ratio upper bound on the mutual information between the
//! representation and the estimated treatment, with a variational Gaussian
//! `Q(t | c) = N(mu(c), sigma(c)^2)` fit by maximum likelihood on the
//! positive pairs.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numerics::{
    optimizer_step, softplus, softplus_prime, Activation, MlpModel, MlpSpec, OptimConfig,
    OptimState,
};
use crate::rng::derive_rng;

const LN_2PI: f64 = 1.8378770664093453;
const SIGMA_FLOOR: f64 = 1e-6;

/// Variational Gaussian and its optimizer state. The spread net outputs a
/// raw value mapped through softplus, so sigma stays positive.
#[derive(Debug, Clone)]
pub struct ClubState {
    mu_net: MlpModel,
    sigma_net: MlpModel,
    optim_mu: OptimState,
    optim_sigma: OptimState,
}

impl ClubState {
    /// Build the variational pair for representations of width `rep_dim`.
    pub fn new(rep_dim: usize, hidden: &[usize], optim: OptimConfig, seed: u64) -> Result<Self> {
        let mut widths = vec![rep_dim];
        widths.extend_from_slice(hidden);
        let mut rng = derive_rng(seed, "club.mu");
        let mu_net = MlpModel::new(
            MlpSpec::new(widths.clone(), Activation::Elu, 1),
            &mut rng,
        )?;
        let mut rng = derive_rng(seed, "club.sigma");
        let sigma_net = MlpModel::new(MlpSpec::new(widths, Activation::Elu, 1), &mut rng)?;
        Ok(ClubState {
            mu_net,
            sigma_net,
            optim_mu: OptimState::new(optim)?,
            optim_sigma: OptimState::new(optim)?,
        })
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optim_mu.step
    }

    /// Conditional mean and spread for each representation row.
    fn predict(
        &mut self,
        reps: &Array2<f64>,
        training: bool,
    ) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
        let mu = self.mu_net.forward(reps, training)?;
        let raw = self.sigma_net.forward(reps, training)?;
        let mu = Array1::from_shape_fn(reps.nrows(), |i| mu[[i, 0]]);
        let raw = Array1::from_shape_fn(reps.nrows(), |i| raw[[i, 0]]);
        let sigma = raw.mapv(|r| softplus(r) + SIGMA_FLOOR);
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Numerical(
                "club spread head produced a non-positive sigma".into(),
            ));
        }
        Ok((mu, sigma, raw))
    }
}

/// The CLUB estimate: mean positive-pair log-likelihood minus the mean over
/// all pairs, together with its gradient with respect to `reps`. The
/// variational parameters are held fixed; only the representation receives
/// gradient.
pub fn club_mi(
    reps: &Array2<f64>,
    t_hat: &Array1<f64>,
    state: &mut ClubState,
) -> Result<(f64, Array2<f64>)> {
    let n = reps.nrows();
    if t_hat.len() != n {
        return Err(Error::Config("t_hat length must match reps rows".into()));
    }
    let (mu, sigma, raw) = state.predict(reps, true)?;
    let nf = n as f64;
    let t_bar = t_hat.mean().unwrap();

    let mut value = 0.0;
    let mut d_mu = Array2::<f64>::zeros((n, 1));
    let mut d_raw = Array2::<f64>::zeros((n, 1));
    for i in 0..n {
        let s2 = sigma[i] * sigma[i];
        let r_pos = t_hat[i] - mu[i];
        // Mean over j of (t_j - mu_i)^2, taken pairwise so the n = 1 case
        // cancels exactly against the positive pair.
        let r_all = t_hat
            .iter()
            .map(|&t| (t - mu[i]) * (t - mu[i]))
            .sum::<f64>()
            / nf;
        value += (r_all - r_pos * r_pos) / (2.0 * s2) / nf;
        d_mu[[i, 0]] = (t_hat[i] - t_bar) / (nf * s2);
        let d_sigma = (r_pos * r_pos - r_all) / (nf * sigma[i] * s2);
        d_raw[[i, 0]] = d_sigma * softplus_prime(raw[i]);
    }
    if !value.is_finite() {
        return Err(Error::Numerical("club estimate is non-finite".into()));
    }
    let (_, grad_mu) = state.mu_net.backward(&d_mu)?;
    let (_, grad_raw) = state.sigma_net.backward(&d_raw)?;
    Ok((value, grad_mu + grad_raw))
}

/// One maximum-likelihood step of the variational Gaussian on the positive
/// pairs `(c_i, t_hat_i)`. Returns the negative log-likelihood before the
/// step. The representations are treated as constants.
pub fn club_fit_step(
    state: &mut ClubState,
    reps: &Array2<f64>,
    t_hat: &Array1<f64>,
) -> Result<f64> {
    let n = reps.nrows();
    if t_hat.len() != n {
        return Err(Error::Config("t_hat length must match reps rows".into()));
    }
    let (mu, sigma, raw) = state.predict(reps, true)?;
    let nf = n as f64;
    let mut nll = 0.0;
    let mut d_mu = Array2::<f64>::zeros((n, 1));
    let mut d_raw = Array2::<f64>::zeros((n, 1));
    for i in 0..n {
        let r = t_hat[i] - mu[i];
        let s2 = sigma[i] * sigma[i];
        nll += (0.5 * LN_2PI + sigma[i].ln() + r * r / (2.0 * s2)) / nf;
        d_mu[[i, 0]] = -r / (nf * s2);
        let d_sigma = (1.0 / sigma[i] - r * r / (sigma[i] * s2)) / nf;
        d_raw[[i, 0]] = d_sigma * softplus_prime(raw[i]);
    }
    if !nll.is_finite() {
        return Err(Error::Numerical("club likelihood is non-finite".into()));
    }
    let (grads_mu, _) = state.mu_net.backward(&d_mu)?;
    let (grads_raw, _) = state.sigma_net.backward(&d_raw)?;
    optimizer_step(&mut state.optim_mu, &mut state.mu_net, &grads_mu)?;
    optimizer_step(&mut state.optim_sigma, &mut state.sigma_net, &grads_raw)?;
    Ok(nll)
}

/// Gaussian log-density of `t` under `N(mu, sigma^2)`; shared by the tests.
#[cfg(test)]
pub(crate) fn gaussian_log_pdf(t: f64, mu: f64, sigma: f64) -> f64 {
    let r = t - mu;
    -0.5 * LN_2PI - sigma.ln() - r * r / (2.0 * sigma * sigma)
}

/// Fitted spread values, exposed for diagnostics and tests.
pub fn club_sigmas(state: &mut ClubState, reps: &Array2<f64>) -> Result<Array1<f64>> {
    let raw = state.sigma_net.infer(reps)?;
    Ok(Array1::from_shape_fn(reps.nrows(), |i| {
        softplus(raw[[i, 0]]) + SIGMA_FLOOR
    }))
}
