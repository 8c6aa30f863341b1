//! Variational recovery of latent instruments and confounders from the
//! proxies (X, T).
//!
//! An encoder pair maps (x, t) to the posterior mean and spread of a
//! Gaussian latent block `l`; decoders reconstruct every x coordinate, the
//! treatment, and the outcome from `l^e = [l, e]`, where `e` is fresh
//! exogenous noise standing in for unrecoverable confounders. Training
//! maximizes the usual evidence lower bound with the location-scale
//! reparameterization; downstream stages consume the deterministic
//! posterior means with the noise block zeroed.
//!
//! Inputs and reconstruction targets are standardized internally with
//! training-set statistics, which only reparameterizes the decoders but
//! keeps the optimizer scales sane across Syn and Demand magnitudes.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{EstimatorView, TreatmentKind};
use crate::error::{Error, Result};
use crate::numerics::{
    optimizer_step, sigmoid, softplus, softplus_prime, Activation, MlpGradients, MlpModel,
    MlpSpec, OptimConfig, OptimState,
};
use crate::rng::{derive_rng, derive_seed};

const LN_2PI: f64 = 1.8378770664093453;
const SIGMA_FLOOR: f64 = 1e-4;

/// Closed-form KL divergence from `N(mu, diag(sigma^2))` to the standard
/// normal prior.
pub fn kl_diag_gaussian(mu: &Array1<f64>, sigma: &Array1<f64>) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Config("mu and sigma must have equal length".into()));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    Ok(mu
        .iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| 0.5 * (s * s + m * m - 1.0 - 2.0 * s.ln()))
        .sum())
}

/// How one x column is reconstructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum XColumnKind {
    /// Gaussian head with learned mean and spread.
    Continuous,
    /// Categorical head over the listed support values.
    Categorical(Vec<f64>),
}

/// Latent-module shape and training knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentConfig {
    pub m_l: usize,
    pub m_e: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl LatentConfig {
    pub fn new(m_l: usize) -> Self {
        LatentConfig {
            m_l,
            m_e: 1,
            hidden: vec![64, 64, 64],
            epochs: 300,
            batch_size: 200,
            learning_rate: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_l == 0 || self.m_e == 0 {
            return Err(Error::Config("m_l and m_e must be >= 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum XHead {
    Gaussian(MlpModel),
    Categorical { net: MlpModel, values: Vec<f64> },
}

#[derive(Debug, Clone)]
enum THead {
    Gaussian(MlpModel),
    Bernoulli(MlpModel),
}

#[derive(Debug, Clone, Default)]
struct Standardization {
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    t_mean: f64,
    t_std: f64,
    y_mean: f64,
    y_std: f64,
}

/// Encoder/decoder pair over the proxies.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub cfg: LatentConfig,
    enc_mu: MlpModel,
    enc_sigma: MlpModel,
    dec_x: Vec<XHead>,
    dec_t: THead,
    dec_y: MlpModel,
    stats: Standardization,
    trained: bool,
}

/// ELBO trace and data-size warning from a training run.
#[derive(Debug, Clone)]
pub struct LatentTrainReport {
    pub elbo_trace: Vec<f64>,
    pub small_sample_warning: bool,
}

impl LatentModel {
    /// Build the module for `m_x` covariate columns of the given kinds
    /// (`None` means all continuous) and the dataset's treatment kind.
    pub fn new(
        cfg: LatentConfig,
        m_x: usize,
        x_kinds: Option<Vec<XColumnKind>>,
        treatment_kind: TreatmentKind,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let kinds = match x_kinds {
            Some(k) => {
                if k.len() != m_x {
                    return Err(Error::Config(
                        "x_kinds length must match the covariate count".into(),
                    ));
                }
                k
            }
            None => vec![XColumnKind::Continuous; m_x],
        };
        let enc_in = m_x + 1;
        let le = cfg.m_l + cfg.m_e;
        let net = |input: usize, out: usize, salt: &str| -> Result<MlpModel> {
            let mut widths = vec![input];
            widths.extend_from_slice(&cfg.hidden);
            MlpModel::new(
                MlpSpec::new(widths, Activation::Elu, out),
                &mut derive_rng(derive_seed(seed, salt), "latent.init"),
            )
        };
        let mut dec_x = Vec::with_capacity(m_x);
        for (j, kind) in kinds.iter().enumerate() {
            let salt = format!("dec_x{j}");
            dec_x.push(match kind {
                XColumnKind::Continuous => XHead::Gaussian(net(le, 2, &salt)?),
                XColumnKind::Categorical(values) => {
                    if values.is_empty() {
                        return Err(Error::Config(
                            "categorical column needs a non-empty support".into(),
                        ));
                    }
                    XHead::Categorical {
                        net: net(le, values.len(), &salt)?,
                        values: values.clone(),
                    }
                }
            });
        }
        let dec_t = match treatment_kind {
            TreatmentKind::Continuous => THead::Gaussian(net(le, 2, "dec_t")?),
            TreatmentKind::Binary => THead::Bernoulli(net(le, 1, "dec_t")?),
        };
        Ok(LatentModel {
            enc_mu: net(enc_in, cfg.m_l, "enc_mu")?,
            enc_sigma: net(enc_in, cfg.m_l, "enc_sigma")?,
            dec_y: net(le + 1, 2, "dec_y")?,
            dec_x,
            dec_t,
            stats: Standardization::default(),
            trained: false,
            cfg,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn latent_width(&self) -> usize {
        self.cfg.m_l + self.cfg.m_e
    }

    fn encoder_input(&self, view: &EstimatorView) -> Array2<f64> {
        let n = view.n();
        let m_x = view.x.ncols();
        let mut enc_in = Array2::zeros((n, m_x + 1));
        for i in 0..n {
            for j in 0..m_x {
                enc_in[[i, j]] = (view.x[[i, j]] - self.stats.x_mean[j]) / self.stats.x_std[j];
            }
            enc_in[[i, m_x]] = (view.t[i] - self.stats.t_mean) / self.stats.t_std;
        }
        enc_in
    }

    /// Pin the encoder posterior to the prior: zero weights, mean 0,
    /// spread softplus^{-1}(1). Test hook for the KL identity.
    #[cfg(test)]
    fn pin_encoder_to_prior(&mut self) {
        let zero = vec![0.0; self.enc_mu.n_params()];
        self.enc_mu.set_params_flat(&zero).unwrap();
        let mut p = vec![0.0; self.enc_sigma.n_params()];
        let raw_one = ((1.0 - SIGMA_FLOOR) as f64).exp_m1().ln(); // softplus(raw) + floor = 1
        let out_biases = self.cfg.m_l;
        let len = p.len();
        for b in &mut p[len - out_biases..] {
            *b = raw_one;
        }
        self.enc_sigma.set_params_flat(&p).unwrap();
    }
}

/// All per-net gradients of one ELBO evaluation, in a fixed net order.
struct ElboGrads {
    enc_mu: MlpGradients,
    enc_sigma: MlpGradients,
    dec_x: Vec<MlpGradients>,
    dec_t: MlpGradients,
    dec_y: MlpGradients,
}

/// Evaluate the per-batch mean ELBO with the given frozen noise and, when
/// asked, the gradients of `-ELBO` for every network.
fn elbo_batch(
    model: &mut LatentModel,
    enc_in: &Array2<f64>,
    xs: &Array2<f64>,
    ts: &Array1<f64>,
    t_raw: &Array1<f64>,
    ys: &Array1<f64>,
    eta: &Array2<f64>,
    e_noise: &Array2<f64>,
    want_grads: bool,
) -> Result<(f64, Option<ElboGrads>)> {
    let n = enc_in.nrows();
    let nf = n as f64;
    let m_l = model.cfg.m_l;
    let m_e = model.cfg.m_e;

    let mu = model.enc_mu.forward(enc_in, true)?;
    let raw = model.enc_sigma.forward(enc_in, true)?;
    let mut sigma = Array2::zeros((n, m_l));
    for i in 0..n {
        for k in 0..m_l {
            sigma[[i, k]] = softplus(raw[[i, k]]) + SIGMA_FLOOR;
        }
    }

    // l = mu + sigma * eta, l^e = [l | e].
    let mut le = Array2::zeros((n, m_l + m_e));
    for i in 0..n {
        for k in 0..m_l {
            le[[i, k]] = mu[[i, k]] + sigma[[i, k]] * eta[[i, k]];
        }
        for k in 0..m_e {
            le[[i, m_l + k]] = e_noise[[i, k]];
        }
    }

    let mut elbo = 0.0;
    let mut d_le = Array2::<f64>::zeros((n, m_l + m_e));

    // Gaussian reconstruction shared by x columns, t (continuous) and y.
    let mut gauss = |net: &mut MlpModel,
                     input: &Array2<f64>,
                     target: &dyn Fn(usize) -> f64,
                     want: bool|
     -> Result<(f64, Option<(MlpGradients, Array2<f64>)>)> {
        let out = net.forward(input, true)?;
        let mut ll = 0.0;
        let mut d_out = Array2::<f64>::zeros(out.dim());
        for i in 0..n {
            let m = out[[i, 0]];
            let s = softplus(out[[i, 1]]) + SIGMA_FLOOR;
            let r = target(i) - m;
            ll += (-0.5 * LN_2PI - s.ln() - r * r / (2.0 * s * s)) / nf;
            if want {
                // Gradients of -ELBO.
                d_out[[i, 0]] = -r / (s * s) / nf;
                d_out[[i, 1]] =
                    (1.0 / s - r * r / (s * s * s)) / nf * softplus_prime(out[[i, 1]]);
            }
        }
        if want {
            let (g, d_in) = net.backward(&d_out)?;
            Ok((ll, Some((g, d_in))))
        } else {
            net.clear_trace();
            Ok((ll, None))
        }
    };

    let mut grads_x = Vec::with_capacity(model.dec_x.len());
    for (j, head) in model.dec_x.iter_mut().enumerate() {
        match head {
            XHead::Gaussian(net) => {
                let (ll, g) = gauss(net, &le, &|i| xs[[i, j]], want_grads)?;
                elbo += ll;
                if let Some((g, d_in)) = g {
                    d_le += &d_in;
                    grads_x.push(g);
                }
            }
            XHead::Categorical { net, values } => {
                let out = net.forward(&le, true)?;
                let k_vals = values.len();
                let mut d_out = Array2::<f64>::zeros(out.dim());
                for i in 0..n {
                    // Match the raw (unstandardized) value to its class.
                    let target = xs[[i, j]];
                    let class = values
                        .iter()
                        .enumerate()
                        .min_by(|(_, a), (_, b)| {
                            (*a - target).abs().partial_cmp(&(*b - target).abs()).unwrap()
                        })
                        .map(|(k, _)| k)
                        .unwrap();
                    let mut mx = f64::NEG_INFINITY;
                    for k in 0..k_vals {
                        mx = mx.max(out[[i, k]]);
                    }
                    let lse = mx
                        + out
                            .row(i)
                            .iter()
                            .map(|v| (v - mx).exp())
                            .sum::<f64>()
                            .ln();
                    elbo += (out[[i, class]] - lse) / nf;
                    if want_grads {
                        for k in 0..k_vals {
                            let soft = (out[[i, k]] - lse).exp();
                            d_out[[i, k]] =
                                (soft - if k == class { 1.0 } else { 0.0 }) / nf;
                        }
                    }
                }
                if want_grads {
                    let (g, d_in) = net.backward(&d_out)?;
                    d_le += &d_in;
                    grads_x.push(g);
                } else {
                    net.clear_trace();
                }
            }
        }
    }

    let grads_t = match &mut model.dec_t {
        THead::Gaussian(net) => {
            let (ll, g) = gauss(net, &le, &|i| ts[i], want_grads)?;
            elbo += ll;
            g.map(|(g, d_in)| {
                d_le += &d_in;
                g
            })
        }
        THead::Bernoulli(net) => {
            let out = net.forward(&le, true)?;
            let mut d_out = Array2::<f64>::zeros(out.dim());
            for i in 0..n {
                let p = crate::numerics::clip_prob(sigmoid(out[[i, 0]]));
                elbo += (t_raw[i] * p.ln() + (1.0 - t_raw[i]) * (1.0 - p).ln()) / nf;
                if want_grads {
                    d_out[[i, 0]] = (sigmoid(out[[i, 0]]) - t_raw[i]) / nf;
                }
            }
            if want_grads {
                let (g, d_in) = net.backward(&d_out)?;
                d_le += &d_in;
                Some(g)
            } else {
                net.clear_trace();
                None
            }
        }
    };

    // Outcome head sees (t, l^e).
    let mut y_in = Array2::zeros((n, 1 + m_l + m_e));
    for i in 0..n {
        y_in[[i, 0]] = ts[i];
        for k in 0..(m_l + m_e) {
            y_in[[i, k + 1]] = le[[i, k]];
        }
    }
    let (ll_y, g_y) = gauss(&mut model.dec_y, &y_in, &|i| ys[i], want_grads)?;
    elbo += ll_y;
    let grads_y = g_y.map(|(g, d_in)| {
        for i in 0..n {
            for k in 0..(m_l + m_e) {
                d_le[[i, k]] += d_in[[i, k + 1]];
            }
        }
        g
    });

    // KL to the standard normal prior, plus its gradients.
    let mut d_mu = Array2::<f64>::zeros((n, m_l));
    let mut d_raw = Array2::<f64>::zeros((n, m_l));
    for i in 0..n {
        for k in 0..m_l {
            let (m, s) = (mu[[i, k]], sigma[[i, k]]);
            elbo -= 0.5 * (s * s + m * m - 1.0 - 2.0 * s.ln()) / nf;
            if want_grads {
                // -ELBO gradient: KL term plus the reparameterized path
                // through l = mu + sigma * eta.
                d_mu[[i, k]] = m / nf + d_le[[i, k]];
                d_raw[[i, k]] =
                    ((s - 1.0 / s) / nf + d_le[[i, k]] * eta[[i, k]]) * softplus_prime(raw[[i, k]]);
            }
        }
    }
    if !elbo.is_finite() {
        return Err(Error::Numerical("non-finite ELBO".into()));
    }
    if !want_grads {
        model.enc_mu.clear_trace();
        model.enc_sigma.clear_trace();
        return Ok((elbo, None));
    }
    let (g_mu, _) = model.enc_mu.backward(&d_mu)?;
    let (g_sigma, _) = model.enc_sigma.backward(&d_raw)?;
    Ok((
        elbo,
        Some(ElboGrads {
            enc_mu: g_mu,
            enc_sigma: g_sigma,
            dec_x: grads_x,
            dec_t: grads_t.expect("gradients requested"),
            dec_y: grads_y.expect("gradients requested"),
        }),
    ))
}

/// Train by maximizing the ELBO for `cfg.epochs` full passes.
pub fn train_latent(
    view: &EstimatorView,
    model: &mut LatentModel,
    seed: u64,
) -> Result<LatentTrainReport> {
    let n = view.n();
    let m_x = view.x.ncols();
    if model.dec_x.len() != m_x {
        return Err(Error::Config(format!(
            "latent model built for {} covariates, data has {m_x}",
            model.dec_x.len()
        )));
    }
    // Standardization from the training split. Binary treatments stay raw.
    let col_stats = |col: usize| -> (f64, f64) {
        let mean = view.x.column(col).mean().unwrap();
        let var = view
            .x
            .column(col)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        (mean, var.sqrt().max(1e-6))
    };
    let mut stats = Standardization {
        x_mean: Vec::new(),
        x_std: Vec::new(),
        t_mean: 0.0,
        t_std: 1.0,
        y_mean: view.y.mean().unwrap(),
        y_std: {
            let m = view.y.mean().unwrap();
            (view.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64)
                .sqrt()
                .max(1e-6)
        },
    };
    for j in 0..m_x {
        let (m, s) = col_stats(j);
        stats.x_mean.push(m);
        stats.x_std.push(s);
    }
    if view.treatment_kind == TreatmentKind::Continuous {
        let m = view.t.mean().unwrap();
        let s = (view.t.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64)
            .sqrt()
            .max(1e-6);
        stats.t_mean = m;
        stats.t_std = s;
    }
    // Categorical columns are matched by raw value, not standardized.
    for (j, head) in model.dec_x.iter().enumerate() {
        if matches!(head, XHead::Categorical { .. }) {
            stats.x_mean[j] = 0.0;
            stats.x_std[j] = 1.0;
        }
    }
    model.stats = stats;

    let enc_in_all = model.encoder_input(view);
    let mut xs_all = Array2::zeros((n, m_x));
    for i in 0..n {
        for j in 0..m_x {
            xs_all[[i, j]] = (view.x[[i, j]] - model.stats.x_mean[j]) / model.stats.x_std[j];
        }
    }
    let ts_all = view
        .t
        .mapv(|t| (t - model.stats.t_mean) / model.stats.t_std);
    let ys_all = view
        .y
        .mapv(|y| (y - model.stats.y_mean) / model.stats.y_std);

    let optim = OptimConfig::adam(model.cfg.learning_rate);
    let mut st_enc_mu = OptimState::new(optim)?;
    let mut st_enc_sigma = OptimState::new(optim)?;
    let mut st_dec_x: Vec<OptimState> = (0..m_x)
        .map(|_| OptimState::new(optim))
        .collect::<Result<_>>()?;
    let mut st_dec_t = OptimState::new(optim)?;
    let mut st_dec_y = OptimState::new(optim)?;

    let mut stream = crate::treatreg::BatchStream::new(
        n,
        model.cfg.batch_size,
        derive_rng(seed, "latent.shuffle"),
    );
    let mut noise = derive_rng(seed, "latent.noise");
    let per_epoch = stream.batches_per_epoch();
    let mut trace = Vec::with_capacity(model.cfg.epochs);
    for epoch in 0..model.cfg.epochs {
        let mut acc = 0.0;
        for _ in 0..per_epoch {
            let idx: Vec<usize> = stream.next_batch().to_vec();
            let enc_in = crate::treatreg::gather_rows(&enc_in_all, &idx);
            let xs = crate::treatreg::gather_rows(&xs_all, &idx);
            let ts = crate::treatreg::gather_vec(&ts_all, &idx);
            let t_raw = crate::treatreg::gather_vec(&view.t, &idx);
            let ys = crate::treatreg::gather_vec(&ys_all, &idx);
            let eta = Array2::from_shape_fn((idx.len(), model.cfg.m_l), |_| {
                noise.sample::<f64, _>(StandardNormal)
            });
            let e_noise = Array2::from_shape_fn((idx.len(), model.cfg.m_e), |_| {
                noise.sample::<f64, _>(StandardNormal)
            });
            let (elbo, grads) = elbo_batch(
                model, &enc_in, &xs, &ts, &t_raw, &ys, &eta, &e_noise, true,
            )
            .map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("{msg} (epoch {epoch})"))
                }
                other => other,
            })?;
            let g = grads.expect("gradients requested");
            optimizer_step(&mut st_enc_mu, &mut model.enc_mu, &g.enc_mu)?;
            optimizer_step(&mut st_enc_sigma, &mut model.enc_sigma, &g.enc_sigma)?;
            for ((head, st), gx) in model
                .dec_x
                .iter_mut()
                .zip(st_dec_x.iter_mut())
                .zip(&g.dec_x)
            {
                let net = match head {
                    XHead::Gaussian(net) => net,
                    XHead::Categorical { net, .. } => net,
                };
                optimizer_step(st, net, gx)?;
            }
            let t_net = match &mut model.dec_t {
                THead::Gaussian(net) => net,
                THead::Bernoulli(net) => net,
            };
            optimizer_step(&mut st_dec_t, t_net, &g.dec_t)?;
            optimizer_step(&mut st_dec_y, &mut model.dec_y, &g.dec_y)?;
            acc += elbo;
        }
        trace.push(acc / per_epoch as f64);
    }
    model.trained = true;
    Ok(LatentTrainReport {
        elbo_trace: trace,
        small_sample_warning: n < 5000,
    })
}

/// Deterministic latent features: posterior means with the exogenous block
/// zeroed (its prior mean). Output width is `m_l + m_e`.
pub fn extract_latents(model: &LatentModel, view: &EstimatorView) -> Result<Array2<f64>> {
    if !model.trained {
        return Err(Error::State("latent model has not been trained".into()));
    }
    let enc_in = model.encoder_input(view);
    let mu = model.enc_mu.infer(&enc_in)?;
    let mut out = Array2::zeros((view.n(), model.latent_width()));
    for i in 0..view.n() {
        for k in 0..model.cfg.m_l {
            out[[i, k]] = mu[[i, k]];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
