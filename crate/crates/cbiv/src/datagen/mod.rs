//! Synthetic benchmark generators with hidden ground-truth columns.
//!
//! Two families:
//!
//! * **Syn** — binary treatment. Instruments are standard normal, observed
//!   and unobserved confounders are jointly Gaussian with covariance
//!   `0.95*I + 0.05*ones`, the logging policy is a logistic in the
//!   instrument-confounder interactions plus the confounder sums, and the
//!   outcome is noise-free given the confounders.
//! * **Demand** — continuous treatment with instrument-strength knobs
//!   `gamma` and `lambda`.
//!
//! Generated datasets carry oracle columns (per-unit potential-outcome
//! means and the true propensity for Syn; the raw covariates needed to
//! recompute the structural outcome for Demand). Estimators never see
//! those columns: the harness strips them into an [`EstimatorView`].

mod csv;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::rng::{derive_rng, Rng};

pub use csv::{read_csv, write_csv};

/// Configuration of the Syn binary-treatment benchmark
/// (`Syn-m_z-m_x-m_u` in reports).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynConfig {
    pub m_z: usize,
    pub m_x: usize,
    pub m_u: usize,
    pub n: usize,
    pub seed: u64,
}

impl SynConfig {
    pub fn new(m_z: usize, m_x: usize, m_u: usize, n: usize, seed: u64) -> Self {
        SynConfig { m_z, m_x, m_u, n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_z == 0 || self.m_x == 0 || self.m_u == 0 {
            return Err(Error::Config("m_z, m_x and m_u must all be >= 1".into()));
        }
        if self.m_x <= self.m_z {
            return Err(Error::Config(format!(
                "m_x ({}) must exceed m_z ({}): the policy pairs each instrument with a distinct confounder",
                self.m_x, self.m_z
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Configuration of the Demand continuous-treatment benchmark
/// (`Demand-gamma-lambda` in reports).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DemandConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub n: usize,
    pub seed: u64,
}

impl DemandConfig {
    pub fn new(gamma: f64, lambda: f64, n: usize, seed: u64) -> Self {
        DemandConfig { gamma, lambda, n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if !self.gamma.is_finite() || !self.lambda.is_finite() {
            return Err(Error::Config("gamma and lambda must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// Hidden ground-truth columns.
#[derive(Debug, Clone)]
pub enum Oracle {
    /// Per-unit potential-outcome means and the true propensity.
    Binary {
        mu0: Array1<f64>,
        mu1: Array1<f64>,
        propensity: Array1<f64>,
    },
    /// Raw covariates sufficient to recompute the structural outcome.
    Continuous { x1: Array1<f64>, x2: Array1<f64> },
}

/// Columnar sample of (Z, X, T, Y) plus optional oracle columns.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub z: Array2<f64>,
    pub x: Array2<f64>,
    pub t: Array1<f64>,
    pub y: Array1<f64>,
    pub oracle: Option<Oracle>,
    pub treatment_kind: TreatmentKind,
}

/// The slice of a dataset an estimator is allowed to touch: no oracle
/// columns, optionally with instruments hidden or latent features attached.
#[derive(Debug, Clone)]
pub struct EstimatorView {
    pub z: Array2<f64>,
    pub x: Array2<f64>,
    pub t: Array1<f64>,
    pub y: Array1<f64>,
    pub latents: Option<Array2<f64>>,
    pub treatment_kind: TreatmentKind,
}

impl EstimatorView {
    pub fn n(&self) -> usize {
        self.t.len()
    }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.z.nrows() != n || self.x.nrows() != n || self.y.len() != n {
            return Err(Error::Config("dataset columns must share one length".into()));
        }
        if self.treatment_kind == TreatmentKind::Binary
            && self.t.iter().any(|&t| t != 0.0 && t != 1.0)
        {
            return Err(Error::Config("binary treatment must lie in {0, 1}".into()));
        }
        match &self.oracle {
            Some(Oracle::Binary { mu0, mu1, propensity }) => {
                if mu0.len() != n || mu1.len() != n || propensity.len() != n {
                    return Err(Error::Config("oracle columns must have length n".into()));
                }
                if propensity.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                    return Err(Error::Config("oracle propensity must lie in (0, 1)".into()));
                }
            }
            Some(Oracle::Continuous { x1, x2 }) => {
                if x1.len() != n || x2.len() != n {
                    return Err(Error::Config("oracle columns must have length n".into()));
                }
            }
            None => {}
        }
        Ok(())
    }

    /// Strip oracle columns (and keep instruments) for estimator consumption.
    pub fn estimator_view(&self, hide_instruments: bool) -> EstimatorView {
        EstimatorView {
            z: if hide_instruments {
                Array2::zeros((self.n(), 0))
            } else {
                self.z.clone()
            },
            x: self.x.clone(),
            t: self.t.clone(),
            y: self.y.clone(),
            latents: None,
            treatment_kind: self.treatment_kind,
        }
    }

    /// Row-gather into a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let gather2 = |a: &Array2<f64>| {
            Array2::from_shape_fn((idx.len(), a.ncols()), |(i, j)| a[[idx[i], j]])
        };
        let gather1 =
            |a: &Array1<f64>| Array1::from_shape_fn(idx.len(), |i| a[idx[i]]);
        Dataset {
            z: gather2(&self.z),
            x: gather2(&self.x),
            t: gather1(&self.t),
            y: gather1(&self.y),
            oracle: self.oracle.as_ref().map(|o| match o {
                Oracle::Binary { mu0, mu1, propensity } => Oracle::Binary {
                    mu0: gather1(mu0),
                    mu1: gather1(mu1),
                    propensity: gather1(propensity),
                },
                Oracle::Continuous { x1, x2 } => Oracle::Continuous {
                    x1: gather1(x1),
                    x2: gather1(x2),
                },
            }),
            treatment_kind: self.treatment_kind,
        }
    }
}

/// Logit of the Syn logging policy for one unit.
fn syn_logit(z: &[f64], x: &[f64], u: &[f64]) -> f64 {
    let interaction: f64 = z.iter().zip(x).map(|(zi, xi)| zi * xi).sum();
    interaction + x.iter().sum::<f64>() + u.iter().sum::<f64>()
}

/// Generate the Syn benchmark.
pub fn generate_syn(cfg: &SynConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.seed, "datagen.syn");
    let d = cfg.m_x + cfg.m_u;
    let d_f = d as f64;
    // Covariance 0.95*I + 0.05*ones factorizes as independent noise plus a
    // shared scalar component.
    let (ind_scale, shared_scale) = (0.95_f64.sqrt(), 0.05_f64.sqrt());

    let mut z = Array2::zeros((cfg.n, cfg.m_z));
    let mut x = Array2::zeros((cfg.n, cfg.m_x));
    let mut t = Array1::zeros(cfg.n);
    let mut y = Array1::zeros(cfg.n);
    let mut mu0 = Array1::zeros(cfg.n);
    let mut mu1 = Array1::zeros(cfg.n);
    let mut prop = Array1::zeros(cfg.n);

    let mut xu = vec![0.0; d];
    for i in 0..cfg.n {
        for j in 0..cfg.m_z {
            z[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
        let shared: f64 = rng.sample::<f64, _>(StandardNormal);
        for slot in xu.iter_mut() {
            let eta: f64 = rng.sample(StandardNormal);
            *slot = ind_scale * eta + shared_scale * shared;
        }
        let (xs, us) = xu.split_at(cfg.m_x);
        for (j, &v) in xs.iter().enumerate() {
            x[[i, j]] = v;
        }
        let zrow: Vec<f64> = (0..cfg.m_z).map(|j| z[[i, j]]).collect();
        let p = sigmoid(syn_logit(&zrow, xs, us));
        let ti = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let sum_sq: f64 = xu.iter().map(|v| v * v).sum();
        let sum: f64 = xu.iter().sum();
        let m1 = sum_sq / d_f;
        let m0 = sum / d_f;
        t[i] = ti;
        y[i] = ti * m1 + (1.0 - ti) * m0;
        mu0[i] = m0;
        mu1[i] = m1;
        prop[i] = p;
    }
    Ok(Dataset {
        z,
        x,
        t,
        y,
        oracle: Some(Oracle::Binary { mu0, mu1, propensity: prop }),
        treatment_kind: TreatmentKind::Binary,
    })
}

/// The covariate nonlinearity shared by the Demand treatment and outcome
/// equations. Used both in generation and in [`structural_truth`]; keeping
/// a single definition is what makes the MSE oracle exact.
pub fn psi(x2: f64) -> f64 {
    let c = x2 - 5.0;
    2.0 * (c.powi(4) / 600.0 + (-4.0 * c * c).exp() + x2 / 10.0 - 2.0)
}

/// Structural (noise-free) Demand outcome at treatment level `t` for a unit
/// with covariates `(x1, x2)`.
pub fn demand_structural(t: f64, x1: f64, x2: f64) -> f64 {
    100.0 + (10.0 + t) * x1 * psi(x2) - 2.0 * t
}

/// Generate the Demand benchmark.
pub fn generate_demand(cfg: &DemandConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.seed, "datagen.demand");
    let n = cfg.n;
    let mut z = Array2::zeros((n, 1));
    let mut x = Array2::zeros((n, 2));
    let mut t = Array1::zeros(n);
    let mut y = Array1::zeros(n);
    let mut ox1 = Array1::zeros(n);
    let mut ox2 = Array1::zeros(n);
    for i in 0..n {
        let x1 = f64::from(rng.random_range(1..=7_u8));
        let x2 = 10.0 * rng.random::<f64>();
        let zi: f64 = rng.sample(StandardNormal);
        let ui: f64 = rng.sample(StandardNormal);
        let noise: f64 = rng.sample(StandardNormal);
        let e = 0.5 * ui + 0.75_f64.sqrt() * noise;
        let ps = psi(x2);
        let ti = 25.0 + cfg.gamma * zi + (cfg.lambda * zi + 3.0) * ps + ui;
        let yi = demand_structural(ti, x1, x2) + e;
        z[[i, 0]] = zi;
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        t[i] = ti;
        y[i] = yi;
        ox1[i] = x1;
        ox2[i] = x2;
    }
    Ok(Dataset {
        z,
        x,
        t,
        y,
        oracle: Some(Oracle::Continuous { x1: ox1, x2: ox2 }),
        treatment_kind: TreatmentKind::Continuous,
    })
}

/// Oracle average treatment effect of a binary dataset: the mean over units
/// of `mu1 - mu0`.
pub fn true_ate(ds: &Dataset) -> Result<f64> {
    match &ds.oracle {
        Some(Oracle::Binary { mu0, mu1, .. }) => {
            Ok((mu1 - mu0).mean().unwrap_or(f64::NAN))
        }
        Some(Oracle::Continuous { .. }) => Err(Error::Config(
            "true_ate needs a binary dataset; use structural_truth for continuous data".into(),
        )),
        None => Err(Error::OracleUnavailable(
            "dataset carries no oracle columns".into(),
        )),
    }
}

/// Noise-free structural outcomes for a continuous dataset over a treatment
/// grid: entry `(i, k)` is the truth for unit `i` at `t_grid[k]`.
pub fn structural_truth(ds: &Dataset, t_grid: &[f64]) -> Result<Array2<f64>> {
    match &ds.oracle {
        Some(Oracle::Continuous { x1, x2 }) => Ok(Array2::from_shape_fn(
            (ds.n(), t_grid.len()),
            |(i, k)| demand_structural(t_grid[k], x1[i], x2[i]),
        )),
        Some(Oracle::Binary { .. }) => Err(Error::Config(
            "structural_truth needs a continuous dataset".into(),
        )),
        None => Err(Error::OracleUnavailable(
            "dataset carries no oracle columns".into(),
        )),
    }
}

/// Disjoint train/validation/test row partition after a seeded shuffle.
pub fn split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (f1, f2, f3) = fractions;
    if !(f1 > 0.0 && f2 > 0.0 && f3 > 0.0) {
        return Err(Error::Config("all split fractions must be positive".into()));
    }
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1 (got {})",
            f1 + f2 + f3
        )));
    }
    let n = ds.n();
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut derive_rng(seed, "datagen.split"));
    let n1 = (f1 * n as f64).round() as usize;
    let n2 = (f2 * n as f64).round() as usize;
    let n1 = n1.min(n);
    let n2 = n2.min(n - n1);
    let (a, rest) = idx.split_at(n1);
    let (b, c) = rest.split_at(n2);
    if a.is_empty() || b.is_empty() || c.is_empty() {
        return Err(Error::Config(format!(
            "split of {n} rows left an empty part ({}/{}/{})",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    Ok((ds.subset(a), ds.subset(b), ds.subset(c)))
}

fn shuffle(idx: &mut [usize], rng: &mut Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
}
