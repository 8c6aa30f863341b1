//! Stage 2: joint training of the balanced representation and the outcome
//! head(s) under `L_Y + alpha * L_C`, plus counterfactual prediction and
//! effect estimation.
//!
//! Binary treatments regress the observed outcome on the propensity-mixed
//! pair of heads `(1-p) h0(c) + p h1(c)` and penalize the weighted
//! Wasserstein discrepancy between the arm marginals of `c`. Continuous
//! treatments regress on `h(t_hat, c)` and penalize the CLUB bound, with
//! one variational fit step per outcome step. The no-IV ablation replaces
//! the stage-1 quantities with the observed treatment; `alpha = 0` removes
//! balancing.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::balance::{
    club_fit_step, club_mi, weighted_wasserstein, BalanceConfig, BalanceMetric, ClubState,
    SinkhornEpsilon,
};
use crate::datagen::{structural_truth, Dataset, EstimatorView, TreatmentKind};
use crate::error::{Error, Result};
use crate::numerics::{
    optimizer_step, Activation, MlpModel, MlpSpec, OptimConfig, OptimState,
};
use crate::rng::{derive_rng, derive_seed};
use crate::treatreg::{
    gather_rows, gather_vec, predict_propensity, predict_treatment, stage2_features, BatchStream,
    InputMode, TreatmentModel, TreatmentModelKind,
};

/// Ablation switches: `use_iv = false` conditions stage 2 on the observed
/// treatment instead of the stage-1 output; `use_balance = false` forces
/// the balancing weight to zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorFlags {
    pub use_iv: bool,
    pub use_balance: bool,
}

impl EstimatorFlags {
    pub const FULL: EstimatorFlags = EstimatorFlags {
        use_iv: true,
        use_balance: true,
    };
    pub const NO_BALANCE: EstimatorFlags = EstimatorFlags {
        use_iv: true,
        use_balance: false,
    };
    pub const NO_IV: EstimatorFlags = EstimatorFlags {
        use_iv: false,
        use_balance: true,
    };
    pub const PLAIN: EstimatorFlags = EstimatorFlags {
        use_iv: false,
        use_balance: false,
    };
}

#[derive(Debug, Clone)]
enum OutcomeHeads {
    Binary { h0: MlpModel, h1: MlpModel },
    Continuous { h: MlpModel },
}

/// Representation network plus outcome head(s) and the balancing setup.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    rep_net: MlpModel,
    heads: OutcomeHeads,
    pub alpha: f64,
    pub balance: BalanceConfig,
    club: Option<ClubState>,
    pub input_mode: InputMode,
    trained: bool,
}

/// Loss record for one training step; `total` is exactly
/// `l_y + alpha * l_c`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_y: f64,
    pub l_c: f64,
    pub total: f64,
}

/// Trace and warnings from one training run.
#[derive(Debug, Clone, Default)]
pub struct OutcomeTrainReport {
    pub trace: Vec<LossRecord>,
    pub warnings: Vec<String>,
}

/// Treatment level to predict at.
#[derive(Debug, Clone, Copy)]
pub enum TQuery {
    Arm(u8),
    Level(f64),
}

impl OutcomeModel {
    /// Two-head model for binary treatments with Wasserstein balancing.
    pub fn binary(
        input_width: usize,
        rep_layers: &[usize],
        head_layers: &[usize],
        alpha: f64,
        balance: BalanceConfig,
        head_l2: f64,
        input_mode: InputMode,
        seed: u64,
    ) -> Result<Self> {
        if alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        balance.validate()?;
        let rep_net = rep_net(input_width, rep_layers, seed)?;
        let rep_dim = rep_net.spec().output_width;
        Ok(OutcomeModel {
            rep_net,
            heads: OutcomeHeads::Binary {
                h0: head_net(rep_dim, head_layers, head_l2, derive_seed(seed, "outcome.h0"))?,
                h1: head_net(rep_dim, head_layers, head_l2, derive_seed(seed, "outcome.h1"))?,
            },
            alpha,
            balance,
            club: None,
            input_mode,
            trained: false,
        })
    }

    /// Single-head model for continuous treatments with CLUB balancing;
    /// the head consumes the treatment estimate as its first input.
    pub fn continuous(
        input_width: usize,
        rep_layers: &[usize],
        head_layers: &[usize],
        alpha: f64,
        balance: BalanceConfig,
        head_l2: f64,
        input_mode: InputMode,
        seed: u64,
    ) -> Result<Self> {
        if alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        balance.validate()?;
        let rep_net = rep_net(input_width, rep_layers, seed)?;
        let rep_dim = rep_net.spec().output_width;
        let club = ClubState::new(
            rep_dim,
            &[64],
            OptimConfig::adam(balance.club_lr),
            derive_seed(seed, "outcome.club"),
        )?;
        Ok(OutcomeModel {
            rep_net,
            heads: OutcomeHeads::Continuous {
                h: head_net(rep_dim + 1, head_layers, head_l2, derive_seed(seed, "outcome.h"))?,
            },
            alpha,
            balance,
            club: Some(club),
            input_mode,
            trained: false,
        })
    }

    pub fn treatment_kind(&self) -> TreatmentKind {
        match self.heads {
            OutcomeHeads::Binary { .. } => TreatmentKind::Binary,
            OutcomeHeads::Continuous { .. } => TreatmentKind::Continuous,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Representation of each row of the stage-2 design matrix.
    fn represent(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.rep_net.infer(features)
    }
}

fn rep_net(input_width: usize, layers: &[usize], seed: u64) -> Result<MlpModel> {
    if layers.is_empty() {
        return Err(Error::Config("representation needs at least one layer".into()));
    }
    let mut widths = vec![input_width];
    widths.extend_from_slice(&layers[..layers.len() - 1]);
    let spec = MlpSpec::new(widths, Activation::Elu, *layers.last().unwrap())
        .with_output_activation(true);
    MlpModel::new(spec, &mut derive_rng(seed, "outcome.rep"))
}

fn head_net(input_width: usize, layers: &[usize], l2: f64, seed: u64) -> Result<MlpModel> {
    let mut widths = vec![input_width];
    widths.extend_from_slice(layers);
    let spec = MlpSpec::new(widths, Activation::Elu, 1).with_l2_decay(l2);
    MlpModel::new(spec, &mut derive_rng(seed, "outcome.head"))
}

/// Per-unit stage-1 quantities seen by stage 2: propensities for binary
/// data, treatment estimates for continuous. The no-IV ablation substitutes
/// the observed treatment (a one-hot propensity, or the raw value).
fn stage1_plugin(
    view: &EstimatorView,
    tm: Option<&TreatmentModel>,
    flags: EstimatorFlags,
) -> Result<Array1<f64>> {
    if !flags.use_iv {
        if tm.is_some() {
            return Err(Error::Config(
                "use_iv = false must not be paired with a treatment model".into(),
            ));
        }
        return Ok(view.t.clone());
    }
    let tm = tm.ok_or_else(|| {
        Error::Config("use_iv = true needs a trained treatment model".into())
    })?;
    match (view.treatment_kind, tm.kind) {
        (TreatmentKind::Binary, TreatmentModelKind::BinaryLogistic) => {
            predict_propensity(tm, view)
        }
        (TreatmentKind::Continuous, TreatmentModelKind::ContinuousMean) => {
            predict_treatment(tm, view)
        }
        (v, k) => Err(Error::Config(format!(
            "treatment model {k:?} does not match {v:?} data"
        ))),
    }
}

/// Train the representation and head(s) for `steps` minibatch iterations.
pub fn train_outcome(
    view: &EstimatorView,
    tm: Option<&TreatmentModel>,
    model: &mut OutcomeModel,
    flags: EstimatorFlags,
    steps: usize,
    batch_size: usize,
    optim: OptimConfig,
    seed: u64,
) -> Result<OutcomeTrainReport> {
    let plugin = stage1_plugin(view, tm, flags)?;
    train_outcome_with_stage1(view, &plugin, model, flags, steps, batch_size, optim, seed)
}

/// [`train_outcome`] with the per-unit stage-1 quantities supplied directly
/// (propensities for binary data, treatment estimates for continuous).
#[allow(clippy::too_many_arguments)]
pub fn train_outcome_with_stage1(
    view: &EstimatorView,
    stage1: &Array1<f64>,
    model: &mut OutcomeModel,
    flags: EstimatorFlags,
    steps: usize,
    batch_size: usize,
    optim: OptimConfig,
    seed: u64,
) -> Result<OutcomeTrainReport> {
    if view.treatment_kind != model.treatment_kind() {
        return Err(Error::Config(
            "outcome model kind does not match the dataset".into(),
        ));
    }
    if stage1.len() != view.n() {
        return Err(Error::Config(
            "stage-1 quantities must cover every row".into(),
        ));
    }
    let features = stage2_features(view, model.input_mode.stage2)?;
    if features.ncols() != model.rep_net.spec().input_width() {
        return Err(Error::Config(format!(
            "stage-2 features have width {}, representation expects {}",
            features.ncols(),
            model.rep_net.spec().input_width()
        )));
    }
    let plugin = stage1;
    let alpha = if flags.use_balance { model.alpha } else { 0.0 };

    let mut stream = BatchStream::new(view.n(), batch_size, derive_rng(seed, "outcome.shuffle"));
    let mut rep_state = OptimState::new(optim)?;
    let mut head_states = match &model.heads {
        OutcomeHeads::Binary { .. } => vec![OptimState::new(optim)?, OptimState::new(optim)?],
        OutcomeHeads::Continuous { .. } => vec![OptimState::new(optim)?],
    };
    let mut report = OutcomeTrainReport::default();
    let mut balance_skips = 0usize;

    for step in 0..steps {
        let idx: Vec<usize> = stream.next_batch().to_vec();
        let xb = gather_rows(&features, &idx);
        let yb = gather_vec(&view.y, &idx);
        let pb = gather_vec(plugin, &idx);
        let m = idx.len() as f64;

        let reps = model.rep_net.forward(&xb, true)?;
        let (l_y, l_c, d_reps) = match &mut model.heads {
            OutcomeHeads::Binary { h0, h1 } => {
                let y0 = h0.forward(&reps, true)?;
                let y1 = h1.forward(&reps, true)?;
                let mut l_y = 0.0;
                let mut d0 = Array2::zeros(y0.dim());
                let mut d1 = Array2::zeros(y1.dim());
                for i in 0..idx.len() {
                    let mix = (1.0 - pb[i]) * y0[[i, 0]] + pb[i] * y1[[i, 0]];
                    let r = mix - yb[i];
                    l_y += r * r / m;
                    let dmix = 2.0 * r / m;
                    d0[[i, 0]] = dmix * (1.0 - pb[i]);
                    d1[[i, 0]] = dmix * pb[i];
                }
                let (g0, dc0) = h0.backward(&d0)?;
                let (g1, dc1) = h1.backward(&d1)?;
                let mut d_reps = dc0 + dc1;
                let mut l_c = 0.0;
                if alpha > 0.0 {
                    match weighted_wasserstein(
                        &reps,
                        &pb,
                        SinkhornEpsilon::MedianScale(model.balance.sinkhorn_epsilon),
                        model.balance.sinkhorn_iters,
                    ) {
                        Ok(res) => {
                            l_c = res.value;
                            d_reps.scaled_add(alpha, &res.grad_reps);
                        }
                        Err(Error::DegenerateArm(_)) => balance_skips += 1,
                        Err(e) => return Err(e),
                    }
                }
                optimizer_step(&mut head_states[0], h0, &g0)?;
                optimizer_step(&mut head_states[1], h1, &g1)?;
                (l_y, l_c, d_reps)
            }
            OutcomeHeads::Continuous { h } => {
                let mut head_in = Array2::zeros((idx.len(), reps.ncols() + 1));
                for i in 0..idx.len() {
                    head_in[[i, 0]] = pb[i];
                    for k in 0..reps.ncols() {
                        head_in[[i, k + 1]] = reps[[i, k]];
                    }
                }
                let pred = h.forward(&head_in, true)?;
                let mut l_y = 0.0;
                let mut dp = Array2::zeros(pred.dim());
                for i in 0..idx.len() {
                    let r = pred[[i, 0]] - yb[i];
                    l_y += r * r / m;
                    dp[[i, 0]] = 2.0 * r / m;
                }
                let (gh, d_head_in) = h.backward(&dp)?;
                let mut d_reps =
                    Array2::from_shape_fn(reps.dim(), |(i, k)| d_head_in[[i, k + 1]]);
                let mut l_c = 0.0;
                if alpha > 0.0 {
                    let club = model.club.as_mut().expect("continuous model carries club");
                    if model.balance.metric != BalanceMetric::ClubMi {
                        return Err(Error::Config(
                            "continuous balancing uses the club_mi metric".into(),
                        ));
                    }
                    for _ in 0..model.balance.club_update_ratio {
                        club_fit_step(club, &reps, &pb)?;
                    }
                    let (mi, grad) = club_mi(&reps, &pb, club)?;
                    l_c = mi;
                    d_reps.scaled_add(alpha, &grad);
                }
                optimizer_step(&mut head_states[0], h, &gh)?;
                (l_y, l_c, d_reps)
            }
        };
        let (g_rep, _) = model.rep_net.backward(&d_reps)?;
        optimizer_step(&mut rep_state, &mut model.rep_net, &g_rep)?;

        let total = l_y + alpha * l_c;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite outcome loss at step {step}"
            )));
        }
        report.trace.push(LossRecord {
            step,
            l_y,
            l_c,
            total,
        });
    }
    if balance_skips > 0 {
        report.warnings.push(format!(
            "balancing skipped on {balance_skips} batches with a degenerate arm"
        ));
    }
    model.trained = true;
    Ok(report)
}

/// Counterfactual outcome prediction at the queried treatment for every row.
pub fn predict_counterfactual(
    model: &OutcomeModel,
    view: &EstimatorView,
    t_query: TQuery,
) -> Result<Array1<f64>> {
    if !model.trained {
        return Err(Error::State("outcome model has not been trained".into()));
    }
    let features = stage2_features(view, model.input_mode.stage2)?;
    let reps = model.represent(&features)?;
    match (&model.heads, t_query) {
        (OutcomeHeads::Binary { h0, h1 }, TQuery::Arm(arm)) => {
            if arm > 1 {
                return Err(Error::Config("binary t_query must be 0 or 1".into()));
            }
            let head = if arm == 0 { h0 } else { h1 };
            let out = head.infer(&reps)?;
            Ok(Array1::from_shape_fn(view.n(), |i| out[[i, 0]]))
        }
        (OutcomeHeads::Continuous { h }, TQuery::Level(t)) => {
            let mut head_in = Array2::zeros((view.n(), reps.ncols() + 1));
            for i in 0..view.n() {
                head_in[[i, 0]] = t;
                for k in 0..reps.ncols() {
                    head_in[[i, k + 1]] = reps[[i, k]];
                }
            }
            let out = h.infer(&head_in)?;
            Ok(Array1::from_shape_fn(view.n(), |i| out[[i, 0]]))
        }
        (OutcomeHeads::Binary { .. }, TQuery::Level(_)) => Err(Error::Config(
            "binary model takes TQuery::Arm".into(),
        )),
        (OutcomeHeads::Continuous { .. }, TQuery::Arm(_)) => Err(Error::Config(
            "continuous model takes TQuery::Level".into(),
        )),
    }
}

/// Average treatment effect estimate `mean(h1(c) - h0(c))` over the rows of
/// the view (binary models only).
pub fn estimate_ate(model: &OutcomeModel, view: &EstimatorView) -> Result<f64> {
    match &model.heads {
        OutcomeHeads::Binary { .. } => {}
        OutcomeHeads::Continuous { .. } => {
            return Err(Error::Config(
                "estimate_ate needs a binary outcome model".into(),
            ))
        }
    }
    let y1 = predict_counterfactual(model, view, TQuery::Arm(1))?;
    let y0 = predict_counterfactual(model, view, TQuery::Arm(0))?;
    Ok((&y1 - &y0).mean().unwrap_or(f64::NAN))
}

/// Mean squared error of the counterfactual predictions against the
/// structural truth of `ds` over `t_grid` (continuous models only).
/// `view` must hold the same rows as `ds`.
pub fn counterfactual_mse(
    model: &OutcomeModel,
    view: &EstimatorView,
    ds: &Dataset,
    t_grid: &[f64],
) -> Result<f64> {
    if ds.n() != view.n() {
        return Err(Error::Config(
            "dataset and view row counts differ".into(),
        ));
    }
    if t_grid.is_empty() {
        return Err(Error::Config("t_grid must be non-empty".into()));
    }
    let truth = structural_truth(ds, t_grid)?;
    let mut acc = 0.0;
    for (k, &t) in t_grid.iter().enumerate() {
        let pred = predict_counterfactual(model, view, TQuery::Level(t))?;
        for i in 0..view.n() {
            let r = pred[i] - truth[[i, k]];
            acc += r * r;
        }
    }
    Ok(acc / (view.n() * t_grid.len()) as f64)
}

#[cfg(test)]
mod tests;
