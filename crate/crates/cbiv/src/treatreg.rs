//! Stage 1: treatment regression.
//!
//! Binary treatments get a logistic head trained on cross-entropy;
//! continuous treatments a conditional-mean head trained on squared error
//! (the point estimate the mixture objective collapses to; the component
//! count is kept as a knob but only `k = 1` is supported). An optional
//! spread head turns the continuous loss into a heteroscedastic Gaussian
//! likelihood.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::{EstimatorView, TreatmentKind};
use crate::error::{Error, Result};
use crate::numerics::{
    clip_prob, optimizer_step, sigmoid, softplus, softplus_prime, Activation, MlpModel, MlpSpec,
    OptimConfig, OptimState,
};
use crate::rng::{derive_rng, Rng};

/// Columns fed to the stage-1 regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Columns {
    ZOnly,
    XOnly,
    ZAndX,
    LatentL,
}

/// Columns fed to the stage-2 representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Columns {
    XOnly,
    ZAndX,
    LatentL,
}

/// Which columns each stage consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMode {
    pub stage1: Stage1Columns,
    pub stage2: Stage2Columns,
}

impl InputMode {
    pub const CONVENTIONAL: InputMode = InputMode {
        stage1: Stage1Columns::ZAndX,
        stage2: Stage2Columns::XOnly,
    };
    pub const MIXED: InputMode = InputMode {
        stage1: Stage1Columns::ZAndX,
        stage2: Stage2Columns::ZAndX,
    };
    pub const COVARIATES_ONLY: InputMode = InputMode {
        stage1: Stage1Columns::XOnly,
        stage2: Stage2Columns::XOnly,
    };
    pub const LATENT: InputMode = InputMode {
        stage1: Stage1Columns::LatentL,
        stage2: Stage2Columns::LatentL,
    };
}

/// Assemble the stage-1 design matrix from an estimator view.
pub fn stage1_features(view: &EstimatorView, cols: Stage1Columns) -> Result<Array2<f64>> {
    assemble(view, matches!(cols, Stage1Columns::ZOnly | Stage1Columns::ZAndX),
             matches!(cols, Stage1Columns::XOnly | Stage1Columns::ZAndX),
             matches!(cols, Stage1Columns::LatentL))
}

/// Assemble the stage-2 design matrix from an estimator view.
pub fn stage2_features(view: &EstimatorView, cols: Stage2Columns) -> Result<Array2<f64>> {
    assemble(view, matches!(cols, Stage2Columns::ZAndX),
             matches!(cols, Stage2Columns::XOnly | Stage2Columns::ZAndX),
             matches!(cols, Stage2Columns::LatentL))
}

fn assemble(view: &EstimatorView, want_z: bool, want_x: bool, want_l: bool) -> Result<Array2<f64>> {
    let mut blocks: Vec<&Array2<f64>> = Vec::new();
    if want_z {
        if view.z.ncols() == 0 {
            return Err(Error::Config(
                "input mode needs instruments but the view has no z columns".into(),
            ));
        }
        blocks.push(&view.z);
    }
    if want_x {
        blocks.push(&view.x);
    }
    if want_l {
        match &view.latents {
            Some(l) => blocks.push(l),
            None => {
                return Err(Error::Config(
                    "input mode latent_L needs latent features attached to the view".into(),
                ))
            }
        }
    }
    let n = view.n();
    let width: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((n, width));
    let mut at = 0;
    for b in blocks {
        out.slice_mut(ndarray::s![.., at..at + b.ncols()]).assign(b);
        at += b.ncols();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentModelKind {
    BinaryLogistic,
    ContinuousMean,
}

/// Stage-1 model: a logistic or conditional-mean network plus the input
/// mode it was built for.
#[derive(Debug, Clone)]
pub struct TreatmentModel {
    pub kind: TreatmentModelKind,
    net: MlpModel,
    spread_net: Option<MlpModel>,
    pub input_mode: InputMode,
    pub mixture_components: usize,
}

impl TreatmentModel {
    /// Logistic head for binary treatments.
    pub fn binary(
        input_width: usize,
        hidden: &[usize],
        batchnorm: bool,
        input_mode: InputMode,
        seed: u64,
    ) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend_from_slice(hidden);
        let spec = MlpSpec::new(widths, Activation::Relu, 1).with_batchnorm(batchnorm);
        let mut rng = derive_rng(seed, "treatreg.binary");
        Ok(TreatmentModel {
            kind: TreatmentModelKind::BinaryLogistic,
            net: MlpModel::new(spec, &mut rng)?,
            spread_net: None,
            input_mode,
            mixture_components: 1,
        })
    }

    /// Conditional-mean head for continuous treatments. `k` is the mixture
    /// component count; only the collapsed point estimate (`k = 1`) is
    /// supported. `with_spread` adds a softplus-mapped spread head and
    /// switches training to the Gaussian likelihood.
    pub fn continuous(
        input_width: usize,
        hidden: &[usize],
        batchnorm: bool,
        input_mode: InputMode,
        k: usize,
        with_spread: bool,
        seed: u64,
    ) -> Result<Self> {
        if k != 1 {
            return Err(Error::Config(format!(
                "mixture component count {k} unsupported: the objective collapses to the point estimate, k = 1"
            )));
        }
        let mut widths = vec![input_width];
        widths.extend_from_slice(hidden);
        let spec = MlpSpec::new(widths.clone(), Activation::Relu, 1).with_batchnorm(batchnorm);
        let mut rng = derive_rng(seed, "treatreg.continuous");
        let spread_net = if with_spread {
            let mut rng = derive_rng(seed, "treatreg.spread");
            Some(MlpModel::new(
                MlpSpec::new(widths, Activation::Relu, 1).with_batchnorm(batchnorm),
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(TreatmentModel {
            kind: TreatmentModelKind::ContinuousMean,
            net: MlpModel::new(spec, &mut rng)?,
            spread_net,
            input_mode,
            mixture_components: k,
        })
    }

    pub fn input_width(&self) -> usize {
        self.net.spec().input_width()
    }
}

/// Training loss per epoch.
pub type LossTrace = Vec<f64>;

/// Minibatch stream: reshuffled full passes over the training rows.
pub(crate) struct BatchStream {
    order: Vec<usize>,
    at: usize,
    batch: usize,
    rng: Rng,
}

impl BatchStream {
    pub(crate) fn new(n: usize, batch: usize, mut rng: Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut rng);
        BatchStream {
            order,
            at: 0,
            batch: batch.clamp(1, n),
            rng,
        }
    }

    /// Next minibatch of row indices; reshuffles when a pass completes.
    pub(crate) fn next_batch(&mut self) -> &[usize] {
        if self.at >= self.order.len() {
            shuffle(&mut self.order, &mut self.rng);
            self.at = 0;
        }
        let end = (self.at + self.batch).min(self.order.len());
        let out = &self.order[self.at..end];
        self.at = end;
        out
    }

    pub(crate) fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

fn shuffle(idx: &mut [usize], rng: &mut Rng) {
    for i in (1..idx.len()).rev() {
        let j = rand::Rng::random_range(rng, 0..=i);
        idx.swap(i, j);
    }
}

pub(crate) fn gather_rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

pub(crate) fn gather_vec(a: &Array1<f64>, idx: &[usize]) -> Array1<f64> {
    Array1::from_shape_fn(idx.len(), |i| a[idx[i]])
}

/// Train the stage-1 model for `epochs` full passes with the given batch
/// size. Returns the per-epoch mean training loss.
pub fn train_treatment(
    view: &EstimatorView,
    model: &mut TreatmentModel,
    epochs: usize,
    batch_size: usize,
    optim: OptimConfig,
    seed: u64,
) -> Result<LossTrace> {
    match (model.kind, view.treatment_kind) {
        (TreatmentModelKind::BinaryLogistic, TreatmentKind::Binary) => {}
        (TreatmentModelKind::ContinuousMean, TreatmentKind::Continuous) => {}
        (k, t) => {
            return Err(Error::Config(format!(
                "treatment model {k:?} cannot be trained on {t:?} data"
            )))
        }
    }
    let features = stage1_features(view, model.input_mode.stage1)?;
    if features.ncols() != model.input_width() {
        return Err(Error::Config(format!(
            "stage-1 features have width {}, model expects {}",
            features.ncols(),
            model.input_width()
        )));
    }
    let mut stream = BatchStream::new(view.n(), batch_size, derive_rng(seed, "treatreg.shuffle"));
    let mut state = OptimState::new(optim)?;
    let mut spread_state = OptimState::new(optim)?;
    let per_epoch = stream.batches_per_epoch();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..per_epoch {
            let idx: Vec<usize> = stream.next_batch().to_vec();
            let xb = gather_rows(&features, &idx);
            let tb = gather_vec(&view.t, &idx);
            let m = idx.len() as f64;
            let out = model.net.forward(&xb, true)?;
            let loss = match model.kind {
                TreatmentModelKind::BinaryLogistic => {
                    let mut grad = Array2::zeros(out.dim());
                    let mut loss = 0.0;
                    for i in 0..idx.len() {
                        let p = sigmoid(out[[i, 0]]);
                        let pc = clip_prob(p);
                        loss -= (tb[i] * pc.ln() + (1.0 - tb[i]) * (1.0 - pc).ln()) / m;
                        // Gradient of the clipped loss w.r.t. the logit:
                        // zero once the probability saturates past the clip.
                        grad[[i, 0]] = if p > crate::numerics::PROB_CLIP
                            && p < 1.0 - crate::numerics::PROB_CLIP
                        {
                            (p - tb[i]) / m
                        } else {
                            0.0
                        };
                    }
                    let (grads, _) = model.net.backward(&grad)?;
                    optimizer_step(&mut state, &mut model.net, &grads)?;
                    loss
                }
                TreatmentModelKind::ContinuousMean => match &mut model.spread_net {
                    None => {
                        let mut grad = Array2::zeros(out.dim());
                        let mut loss = 0.0;
                        for i in 0..idx.len() {
                            let r = out[[i, 0]] - tb[i];
                            loss += r * r / m;
                            grad[[i, 0]] = 2.0 * r / m;
                        }
                        let (grads, _) = model.net.backward(&grad)?;
                        optimizer_step(&mut state, &mut model.net, &grads)?;
                        loss
                    }
                    Some(spread) => {
                        // Heteroscedastic Gaussian likelihood.
                        let raw = spread.forward(&xb, true)?;
                        let mut d_mu = Array2::zeros(out.dim());
                        let mut d_raw = Array2::zeros(raw.dim());
                        let mut loss = 0.0;
                        for i in 0..idx.len() {
                            let s = softplus(raw[[i, 0]]) + 1e-4;
                            let r = tb[i] - out[[i, 0]];
                            let s2 = s * s;
                            loss += (0.5 * (2.0 * std::f64::consts::PI).ln()
                                + s.ln()
                                + r * r / (2.0 * s2))
                                / m;
                            d_mu[[i, 0]] = -r / (m * s2);
                            d_raw[[i, 0]] =
                                (1.0 / s - r * r / (s * s2)) / m * softplus_prime(raw[[i, 0]]);
                        }
                        let (grads, _) = model.net.backward(&d_mu)?;
                        optimizer_step(&mut state, &mut model.net, &grads)?;
                        let (grads_s, _) = spread.backward(&d_raw)?;
                        optimizer_step(&mut spread_state, spread, &grads_s)?;
                        loss
                    }
                },
            };
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite stage-1 loss in epoch {epoch}"
                )));
            }
            epoch_loss += loss;
        }
        trace.push(epoch_loss / per_epoch as f64);
    }
    Ok(trace)
}

/// Estimated `P(T = 1 | inputs)` per unit, clipped into the open unit
/// interval.
pub fn predict_propensity(model: &TreatmentModel, view: &EstimatorView) -> Result<Array1<f64>> {
    if model.kind != TreatmentModelKind::BinaryLogistic {
        return Err(Error::Config(
            "predict_propensity needs a binary logistic model".into(),
        ));
    }
    let features = stage1_features(view, model.input_mode.stage1)?;
    let out = model.net.infer(&features)?;
    Ok(Array1::from_shape_fn(view.n(), |i| {
        clip_prob(sigmoid(out[[i, 0]]))
    }))
}

/// Deterministic conditional-mean treatment estimate per unit.
pub fn predict_treatment(model: &TreatmentModel, view: &EstimatorView) -> Result<Array1<f64>> {
    if model.kind != TreatmentModelKind::ContinuousMean {
        return Err(Error::Config(
            "predict_treatment needs a continuous-mean model".into(),
        ));
    }
    let features = stage1_features(view, model.input_mode.stage1)?;
    let out = model.net.infer(&features)?;
    Ok(Array1::from_shape_fn(view.n(), |i| out[[i, 0]]))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    use crate::datagen::{generate_demand, generate_syn, split, DemandConfig, SynConfig};
    use crate::rng::rng_from_seed;

    use super::*;

    fn toy_view(
        n: usize,
        seed: u64,
        t_of: impl Fn(&mut crate::rng::Rng, f64) -> f64,
        kind: TreatmentKind,
    ) -> EstimatorView {
        let mut rng = rng_from_seed(seed);
        let z = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let t = Array1::from_shape_fn(n, |i| t_of(&mut rng, z[[i, 0]]));
        EstimatorView {
            z,
            x: Array2::zeros((n, 1)),
            t,
            y: Array1::zeros(n),
            latents: None,
            treatment_kind: kind,
        }
    }

    #[test]
    fn constant_half_probability_gives_ln2_loss() {
        // A zero network outputs logit 0, so the first losses sit at ln 2
        // on balanced labels.
        let view = toy_view(
            400,
            1,
            |rng, _| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 },
            TreatmentKind::Binary,
        );
        let mut model =
            TreatmentModel::binary(2, &[4], false, InputMode::MIXED, 3).unwrap();
        // Zero all parameters, then a zero-lr "training" run measures loss.
        let n = {
            let mut rng = rng_from_seed(0);
            let probe = MlpModel::new(
                MlpSpec::new(vec![2, 4], Activation::Relu, 1),
                &mut rng,
            )
            .unwrap();
            probe.n_params()
        };
        model_net_zero(&mut model, n);
        let trace = train_treatment(
            &view,
            &mut model,
            1,
            400,
            OptimConfig::sgd(0.0),
            7,
        )
        .unwrap();
        let balance: f64 = view.t.mean().unwrap();
        let expect = -(balance * 0.5f64.ln() + (1.0 - balance) * 0.5f64.ln());
        assert_abs_diff_eq!(trace[0], expect, epsilon = 1e-12);
    }

    fn model_net_zero(model: &mut TreatmentModel, n_params: usize) {
        model.net.set_params_flat(&vec![0.0; n_params]).unwrap();
    }

    #[test]
    fn continuous_toy_reaches_noise_floor() {
        // t = 3 z + noise(0.1): held-out MSE should approach 0.01.
        let train = toy_view(
            4000,
            5,
            |rng, z| 3.0 * z + 0.1 * rng.sample::<f64, _>(StandardNormal),
            TreatmentKind::Continuous,
        );
        let held = toy_view(
            1000,
            6,
            |rng, z| 3.0 * z + 0.1 * rng.sample::<f64, _>(StandardNormal),
            TreatmentKind::Continuous,
        );
        let mode = InputMode {
            stage1: Stage1Columns::ZOnly,
            stage2: Stage2Columns::XOnly,
        };
        let mut model = TreatmentModel::continuous(1, &[32, 16], false, mode, 1, false, 2).unwrap();
        train_treatment(&train, &mut model, 200, 128, OptimConfig::adam(0.01), 11).unwrap();
        let pred = predict_treatment(&model, &held).unwrap();
        let mse = (&pred - &held.t).mapv(|r| r * r).mean().unwrap();
        assert!(mse <= 0.02, "held-out mse {mse}");
    }

    #[test]
    fn syn_stage1_settings_beat_chance() {
        let ds = generate_syn(&SynConfig::new(2, 4, 4, 10_000, 17)).unwrap();
        let (train, _, _) = split(&ds, (0.63, 0.27, 0.10), 17).unwrap();
        let view = train.estimator_view(false);
        let mut model =
            TreatmentModel::binary(6, &[128, 64], true, InputMode::CONVENTIONAL, 17).unwrap();
        let trace = train_treatment(
            &view,
            &mut model,
            3,
            500,
            OptimConfig::sgd(0.05),
            17,
        )
        .unwrap();
        let final_loss = *trace.last().unwrap();
        assert!(final_loss < std::f64::consts::LN_2, "final loss {final_loss}");
        assert!(trace.last().unwrap() <= trace.first().unwrap());
    }

    #[test]
    fn propensity_is_clipped_and_in_unit_interval() {
        let view = toy_view(
            50,
            3,
            |rng, _| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 },
            TreatmentKind::Binary,
        );
        let mut model = TreatmentModel::binary(2, &[4], false, InputMode::MIXED, 1).unwrap();
        // Saturate the logit: with zero hidden weights the output bias is
        // the logit, so drive it to 50.
        let n = model.net.n_params();
        let mut params = vec![0.0; n];
        *params.last_mut().unwrap() = 50.0;
        model.net.set_params_flat(&params).unwrap();
        let p = predict_propensity(&model, &view).unwrap();
        for &v in p.iter() {
            assert_eq!(v, 1.0 - 1e-7);
        }
        model_net_zero(&mut model, n);
        let p = predict_propensity(&model, &view).unwrap();
        for &v in p.iter() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn separable_toy_has_high_auc() {
        let mk = |seed| {
            toy_view(
                2000,
                seed,
                |_, z| if z > 0.0 { 1.0 } else { 0.0 },
                TreatmentKind::Binary,
            )
        };
        let train = mk(8);
        let held = mk(9);
        let mode = InputMode {
            stage1: Stage1Columns::ZOnly,
            stage2: Stage2Columns::XOnly,
        };
        let mut model = TreatmentModel::binary(1, &[16], false, mode, 4).unwrap();
        train_treatment(&train, &mut model, 30, 200, OptimConfig::adam(0.01), 5).unwrap();
        let p = predict_propensity(&model, &held).unwrap();
        // AUC by rank comparison of treated vs control scores.
        let mut pos: Vec<f64> = Vec::new();
        let mut neg: Vec<f64> = Vec::new();
        for i in 0..held.n() {
            if held.t[i] == 1.0 {
                pos.push(p[i]);
            } else {
                neg.push(p[i]);
            }
        }
        let mut wins = 0usize;
        let mut total = 0usize;
        for &a in &pos {
            for &b in &neg {
                total += 1;
                if a > b {
                    wins += 1;
                }
            }
        }
        let auc = wins as f64 / total as f64;
        assert!(auc > 0.95, "auc {auc}");
    }

    #[test]
    fn independent_instrument_converges_to_base_rate() {
        // T independent of Z (bounded instrument support): the trained
        // propensity must flatten to the base rate.
        let mk = |seed| {
            let mut rng = rng_from_seed(seed);
            let n = 8000;
            let z = Array2::from_shape_fn((n, 1), |_| 2.0 * rng.random::<f64>() - 1.0);
            let t = Array1::from_shape_fn(n, |_| {
                if rng.random::<f64>() < 0.35 {
                    1.0
                } else {
                    0.0
                }
            });
            EstimatorView {
                z,
                x: Array2::zeros((n, 1)),
                t,
                y: Array1::zeros(n),
                latents: None,
                treatment_kind: TreatmentKind::Binary,
            }
        };
        let train = mk(12);
        let held = mk(13);
        let mode = InputMode {
            stage1: Stage1Columns::ZOnly,
            stage2: Stage2Columns::XOnly,
        };
        let mut model = TreatmentModel::binary(1, &[8], false, mode, 6).unwrap();
        train_treatment(&train, &mut model, 60, 512, OptimConfig::adam(0.01), 3).unwrap();
        let base: f64 = train.t.mean().unwrap();
        let p = predict_propensity(&model, &held).unwrap();
        let worst = p.iter().map(|v| (v - base).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.05, "worst deviation {worst}");
    }

    #[test]
    fn demand_stage1_explains_half_the_variance() {
        let ds = generate_demand(&DemandConfig::new(0.0, 1.0, 10_000, 23)).unwrap();
        let (train, _, test) = split(&ds, (0.63, 0.27, 0.10), 23).unwrap();
        let tv = train.estimator_view(false);
        let hv = test.estimator_view(false);
        let mut model =
            TreatmentModel::continuous(3, &[128, 64], true, InputMode::CONVENTIONAL, 1, false, 23)
                .unwrap();
        train_treatment(&tv, &mut model, 20, 500, OptimConfig::sgd(0.005), 23).unwrap();
        let pred = predict_treatment(&model, &hv).unwrap();
        let mean_t = hv.t.mean().unwrap();
        let ss_tot: f64 = hv.t.iter().map(|t| (t - mean_t).powi(2)).sum();
        let ss_res: f64 = hv
            .t
            .iter()
            .zip(pred.iter())
            .map(|(t, p)| (t - p).powi(2))
            .sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 > 0.5, "held-out R^2 {r2}");
    }

    #[test]
    fn retraining_same_seed_is_bit_identical() {
        let ds = generate_syn(&SynConfig::new(2, 4, 4, 2000, 31)).unwrap();
        let view = ds.estimator_view(false);
        let run = || {
            let mut model =
                TreatmentModel::binary(6, &[16, 8], true, InputMode::CONVENTIONAL, 9).unwrap();
            train_treatment(&view, &mut model, 3, 256, OptimConfig::sgd(0.05), 9).unwrap();
            predict_propensity(&model, &view).unwrap()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn kind_mismatch_is_config_error() {
        let ds = generate_syn(&SynConfig::new(2, 4, 4, 100, 2)).unwrap();
        let view = ds.estimator_view(false);
        let model =
            TreatmentModel::continuous(6, &[4], false, InputMode::CONVENTIONAL, 1, false, 2)
                .unwrap();
        assert!(matches!(
            predict_treatment(&model, &view),
            Ok(_) // continuous prediction on binary data is a plain forward
        ));
        assert!(matches!(
            predict_propensity(&model, &view),
            Err(crate::Error::Config(_))
        ));
        assert!(TreatmentModel::continuous(
            6,
            &[4],
            false,
            InputMode::CONVENTIONAL,
            3,
            false,
            2
        )
        .is_err());
    }

    #[test]
    fn latent_mode_requires_latents() {
        let ds = generate_syn(&SynConfig::new(2, 4, 4, 50, 2)).unwrap();
        let view = ds.estimator_view(false);
        assert!(matches!(
            stage1_features(&view, Stage1Columns::LatentL),
            Err(crate::Error::Config(_))
        ));
        let mut with_latents = view.clone();
        with_latents.latents = Some(Array2::zeros((50, 3)));
        assert_eq!(
            stage1_features(&with_latents, Stage1Columns::LatentL)
                .unwrap()
                .ncols(),
            3
        );
    }
}
