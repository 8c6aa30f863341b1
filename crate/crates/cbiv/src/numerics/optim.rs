//! SGD and Adam parameter updates.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::{LayerGrads, MlpGradients, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

/// Update-rule hyperparameters (the beta/epsilon fields only matter for Adam).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer state for one model: the rule, a step counter, and (for Adam)
/// first/second moment buffers allocated on the first update.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub cfg: OptimConfig,
    pub step: u64,
    moments: Option<(MlpGradients, MlpGradients)>,
}

impl OptimState {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OptimState {
            cfg,
            step: 0,
            moments: None,
        })
    }
}

/// Apply one update. Non-finite gradients abort before any parameter or
/// state mutation; the step counter advances by exactly one on success.
pub fn optimizer_step(
    state: &mut OptimState,
    model: &mut MlpModel,
    grads: &MlpGradients,
) -> Result<()> {
    check_shapes(model, grads)?;
    if !grads.all_finite() {
        return Err(Error::Numerical(
            "non-finite gradient; parameters left untouched".into(),
        ));
    }
    let lr = state.cfg.learning_rate;
    match state.cfg.kind {
        OptimKind::Sgd => {
            let updates = MlpGradients {
                layers: grads
                    .layers
                    .iter()
                    .map(|g| LayerGrads {
                        d_w: g.d_w.mapv(|v| lr * v),
                        d_b: g.d_b.mapv(|v| lr * v),
                        d_gamma: g.d_gamma.as_ref().map(|a| a.mapv(|v| lr * v)),
                        d_beta: g.d_beta.as_ref().map(|a| a.mapv(|v| lr * v)),
                    })
                    .collect(),
            };
            model.apply_update(&updates);
        }
        OptimKind::Adam => {
            if state.moments.is_none() {
                state.moments = Some((zeros_like(grads), zeros_like(grads)));
            }
            let t = (state.step + 1) as f64;
            let (b1, b2, eps) = (state.cfg.beta1, state.cfg.beta2, state.cfg.epsilon);
            let bc1 = 1.0 - b1.powf(t);
            let bc2 = 1.0 - b2.powf(t);
            let (m, v) = state.moments.as_mut().unwrap();
            let mut update_layers = Vec::with_capacity(grads.layers.len());
            for ((gm, gv), g) in m.layers.iter_mut().zip(v.layers.iter_mut()).zip(&grads.layers) {
                let upd = |m: &mut f64, v: &mut f64, g: f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    lr * (*m / bc1) / ((*v / bc2).sqrt() + eps)
                };
                let d_w = adam_tensor2(&mut gm.d_w, &mut gv.d_w, &g.d_w, upd);
                let d_b = adam_tensor1(&mut gm.d_b, &mut gv.d_b, &g.d_b, upd);
                let d_gamma = match (&mut gm.d_gamma, &mut gv.d_gamma, &g.d_gamma) {
                    (Some(m1), Some(v1), Some(g1)) => Some(adam_tensor1(m1, v1, g1, upd)),
                    _ => None,
                };
                let d_beta = match (&mut gm.d_beta, &mut gv.d_beta, &g.d_beta) {
                    (Some(m1), Some(v1), Some(g1)) => Some(adam_tensor1(m1, v1, g1, upd)),
                    _ => None,
                };
                update_layers.push(LayerGrads {
                    d_w,
                    d_b,
                    d_gamma,
                    d_beta,
                });
            }
            model.apply_update(&MlpGradients {
                layers: update_layers,
            });
        }
    }
    state.step += 1;
    Ok(())
}

fn adam_tensor2(
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    f: impl Fn(&mut f64, &mut f64, f64) -> f64,
) -> Array2<f64> {
    let mut out = Array2::zeros(g.dim());
    for ((o, (m, v)), g) in out.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.iter()) {
        *o = f(m, v, *g);
    }
    out
}

fn adam_tensor1(
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    g: &Array1<f64>,
    f: impl Fn(&mut f64, &mut f64, f64) -> f64,
) -> Array1<f64> {
    let mut out = Array1::zeros(g.len());
    for ((o, (m, v)), g) in out.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.iter()) {
        *o = f(m, v, *g);
    }
    out
}

fn zeros_like(g: &MlpGradients) -> MlpGradients {
    MlpGradients {
        layers: g
            .layers
            .iter()
            .map(|l| LayerGrads {
                d_w: Array2::zeros(l.d_w.dim()),
                d_b: Array1::zeros(l.d_b.len()),
                d_gamma: l.d_gamma.as_ref().map(|a| Array1::zeros(a.len())),
                d_beta: l.d_beta.as_ref().map(|a| Array1::zeros(a.len())),
            })
            .collect(),
    }
}

fn check_shapes(model: &MlpModel, grads: &MlpGradients) -> Result<()> {
    let shapes = model.layer_param_shapes();
    if shapes.len() != grads.layers.len() {
        return Err(Error::Config(format!(
            "gradient has {} layers, model has {}",
            grads.layers.len(),
            shapes.len()
        )));
    }
    for (i, ((wr, wc, bl, bn), g)) in shapes.iter().zip(&grads.layers).enumerate() {
        if g.d_w.dim() != (*wr, *wc) || g.d_b.len() != *bl {
            return Err(Error::Config(format!(
                "gradient shape mismatch in layer {i}"
            )));
        }
        match (bn, &g.d_gamma) {
            (Some(width), Some(dg)) if dg.len() == *width => {}
            (None, None) => {}
            _ => {
                return Err(Error::Config(format!(
                    "batch-norm gradient mismatch in layer {i}"
                )))
            }
        }
    }
    Ok(())
}
