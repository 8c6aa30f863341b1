//! Central-difference verification of the analytic gradients.

use ndarray::Array2;

use crate::error::Result;

use super::mlp::MlpModel;

/// Finite-difference step.
const FD_STEP: f64 = 1e-5;

/// Outcome of a gradient check over every trainable parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub worst_rel_err: f64,
    pub worst_param: String,
    pub tolerance: f64,
    pub n_params: usize,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.worst_rel_err <= self.tolerance
    }
}

/// Compare the model's reverse-mode gradients against central finite
/// differences of `loss_fn` for every parameter.
///
/// `loss_fn` maps the network output to a scalar loss and the gradient of
/// that loss with respect to the output; it must be deterministic given the
/// batch. When the model carries an `l2_decay`, the corresponding penalty
/// `decay/2 * sum(w^2)` is added on both sides so the comparison stays
/// consistent with `backward`.
pub fn grad_check<F>(
    model: &MlpModel,
    batch: &Array2<f64>,
    loss_fn: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let decay = model.spec().l2_decay;
    let eval = |m: &MlpModel| -> Result<f64> {
        let mut m = m.clone();
        let out = m.forward(batch, true)?;
        let (loss, _) = loss_fn(&out);
        Ok(loss + 0.5 * decay * m.weight_squared_norm())
    };

    let mut work = model.clone();
    let out = work.forward(batch, true)?;
    let (_, d_out) = loss_fn(&out);
    let (grads, _) = work.backward(&d_out)?;
    let analytic = work.grads_flat(&grads);

    let base = model.params_flat();
    let mut probe = model.clone();
    let mut fd_all = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut params = base.clone();
        params[i] = base[i] + FD_STEP;
        probe.set_params_flat(&params)?;
        let up = eval(&probe)?;
        params[i] = base[i] - FD_STEP;
        probe.set_params_flat(&params)?;
        let down = eval(&probe)?;
        fd_all.push((up - down) / (2.0 * FD_STEP));
    }

    // Scale-aware denominator: parameters whose gradient is exactly zero
    // (e.g. a linear bias absorbed by batch-norm mean subtraction) would
    // otherwise compare finite-difference rounding noise against nothing.
    let gmax = analytic
        .iter()
        .chain(&fd_all)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * gmax).max(1e-8);
    let mut worst = 0.0_f64;
    let mut worst_param = String::new();
    for (i, (&a, &fd)) in analytic.iter().zip(&fd_all).enumerate() {
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(floor);
        if rel > worst {
            worst = rel;
            worst_param = model.param_name(i);
        }
    }
    Ok(GradCheckReport {
        worst_rel_err: worst,
        worst_param,
        tolerance,
        n_params: base.len(),
    })
}
