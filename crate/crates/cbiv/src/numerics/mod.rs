//! Dense-network and optimization substrate.
//!
//! A deliberately small kernel: feed-forward MLPs with ReLU/ELU activations
//! and optional batch normalization, reverse-mode gradients, SGD and Adam,
//! and a central-difference gradient checker. Everything is `f64`, batches
//! are row-major `Array2<f64>`, and models are plain values (no interior
//! mutability, no global state).

mod gradcheck;
mod mlp;
mod optim;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{Activation, BnCache, LayerGrads, MlpGradients, MlpModel, MlpSpec};
pub use optim::{optimizer_step, OptimConfig, OptimKind, OptimState};

/// Probabilities are clipped into this open interval before any logarithm.
pub const PROB_CLIP: f64 = 1e-7;

/// Clip a probability to `[PROB_CLIP, 1 - PROB_CLIP]`.
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus `ln(1 + e^x)`, the positivity map used by every spread head.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus (the logistic function).
pub fn softplus_prime(x: f64) -> f64 {
    sigmoid(x)
}
