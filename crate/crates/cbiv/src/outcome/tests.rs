use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::balance::BalanceConfig;
use crate::datagen::{generate_demand, generate_syn, DemandConfig, Oracle, SynConfig};
use crate::numerics::OptimConfig;
use crate::rng::rng_from_seed;
use crate::treatreg::{train_treatment, InputMode, TreatmentModel};

use super::*;

fn small_binary_model(input_width: usize, alpha: f64, seed: u64) -> OutcomeModel {
    OutcomeModel::binary(
        input_width,
        &[8, 8],
        &[8],
        alpha,
        BalanceConfig::wasserstein(),
        0.0,
        InputMode::COVARIATES_ONLY,
        seed,
    )
    .unwrap()
}

/// Zero every parameter, then pin each head's output bias (the last flat
/// parameter) to a constant.
fn pin_constant_heads(model: &mut OutcomeModel, c0: f64, c1: f64) {
    match &mut model.heads {
        OutcomeHeads::Binary { h0, h1 } => {
            for (net, c) in [(h0, c0), (h1, c1)] {
                let mut p = vec![0.0; net.n_params()];
                *p.last_mut().unwrap() = c;
                net.set_params_flat(&p).unwrap();
            }
        }
        OutcomeHeads::Continuous { h } => {
            let mut p = vec![0.0; h.n_params()];
            *p.last_mut().unwrap() = c0;
            h.set_params_flat(&p).unwrap();
        }
    }
}

fn binary_toy_view(n: usize, seed: u64) -> EstimatorView {
    let mut rng = rng_from_seed(seed);
    let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let t = Array1::from_shape_fn(n, |_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
    let y = t.clone();
    EstimatorView {
        z: Array2::zeros((n, 0)),
        x,
        t,
        y,
        latents: None,
        treatment_kind: TreatmentKind::Binary,
    }
}

#[test]
fn exact_heads_and_one_hot_propensities_give_zero_loss() {
    let view = binary_toy_view(64, 1);
    let mut model = small_binary_model(2, 0.0, 2);
    pin_constant_heads(&mut model, 0.0, 1.0);
    let report = train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        3,
        32,
        OptimConfig::sgd(0.0),
        5,
    )
    .unwrap();
    for rec in &report.trace {
        assert_eq!(rec.l_y, 0.0);
        assert_eq!(rec.total, 0.0);
    }
}

#[test]
fn constant_heads_predict_their_constants_and_ate() {
    let view = binary_toy_view(40, 3);
    let mut model = small_binary_model(2, 0.0, 7);
    pin_constant_heads(&mut model, 0.0, 1.0);
    // A zero-lr run marks the model trained without moving parameters.
    train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        1,
        40,
        OptimConfig::sgd(0.0),
        1,
    )
    .unwrap();
    let y0 = predict_counterfactual(&model, &view, TQuery::Arm(0)).unwrap();
    let y1 = predict_counterfactual(&model, &view, TQuery::Arm(1)).unwrap();
    assert!(y0.iter().all(|&v| v == 0.0));
    assert!(y1.iter().all(|&v| v == 1.0));
    assert_abs_diff_eq!(estimate_ate(&model, &view).unwrap(), 1.0, epsilon = 1e-15);

    pin_constant_heads(&mut model, 0.7, 0.7);
    assert_abs_diff_eq!(estimate_ate(&model, &view).unwrap(), 0.0, epsilon = 1e-15);
}

#[test]
fn untrained_model_is_a_state_error() {
    let view = binary_toy_view(10, 4);
    let model = small_binary_model(2, 0.0, 9);
    assert!(matches!(
        predict_counterfactual(&model, &view, TQuery::Arm(0)),
        Err(crate::Error::State(_))
    ));
}

#[test]
fn duplicate_rows_predict_identically() {
    let mut view = binary_toy_view(6, 11);
    for j in 0..view.x.ncols() {
        let v = view.x[[0, j]];
        view.x[[3, j]] = v;
    }
    let mut model = small_binary_model(2, 0.0, 3);
    train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        20,
        6,
        OptimConfig::adam(0.01),
        2,
    )
    .unwrap();
    let y1 = predict_counterfactual(&model, &view, TQuery::Arm(1)).unwrap();
    assert_eq!(y1[0].to_bits(), y1[3].to_bits());
}

#[test]
fn ate_is_invariant_under_row_permutation() {
    let view = binary_toy_view(50, 13);
    let mut model = small_binary_model(2, 0.0, 5);
    train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        30,
        25,
        OptimConfig::adam(0.01),
        4,
    )
    .unwrap();
    let mut perm = view.clone();
    let n = view.n();
    let order: Vec<usize> = (0..n).rev().collect();
    perm.x = Array2::from_shape_fn((n, 2), |(i, j)| view.x[[order[i], j]]);
    perm.t = Array1::from_shape_fn(n, |i| view.t[order[i]]);
    perm.y = Array1::from_shape_fn(n, |i| view.y[order[i]]);
    let a = estimate_ate(&model, &view).unwrap();
    let b = estimate_ate(&model, &perm).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
}

#[test]
fn loss_trace_decomposes_exactly() {
    let ds = generate_syn(&SynConfig::new(2, 4, 4, 400, 3)).unwrap();
    let view = ds.estimator_view(false);
    let mut tm = TreatmentModel::binary(6, &[16], true, InputMode::CONVENTIONAL, 3).unwrap();
    train_treatment(&view, &mut tm, 2, 100, OptimConfig::sgd(0.05), 3).unwrap();
    let mut model = OutcomeModel::binary(
        4,
        &[16, 8],
        &[8],
        0.5,
        BalanceConfig::wasserstein(),
        1e-4,
        InputMode::CONVENTIONAL,
        6,
    )
    .unwrap();
    let report = train_outcome(
        &view,
        Some(&tm),
        &mut model,
        EstimatorFlags::FULL,
        25,
        128,
        OptimConfig::adam(1e-3),
        8,
    )
    .unwrap();
    assert_eq!(report.trace.len(), 25);
    for rec in &report.trace {
        assert!(rec.l_c >= 0.0);
        assert!((rec.total - (rec.l_y + 0.5 * rec.l_c)).abs() <= 1e-9);
    }
}

#[test]
fn linear_continuous_toy_reaches_small_error() {
    // y = t + x, stage-2 conditioned on the observed t (plain ablation).
    let mut rng = rng_from_seed(21);
    let n = 3000;
    let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let t = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |i| t[i] + x[[i, 0]]);
    let view = EstimatorView {
        z: Array2::zeros((n, 0)),
        x: x.clone(),
        t,
        y,
        latents: None,
        treatment_kind: TreatmentKind::Continuous,
    };
    let mut model = OutcomeModel::continuous(
        1,
        &[32, 16],
        &[16],
        0.0,
        BalanceConfig::club(1e-3),
        0.0,
        InputMode::COVARIATES_ONLY,
        4,
    )
    .unwrap();
    train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        1500,
        256,
        OptimConfig::adam(5e-3),
        6,
    )
    .unwrap();
    // Counterfactual surface against the linear truth.
    let mut rng = rng_from_seed(22);
    let held = {
        let x = Array2::from_shape_fn((500, 1), |_| rng.sample::<f64, _>(StandardNormal));
        EstimatorView {
            z: Array2::zeros((500, 0)),
            x,
            t: Array1::zeros(500),
            y: Array1::zeros(500),
            latents: None,
            treatment_kind: TreatmentKind::Continuous,
        }
    };
    let mut acc = 0.0;
    let grid = [-1.0, 0.0, 1.0];
    for &tq in &grid {
        let pred = predict_counterfactual(&model, &held, TQuery::Level(tq)).unwrap();
        for i in 0..held.n() {
            let r = pred[i] - (tq + held.x[[i, 0]]);
            acc += r * r;
        }
    }
    let mse = acc / (grid.len() * held.n()) as f64;
    assert!(mse <= 0.05, "held-out mse {mse}");
}

#[test]
fn constant_zero_head_mse_equals_mean_squared_truth() {
    let ds = generate_demand(&DemandConfig::new(0.0, 1.0, 200, 5)).unwrap();
    let view = ds.estimator_view(false);
    let mut model = OutcomeModel::continuous(
        2,
        &[8],
        &[8],
        0.0,
        BalanceConfig::club(1e-3),
        0.0,
        InputMode::COVARIATES_ONLY,
        8,
    )
    .unwrap();
    pin_constant_heads(&mut model, 0.0, 0.0);
    train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        1,
        200,
        OptimConfig::sgd(0.0),
        1,
    )
    .unwrap();
    let grid = [20.0, 25.0, 30.0];
    let mse = counterfactual_mse(&model, &view, &ds, &grid).unwrap();
    let truth = crate::datagen::structural_truth(&ds, &grid).unwrap();
    let expect = truth.iter().map(|v| v * v).sum::<f64>() / truth.len() as f64;
    assert_abs_diff_eq!(mse, expect, epsilon = 1e-9);
}

#[test]
fn perfect_constant_head_on_degenerate_truth_has_zero_mse() {
    let mut ds = generate_demand(&DemandConfig::new(0.0, 1.0, 50, 6)).unwrap();
    // Make the structural truth constant by pinning the oracle covariates,
    // then pin the head to that constant.
    if let Some(Oracle::Continuous { x1, x2 }) = &mut ds.oracle {
        x1.fill(1.0);
        x2.fill(5.0);
    }
    let truth_at_25 = crate::datagen::demand_structural(25.0, 1.0, 5.0);
    let view = ds.estimator_view(false);
    let mut model = OutcomeModel::continuous(
        2,
        &[8],
        &[8],
        0.0,
        BalanceConfig::club(1e-3),
        0.0,
        InputMode::COVARIATES_ONLY,
        8,
    )
    .unwrap();
    pin_constant_heads(&mut model, truth_at_25, 0.0);
    train_outcome(
        &view,
        None,
        &mut model,
        EstimatorFlags::PLAIN,
        1,
        50,
        OptimConfig::sgd(0.0),
        1,
    )
    .unwrap();
    let mse = counterfactual_mse(&model, &view, &ds, &[25.0]).unwrap();
    assert_eq!(mse, 0.0);
}

#[test]
fn flag_and_model_mismatches_are_config_errors() {
    let ds = generate_syn(&SynConfig::new(2, 4, 4, 100, 2)).unwrap();
    let view = ds.estimator_view(false);
    let tm = TreatmentModel::binary(6, &[4], false, InputMode::CONVENTIONAL, 3).unwrap();
    let mut model = small_binary_model(4, 0.0, 4);
    // No treatment model with use_iv.
    assert!(matches!(
        train_outcome(
            &view,
            None,
            &mut model,
            EstimatorFlags::FULL,
            1,
            50,
            OptimConfig::sgd(0.0),
            1
        ),
        Err(crate::Error::Config(_))
    ));
    // Treatment model with use_iv disabled.
    assert!(matches!(
        train_outcome(
            &view,
            Some(&tm),
            &mut model,
            EstimatorFlags::NO_IV,
            1,
            50,
            OptimConfig::sgd(0.0),
            1
        ),
        Err(crate::Error::Config(_))
    ));
    // ATE on a continuous model.
    let cont = OutcomeModel::continuous(
        2,
        &[4],
        &[4],
        0.0,
        BalanceConfig::club(1e-3),
        0.0,
        InputMode::COVARIATES_ONLY,
        4,
    )
    .unwrap();
    assert!(matches!(
        estimate_ate(&cont, &view),
        Err(crate::Error::Config(_))
    ));
}
