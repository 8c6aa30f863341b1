use approx::assert_abs_diff_eq;
use ndarray::{array, Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::datagen::{generate_syn, Oracle, SynConfig};
use crate::rng::rng_from_seed;

use super::*;

#[test]
fn kl_closed_form_known_values() {
    let kl = kl_diag_gaussian(&array![0.0], &array![1.0]).unwrap();
    assert_abs_diff_eq!(kl, 0.0, epsilon = 1e-15);
    let kl = kl_diag_gaussian(&array![1.0, 1.0], &array![1.0, 1.0]).unwrap();
    assert_abs_diff_eq!(kl, 1.0, epsilon = 1e-12); // 0.5 per coordinate
    assert!(matches!(
        kl_diag_gaussian(&array![0.0], &array![0.0]),
        Err(crate::Error::Precondition(_))
    ));
}

#[test]
fn kl_nonnegative_and_zero_only_at_prior() {
    let mut rng = rng_from_seed(3);
    for _ in 0..50 {
        let mu = Array1::from_shape_fn(3, |_| rng.sample::<f64, _>(StandardNormal));
        let sigma = Array1::from_shape_fn(3, |_| rng.random::<f64>() * 2.0 + 0.05);
        let kl = kl_diag_gaussian(&mu, &sigma).unwrap();
        assert!(kl >= 0.0);
        let off_prior = mu.iter().any(|&m| m != 0.0) || sigma.iter().any(|&s| s != 1.0);
        if off_prior {
            assert!(kl > 0.0);
        }
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = rng_from_seed(9);
    let mu = array![0.4, -1.1];
    let sigma = array![0.7, 1.6];
    let closed = kl_diag_gaussian(&mu, &sigma).unwrap();
    let draws = 100_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        for k in 0..2 {
            let x = mu[k] + sigma[k] * rng.sample::<f64, _>(StandardNormal);
            let log_q = -0.5 * LN_2PI - sigma[k].ln() - (x - mu[k]).powi(2) / (2.0 * sigma[k] * sigma[k]);
            let log_p = -0.5 * LN_2PI - x * x / 2.0;
            acc += log_q - log_p;
        }
    }
    let mc = acc / draws as f64;
    assert!((closed - mc).abs() <= 0.01, "closed {closed} vs mc {mc}");
}

/// Raw head bias that makes softplus(raw) + floor equal exactly 1.
fn raw_for_unit_sigma() -> f64 {
    (1.0_f64 - SIGMA_FLOOR).exp_m1().ln()
}

#[test]
fn pinned_model_elbo_matches_closed_form() {
    // Encoder at the prior (KL = 0), all Gaussian heads at mean 0 with unit
    // spread, Bernoulli treatment head at logit 0, frozen zero noise.
    let cfg = LatentConfig {
        m_l: 2,
        m_e: 1,
        hidden: vec![4],
        epochs: 1,
        batch_size: 2,
        learning_rate: 1e-4,
    };
    let mut model = LatentModel::new(cfg, 2, None, TreatmentKind::Binary, 5).unwrap();
    model.pin_encoder_to_prior();
    let r1 = raw_for_unit_sigma();
    for head in &mut model.dec_x {
        let XHead::Gaussian(net) = head else { panic!() };
        let mut p = vec![0.0; net.n_params()];
        let len = p.len();
        p[len - 1] = r1;
        net.set_params_flat(&p).unwrap();
    }
    {
        let THead::Bernoulli(net) = &mut model.dec_t else { panic!() };
        let n = net.n_params();
        net.set_params_flat(&vec![0.0; n]).unwrap();
    }
    {
        let mut p = vec![0.0; model.dec_y.n_params()];
        let len = p.len();
        p[len - 1] = r1;
        model.dec_y.set_params_flat(&p).unwrap();
    }
    let n = 2;
    let enc_in = Array2::zeros((n, 3));
    let xs = Array2::zeros((n, 2));
    let ts = Array1::zeros(n);
    let t_raw = array![1.0, 0.0];
    let ys = Array1::zeros(n);
    let eta = Array2::zeros((n, 2));
    let e = Array2::zeros((n, 1));
    let (elbo, _) =
        elbo_batch(&mut model, &enc_in, &xs, &ts, &t_raw, &ys, &eta, &e, false).unwrap();
    let g = -0.5 * LN_2PI; // Gaussian log-density at its mean, unit spread
    let expect = 3.0 * g + 0.5_f64.ln();
    assert_abs_diff_eq!(elbo, expect, epsilon = 1e-9);
    assert_abs_diff_eq!(g, -0.9189385332046727, epsilon = 1e-12);
}

fn all_params(model: &LatentModel) -> Vec<f64> {
    let mut out = model.enc_mu.params_flat();
    out.extend(model.enc_sigma.params_flat());
    for head in &model.dec_x {
        match head {
            XHead::Gaussian(net) => out.extend(net.params_flat()),
            XHead::Categorical { net, .. } => out.extend(net.params_flat()),
        }
    }
    match &model.dec_t {
        THead::Gaussian(net) | THead::Bernoulli(net) => out.extend(net.params_flat()),
    }
    out.extend(model.dec_y.params_flat());
    out
}

fn set_all_params(model: &mut LatentModel, flat: &[f64]) {
    let mut at = 0;
    let mut set = |net: &mut MlpModel| {
        let n = net.n_params();
        net.set_params_flat(&flat[at..at + n]).unwrap();
        at += n;
    };
    set(&mut model.enc_mu);
    set(&mut model.enc_sigma);
    for head in &mut model.dec_x {
        match head {
            XHead::Gaussian(net) => set(net),
            XHead::Categorical { net, .. } => set(net),
        }
    }
    match &mut model.dec_t {
        THead::Gaussian(net) | THead::Bernoulli(net) => set(net),
    }
    set(&mut model.dec_y);
    assert_eq!(at, flat.len());
}

fn flat_grads(g: &ElboGrads, model: &LatentModel) -> Vec<f64> {
    let mut out = model.enc_mu.grads_flat(&g.enc_mu);
    out.extend(model.enc_sigma.grads_flat(&g.enc_sigma));
    for (head, gx) in model.dec_x.iter().zip(&g.dec_x) {
        match head {
            XHead::Gaussian(net) => out.extend(net.grads_flat(gx)),
            XHead::Categorical { net, .. } => out.extend(net.grads_flat(gx)),
        }
    }
    match &model.dec_t {
        THead::Gaussian(net) | THead::Bernoulli(net) => out.extend(net.grads_flat(&g.dec_t)),
    }
    out.extend(model.dec_y.grads_flat(&g.dec_y));
    out
}

fn elbo_fd_check(mut model: LatentModel, t_raw: Array1<f64>) {
    let n = 2;
    let m_x = model.dec_x.len();
    let mut rng = rng_from_seed(31);
    let enc_in = Array2::from_shape_fn((n, m_x + 1), |_| rng.sample::<f64, _>(StandardNormal));
    let xs = Array2::from_shape_fn((n, m_x), |(i, j)| {
        if matches!(model.dec_x[j], XHead::Categorical { .. }) {
            f64::from((i % 2) as u8 + 1)
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    });
    let ts = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    let ys = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    let eta = Array2::from_shape_fn((n, model.cfg.m_l), |_| rng.sample::<f64, _>(StandardNormal));
    let e = Array2::from_shape_fn((n, model.cfg.m_e), |_| rng.sample::<f64, _>(StandardNormal));

    let (_, grads) = elbo_batch(
        &mut model, &enc_in, &xs, &ts, &t_raw, &ys, &eta, &e, true,
    )
    .unwrap();
    let analytic = flat_grads(grads.as_ref().unwrap(), &model);
    let base = all_params(&model);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for i in 0..base.len() {
        let mut probe = model.clone();
        let mut p = base.clone();
        p[i] = base[i] + h;
        set_all_params(&mut probe, &p);
        let (up, _) = elbo_batch(&mut probe, &enc_in, &xs, &ts, &t_raw, &ys, &eta, &e, false)
            .unwrap();
        p[i] = base[i] - h;
        set_all_params(&mut probe, &p);
        let (down, _) = elbo_batch(&mut probe, &enc_in, &xs, &ts, &t_raw, &ys, &eta, &e, false)
            .unwrap();
        // Analytic gradients are of -ELBO.
        let fd = -(up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-5);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-3, "worst rel err {worst}");
}

#[test]
fn elbo_gradient_matches_finite_differences_continuous() {
    let cfg = LatentConfig {
        m_l: 2,
        m_e: 1,
        hidden: vec![6],
        epochs: 1,
        batch_size: 2,
        learning_rate: 1e-4,
    };
    let model = LatentModel::new(cfg, 2, None, TreatmentKind::Continuous, 7).unwrap();
    let ts = array![0.3, -0.8];
    elbo_fd_check(model, ts);
}

#[test]
fn elbo_gradient_matches_finite_differences_binary_and_categorical() {
    let cfg = LatentConfig {
        m_l: 2,
        m_e: 1,
        hidden: vec![6],
        epochs: 1,
        batch_size: 2,
        learning_rate: 1e-4,
    };
    let kinds = vec![
        XColumnKind::Continuous,
        XColumnKind::Categorical(vec![1.0, 2.0, 3.0]),
    ];
    let model = LatentModel::new(cfg, 2, Some(kinds), TreatmentKind::Binary, 8).unwrap();
    elbo_fd_check(model, array![1.0, 0.0]);
}

#[test]
fn training_raises_the_elbo_and_warns_on_small_samples() {
    let ds = generate_syn(&SynConfig::new(2, 4, 4, 1200, 4)).unwrap();
    let view = ds.estimator_view(true);
    let cfg = LatentConfig {
        m_l: 3,
        m_e: 1,
        hidden: vec![32],
        epochs: 8,
        batch_size: 200,
        learning_rate: 1e-3,
    };
    let mut model = LatentModel::new(cfg, 4, None, TreatmentKind::Binary, 11).unwrap();
    let report = train_latent(&view, &mut model, 11).unwrap();
    assert!(report.small_sample_warning);
    assert!(
        report.elbo_trace.last().unwrap() > report.elbo_trace.first().unwrap(),
        "elbo {:?} -> {:?}",
        report.elbo_trace.first(),
        report.elbo_trace.last()
    );
}

#[test]
fn extract_latents_shape_and_determinism() {
    let ds = generate_syn(&SynConfig::new(2, 4, 4, 600, 6)).unwrap();
    let mut view = ds.estimator_view(true);
    // Duplicate row 1 into row 3.
    for j in 0..view.x.ncols() {
        let v = view.x[[1, j]];
        view.x[[3, j]] = v;
    }
    view.t[3] = view.t[1];
    let cfg = LatentConfig {
        m_l: 3,
        m_e: 2,
        hidden: vec![16],
        epochs: 2,
        batch_size: 128,
        learning_rate: 1e-3,
    };
    let mut model = LatentModel::new(cfg, 4, None, TreatmentKind::Binary, 3).unwrap();
    assert!(matches!(
        extract_latents(&model, &view),
        Err(crate::Error::State(_))
    ));
    train_latent(&view, &mut model, 3).unwrap();
    let l = extract_latents(&model, &view).unwrap();
    assert_eq!(l.dim(), (600, 5));
    // Exogenous block is zeroed at inference.
    for i in 0..600 {
        assert_eq!(l[[i, 3]], 0.0);
        assert_eq!(l[[i, 4]], 0.0);
    }
    for k in 0..5 {
        assert_eq!(l[[1, k]].to_bits(), l[[3, k]].to_bits());
    }
}

#[test]
fn latents_track_the_treatment_logit_on_syn() {
    let ds = generate_syn(&SynConfig::new(2, 4, 4, 10_000, 13)).unwrap();
    let view = ds.estimator_view(true);
    let cfg = LatentConfig {
        m_l: 5,
        m_e: 1,
        hidden: vec![64, 64, 64],
        epochs: 10,
        batch_size: 200,
        learning_rate: 1e-4,
    };
    let mut model = LatentModel::new(cfg, 4, None, TreatmentKind::Binary, 21).unwrap();
    train_latent(&view, &mut model, 21).unwrap();
    let latents = extract_latents(&model, &view).unwrap();
    let Some(Oracle::Binary { propensity, .. }) = &ds.oracle else {
        panic!()
    };
    let logit: Array1<f64> = propensity.mapv(|p| (p / (1.0 - p)).ln());
    let mut best = 0.0_f64;
    for k in 0..model.cfg.m_l {
        let col = latents.column(k);
        let mc = col.mean().unwrap();
        let ml = logit.mean().unwrap();
        let mut cov = 0.0;
        let mut vc = 0.0;
        let mut vl = 0.0;
        for i in 0..view.n() {
            cov += (col[i] - mc) * (logit[i] - ml);
            vc += (col[i] - mc).powi(2);
            vl += (logit[i] - ml).powi(2);
        }
        let corr = (cov / (vc.sqrt() * vl.sqrt())).abs();
        best = best.max(corr);
    }
    assert!(best > 0.3, "best |corr| {best}");
}
