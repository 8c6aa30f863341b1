//! Scratch driver for eyeballing estimator behavior while tuning.

use cbiv::balance::BalanceConfig;
use cbiv::datagen::{generate_syn, split, true_ate, SynConfig};
use cbiv::numerics::OptimConfig;
use cbiv::outcome::{estimate_ate, train_outcome, EstimatorFlags, OutcomeModel};
use cbiv::treatreg::{train_treatment, InputMode, TreatmentModel};

/// Exact conditional propensity E[T | z, x] for Syn-2-4-4 by Monte Carlo
/// over the unobserved-confounder posterior: x_i = sqrt(0.95) eta_i +
/// sqrt(0.05) gamma gives gamma | x ~ N(m, s2), and the U-sum given gamma
/// is Gaussian.
fn p_star(view: &cbiv::datagen::EstimatorView, seed: u64) -> ndarray::Array1<f64> {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    let m_x = 4.0_f64;
    let m_u = 4.0_f64;
    let prec = 1.0 + m_x * 0.05 / 0.95;
    let s2 = 1.0 / prec;
    let mut rng = cbiv::rng::rng_from_seed(seed ^ 0xabcd);
    let n = view.n();
    let mut out = ndarray::Array1::zeros(n);
    for i in 0..n {
        let sx: f64 = (0..4).map(|j| view.x[[i, j]]).sum();
        let zx: f64 = (0..2).map(|j| view.z[[i, j]] * view.x[[i, j]]).sum();
        let m_gamma = (0.05f64.sqrt() * sx / 0.95) * s2;
        let mut acc = 0.0;
        let draws = 256;
        for _ in 0..draws {
            let gamma = m_gamma + s2.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let eta_sum = (m_u * 0.95).sqrt() * rng.sample::<f64, _>(StandardNormal);
            let su = eta_sum + m_u * 0.05f64.sqrt() * gamma;
            let logit = zx + sx + su;
            acc += 1.0 / (1.0 + (-logit).exp());
        }
        out[i] = acc / draws as f64;
    }
    out
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args.get(1).map(String::as_str).unwrap_or("cbiv");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let alpha: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let s1_epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(3);

    let t0 = std::time::Instant::now();
    let ds = generate_syn(&SynConfig::new(2, 4, 4, 10_000, seed)).unwrap();
    let (train, valid, test) = split(&ds, (0.63, 0.27, 0.10), seed ^ 0x5eed).unwrap();
    let train_view = train.estimator_view(false);

    let (flags, use_iv) = match variant {
        "cbiv" => (EstimatorFlags::FULL, true),
        "no_balance" => (EstimatorFlags::NO_BALANCE, true),
        "no_iv" => (EstimatorFlags::NO_IV, false),
        "plain" => (EstimatorFlags::PLAIN, false),
        // Diagnostic: exact conditional propensity E[T | z, x] by Monte
        // Carlo over the unobserved-confounder posterior.
        "oracle_p" => (EstimatorFlags::FULL, false),
        "oracle_p_nobal" => (EstimatorFlags::NO_BALANCE, false),
        other => panic!("unknown variant {other}"),
    };

    let opt_choice = args.get(6).map(String::as_str).unwrap_or("sgd0.05");
    let s1_optim = match opt_choice {
        "sgd0.05" => OptimConfig::sgd(0.05),
        "sgd0.2" => OptimConfig::sgd(0.2),
        "adam1e-3" => OptimConfig::adam(1e-3),
        "adam5e-3" => OptimConfig::adam(5e-3),
        other => panic!("unknown optimizer {other}"),
    };
    let tm = if use_iv {
        let mut tm =
            TreatmentModel::binary(6, &[128, 64], true, InputMode::CONVENTIONAL, seed).unwrap();
        let trace =
            train_treatment(&train_view, &mut tm, s1_epochs, 500, s1_optim, seed).unwrap();
        eprintln!(
            "stage1 loss: first={:.4} last={:.4} ({} epochs, {opt_choice})",
            trace.first().unwrap(),
            trace.last().unwrap(),
            trace.len()
        );
        let vview = valid.estimator_view(false);
        let p_hat = cbiv::treatreg::predict_propensity(&tm, &vview).unwrap();
        let p_ref = p_star(&vview, seed);
        let bce = |p: &ndarray::Array1<f64>| -> f64 {
            -vview
                .t
                .iter()
                .zip(p.iter())
                .map(|(t, p)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                .sum::<f64>()
                / p.len() as f64
        };
        let mae: f64 = p_hat
            .iter()
            .zip(p_ref.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / p_hat.len() as f64;
        eprintln!(
            "stage1 held-out: BCE(p_hat)={:.4} BCE(E[T|z,x])={:.4} mean|p_hat-E[T|z,x]|={:.4}",
            bce(&p_hat),
            bce(&p_ref),
            mae
        );
        Some(tm)
    } else {
        None
    };

    let mut model = OutcomeModel::binary(
        4,
        &[256, 256, 256],
        &[256, 256, 256, 256, 256],
        alpha,
        BalanceConfig::wasserstein(),
        1e-4,
        InputMode::CONVENTIONAL,
        seed.wrapping_add(17),
    )
    .unwrap();
    let chunk: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(steps);
    let ensemble: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0);
    let stage1_vals = if variant.starts_with("oracle_p") {
        Some(p_star(&train_view, seed))
    } else if ensemble > 0 {
        // Average the propensity over an ensemble of stage-1 nets.
        let mut acc = ndarray::Array1::<f64>::zeros(train_view.n());
        for k in 0..ensemble {
            let mut tmk = TreatmentModel::binary(
                6,
                &[128, 64],
                true,
                InputMode::CONVENTIONAL,
                seed.wrapping_add(1000 + k as u64),
            )
            .unwrap();
            train_treatment(
                &train_view,
                &mut tmk,
                s1_epochs,
                500,
                s1_optim,
                seed.wrapping_add(2000 + k as u64),
            )
            .unwrap();
            acc = acc + cbiv::treatreg::predict_propensity(&tmk, &train_view).unwrap();
        }
        acc.mapv_inplace(|v| v / ensemble as f64);
        // Calibration of the ensemble.
        let p_ref = p_star(&train_view, seed);
        let mae: f64 = acc
            .iter()
            .zip(p_ref.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / acc.len() as f64;
        eprintln!("ensemble({ensemble}) mean|p_hat-E[T|z,x]| = {mae:.4}");
        Some(acc)
    } else {
        None
    };
    let mut done = 0;
    let mut report = Default::default();
    while done < steps {
        let todo = chunk.min(steps - done);
        report = if let Some(p) = &stage1_vals {
            cbiv::outcome::train_outcome_with_stage1(
                &train_view,
                p,
                &mut model,
                flags,
                todo,
                256,
                OptimConfig::adam(5e-4),
                seed.wrapping_add(23 + done as u64),
            )
            .unwrap()
        } else {
            train_outcome(
                &train_view,
                tm.as_ref(),
                &mut model,
                flags,
                todo,
                256,
                OptimConfig::adam(5e-4),
                seed.wrapping_add(23 + done as u64),
            )
            .unwrap()
        };
        done += todo;
        if chunk < steps {
            let tv = test.estimator_view(false);
            let est = estimate_ate(&model, &tv).unwrap();
            let truth = true_ate(&test).unwrap();
            let last = report.trace.last().unwrap();
            eprintln!(
                "  step {done}: ly={:.4} lc={:.4} out-bias={:+.4}",
                last.l_y,
                last.l_c,
                est - truth
            );
        }
    }
    let report = report;
    let first = report.trace.first().unwrap();
    let last = report.trace.last().unwrap();
    eprintln!(
        "outcome loss: start ly={:.4} lc={:.4} -> end ly={:.4} lc={:.4} ({} warnings)",
        first.l_y,
        first.l_c,
        last.l_y,
        last.l_c,
        report.warnings.len()
    );

    // Within-sample: train + valid rows.
    let within = {
        let idx_all: Vec<usize> = (0..train.n()).collect();
        let mut both = train.subset(&idx_all);
        // concatenate valid rows
        let mut rows: Vec<usize> = Vec::new();
        rows.extend(0..valid.n());
        let v = valid.subset(&rows);
        both.z.append(ndarray::Axis(0), v.z.view()).unwrap();
        both.x.append(ndarray::Axis(0), v.x.view()).unwrap();
        both.t.append(ndarray::Axis(0), v.t.view()).unwrap();
        both.y.append(ndarray::Axis(0), v.y.view()).unwrap();
        if let (
            Some(cbiv::datagen::Oracle::Binary { mu0, mu1, propensity }),
            Some(cbiv::datagen::Oracle::Binary {
                mu0: m0,
                mu1: m1,
                propensity: p,
            }),
        ) = (&mut both.oracle, &v.oracle)
        {
            mu0.append(ndarray::Axis(0), m0.view()).unwrap();
            mu1.append(ndarray::Axis(0), m1.view()).unwrap();
            propensity.append(ndarray::Axis(0), p.view()).unwrap();
        }
        both
    };

    for (name, part) in [("within", &within), ("out", &test)] {
        let view = part.estimator_view(false);
        let est = estimate_ate(&model, &view).unwrap();
        let truth = true_ate(part).unwrap();
        println!(
            "{variant} seed={seed} {name}: est={est:.4} truth={truth:.4} bias={:+.4}",
            est - truth
        );
    }
    eprintln!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
}
