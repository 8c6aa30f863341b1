//! Entropic optimal transport between propensity-weighted representation
//! marginals, differentiated by unrolling the Sinkhorn iterations.
//!
//! Both marginals live on the same support (the batch representations), so
//! the cost matrix is the full pairwise squared-Euclidean matrix. The
//! iterations run in log domain but are arranged so the only O(n^2)
//! exponentials are the kernel `exp(-C/eps)` (computed once) and the final
//! plan; each half-iteration is a matrix-vector product against that
//! kernel. The reverse pass re-walks the stored potentials, so memory stays
//! O(n * iters). Hot loops run over contiguous rows.
//!
//! A finite iteration budget leaves the raw transport cost slightly
//! asymmetric in the marginal order, so the reported value averages both
//! orders; swapping the arms is then an exact no-op and joint row
//! permutations only move float summation order.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Exponent clamp that keeps `exp(-C/eps)` away from hard zero.
const EXP_CLAMP: f64 = -700.0;

/// Weights below this raw sum mean one arm carries no mass.
const ARM_EPS: f64 = 1e-12;

/// Entropic temperature rule.
#[derive(Debug, Clone, Copy)]
pub enum SinkhornEpsilon {
    /// `scale * median` of the off-diagonal pairwise costs of the batch.
    /// The temperature is treated as a constant of the batch: no gradient
    /// flows through the median.
    MedianScale(f64),
    /// Fixed absolute temperature (used by the finite-difference checks).
    Fixed(f64),
}

/// Transport cost and its gradient with respect to the representations.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub value: f64,
    pub grad_reps: Array2<f64>,
    pub epsilon: f64,
}

/// Weighted Wasserstein discrepancy between the arm-1 marginal (weights
/// `p1`, normalized) and the arm-0 marginal (weights `1 - p1`) over the
/// rows of `reps`. Returns the transport cost `<P, C>` of the plan after
/// `iters` Sinkhorn rounds (averaged over the two marginal orders)
/// together with its exact gradient.
pub fn weighted_wasserstein(
    reps: &Array2<f64>,
    p1: &Array1<f64>,
    epsilon: SinkhornEpsilon,
    iters: usize,
) -> Result<SinkhornResult> {
    let n = reps.nrows();
    if n < 2 {
        return Err(Error::Config(
            "weighted_wasserstein needs at least two rows".into(),
        ));
    }
    if p1.len() != n {
        return Err(Error::Config("p1 length must match reps rows".into()));
    }
    if iters == 0 {
        return Err(Error::Config("sinkhorn_iters must be >= 1".into()));
    }
    if p1.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Config("p1 entries must lie in [0, 1]".into()));
    }
    let sum1: f64 = p1.sum();
    let sum0: f64 = n as f64 - sum1;
    if sum1 < ARM_EPS || sum0 < ARM_EPS {
        return Err(Error::DegenerateArm(format!(
            "arm masses {sum1:.3e} / {sum0:.3e}: all weight on one arm"
        )));
    }
    let a: Vec<f64> = p1.iter().map(|&p| p / sum1).collect();
    let b: Vec<f64> = p1.iter().map(|&p| (1.0 - p) / sum0).collect();

    // Pairwise squared-Euclidean costs.
    let sq: Vec<f64> = reps
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    let gram = reps.dot(&reps.t());
    let gram = gram.as_standard_layout();
    let gram_s = gram.as_slice().expect("standard layout");
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut cost[i * n..(i + 1) * n];
        let grow = &gram_s[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] = (sq[i] + sq[j] - 2.0 * grow[j]).max(0.0);
        }
    }

    let eps = match epsilon {
        SinkhornEpsilon::Fixed(e) => {
            if !(e > 0.0) {
                return Err(Error::Config("sinkhorn epsilon must be positive".into()));
            }
            e
        }
        SinkhornEpsilon::MedianScale(scale) => {
            if !(scale > 0.0) {
                return Err(Error::Config("sinkhorn epsilon must be positive".into()));
            }
            let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    off.push(cost[i * n + j]);
                }
            }
            off.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let median = off[off.len() / 2];
            if median <= 0.0 {
                // All points coincide: zero cost, zero gradient.
                return Ok(SinkhornResult {
                    value: 0.0,
                    grad_reps: Array2::zeros(reps.dim()),
                    epsilon: 0.0,
                });
            }
            scale * median
        }
    };

    let kernel: Vec<f64> = cost.iter().map(|&c| (-c / eps).max(EXP_CLAMP).exp()).collect();
    // The kernel is symmetric (shared support), so no transpose is stored.
    let (v_ab, mut d_cost) = one_sided(&kernel, &cost, &a, &b, eps, iters, n)?;
    let (v_ba, d_cost_ba) = one_sided(&kernel, &cost, &b, &a, eps, iters, n)?;
    let value = 0.5 * (v_ab + v_ba);
    for (x, y) in d_cost.iter_mut().zip(&d_cost_ba) {
        *x = 0.5 * (*x + *y);
    }

    // Chain d_cost into the representations: C_ij = |c_i - c_j|^2 gives
    // dreps_i = 2 * sum_j (M_ij + M_ji) (c_i - c_j) with M = d_cost.
    let mut sym = Array2::<f64>::zeros((n, n));
    {
        let s = sym.as_slice_mut().unwrap();
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = d_cost[i * n + j] + d_cost[j * n + i];
            }
        }
    }
    let row_tot = sym.sum_axis(ndarray::Axis(1));
    let mixed = sym.dot(reps);
    let mut grad = Array2::<f64>::zeros(reps.dim());
    for i in 0..n {
        for k in 0..reps.ncols() {
            grad[[i, k]] = 2.0 * (row_tot[i] * reps[[i, k]] - mixed[[i, k]]);
        }
    }
    if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "sinkhorn value or gradient is non-finite".into(),
        ));
    }
    Ok(SinkhornResult {
        value,
        grad_reps: grad,
        epsilon: eps,
    })
}

struct IterState {
    eb: Vec<f64>,
    row_sum: Vec<f64>,
    ea: Vec<f64>,
    col_sum: Vec<f64>,
}

/// `out = M v` for a symmetric row-major `n x n` matrix.
fn symv(m: &[f64], v: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * v[j];
        }
        out[i] = acc;
    }
}

/// Sinkhorn rounds for row marginal `a` and column marginal `b`, returning
/// the transport cost and its gradient with respect to the cost matrix.
fn one_sided(
    kernel: &[f64],
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    eps: f64,
    iters: usize,
    n: usize,
) -> Result<(f64, Vec<f64>)> {
    let log_a: Vec<f64> = a.iter().map(|&v| v.ln()).collect(); // -inf on zero mass
    let log_b: Vec<f64> = b.iter().map(|&v| v.ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut hist = Vec::with_capacity(iters);
    let mut scratch = vec![0.0; n];
    for _ in 0..iters {
        // f-update from g: f_i = -eps * LSE_j(log b_j + (g_j - C_ij)/eps).
        let eb = shifted_exp(&log_b, &g, eps);
        symv(kernel, &eb.0, &mut scratch, n);
        let row_sum = scratch.clone();
        for i in 0..n {
            f[i] = -eps * (row_sum[i].ln() + eb.1);
        }
        // g-update from f (the kernel is symmetric).
        let ea = shifted_exp(&log_a, &f, eps);
        symv(kernel, &ea.0, &mut scratch, n);
        let col_sum = scratch.clone();
        for j in 0..n {
            g[j] = -eps * (col_sum[j].ln() + ea.1);
        }
        hist.push(IterState {
            eb: eb.0,
            row_sum,
            ea: ea.0,
            col_sum,
        });
    }

    // Final plan and transport cost, with the cotangents of the final
    // potentials and the direct cost path: dW/df_i = sum_j P_ij C_ij / eps
    // (symmetrically for g), dW/dC_ij = P_ij (1 - C_ij/eps) at fixed
    // potentials.
    let mut d_cost = vec![0.0; n * n];
    let mut df = vec![0.0; n];
    let mut dg = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        if a[i] == 0.0 {
            continue;
        }
        let base = log_a[i] + f[i] / eps;
        let crow = &cost[i * n..(i + 1) * n];
        let drow = &mut d_cost[i * n..(i + 1) * n];
        for j in 0..n {
            if b[j] == 0.0 {
                continue;
            }
            let lp = base + log_b[j] + (g[j] - crow[j]) / eps;
            let p = lp.min(50.0).exp();
            let pc = p * crow[j];
            value += pc;
            df[i] += pc / eps;
            dg[j] += pc / eps;
            drow[j] = p - pc / eps;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical(
            "sinkhorn transport cost is non-finite".into(),
        ));
    }

    let mut ratio = vec![0.0; n];
    let mut back = vec![0.0; n];
    for state in hist.iter().rev() {
        // g_j = -eps * ln(col_sum_j) - shift: softmax weights are
        // ea_i * K_ij / col_sum_j.
        for j in 0..n {
            ratio[j] = dg[j] / state.col_sum[j];
        }
        symv(kernel, &ratio, &mut back, n);
        for i in 0..n {
            let c = state.ea[i];
            if c != 0.0 {
                df[i] -= c * back[i];
                let krow = &kernel[i * n..(i + 1) * n];
                let drow = &mut d_cost[i * n..(i + 1) * n];
                for j in 0..n {
                    drow[j] += c * krow[j] * ratio[j];
                }
            }
        }
        // f_i = -eps * ln(row_sum_i) - shift: softmax weights are
        // eb_j * K_ij / row_sum_i.
        for i in 0..n {
            ratio[i] = df[i] / state.row_sum[i];
        }
        symv(kernel, &ratio, &mut back, n);
        for j in 0..n {
            dg[j] = if state.eb[j] != 0.0 {
                -state.eb[j] * back[j]
            } else {
                0.0
            };
        }
        for i in 0..n {
            let r = ratio[i];
            if r != 0.0 {
                let krow = &kernel[i * n..(i + 1) * n];
                let drow = &mut d_cost[i * n..(i + 1) * n];
                for j in 0..n {
                    drow[j] += r * krow[j] * state.eb[j];
                }
            }
        }
        df.iter_mut().for_each(|v| *v = 0.0);
        // dg now holds the cotangent of the previous iteration's g.
    }
    // The initial g is the zero constant; its cotangent is dropped.
    Ok((value, d_cost))
}

/// `exp(log_w + pot/eps - shift)` with the shift chosen over positive-mass
/// entries so the largest term is 1; zero-mass entries stay exactly zero.
fn shifted_exp(log_w: &[f64], pot: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let mut shift = f64::NEG_INFINITY;
    for (lw, p) in log_w.iter().zip(pot.iter()) {
        if lw.is_finite() {
            shift = shift.max(lw + p / eps);
        }
    }
    let out = log_w
        .iter()
        .zip(pot.iter())
        .map(|(lw, p)| {
            if lw.is_finite() {
                (lw + p / eps - shift).exp()
            } else {
                0.0
            }
        })
        .collect();
    (out, shift)
}
