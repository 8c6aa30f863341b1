//! Exhaustive finite-support check of the inverse-relationship identity
//! behind the estimator.
//!
//! A toy generating process with tabulated components
//!
//! ```text
//! T = f1(Z, X) + f2(X, U)            (binary T; the sum is P(T=1|z,x,u))
//! Y = g1(T, X) + g2(T) g3(U) + g4(X, U)
//! ```
//!
//! and a deterministic coarsening `C = c(X)` is enumerated completely. The
//! check builds the counterfactual function
//! `h(t, c) = g1(t, c) + g2(t) E[g3(U)|c] + E[g4(X, U)|c]` and reports the
//! worst violation of `E[Y|z, x] = sum_t h(t, c(x)) P(t|z, x)`. Z is
//! independent of (X, U) by construction of the tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Finite-support generating process with tabulated structural functions.
///
/// `u_probs_given_x[x][u]` is `P(U = u | X = x)`; `c_of_x[x]` is the
/// deterministic coarsening class of each x state; `f1[z][x]`, `f2[x][u]`,
/// `g1[t][x]`, `g3[u]`, `g4[x][u]` are lookup tables and `g2` has one entry
/// per treatment arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyDgp {
    pub z_probs: Vec<f64>,
    pub x_probs: Vec<f64>,
    pub u_probs_given_x: Vec<Vec<f64>>,
    pub c_of_x: Vec<usize>,
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
    pub g1: Vec<Vec<f64>>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    pub g4: Vec<Vec<f64>>,
}

impl ToyDgp {
    pub fn n_z(&self) -> usize {
        self.z_probs.len()
    }
    pub fn n_x(&self) -> usize {
        self.x_probs.len()
    }
    pub fn n_u(&self) -> usize {
        self.g3.len()
    }
    pub fn n_c(&self) -> usize {
        self.c_of_x.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (nz, nx, nu) = (self.n_z(), self.n_x(), self.n_u());
        if nz == 0 || nx == 0 || nu == 0 {
            return Err(Error::Config("empty support".into()));
        }
        if nz > 4 || nx > 4 || nu > 4 {
            return Err(Error::Config("supports are limited to 4 states".into()));
        }
        let sums_to_one = |p: &[f64]| (p.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL;
        if !sums_to_one(&self.z_probs) || !sums_to_one(&self.x_probs) {
            return Err(Error::Config("z/x probability tables must sum to 1".into()));
        }
        if self.z_probs.iter().chain(&self.x_probs).any(|&p| p < 0.0) {
            return Err(Error::Config("probabilities must be nonnegative".into()));
        }
        if self.u_probs_given_x.len() != nx {
            return Err(Error::Config("u_probs_given_x needs one row per x".into()));
        }
        for row in &self.u_probs_given_x {
            if row.len() != nu || !sums_to_one(row) || row.iter().any(|&p| p < 0.0) {
                return Err(Error::Config(
                    "each u_probs_given_x row must be a distribution over u".into(),
                ));
            }
        }
        if self.c_of_x.len() != nx {
            return Err(Error::Config("c_of_x needs one entry per x".into()));
        }
        let nc = self.n_c();
        for c in 0..nc {
            if !self.c_of_x.contains(&c) {
                return Err(Error::Config("coarsening classes must be contiguous".into()));
            }
        }
        let table_ok = |t: &Vec<Vec<f64>>, rows: usize, cols: usize| {
            t.len() == rows && t.iter().all(|r| r.len() == cols)
        };
        if !table_ok(&self.f1, nz, nx)
            || !table_ok(&self.f2, nx, nu)
            || !table_ok(&self.g1, 2, nx)
            || self.g2.len() != 2
            || !table_ok(&self.g4, nx, nu)
        {
            return Err(Error::Config("lookup table shapes are inconsistent".into()));
        }
        for z in 0..nz {
            for x in 0..nx {
                for u in 0..nu {
                    let p = self.f1[z][x] + self.f2[x][u];
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "f1 + f2 must be a probability; got {p} at (z={z}, x={x}, u={u})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `P(T = 1 | z, x)` marginalized over U.
    fn treat_prob(&self, z: usize, x: usize) -> f64 {
        (0..self.n_u())
            .map(|u| self.u_probs_given_x[x][u] * (self.f1[z][x] + self.f2[x][u]))
            .sum()
    }
}

/// Maximum absolute violation of the inverse identity over all (z, x)
/// cells. Errors if the coarsening is not independent of the estimated
/// treatment under the tables.
pub fn verify_inverse_identity(toy: &ToyDgp) -> Result<f64> {
    toy.validate()?;
    let (nz, nx, nu, nc) = (toy.n_z(), toy.n_x(), toy.n_u(), toy.n_c());

    // Precondition: C independent of T_hat ~ P(T | Z, X).
    let mut p_c = vec![0.0; nc];
    let mut p_c_t1 = vec![0.0; nc];
    let mut p_t1 = 0.0;
    for x in 0..nx {
        let c = toy.c_of_x[x];
        p_c[c] += toy.x_probs[x];
        for z in 0..nz {
            let w = toy.z_probs[z] * toy.x_probs[x];
            let q = toy.treat_prob(z, x);
            p_c_t1[c] += w * q;
            p_t1 += w * q;
        }
    }
    for c in 0..nc {
        let gap = (p_c_t1[c] - p_c[c] * p_t1).abs();
        if gap > 1e-12 {
            return Err(Error::Precondition(format!(
                "coarsening leaks the estimated treatment: |P(c,t)-P(c)P(t)| = {gap:.3e} at class {c}"
            )));
        }
    }

    // Class-conditional pieces of the counterfactual function.
    let mut e_g3 = vec![0.0; nc];
    let mut e_g4 = vec![0.0; nc];
    let mut g1_c = vec![[0.0; 2]; nc];
    for c in 0..nc {
        let mass = p_c[c];
        for x in (0..nx).filter(|&x| toy.c_of_x[x] == c) {
            let w_x = toy.x_probs[x] / mass;
            for u in 0..nu {
                let w = w_x * toy.u_probs_given_x[x][u];
                e_g3[c] += w * toy.g3[u];
                e_g4[c] += w * toy.g4[x][u];
            }
            for t in 0..2 {
                g1_c[c][t] += w_x * toy.g1[t][x];
            }
        }
    }
    let h = |t: usize, c: usize| g1_c[c][t] + toy.g2[t] * e_g3[c] + e_g4[c];

    let mut worst = 0.0_f64;
    for z in 0..nz {
        for x in 0..nx {
            let c = toy.c_of_x[x];
            let mut lhs = 0.0;
            for u in 0..nu {
                let pu = toy.u_probs_given_x[x][u];
                let p = toy.f1[z][x] + toy.f2[x][u];
                let y1 = toy.g1[1][x] + toy.g2[1] * toy.g3[u] + toy.g4[x][u];
                let y0 = toy.g1[0][x] + toy.g2[0] * toy.g3[u] + toy.g4[x][u];
                lhs += pu * (p * y1 + (1.0 - p) * y0);
            }
            let q = toy.treat_prob(z, x);
            let rhs = (1.0 - q) * h(0, c) + q * h(1, c);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// Additive fixture: no multiplicative confounder term (`g2 = 0`) and a
/// constant `g4`, with genuine U-dependence in the treatment.
pub fn additive_fixture() -> ToyDgp {
    ToyDgp {
        z_probs: vec![0.5, 0.5],
        x_probs: vec![0.6, 0.4],
        u_probs_given_x: vec![vec![0.4, 0.6], vec![0.4, 0.6]],
        c_of_x: vec![0, 1],
        f1: vec![vec![0.3, 0.7], vec![0.7, 0.3]],
        f2: vec![vec![-0.1, 0.1], vec![-0.1, 0.1]],
        g1: vec![vec![0.0, 1.0], vec![2.0, 2.5]],
        g2: vec![0.0, 0.0],
        g3: vec![1.0, -0.5],
        g4: vec![vec![0.7, 0.7], vec![0.7, 0.7]],
    }
}

/// Multiplicative fixture on binary supports: `g2(t) = t`, `g3(u) = u^2`
/// over the support {0, 1}. The treatment noise is flat in u, so the
/// instrument-treatment association is homogeneous.
pub fn multiplicative_fixture() -> ToyDgp {
    ToyDgp {
        z_probs: vec![0.5, 0.5],
        x_probs: vec![0.55, 0.45],
        u_probs_given_x: vec![vec![0.5, 0.5], vec![0.2, 0.8]],
        c_of_x: vec![0, 1],
        f1: vec![vec![0.3, 0.7], vec![0.7, 0.3]],
        f2: vec![vec![0.05, 0.05], vec![0.05, 0.05]],
        g1: vec![vec![0.5, -0.2], vec![1.5, 0.9]],
        g2: vec![0.0, 1.0],
        g3: vec![0.0, 1.0], // u^2 on {0, 1}
        g4: vec![vec![0.3, -0.1], vec![0.2, 0.6]],
    }
}

/// Multiplicative fixture with a genuine unmeasured treatment confounder:
/// U factors into a component that drives the treatment and an independent
/// component that enters the outcome multiplicatively; X is coarsened two
/// states to one class.
pub fn multiplicative_rich_fixture() -> ToyDgp {
    // u index = u1 + 2*u2 over u1, u2 in {0, 1}; f2 rides on u1 (mean zero
    // per class), g3 on u2; g1, g4 and P(u|x) factor through the class.
    let pu_c0 = vec![0.3, 0.3, 0.2, 0.2];
    let pu_c1 = vec![0.15, 0.15, 0.35, 0.35];
    ToyDgp {
        z_probs: vec![0.5, 0.5],
        x_probs: vec![0.3, 0.2, 0.3, 0.2],
        u_probs_given_x: vec![pu_c0.clone(), pu_c0, pu_c1.clone(), pu_c1],
        c_of_x: vec![0, 0, 1, 1],
        f1: vec![
            vec![0.3, 0.4, 0.6, 0.5],
            vec![0.7, 0.6, 0.4, 0.5],
        ],
        f2: vec![vec![-0.1, 0.1, -0.1, 0.1]; 4],
        g1: vec![
            vec![0.2, 0.2, 1.0, 1.0],
            vec![1.3, 1.3, 0.4, 0.4],
        ],
        g2: vec![0.3, 1.2],
        g3: vec![0.2, 0.2, 1.5, 1.5],
        g4: vec![
            vec![0.1, 0.5, -0.2, 0.3],
            vec![0.1, 0.5, -0.2, 0.3],
            vec![0.4, 0.0, 0.6, -0.1],
            vec![0.4, 0.0, 0.6, -0.1],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_fixture_satisfies_identity() {
        let v = verify_inverse_identity(&additive_fixture()).unwrap();
        assert!(v <= 1e-12, "violation {v}");
    }

    #[test]
    fn multiplicative_fixture_satisfies_identity() {
        let v = verify_inverse_identity(&multiplicative_fixture()).unwrap();
        assert!(v <= 1e-12, "violation {v}");
    }

    #[test]
    fn rich_multiplicative_fixture_satisfies_identity() {
        let v = verify_inverse_identity(&multiplicative_rich_fixture()).unwrap();
        assert!(v <= 1e-12, "violation {v}");
    }

    #[test]
    fn leaking_coarsening_is_a_precondition_error() {
        let mut toy = multiplicative_fixture();
        // Skew the instrument response of one class so P(t|c) differs.
        toy.f1 = vec![vec![0.4, 0.7], vec![0.7, 0.3]];
        match verify_inverse_identity(&toy) {
            Err(Error::Precondition(_)) => {}
            other => panic!("expected precondition violation, got {other:?}"),
        }
    }

    #[test]
    fn broken_homogeneity_shows_up_as_violation() {
        // Correlate the treatment noise with g3(U): the identity fails.
        let mut toy = multiplicative_fixture();
        toy.f2 = vec![vec![-0.1, 0.2], vec![-0.1, 0.2]];
        // Keep P(t|c) equal across classes so the precondition still holds.
        toy.u_probs_given_x = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let v = verify_inverse_identity(&toy).unwrap();
        assert!(v > 1e-6, "expected a real violation, got {v}");
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let mut toy = additive_fixture();
        toy.z_probs = vec![0.5, 0.6];
        assert!(toy.validate().is_err());
        let mut toy = additive_fixture();
        toy.f1[0][0] = 1.5;
        assert!(toy.validate().is_err());
    }

    #[test]
    fn fixtures_round_trip_through_json() {
        let toy = multiplicative_rich_fixture();
        let s = serde_json::to_string(&toy).unwrap();
        let back: ToyDgp = serde_json::from_str(&s).unwrap();
        assert_eq!(back.g4, toy.g4);
        assert!(verify_inverse_identity(&back).unwrap() <= 1e-12);
    }
}
