//! Recurrence coefficients of the first-order Runge-Kutta-Chebyshev method.
//!
//! One [`ChebTableau`] serves both the outer `s`-stage method and the inner
//! `m`-stage method of the multirate scheme; only the stage count and the
//! damping differ.

use crate::cheb::cheb_eval_unchecked;
use crate::error::{Error, Result};

/// Precomputed coefficients of an RKC method with `stages` stages and damping `damping`.
///
/// The per-stage arrays are indexed by stage number `j` directly. `b` has
/// entries `0..=stages`; `mu`, `nu` and `kappa` have the same length with
/// entry 0 unused, and `nu[1]`, `kappa[1]` unused as well.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebTableau {
    pub stages: usize,
    pub damping: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Length of the real stability interval `[-ell, 0]`.
    pub ell: f64,
    /// `beta * stages^2` is a guaranteed lower bound for `ell`.
    pub beta: f64,
}

/// `2 - 4 eps / 3`.
pub fn beta_for_damping(damping: f64) -> f64 {
    2.0 - 4.0 * damping / 3.0
}

impl ChebTableau {
    pub fn new(stages: usize, damping: f64) -> Result<Self> {
        if stages == 0 {
            return Err(Error::invalid("RKC tableau needs at least one stage"));
        }
        if !(damping >= 0.0) || !damping.is_finite() {
            return Err(Error::invalid(format!("damping must be finite and nonnegative, got {damping}")));
        }
        let s = stages as f64;
        let omega0 = 1.0 + damping / (s * s);
        let ts = cheb_eval_unchecked(stages, omega0);
        let omega1 = ts.value / ts.d1;

        let mut b = Vec::with_capacity(stages + 1);
        let (mut t_prev, mut t_cur) = (1.0, omega0);
        b.push(1.0);
        b.push(1.0 / omega0);
        for _ in 2..=stages {
            let t_next = 2.0 * omega0 * t_cur - t_prev;
            t_prev = t_cur;
            t_cur = t_next;
            b.push(1.0 / t_cur);
        }
        if !t_cur.is_finite() || !omega1.is_finite() || b.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::NumericOverflow(format!(
                "T_j(omega0) overflows for stages = {stages}, damping = {damping}"
            )));
        }

        let mut mu = vec![0.0; stages + 1];
        let mut nu = vec![0.0; stages + 1];
        let mut kappa = vec![0.0; stages + 1];
        mu[1] = omega1 / omega0;
        for j in 2..=stages {
            mu[j] = 2.0 * omega1 * b[j] / b[j - 1];
            nu[j] = 2.0 * omega0 * b[j] / b[j - 1];
            kappa[j] = -b[j] / b[j - 2];
        }

        Ok(ChebTableau {
            stages,
            damping,
            omega0,
            omega1,
            b,
            mu,
            nu,
            kappa,
            ell: 2.0 * omega0 / omega1,
            beta: beta_for_damping(damping),
        })
    }

    /// Stability polynomial `R_s(z) = b_s T_s(omega0 + omega1 z)`.
    pub fn stability_poly(&self, z: f64) -> f64 {
        self.b[self.stages] * cheb_eval_unchecked(self.stages, self.omega0 + self.omega1 * z).value
    }

    /// Stage abscissae `c_j` (fraction of the step reached by stage `j`),
    /// obtained by running the recurrence on `y' = 1`.
    pub fn stage_times(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.stages + 1];
        c[1] = self.mu[1];
        for j in 2..=self.stages {
            c[j] = self.nu[j] * c[j - 1] + self.kappa[j] * c[j - 2] + self.mu[j];
        }
        c
    }
}

pub fn build_tableau(stages: usize, damping: f64) -> Result<ChebTableau> {
    ChebTableau::new(stages, damping)
}

pub fn stability_interval(stages: usize, damping: f64) -> Result<f64> {
    Ok(ChebTableau::new(stages, damping)?.ell)
}
