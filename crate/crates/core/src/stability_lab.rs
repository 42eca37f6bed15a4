//! Stability functions, averaged matrices and the parameter scans built on them.
//!
//! Scalar objects for the multirate test equation `y' = lambda y + zeta y`:
//! `phi(z) = (e^z - 1)/z`, the inner polynomial `P_m`, `Phi_m(z) = (P_m(z) - 1)/z`,
//! the RKC polynomial `R_s` and the mRKC amplification `R_s(tau Phi_m(eta lambda)(lambda + zeta))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cheb::{cheb_divided_difference, cheb_eval};
use crate::error::{Error, Result};
use crate::integrators::{averaged_force, MrkcParameters, Mode, SplitSystem, RELAXED_INNER_DAMPING};
use crate::par;
use crate::problems::{build_masked_splitting, LinearSplit, MatrixSplitting};
use crate::spectral::dense_spectral_radius;
use crate::tableau::{beta_for_damping, ChebTableau};

/// One sample of a scan: `value` is compared against `threshold` at `abscissa`.
/// `parameter` carries the second coordinate of two-dimensional scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub abscissa: f64,
    pub parameter: f64,
    pub value: f64,
    pub threshold: f64,
}

impl ScanRecord {
    pub fn violation(&self) -> f64 {
        self.value - self.threshold
    }
}

/// Largest `value - threshold` over the records and where it happens.
pub fn max_violation(records: &[ScanRecord]) -> Option<ScanRecord> {
    records.iter().copied().max_by(|a, b| a.violation().total_cmp(&b.violation()))
}

/// `(e^z - 1)/z`, equal to 1 at `z = 0`.
pub fn phi(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// `Phi_m(z)` for a prebuilt inner tableau. Evaluated as a Chebyshev divided
/// difference, so it is exact to rounding at and near `z = 0`.
pub fn phi_m_with(tab: &ChebTableau, z: f64) -> f64 {
    let m = tab.stages;
    tab.b[m] * tab.omega1 * cheb_divided_difference(m, tab.omega0 + tab.omega1 * z, tab.omega0)
}

pub fn inner_stability_poly(m: usize, damping: f64, z: f64) -> Result<f64> {
    Ok(ChebTableau::new(m, damping)?.stability_poly(z))
}

pub fn phi_m(m: usize, damping: f64, z: f64) -> Result<f64> {
    Ok(phi_m_with(&ChebTableau::new(m, damping)?, z))
}

pub fn rkc_stability_poly(s: usize, damping: f64, z: f64) -> Result<f64> {
    Ok(ChebTableau::new(s, damping)?.stability_poly(z))
}

/// `R_s(tau Phi_m(eta lambda)(lambda + zeta))` with prebuilt tableaus.
pub fn mrkc_amplification(outer: &ChebTableau, inner: &ChebTableau, lambda: f64, zeta: f64, tau: f64, eta: f64) -> f64 {
    outer.stability_poly(tau * phi_m_with(inner, eta * lambda) * (lambda + zeta))
}

#[allow(clippy::too_many_arguments)]
pub fn mrkc_stability_poly(
    s: usize,
    m: usize,
    outer_damping: f64,
    inner_damping: f64,
    lambda: f64,
    zeta: f64,
    tau: f64,
    eta: f64,
) -> Result<f64> {
    let outer = ChebTableau::new(s, outer_damping)?;
    let inner = ChebTableau::new(m, inner_damping)?;
    Ok(mrkc_amplification(&outer, &inner, lambda, zeta, tau, eta))
}

/// Smallest `eta` covered by the stability theorem: `(6 tau / ell_s) m^2 / (m^2 - 1)`.
pub fn eta_lower_bound(tau: f64, ell_s: f64, m: usize) -> f64 {
    let m2 = (m * m) as f64;
    6.0 * tau / ell_s * m2 / (m2 - 1.0)
}

/// Settings shared by the scalar scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarScan {
    pub s: usize,
    pub m: usize,
    pub outer_damping: f64,
    pub inner_damping: f64,
    pub tau: f64,
    pub eta: f64,
}

const REGION_SLACK: f64 = 1e-12;

/// `|R_{s,m}|` on the `zeta x lambda` grid. Every cell must lie in the region
/// `tau |zeta| <= ell_s`, `eta |lambda| <= ell_m`, and `eta` must respect
/// [`eta_lower_bound`]; otherwise a precondition error names the failing inequality.
pub fn scan_scalar_stability(cfg: &ScalarScan, zeta_grid: &[f64], lambda_grid: &[f64]) -> Result<Vec<ScanRecord>> {
    let outer = ChebTableau::new(cfg.s, cfg.outer_damping)?;
    let inner = ChebTableau::new(cfg.m, cfg.inner_damping)?;
    if !(cfg.tau > 0.0 && cfg.eta > 0.0) {
        return Err(Error::invalid("tau and eta must be positive"));
    }
    if cfg.m >= 2 {
        let lb = eta_lower_bound(cfg.tau, outer.ell, cfg.m);
        if cfg.eta < lb * (1.0 - REGION_SLACK) {
            return Err(Error::precondition(format!(
                "eta >= (6 tau / ell_s) m^2/(m^2-1) violated: eta = {}, bound = {lb}",
                cfg.eta
            )));
        }
    }
    for &z in zeta_grid {
        if !(z <= 0.0) || cfg.tau * z.abs() > outer.ell * (1.0 + REGION_SLACK) {
            return Err(Error::precondition(format!("tau |zeta| <= ell_s violated at zeta = {z} (ell_s = {})", outer.ell)));
        }
    }
    for &l in lambda_grid {
        if !(l <= 0.0) || cfg.eta * l.abs() > inner.ell * (1.0 + REGION_SLACK) {
            return Err(Error::precondition(format!(
                "eta |lambda| <= ell_m violated at lambda = {l} (ell_m = {})",
                inner.ell
            )));
        }
    }
    Ok(scan_scalar_unchecked(&outer, &inner, cfg.tau, cfg.eta, zeta_grid, lambda_grid))
}

/// [`scan_scalar_stability`] without the region checks, for probing outside the theorem.
pub fn scan_scalar_stability_unchecked(cfg: &ScalarScan, zeta_grid: &[f64], lambda_grid: &[f64]) -> Result<Vec<ScanRecord>> {
    let outer = ChebTableau::new(cfg.s, cfg.outer_damping)?;
    let inner = ChebTableau::new(cfg.m, cfg.inner_damping)?;
    Ok(scan_scalar_unchecked(&outer, &inner, cfg.tau, cfg.eta, zeta_grid, lambda_grid))
}

fn scan_scalar_unchecked(
    outer: &ChebTableau,
    inner: &ChebTableau,
    tau: f64,
    eta: f64,
    zeta_grid: &[f64],
    lambda_grid: &[f64],
) -> Vec<ScanRecord> {
    let nl = lambda_grid.len();
    par::map_range(zeta_grid.len() * nl, |k| {
        let zeta = zeta_grid[k / nl];
        let lambda = lambda_grid[k % nl];
        ScanRecord {
            abscissa: lambda,
            parameter: zeta,
            value: mrkc_amplification(outer, inner, lambda, zeta, tau, eta).abs(),
            threshold: 1.0,
        }
    })
}

/// Window condition `w <= Phi_m(z)(z + w) <= 0`: returns
/// `(min over z of Phi_m(z)(z + w) - w, max over z of Phi_m(z)(z + w))`.
pub fn scan_phi_window(m: usize, damping: f64, w: f64, z_grid: &[f64]) -> Result<(f64, f64)> {
    let tab = ChebTableau::new(m, damping)?;
    if let Some(z) = z_grid.iter().find(|&&z| !(z <= 0.0 && -z <= tab.ell * (1.0 + REGION_SLACK))) {
        return Err(Error::precondition(format!("z grid must lie in [-ell_m, 0], found {z}")));
    }
    let vals = par::map_slice(z_grid, |&z| phi_m_with(&tab, z) * (z + w));
    let lo = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v - w));
    let hi = vals.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    Ok((lo, hi))
}

/// True iff `phi(eta lambda)(lambda + zeta)` lies in `[zeta, 0]` at every grid point.
pub fn scan_phi_continuous(eta: f64, zeta: f64, lambda_grid: &[f64]) -> Result<bool> {
    if lambda_grid.iter().any(|&l| !(l <= 0.0)) {
        return Err(Error::precondition("lambda grid must lie in (-inf, 0]"));
    }
    let tol = 1e-12 * zeta.abs().max(f64::MIN_POSITIVE);
    Ok(lambda_grid.iter().all(|&l| {
        let v = phi(eta * l) * (l + zeta);
        v >= zeta - tol && v <= tol
    }))
}

/// `0` followed by `n` log-spaced points from `-lo` down to `-hi`.
pub fn log_negative_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    let (a, b) = (lo.ln(), hi.ln());
    let denom = (n.max(2) - 1) as f64;
    g.extend((0..n).map(|k| -(a + (b - a) * k as f64 / denom).exp()));
    g
}

/// `n` equispaced points on `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
}

/// `A_eta = Phi_m(eta A_F) A`, assembled column by column by running the
/// inner recurrence of the averaged force on unit vectors.
pub fn averaged_matrix(split: &MatrixSplitting, eta: f64, m: usize, damping: f64) -> Result<DMatrix<f64>> {
    let n = split.a.nrows();
    if split.a.ncols() != n
        || split.a_fast.shape() != (n, n)
        || split.a_slow.shape() != (n, n)
        || split.mask.len() != n
    {
        return Err(Error::invalid("splitting has inconsistent dimensions"));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let inner = ChebTableau::new(m, damping)?;
    let params = MrkcParameters {
        s: 1,
        m,
        eta,
        tau: 1.0,
        mode: Mode::Strict,
        outer_damping: damping,
        inner_damping: damping,
    };
    let rhs = LinearSplit::new(split.clone());
    let cols: Vec<Result<Vec<f64>>> = par::map_range(n, |j| {
        let mut sys = SplitSystem::new(&rhs);
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        averaged_force(&mut sys, 0.0, &e, &params, &inner)
    });
    let mut out = DMatrix::zeros(n, n);
    for (j, c) in cols.into_iter().enumerate() {
        out.column_mut(j).copy_from_slice(&c?);
    }
    Ok(out)
}

/// Settings of the 2x2 model scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoByTwoScan {
    pub s: usize,
    pub m: usize,
    pub damping: f64,
    pub tau: f64,
    pub sigma_factor: f64,
    pub eta_factor: f64,
}

impl Default for TwoByTwoScan {
    fn default() -> Self {
        TwoByTwoScan { s: 10, m: 8, damping: 0.05, tau: 1.0, sigma_factor: 0.1, eta_factor: 1.0 }
    }
}

impl TwoByTwoScan {
    /// `(zeta, eta)`: `|zeta| = ell_s / tau` and `eta` at the strict lower bound times `eta_factor`.
    pub fn zeta_eta(&self) -> Result<(f64, f64)> {
        let ell_s = ChebTableau::new(self.s, self.damping)?.ell;
        Ok((-ell_s / self.tau, eta_lower_bound(self.tau, ell_s, self.m) * self.eta_factor))
    }

    pub fn inner_ell(&self) -> Result<f64> {
        Ok(ChebTableau::new(self.m, self.damping)?.ell)
    }
}

/// For each `z = eta lambda`, builds `A = [[zeta, sigma], [sigma, lambda]]`
/// with `sigma = sigma_factor sqrt(lambda zeta)`, and records `eta rho(A_eta)`
/// against `|w| = eta |zeta|`.
pub fn scan_two_by_two(cfg: &TwoByTwoScan, z_grid: &[f64]) -> Result<Vec<ScanRecord>> {
    if cfg.m < 2 {
        return Err(Error::invalid("the 2x2 scan needs m >= 2"));
    }
    let (zeta, eta) = cfg.zeta_eta()?;
    if z_grid.iter().any(|&z| !(z <= 0.0)) {
        return Err(Error::precondition("z grid must be nonpositive"));
    }
    let w_abs = eta * zeta.abs();
    let rows: Vec<Result<ScanRecord>> = par::map_slice(z_grid, |&z| {
        let lambda = z / eta;
        let sigma = cfg.sigma_factor * (lambda * zeta).sqrt();
        let a = DMatrix::from_row_slice(2, 2, &[zeta, sigma, sigma, lambda]);
        let split = build_masked_splitting(&a, &[false, true])?;
        let a_eta = averaged_matrix(&split, eta, cfg.m, cfg.damping)?;
        Ok(ScanRecord { abscissa: z, parameter: sigma, value: eta * dense_spectral_radius(&a_eta)?, threshold: w_abs })
    });
    rows.into_iter().collect()
}

/// For each `etabar`, picks the smallest `mbar` with `etabar rho_F <= beta_bar mbar^2`
/// (inner damping 0.1), and records `tau rho(Abar_eta)` against `beta s^2` at
/// `w = -etabar beta s^2 / tau`.
pub fn scan_splitting_stability(
    split: &MatrixSplitting,
    tau: f64,
    s: usize,
    damping: f64,
    etabar_grid: &[f64],
) -> Result<Vec<ScanRecord>> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    let beta = beta_for_damping(damping);
    let bs2 = beta * (s * s) as f64;
    let rho_s = dense_spectral_radius(&split.a_slow)?;
    let rho_f = dense_spectral_radius(&split.a_fast)?;
    if rho_s == 0.0 {
        return Err(Error::precondition("slow part is zero: the splitting is degenerate"));
    }
    if tau * rho_s > bs2 * (1.0 + REGION_SLACK) {
        return Err(Error::precondition(format!("tau rho_S <= beta s^2 violated: {} > {bs2}", tau * rho_s)));
    }
    let m_strict = {
        let need = 6.0 * tau * rho_f;
        let coef = beta * beta * (s * s) as f64;
        let mut m = 2usize;
        while coef * ((m * m - 1) as f64) < need {
            m += 1;
        }
        m
    };
    let eta_strict = 6.0 * tau / bs2 * ((m_strict * m_strict) as f64) / ((m_strict * m_strict - 1) as f64);
    if let Some(e) = etabar_grid.iter().find(|&&e| !(e > 0.0 && e <= eta_strict * (1.0 + REGION_SLACK))) {
        return Err(Error::precondition(format!("etabar grid must lie in (0, {eta_strict}], found {e}")));
    }
    let beta_bar = beta_for_damping(RELAXED_INNER_DAMPING);
    let rows: Vec<Result<ScanRecord>> = par::map_slice(etabar_grid, |&etabar| {
        let mbar = crate::integrators::smallest_stage_count(etabar * rho_f, beta_bar)?;
        let a_eta = averaged_matrix(split, etabar, mbar, RELAXED_INNER_DAMPING)?;
        Ok(ScanRecord {
            abscissa: -etabar * bs2 / tau,
            parameter: mbar as f64,
            value: tau * dense_spectral_radius(&a_eta)?,
            threshold: bs2,
        })
    });
    rows.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    pub c_fast: f64,
    pub rho_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedUp {
    /// Strict-mode speed-up over RKC.
    pub s: f64,
    /// Relaxed-mode speed-up over RKC.
    pub s_bar: f64,
    /// Largest `c_F` with `S > 1`.
    pub c_fast_max: f64,
}

/// Cost model with real-valued stage counts and no outer damping.
///
/// RKC needs `sqrt(tau (rho_F + rho_S)/2)` full evaluations. Strict mRKC needs
/// `s = sqrt(tau rho_S / 2)` outer and `m = sqrt(3 r + 1)` inner stages;
/// relaxed mRKC has `eta = 2/rho_S` and `m = max(1, sqrt(2 r / beta_bar))`.
pub fn speedup_model(inputs: CostInputs) -> Result<SpeedUp> {
    let CostInputs { c_fast: c, rho_ratio: r } = inputs;
    if !(0.0..=1.0).contains(&c) || !(r >= 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("need c_F in [0,1] and r >= 0, got ({c}, {r})")));
    }
    let root = (1.0 + r).sqrt();
    let s = root / (1.0 + c * ((1.0 + 3.0 * r).sqrt() - 1.0));
    let m_bar = (2.0 * r / beta_for_damping(RELAXED_INNER_DAMPING)).sqrt().max(1.0);
    let s_bar = root / ((1.0 - c) + c * m_bar);
    let c_fast_max = if r == 0.0 { 1.0 / 3.0 } else { (root - 1.0) / ((1.0 + 3.0 * r).sqrt() - 1.0) };
    Ok(SpeedUp { s, s_bar, c_fast_max })
}

/// Adaptive Simpson quadrature on `[a, b]`.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Gap between `y' = (lambda + zeta) y` and the modified equation
/// `y' = phi(eta lambda)(lambda + zeta) y` at time `t`, and the a priori bound
/// `max|1 - phi(eta lambda)| * int_0^t exp(mu_eta (t - s)) |f(y(s))| ds`
/// with `mu = max(lambda + zeta)` and `mu_eta = mu * min phi(eta lambda)`.
pub fn modified_eq_error_bound(lambda: &[f64], zeta: &[f64], eta: f64, t: f64, y0: &[f64]) -> Result<(f64, f64)> {
    let n = lambda.len();
    if zeta.len() != n || y0.len() != n || n == 0 {
        return Err(Error::invalid("lambda, zeta and y0 must have the same nonzero length"));
    }
    if lambda.iter().chain(zeta).any(|&v| !(v <= 0.0)) || !(eta >= 0.0) || !(t >= 0.0) {
        return Err(Error::invalid("need nonpositive eigenvalues, eta >= 0 and t >= 0"));
    }
    let full: Vec<f64> = lambda.iter().zip(zeta).map(|(l, z)| l + z).collect();
    let phis: Vec<f64> = lambda.iter().map(|&l| phi(eta * l)).collect();
    let gap = (0..n)
        .map(|i| {
            let d = y0[i] * ((full[i] * t).exp() - (phis[i] * full[i] * t).exp());
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let defect = phis.iter().map(|p| (1.0 - p).abs()).fold(0.0, f64::max);
    let mu = full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mu_eta = mu * phis.iter().copied().fold(f64::INFINITY, f64::min);
    if t == 0.0 || defect == 0.0 {
        return Ok((gap, 0.0));
    }
    let integrand = |s: f64| {
        let fy = (0..n).map(|i| (full[i] * y0[i] * (full[i] * s).exp()).powi(2)).sum::<f64>().sqrt();
        (mu_eta * (t - s)).exp() * fy
    };
    let scale = full.iter().zip(y0).map(|(f, y)| (f * y).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let integral = adaptive_simpson(&integrand, 0.0, t, 1e-13 * scale);
    Ok((gap, defect * integral))
}

/// Matrix form of [`modified_eq_error_bound`]; only diagonal splittings are supported.
pub fn modified_eq_error_bound_matrix(
    a_fast: &DMatrix<f64>,
    a_slow: &DMatrix<f64>,
    eta: f64,
    t: f64,
    y0: &[f64],
) -> Result<(f64, f64)> {
    let is_diag = |a: &DMatrix<f64>| a.is_square() && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == 0.0));
    if !is_diag(a_fast) || !is_diag(a_slow) {
        return Err(Error::Unsupported("error bound is only implemented for diagonal splittings".into()));
    }
    let lambda: Vec<f64> = a_fast.diagonal().iter().copied().collect();
    let zeta: Vec<f64> = a_slow.diagonal().iter().copied().collect();
    modified_eq_error_bound(&lambda, &zeta, eta, t, y0)
}

/// `P_m''(0) = T_m(v0) T_m''(v0) / T_m'(v0)^2` as a function of the inner `v0 = omega0`.
pub fn inner_curvature(m: usize, v0: f64) -> Result<f64> {
    let c = cheb_eval(m, v0)?;
    Ok(c.value * c.d2 / (c.d1 * c.d1))
}

/// True iff [`inner_curvature`] is non-decreasing along the grid.
pub fn check_ddr_monotone(m: usize, v0_grid: &[f64]) -> Result<bool> {
    if v0_grid.iter().any(|&v| !(v >= 1.0)) || v0_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::precondition("v0 grid must be increasing and >= 1"));
    }
    let vals = v0_grid.iter().map(|&v| inner_curvature(m, v)).collect::<Result<Vec<f64>>>()?;
    Ok(vals.windows(2).all(|w| w[1] >= w[0]))
}
