//! Test problems as split right-hand sides, plus the masked row splitting of
//! linear operators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{SpectralEstimates, SplitRhs};
use crate::spectral::dense_spectral_radius;

use std::f64::consts::PI;

/// Extra information attached to a test problem.
pub trait TestProblem: SplitRhs {
    fn name(&self) -> &'static str;
    fn initial_state(&self) -> Vec<f64>;
    /// Norm in which errors are reported: max norm for ODEs, grid-weighted L2 for PDEs.
    fn error_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
    fn exact_solution(&self, _t: f64) -> Option<Vec<f64>> {
        None
    }
}

fn check_len(a: &[f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
}

/// Robertson's chemical kinetics with only `-1e4 y2 y3` in the fast part.
#[derive(Debug, Clone, Copy, Default)]
pub struct Robertson;

pub fn robertson_system() -> Robertson {
    Robertson
}

impl Robertson {
    pub fn full_rhs(&self, y: &[f64], out: &mut [f64]) {
        out[0] = -0.04 * y[0] + 1e4 * y[1] * y[2];
        out[1] = 0.04 * y[0] - 1e4 * y[1] * y[2] - 3e7 * y[1] * y[1];
        out[2] = 3e7 * y[1] * y[1];
    }
}

impl SplitRhs for Robertson {
    fn dim(&self) -> usize {
        3
    }
    fn eval_fast(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = -1e4 * y[1] * y[2];
        out[2] = 0.0;
    }
    fn eval_slow(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        out[0] = -0.04 * y[0] + 1e4 * y[1] * y[2];
        out[1] = 0.04 * y[0] - 3e7 * y[1] * y[1];
        out[2] = 3e7 * y[1] * y[1];
    }
}

impl TestProblem for Robertson {
    fn name(&self) -> &'static str {
        "robertson"
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![1.0, 2e-5, 1e-1]
    }
}

/// Scalar `y' = lambda y + zeta y` with `lambda y` fast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultirateTest {
    pub lambda: f64,
    pub zeta: f64,
    pub y0: f64,
}

pub fn multirate_test_system(lambda: f64, zeta: f64) -> Result<MultirateTest> {
    if !(lambda <= 0.0 && zeta <= 0.0) || !lambda.is_finite() || !zeta.is_finite() {
        return Err(Error::invalid(format!("need lambda, zeta <= 0, got ({lambda}, {zeta})")));
    }
    Ok(MultirateTest { lambda, zeta, y0: 1.0 })
}

impl SplitRhs for MultirateTest {
    fn dim(&self) -> usize {
        1
    }
    fn eval_fast(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        out[0] = self.lambda * y[0];
    }
    fn eval_slow(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        out[0] = self.zeta * y[0];
    }
    fn spectral_radii(&self, _t: f64, _y: &[f64]) -> Option<SpectralEstimates> {
        Some(SpectralEstimates {
            rho_fast: self.lambda.abs(),
            rho_slow: self.zeta.abs(),
            rho_full: Some((self.lambda + self.zeta).abs()),
        })
    }
}

impl TestProblem for MultirateTest {
    fn name(&self) -> &'static str {
        "multirate"
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![self.y0]
    }
    fn exact_solution(&self, t: f64) -> Option<Vec<f64>> {
        Some(vec![self.y0 * ((self.lambda + self.zeta) * t).exp()])
    }
}

/// Row partition `A = D A + (I - D) A` of a linear operator.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSplitting {
    pub a: DMatrix<f64>,
    pub a_fast: DMatrix<f64>,
    pub a_slow: DMatrix<f64>,
    pub mask: Vec<bool>,
}

pub fn build_masked_splitting(a: &DMatrix<f64>, mask: &[bool]) -> Result<MatrixSplitting> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(format!("matrix must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if mask.len() != a.nrows() {
        return Err(Error::invalid(format!("mask has length {}, matrix has {} rows", mask.len(), a.nrows())));
    }
    let mut a_fast = DMatrix::zeros(a.nrows(), a.ncols());
    let mut a_slow = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, &fast) in mask.iter().enumerate() {
        let target = if fast { &mut a_fast } else { &mut a_slow };
        target.row_mut(i).copy_from(&a.row(i));
    }
    Ok(MatrixSplitting { a: a.clone(), a_fast, a_slow, mask: mask.to_vec() })
}

/// `y' = A_F y + A_S y` for a [`MatrixSplitting`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSplit {
    pub split: MatrixSplitting,
}

impl LinearSplit {
    pub fn new(split: MatrixSplitting) -> Self {
        LinearSplit { split }
    }
}

fn matvec(a: &DMatrix<f64>, y: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.row(i).iter().zip(y).map(|(x, v)| x * v).sum();
    }
}

impl SplitRhs for LinearSplit {
    fn dim(&self) -> usize {
        self.split.a.nrows()
    }
    fn eval_fast(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        matvec(&self.split.a_fast, y, out);
    }
    fn eval_slow(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        matvec(&self.split.a_slow, y, out);
    }
}

/// The 2x2 model `A = [[zeta, sigma], [sigma, lambda]]` with the second row fast.
pub fn two_by_two_system(lambda: f64, zeta: f64, sigma: f64) -> Result<(MatrixSplitting, LinearSplit)> {
    if !(lambda <= 0.0 && zeta <= 0.0) {
        return Err(Error::invalid(format!("need lambda, zeta <= 0, got ({lambda}, {zeta})")));
    }
    if !(sigma * sigma <= lambda * zeta) {
        return Err(Error::invalid(format!("sigma^2 = {} exceeds lambda*zeta = {}", sigma * sigma, lambda * zeta)));
    }
    let a = DMatrix::from_row_slice(2, 2, &[zeta, sigma, sigma, lambda]);
    let split = build_masked_splitting(&a, &[false, true])?;
    Ok((split.clone(), LinearSplit::new(split)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedHeat1DConfig {
    /// Coarse spacing `H`; `1/H` must be an integer.
    pub coarse_spacing: f64,
    /// Each level halves the spacing inside the fine region.
    pub refine_levels: u32,
    pub fine_region: (f64, f64),
}

impl Default for RefinedHeat1DConfig {
    fn default() -> Self {
        RefinedHeat1DConfig { coarse_spacing: 1.0 / 32.0, refine_levels: 2, fine_region: (0.25, 0.75) }
    }
}

/// `u_t = u_xx + g` on (0,1), zero Dirichlet data, on a piecewise-uniform
/// grid refined inside `fine_region`. The source is built so that
/// `u = sin(pi x) sin(pi t)^2` solves the continuous problem.
///
/// The fast part holds the rows of refined nodes and their direct
/// neighbours; the slow part holds the remaining rows and the source.
#[derive(Debug, Clone)]
pub struct RefinedHeat1D {
    pub config: RefinedHeat1DConfig,
    /// Interior node coordinates.
    pub nodes: Vec<f64>,
    /// Quadrature weights `(h_left + h_right) / 2`.
    pub weights: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    pub mask: Vec<bool>,
    radii: SpectralEstimates,
}

pub fn refined_heat_1d(config: RefinedHeat1DConfig) -> Result<RefinedHeat1D> {
    let h_coarse = config.coarse_spacing;
    let n_coarse = (1.0 / h_coarse).round();
    if !(h_coarse > 0.0) || (n_coarse * h_coarse - 1.0).abs() > 1e-12 || n_coarse < 4.0 {
        return Err(Error::invalid(format!("1/H must be an integer >= 4, got H = {h_coarse}")));
    }
    if config.refine_levels > 12 {
        return Err(Error::invalid("at most 12 refinement levels"));
    }
    let (a, b) = config.fine_region;
    if !(0.0 < a && a < b && b < 1.0) {
        return Err(Error::invalid(format!("fine region must lie strictly inside (0,1), got ({a}, {b})")));
    }
    let n_coarse = n_coarse as usize;
    // snap the region to coarse nodes
    let ka = ((a / h_coarse).round() as usize).max(1);
    let kb = ((b / h_coarse).round() as usize).min(n_coarse - 1);
    if ka >= kb {
        return Err(Error::invalid("fine region contains no coarse cell"));
    }
    let sub = 1usize << config.refine_levels;
    let h_fine = h_coarse / sub as f64;

    let mut x = vec![0.0];
    let mut refined = vec![false];
    for k in 0..n_coarse {
        let inside = k >= ka && k < kb;
        if inside {
            for j in 1..=sub {
                x.push(k as f64 * h_coarse + j as f64 * h_fine);
                refined.push(true);
            }
            // the cell's left endpoint is a refined-element node as well
            let left = refined.len() - sub - 1;
            refined[left] = true;
        } else {
            x.push((k + 1) as f64 * h_coarse);
            refined.push(false);
        }
    }
    let n_all = x.len();
    let n = n_all - 2;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let g = i + 1;
        let hl = x[g] - x[g - 1];
        let hr = x[g + 1] - x[g];
        let c = 2.0 / (hl + hr);
        lower[i] = c / hl;
        upper[i] = c / hr;
        diag[i] = -(lower[i] + upper[i]);
        weights[i] = 0.5 * (hl + hr);
    }
    // refined nodes and their direct neighbours
    let mut mask_all = refined.clone();
    for g in 0..n_all {
        if refined[g] {
            if g > 0 {
                mask_all[g - 1] = true;
            }
            if g + 1 < n_all {
                mask_all[g + 1] = true;
            }
        }
    }
    let mask = mask_all[1..n_all - 1].to_vec();

    let mut heat = RefinedHeat1D {
        config,
        nodes: x[1..n_all - 1].to_vec(),
        weights,
        lower,
        diag,
        upper,
        mask,
        radii: SpectralEstimates::default(),
    };
    let split = heat.splitting()?;
    heat.radii = SpectralEstimates {
        rho_fast: dense_spectral_radius(&split.a_fast)?,
        rho_slow: dense_spectral_radius(&split.a_slow)?,
        rho_full: Some(dense_spectral_radius(&split.a)?),
    };
    Ok(heat)
}

impl RefinedHeat1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            if i > 0 {
                a[(i, i - 1)] = self.lower[i];
            }
            if i + 1 < n {
                a[(i, i + 1)] = self.upper[i];
            }
        }
        a
    }

    pub fn splitting(&self) -> Result<MatrixSplitting> {
        build_masked_splitting(&self.matrix(), &self.mask)
    }

    pub fn radii(&self) -> SpectralEstimates {
        self.radii
    }

    pub fn source(&self, t: f64, x: f64) -> f64 {
        let st = (PI * t).sin();
        (PI * x).sin() * (PI * (2.0 * PI * t).sin() + PI * PI * st * st)
    }

    pub fn exact(&self, t: f64, x: f64) -> f64 {
        let st = (PI * t).sin();
        (PI * x).sin() * st * st
    }

    fn apply_rows(&self, y: &[f64], out: &mut [f64], fast: bool) {
        let n = self.len();
        for i in 0..n {
            if self.mask[i] != fast {
                out[i] = 0.0;
                continue;
            }
            let mut v = self.diag[i] * y[i];
            if i > 0 {
                v += self.lower[i] * y[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * y[i + 1];
            }
            out[i] = v;
        }
    }
}

impl SplitRhs for RefinedHeat1D {
    fn dim(&self) -> usize {
        self.len()
    }
    fn eval_fast(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        self.apply_rows(y, out, true);
    }
    fn eval_slow(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.apply_rows(y, out, false);
        for (o, &x) in out.iter_mut().zip(&self.nodes) {
            *o += self.source(t, x);
        }
    }
    fn spectral_radii(&self, _t: f64, _y: &[f64]) -> Option<SpectralEstimates> {
        Some(self.radii)
    }
}

impl TestProblem for RefinedHeat1D {
    fn name(&self) -> &'static str {
        "heat"
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.len()]
    }
    fn error_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        check_len(a, b);
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * (x - y) * (x - y)).sum::<f64>().sqrt()
    }
    fn exact_solution(&self, t: f64) -> Option<Vec<f64>> {
        Some(self.nodes.iter().map(|&x| self.exact(t, x)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegroDiffConfig {
    pub n_cells: usize,
    pub sigma: f64,
}

impl Default for IntegroDiffConfig {
    fn default() -> Self {
        IntegroDiffConfig { n_cells: 100, sigma: 0.01 }
    }
}

/// `u_t = u_xx - sigma * int_0^1 u(s)^4 / (1 + |x - s|)^2 ds` on a uniform grid
/// with `u(t,0) = 1 - sqrt(t)/2` and `u_x(t,1) = 0`. Unknowns live at
/// `x_i = i/N`, `i = 1..N`. The Laplacian is fast and the integral term slow.
#[derive(Debug, Clone)]
pub struct IntegroDiff {
    pub config: IntegroDiffConfig,
    h: f64,
    /// `kernel[i][j]` for unknown `i` against grid node `j = 0..N`, trapezoid weight included.
    kernel: Vec<Vec<f64>>,
}

pub fn integro_differential_system(config: IntegroDiffConfig) -> Result<IntegroDiff> {
    if config.n_cells < 4 {
        return Err(Error::invalid(format!("need at least 4 cells, got {}", config.n_cells)));
    }
    if !config.sigma.is_finite() {
        return Err(Error::invalid("sigma must be finite"));
    }
    let n = config.n_cells;
    let h = 1.0 / n as f64;
    let kernel = (1..=n)
        .map(|i| {
            (0..=n)
                .map(|j| {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    let d = 1.0 + (i as f64 - j as f64).abs() * h;
                    w * h / (d * d)
                })
                .collect()
        })
        .collect();
    Ok(IntegroDiff { config, h, kernel })
}

impl IntegroDiff {
    pub fn boundary_value(t: f64) -> f64 {
        1.0 - t.max(0.0).sqrt() / 2.0
    }

    pub fn kernel(x: f64, s: f64) -> f64 {
        let d = 1.0 + (x - s).abs();
        1.0 / (d * d)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.config.n_cells).map(|i| i as f64 * self.h).collect()
    }

    /// Spectral radius of the discrete Laplacian with one Dirichlet and one Neumann end.
    pub fn laplacian_radius(&self) -> f64 {
        let n = self.config.n_cells as f64;
        let s = ((2.0 * n - 1.0) * PI / (4.0 * n)).sin();
        4.0 * s * s / (self.h * self.h)
    }

    /// Max-row-sum bound on the integral term's Jacobian.
    pub fn slow_radius_bound(&self, t: f64, y: &[f64]) -> f64 {
        let _ = t;
        let sigma = self.config.sigma.abs();
        self.kernel
            .iter()
            .map(|row| {
                // the boundary node is data, not an unknown
                row.iter().skip(1).zip(y).map(|(k, u)| 4.0 * k * u.abs().powi(3)).sum::<f64>()
            })
            .fold(0.0, f64::max)
            * sigma
    }
}

impl SplitRhs for IntegroDiff {
    fn dim(&self) -> usize {
        self.config.n_cells
    }
    fn eval_fast(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let n = y.len();
        let h2 = self.h * self.h;
        let u0 = Self::boundary_value(t);
        for i in 0..n {
            let left = if i == 0 { u0 } else { y[i - 1] };
            // mirrored ghost node at x = 1 + h
            let right = if i + 1 == n { y[n - 2] } else { y[i + 1] };
            out[i] = (left - 2.0 * y[i] + right) / h2;
        }
    }
    fn eval_slow(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let u0 = Self::boundary_value(t);
        let u0_4 = u0.powi(4);
        let p: Vec<f64> = y.iter().map(|u| u.powi(4)).collect();
        for (o, row) in out.iter_mut().zip(&self.kernel) {
            let s: f64 = row[0] * u0_4 + row[1..].iter().zip(&p).map(|(k, v)| k * v).sum::<f64>();
            *o = -self.config.sigma * s;
        }
    }
    fn spectral_radii(&self, t: f64, y: &[f64]) -> Option<SpectralEstimates> {
        let rho_fast = self.laplacian_radius();
        let rho_slow = self.slow_radius_bound(t, y);
        Some(SpectralEstimates { rho_fast, rho_slow, rho_full: Some(rho_fast + rho_slow) })
    }
}

impl TestProblem for IntegroDiff {
    fn name(&self) -> &'static str {
        "intdiff"
    }
    fn initial_state(&self) -> Vec<f64> {
        self.nodes().iter().map(|x| (x * PI / 2.0).cos().powi(2)).collect()
    }
    fn error_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        check_len(a, b);
        let n = a.len();
        let s: f64 = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| if i + 1 == n { 0.5 } else { 1.0 } * (x - y) * (x - y))
            .sum();
        (self.h * s).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn robertson_split_values() {
        let r = robertson_system();
        let y0 = r.initial_state();
        let mut out = [0.0; 3];
        r.eval_fast(0.0, &y0, &mut out);
        assert_eq!(out, [0.0, -1e4 * 2e-5 * 1e-1, 0.0]);
        r.eval_slow(0.0, &[1.0, 0.0, 0.0], &mut out);
        assert_eq!(out, [-0.04, 0.04, 0.0]);
    }

    #[test]
    fn robertson_full_rhs_conserves_mass() {
        let r = robertson_system();
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let y = [next(), next() * 1e-4, next()];
            let (mut ff, mut fs, mut f) = ([0.0; 3], [0.0; 3], [0.0; 3]);
            r.eval_fast(0.0, &y, &mut ff);
            r.eval_slow(0.0, &y, &mut fs);
            r.full_rhs(&y, &mut f);
            let sum: f64 = ff.iter().zip(&fs).map(|(a, b)| a + b).sum();
            assert!(sum.abs() <= 1e-12 * (1.0 + 1e4 * y[1] * y[2] + 3e7 * y[1] * y[1]));
            for i in 0..3 {
                assert!((ff[i] + fs[i] - f[i]).abs() <= 1e-15 * (1.0 + f[i].abs() + fs[i].abs()));
            }
            // the fast part alone removes 1e4 y2 y3 of mass and the slow part puts it back
            let fast_sum: f64 = ff.iter().sum();
            assert_eq!(fast_sum, -1e4 * y[1] * y[2]);
        }
    }

    #[test]
    fn multirate_values_and_errors() {
        let p = multirate_test_system(-100.0, -1.0).unwrap();
        let mut o = [0.0];
        p.eval_fast(0.0, &[2.0], &mut o);
        assert_eq!(o[0], -200.0);
        p.eval_slow(0.0, &[2.0], &mut o);
        assert_eq!(o[0], -2.0);
        assert_eq!(p.exact_solution(1.0).unwrap()[0], (-101.0f64).exp());
        assert!(multirate_test_system(1.0, -1.0).is_err());
        assert!(multirate_test_system(-1.0, 0.5).is_err());
    }

    #[test]
    fn two_by_two_structure() {
        let (s, _) = two_by_two_system(-100.0, -4.0, 0.0).unwrap();
        assert_eq!(s.a_fast, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -100.0]));
        let (s, _) = two_by_two_system(-100.0, -4.0, 2.0).unwrap();
        assert_eq!(&s.a_fast + &s.a_slow, s.a);
        assert_eq!(s.a_slow.row(0), s.a.row(0));
        assert_eq!(s.a_fast.row(1), s.a.row(1));
        assert!(two_by_two_system(-100.0, -4.0, 20.1).is_err());
    }

    #[test]
    fn masked_splitting_extremes() {
        let a = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 - 7.5);
        let s = build_masked_splitting(&a, &[false; 4]).unwrap();
        assert_eq!(s.a_slow, a);
        assert_eq!(s.a_fast, DMatrix::zeros(4, 4));
        let s = build_masked_splitting(&a, &[true; 4]).unwrap();
        assert_eq!(s.a_fast, a);
        assert!(build_masked_splitting(&a, &[true; 3]).is_err());
    }

    proptest! {
        #[test]
        fn masked_splitting_is_exact_partition(
            entries in proptest::collection::vec(-1e3f64..1e3, 25),
            mask in proptest::collection::vec(any::<bool>(), 5),
        ) {
            let a = DMatrix::from_row_slice(5, 5, &entries);
            let s = build_masked_splitting(&a, &mask).unwrap();
            prop_assert_eq!(&s.a_fast + &s.a_slow, a.clone());
            for (i, &fast) in mask.iter().enumerate() {
                let zero_row = if fast { s.a_slow.row(i) } else { s.a_fast.row(i) };
                prop_assert!(zero_row.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn heat_uniform_limit_is_standard_laplacian() {
        let cfg = RefinedHeat1DConfig { coarse_spacing: 1.0 / 16.0, refine_levels: 0, fine_region: (0.25, 0.75) };
        let heat = refined_heat_1d(cfg).unwrap();
        let a = heat.matrix();
        let h = 1.0 / 16.0;
        assert_eq!(a.nrows(), 15);
        for i in 0..15 {
            assert!((a[(i, i)] + 2.0 / (h * h)).abs() < 1e-9);
            if i > 0 {
                assert!((a[(i, i - 1)] - 1.0 / (h * h)).abs() < 1e-9);
            }
        }
        assert!((&a - a.transpose()).amax() < 1e-9);
        let s = (15.0 * PI / 32.0).sin();
        let exact = 4.0 * s * s / (h * h);
        assert!((heat.radii().rho_full.unwrap() - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn heat_two_levels_radius_ratio() {
        let heat = refined_heat_1d(RefinedHeat1DConfig::default()).unwrap();
        let r = heat.radii();
        let ratio = r.rho_fast / r.rho_slow;
        assert!((8.0..=24.0).contains(&ratio), "ratio {ratio}");
        let split = heat.splitting().unwrap();
        assert_eq!(&split.a_fast + &split.a_slow, split.a);
        // mask is the refined nodes plus one neighbour on each side
        let first = heat.mask.iter().position(|&m| m).unwrap();
        let last = heat.mask.iter().rposition(|&m| m).unwrap();
        assert!((heat.nodes[first] - (0.25 - 1.0 / 32.0)).abs() < 1e-12);
        assert!((heat.nodes[last] - (0.75 + 1.0 / 32.0)).abs() < 1e-12);
        assert!(heat.mask[first..=last].iter().all(|&m| m));
    }

    #[test]
    fn heat_initial_state_and_source() {
        let heat = refined_heat_1d(RefinedHeat1DConfig::default()).unwrap();
        assert!(heat.initial_state().iter().all(|&v| v == 0.0));
        assert_eq!(heat.exact_solution(0.0).unwrap(), heat.initial_state());
        assert!(heat.nodes.iter().all(|&x| heat.source(0.0, x).is_finite()));
        assert!(refined_heat_1d(RefinedHeat1DConfig { fine_region: (0.0, 0.5), ..Default::default() }).is_err());
        assert!(refined_heat_1d(RefinedHeat1DConfig { fine_region: (0.6, 0.5), ..Default::default() }).is_err());
    }

    #[test]
    fn heat_operator_consistency() {
        // second order away from interfaces, first order at them
        let errs: Vec<(f64, f64)> = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
            .iter()
            .map(|&hc| {
                let heat = refined_heat_1d(RefinedHeat1DConfig { coarse_spacing: hc, ..Default::default() }).unwrap();
                let u: Vec<f64> = heat.nodes.iter().map(|&x| (PI * x).sin()).collect();
                let mut lu = vec![0.0; u.len()];
                let mut tmp = vec![0.0; u.len()];
                heat.apply_rows(&u, &mut lu, true);
                heat.apply_rows(&u, &mut tmp, false);
                let mut smooth = 0.0f64;
                let mut all = 0.0f64;
                for i in 0..u.len() {
                    let e = (lu[i] + tmp[i] + PI * PI * u[i]).abs();
                    all = all.max(e);
                    let x = heat.nodes[i];
                    if (x - 0.25).abs() > 0.1 && (x - 0.75).abs() > 0.1 {
                        smooth = smooth.max(e);
                    }
                }
                (smooth, all)
            })
            .collect();
        for w in errs.windows(2) {
            let smooth_rate = (w[0].0 / w[1].0).log2();
            let all_rate = (w[0].1 / w[1].1).log2();
            assert!(smooth_rate > 1.8, "{smooth_rate} {errs:?}");
            assert!(all_rate > 0.8, "{all_rate}");
        }
    }

    #[test]
    fn integro_basics() {
        let p = integro_differential_system(IntegroDiffConfig { n_cells: 10, sigma: 0.0 }).unwrap();
        let y = p.initial_state();
        let mut out = vec![1.0; 10];
        p.eval_slow(0.0, &y, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(IntegroDiff::kernel(0.3, 0.3), 1.0);
        assert!(integro_differential_system(IntegroDiffConfig { n_cells: 3, sigma: 0.01 }).is_err());
        assert_eq!(y.len(), 10);
        assert!((y[9] - 0.0).abs() < 1e-15);
    }

    fn integral_oracle(x: f64) -> f64 {
        // composite Simpson on a very fine grid
        let n = 20_000;
        let h = 1.0 / n as f64;
        let g = |s: f64| (s * PI / 2.0).cos().powi(8) * IntegroDiff::kernel(x, s);
        let mut acc = g(0.0) + g(1.0);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn integro_slow_part_matches_fine_quadrature() {
        // the trapezoid error should fall by about four per halving
        let mut prev: Option<f64> = None;
        for n in [20, 40, 80, 160] {
            let p = integro_differential_system(IntegroDiffConfig { n_cells: n, sigma: 0.01 }).unwrap();
            let y = p.initial_state();
            let mut out = vec![0.0; n];
            p.eval_slow(0.0, &y, &mut out);
            let err = p
                .nodes()
                .iter()
                .zip(&out)
                .map(|(&x, &v)| (v + 0.01 * integral_oracle(x)).abs())
                .fold(0.0, f64::max);
            if let Some(e) = prev {
                let rate = (e / err).log2();
                assert!((1.8..2.3).contains(&rate), "n={n} rate {rate}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn integro_laplacian_radius_closed_form() {
        let p = integro_differential_system(IntegroDiffConfig { n_cells: 16, sigma: 0.01 }).unwrap();
        let n = 16;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut out = vec![0.0; n];
            // a large t keeps the boundary contribution out of the column
            let shifted = IntegroDiff::boundary_value(4.0);
            assert_eq!(shifted, 0.0);
            p.eval_fast(4.0, &e, &mut out);
            out[i]
        });
        let r = dense_spectral_radius(&a).unwrap();
        assert!((r - p.laplacian_radius()).abs() < 1e-8 * r, "{r} vs {}", p.laplacian_radius());
    }
}
