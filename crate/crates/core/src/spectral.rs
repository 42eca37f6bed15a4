//! Spectral-radius estimation.
//!
//! [`estimate_spectral_radius`] is a nonlinear power method driven only by
//! right-hand-side evaluations (Jacobian-vector products by forward
//! differences). [`dense_spectral_radius`] handles explicit matrices for the
//! stability laboratory.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const START_SEED: u64 = 0x5eed_cafe;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerMethodConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Fixed finite-difference increment. `None` selects `sqrt(eps) * (1 + |y|)`.
    pub perturbation: Option<f64>,
    /// Multiplier applied to the converged estimate.
    pub safety: f64,
    /// Seed of the pseudo-random start vector.
    pub seed: u64,
}

impl Default for PowerMethodConfig {
    fn default() -> Self {
        PowerMethodConfig { max_iters: 50, rel_tol: 1e-2, perturbation: None, safety: 1.1, seed: START_SEED }
    }
}

impl PowerMethodConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.rel_tol > 0.0) || !(self.safety >= 1.0) {
            return Err(Error::invalid(format!("bad power method configuration {self:?}")));
        }
        if let Some(d) = self.perturbation {
            if !(d > 0.0) {
                return Err(Error::invalid("perturbation must be positive"));
            }
        }
        Ok(())
    }
}

/// Outcome of one power-method run.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    /// Converged `|J u|` before the safety factor.
    pub raw: f64,
    /// `safety * raw`.
    pub estimate: f64,
    pub iterations: usize,
    /// Last unit direction; feeding it back as a start vector warm-starts the next estimate.
    pub direction: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn seeded_unit_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Nonlinear power method on `v <- [f(t, y + delta u) - f(t, y)] / delta`.
///
/// The products are orthogonalised as they arrive (Arnoldi), and the estimate
/// after `k` products is the largest Ritz value modulus of the `k x k`
/// projected matrix. The first estimate equals the plain power-method one;
/// later ones converge much faster when the top of the spectrum is clustered.
/// Stops when two consecutive estimates agree to `rel_tol`, after
/// `max_iters` products, or when the Krylov space becomes invariant.
///
/// `start` seeds the iteration; otherwise a fixed-seed pseudo-random unit vector is used.
pub fn power_iterate<F>(
    mut rhs: F,
    t: f64,
    y: &[f64],
    cfg: &PowerMethodConfig,
    start: Option<&[f64]>,
) -> Result<PowerEstimate>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("empty state vector"));
    }
    let delta = cfg.perturbation.unwrap_or_else(|| f64::EPSILON.sqrt() * (1.0 + norm2(y)));

    let mut f0 = vec![0.0; n];
    rhs(t, y, &mut f0);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::EstimationFailed("right-hand side not finite at the base point".into()));
    }

    let mut yp = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut jv = |u: &[f64], iteration: usize| -> Result<Vec<f64>> {
        for i in 0..n {
            yp[i] = y[i] + delta * u[i];
        }
        rhs(t, &yp, &mut fp);
        if fp.iter().any(|v| !v.is_finite()) {
            return Err(Error::EstimationFailed(format!(
                "right-hand side not finite at perturbed point (iteration {iteration})"
            )));
        }
        Ok(fp.iter().zip(&f0).map(|(a, b)| (a - b) / delta).collect())
    };

    let mut q0 = match start {
        Some(s) if s.len() == n && norm2(s) > 0.0 && s.iter().all(|v| v.is_finite()) => {
            let nrm = norm2(s);
            s.iter().map(|v| v / nrm).collect()
        }
        _ => seeded_unit_vector(n, cfg.seed),
    };

    // first product, with reseeding while the response is identically zero
    let mut iterations = 0;
    let mut zero_hits = 0;
    let mut w = loop {
        iterations += 1;
        let w = jv(&q0, iterations)?;
        if norm2(&w) > 0.0 {
            break w;
        }
        zero_hits += 1;
        if zero_hits >= 3 || iterations >= cfg.max_iters {
            return Ok(PowerEstimate { raw: 0.0, estimate: 0.0, iterations, direction: q0 });
        }
        q0 = seeded_unit_vector(n, cfg.seed.wrapping_add(zero_hits as u64));
    };

    let kmax = cfg.max_iters.min(n);
    let mut basis: Vec<Vec<f64>> = vec![q0];
    let mut h = DMatrix::<f64>::zeros(kmax + 1, kmax);
    let mut prev = f64::NAN;
    let mut rho;
    let mut k = 0;
    loop {
        let wnorm = norm2(&w);
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c: f64 = q.iter().zip(&w).map(|(a, b)| a * b).sum();
                h[(i, k)] += c;
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let beta = norm2(&w);
        h[(k + 1, k)] = beta;
        k += 1;

        rho = ritz_radius(&h.view((0, 0), (k, k)).into_owned());
        let converged = (rho - prev).abs() <= cfg.rel_tol * rho;
        let invariant = beta <= 1e-10 * wnorm.max(rho);
        if converged || invariant || k >= kmax || iterations >= cfg.max_iters {
            break;
        }
        prev = rho;
        let q: Vec<f64> = w.iter().map(|v| v / beta).collect();
        iterations += 1;
        w = jv(&q, iterations)?;
        basis.push(q);
    }

    let direction = ritz_direction(&h.view((0, 0), (k, k)).into_owned(), &basis).unwrap_or_else(|| basis[0].clone());
    Ok(PowerEstimate { raw: rho, estimate: cfg.safety * rho, iterations, direction })
}

fn ritz_values(h: &DMatrix<f64>) -> Option<Vec<nalgebra::Complex<f64>>> {
    let schur = nalgebra::linalg::Schur::try_new(h.clone(), 1e-14, 10_000)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

fn ritz_radius(h: &DMatrix<f64>) -> f64 {
    match h.nrows() {
        1 => h[(0, 0)].abs(),
        2 => spectral_radius_2x2(h),
        _ => match ritz_values(h) {
            Some(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
            None => h.norm(),
        },
    }
}

/// Real vector in the invariant subspace of the dominant Ritz value(s),
/// mapped back to full space; used to warm-start the next estimate.
fn ritz_direction(h: &DMatrix<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let k = h.nrows();
    let z = if k == 1 {
        DVector::from_element(1, 1.0)
    } else {
        let ev = ritz_values(h)?;
        let top = ev.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
        let scale = top.norm().max(f64::MIN_POSITIVE);
        let id = DMatrix::<f64>::identity(k, k);
        let m = if top.im.abs() <= 1e-8 * scale {
            h - &id * (top.re + 1e-10 * scale)
        } else {
            let s = h - &id * top.re;
            &s * &s + &id * (top.im * top.im + 1e-10 * scale * scale)
        };
        let lu = m.lu();
        let mut z = DVector::from_element(k, 1.0);
        for _ in 0..2 {
            z = lu.solve(&z)?;
            let nz = z.norm();
            if !(nz.is_finite() && nz > 0.0) {
                return None;
            }
            z /= nz;
        }
        z
    };
    let n = basis[0].len();
    let mut v = vec![0.0; n];
    for (zi, q) in z.iter().zip(basis) {
        v.iter_mut().zip(q).for_each(|(a, b)| *a += zi * b);
    }
    let nv = norm2(&v);
    (nv > 0.0 && nv.is_finite()).then(|| v.into_iter().map(|x| x / nv).collect())
}

/// Estimated spectral radius of the Jacobian of `rhs` at `(t, y)`, safety factor included.
pub fn estimate_spectral_radius<F>(rhs: F, t: f64, y: &[f64], cfg: &PowerMethodConfig) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    power_iterate(rhs, t, y, cfg, None).map(|e| e.estimate)
}

/// Largest eigenvalue modulus of a 2x2 matrix from the characteristic polynomial.
fn spectral_radius_2x2(a: &DMatrix<f64>) -> f64 {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation in the smaller root; the larger one is |half| + r
        half.abs() + r
    } else {
        det.abs().sqrt()
    }
}

/// Spectral radius of a dense square matrix.
///
/// Dimensions 1 and 2 use closed forms. Larger matrices run a power iteration
/// that also fits `x_{k+1} = a x_k + b x_{k-1}` to catch a dominant complex
/// pair (modulus `sqrt(-b)`); if neither estimate settles, the Gelfand limit
/// `|A^(2^k)|^(1/2^k)` is computed by repeated squaring. Reliable when the
/// dominant eigenvalue is real or a single conjugate pair.
pub fn dense_spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(format!("matrix must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    match a.nrows() {
        0 => Ok(0.0),
        1 => Ok(a[(0, 0)].abs()),
        2 => Ok(spectral_radius_2x2(a)),
        _ => {
            if a.amax() == 0.0 {
                return Ok(0.0);
            }
            match power_with_pair_fit(a) {
                Some(r) => Ok(r),
                None => Ok(gelfand_radius(a)),
            }
        }
    }
}

const DENSE_MAX_ITERS: usize = 4000;
const DENSE_TOL: f64 = 1e-13;
const DENSE_SETTLE: usize = 8;

fn power_with_pair_fit(a: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    let mut x0 = DVector::from_vec(seeded_unit_vector(n, START_SEED));
    let mut x1 = a * &x0;
    let n1 = x1.norm();
    if n1 == 0.0 {
        return None;
    }
    x1 /= n1;
    // x1 = A x0 / n1
    let mut scale_prev = n1;
    let mut real_prev = f64::NAN;
    let mut pair_prev = f64::NAN;
    let mut real_settled = 0usize;
    let mut pair_settled = 0usize;

    for _ in 0..DENSE_MAX_ITERS {
        let mut x2 = a * &x1;
        let n2 = x2.norm();
        if n2 == 0.0 || !n2.is_finite() {
            return None;
        }
        // Fit A x1 ≈ p x1 + q (scale_prev x0) in least squares, i.e. the
        // unnormalised sequence obeys x_{k+1} = p x_k + q' x_{k-1}.
        let x0s = &x0 * (1.0 / scale_prev);
        // columns: x1, x0s  -> solve 2x2 normal equations
        let g11 = x1.dot(&x1);
        let g12 = x1.dot(&x0s);
        let g22 = x0s.dot(&x0s);
        let r1 = x1.dot(&x2);
        let r2 = x0s.dot(&x2);
        let det = g11 * g22 - g12 * g12;
        let pair = if det.abs() > 1e-10 * g11 * g22 {
            let p = (r1 * g22 - r2 * g12) / det;
            let q = (g11 * r2 - g12 * r1) / det;
            let resid = (&x2 - &x1 * p - &x0s * q).norm() / n2;
            let disc = p * p + 4.0 * q;
            if resid < 1e-10 && disc < 0.0 {
                Some((-q).sqrt())
            } else {
                None
            }
        } else {
            None
        };
        let real = n2;

        if (real - real_prev).abs() <= DENSE_TOL * real {
            real_settled += 1;
        } else {
            real_settled = 0;
        }
        match pair {
            Some(pr) if (pr - pair_prev).abs() <= DENSE_TOL * pr => pair_settled += 1,
            _ => pair_settled = 0,
        }
        if let Some(pr) = pair {
            pair_prev = pr;
        }
        real_prev = real;

        if real_settled >= DENSE_SETTLE {
            // a settled norm ratio means a dominant real eigenvalue
            let rayleigh = x1.dot(&x2).abs();
            return Some(real.max(rayleigh));
        }
        if pair_settled >= DENSE_SETTLE {
            return Some(pair_prev);
        }

        x2 /= n2;
        x0 = x1;
        x1 = x2;
        scale_prev = n2;
    }
    None
}

fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    // |A^(2^k)|^(1/2^k) with the matrix renormalised after each squaring;
    // log_scale accumulates the removed factors.
    let mut b = a.clone();
    let mut log_scale = 0.0f64;
    let mut power = 1.0f64;
    let mut prev = f64::INFINITY;
    for _ in 0..64 {
        let nb = b.norm();
        if nb == 0.0 {
            return 0.0;
        }
        let est = ((nb.ln() + log_scale) / power).exp();
        if (est - prev).abs() <= 1e-14 * est {
            return est;
        }
        prev = est;
        b /= nb;
        log_scale = 2.0 * (log_scale + nb.ln());
        b = &b * &b;
        power *= 2.0;
    }
    prev
}
