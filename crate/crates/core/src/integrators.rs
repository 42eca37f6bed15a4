//! RKC and multirate RKC (mRKC) steppers and the fixed-step integration loop.
//!
//! The right-hand side is split as `f = f_F + f_S`: `f_F` is cheap but may be
//! severely stiff, `f_S` is expensive and only mildly stiff. An mRKC step
//! integrates the modified equation `y' = fbar_eta(y)` with an `s`-stage RKC
//! method, and every evaluation of the averaged force `fbar_eta` is itself one
//! `m`-stage RKC step of length `eta` on `u' = f_F(u) + f_S(y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{power_iterate, PowerMethodConfig};
use crate::tableau::{beta_for_damping, ChebTableau};

/// Outer damping used throughout unless overridden.
pub const DEFAULT_DAMPING: f64 = 0.05;
/// Inner damping of the relaxed stage-selection rule.
pub const RELAXED_INNER_DAMPING: f64 = 0.1;

/// A right-hand side split into a fast part and a slow part.
pub trait SplitRhs {
    fn dim(&self) -> usize;
    fn eval_fast(&self, t: f64, y: &[f64], out: &mut [f64]);
    fn eval_slow(&self, t: f64, y: &[f64], out: &mut [f64]);

    /// Spectral radii of the Jacobians when they are known without a power method.
    fn spectral_radii(&self, _t: f64, _y: &[f64]) -> Option<SpectralEstimates> {
        None
    }
}

impl<P: SplitRhs + ?Sized> SplitRhs for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_fast(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (**self).eval_fast(t, y, out)
    }
    fn eval_slow(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (**self).eval_slow(t, y, out)
    }
    fn spectral_radii(&self, t: f64, y: &[f64]) -> Option<SpectralEstimates> {
        (**self).spectral_radii(t, y)
    }
}

impl<P: SplitRhs + ?Sized> SplitRhs for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_fast(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (**self).eval_fast(t, y, out)
    }
    fn eval_slow(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (**self).eval_slow(t, y, out)
    }
    fn spectral_radii(&self, t: f64, y: &[f64]) -> Option<SpectralEstimates> {
        (**self).spectral_radii(t, y)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub fast: u64,
    pub slow: u64,
}

/// A [`SplitRhs`] together with evaluation counters.
///
/// Evaluations made through this wrapper are counted; spectral-radius
/// estimation talks to the problem directly and is not.
#[derive(Debug, Clone)]
pub struct SplitSystem<P> {
    problem: P,
    counts: EvalCounts,
    scratch: Vec<f64>,
}

impl<P: SplitRhs> SplitSystem<P> {
    pub fn new(problem: P) -> Self {
        let n = problem.dim();
        SplitSystem { problem, counts: EvalCounts::default(), scratch: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn counts(&self) -> EvalCounts {
        self.counts
    }

    pub fn reset_counts(&mut self) {
        self.counts = EvalCounts::default();
    }

    pub fn eval_fast(&mut self, t: f64, y: &[f64], out: &mut [f64]) {
        self.counts.fast += 1;
        self.problem.eval_fast(t, y, out);
    }

    pub fn eval_slow(&mut self, t: f64, y: &[f64], out: &mut [f64]) {
        self.counts.slow += 1;
        self.problem.eval_slow(t, y, out);
    }

    /// `f = f_F + f_S`; counts as one fast and one slow evaluation.
    pub fn eval_full(&mut self, t: f64, y: &[f64], out: &mut [f64]) {
        self.counts.fast += 1;
        self.counts.slow += 1;
        self.problem.eval_fast(t, y, out);
        self.problem.eval_slow(t, y, &mut self.scratch);
        for (o, s) in out.iter_mut().zip(&self.scratch) {
            *o += s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Always-sufficient stage rule with `eta = 6 tau m^2 / (beta s^2 (m^2 - 1))`.
    Strict,
    /// Cheaper rule `eta = 2 tau / (beta s^2)` with inner damping 0.1.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rkc,
    Mrkc,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimates {
    pub rho_fast: f64,
    pub rho_slow: f64,
    /// Spectral radius of the full Jacobian, when known.
    pub rho_full: Option<f64>,
}

impl SpectralEstimates {
    pub fn new(rho_fast: f64, rho_slow: f64) -> Self {
        SpectralEstimates { rho_fast, rho_slow, rho_full: None }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.rho_fast) && ok(self.rho_slow) && self.rho_full.is_none_or(ok) {
            Ok(())
        } else {
            Err(Error::invalid(format!("spectral estimates must be finite and nonnegative: {self:?}")))
        }
    }

    /// Full spectral radius, falling back to `rho_fast + rho_slow`.
    pub fn full(&self) -> f64 {
        self.rho_full.unwrap_or(self.rho_fast + self.rho_slow)
    }
}

/// Stage counts and inner step length of one mRKC step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrkcParameters {
    pub s: usize,
    pub m: usize,
    /// Inner integration length. Zero means the averaged force is the plain `f`.
    pub eta: f64,
    pub tau: f64,
    pub mode: Mode,
    pub outer_damping: f64,
    pub inner_damping: f64,
}

impl MrkcParameters {
    pub fn outer_tableau(&self) -> Result<ChebTableau> {
        ChebTableau::new(self.s, self.outer_damping)
    }

    pub fn inner_tableau(&self) -> Result<ChebTableau> {
        ChebTableau::new(self.m, self.inner_damping)
    }
}

/// Upper bound on any stage count; a larger requirement means the step size is unusable.
pub const MAX_STAGES: usize = 100_000;

/// Smallest `k >= 1` with `x <= beta * k^2`.
pub fn smallest_stage_count(x: f64, beta: f64) -> Result<usize> {
    if !(x > 0.0) {
        return Ok(1);
    }
    let cap = MAX_STAGES as f64;
    if !(x <= beta * cap * cap) {
        return Err(Error::NumericOverflow(format!("stage count for x = {x:e} exceeds {MAX_STAGES}")));
    }
    let fits = |k: usize| beta * (k as f64) * (k as f64) >= x;
    let mut k = (x / beta).sqrt().ceil().max(1.0) as usize;
    while !fits(k) {
        k += 1;
    }
    while k > 1 && fits(k - 1) {
        k -= 1;
    }
    Ok(k)
}

/// Stage counts for RKC: smallest `s` with `tau * rho <= beta s^2`.
pub fn select_rkc_stages(tau: f64, rho: f64, damping: f64) -> Result<usize> {
    smallest_stage_count(tau * rho, beta_for_damping(damping))
}

/// Stage selection with the default inner damping of `mode`.
pub fn select_mrkc_parameters(tau: f64, est: &SpectralEstimates, mode: Mode, outer_damping: f64) -> Result<MrkcParameters> {
    let inner = match mode {
        Mode::Strict => outer_damping,
        Mode::Relaxed => RELAXED_INNER_DAMPING,
    };
    select_mrkc_parameters_with(tau, est, mode, outer_damping, inner)
}

pub fn select_mrkc_parameters_with(
    tau: f64,
    est: &SpectralEstimates,
    mode: Mode,
    outer_damping: f64,
    inner_damping: f64,
) -> Result<MrkcParameters> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {tau}")));
    }
    est.validate()?;
    let beta = beta_for_damping(outer_damping);
    let s = smallest_stage_count(tau * est.rho_slow, beta)?;
    let s2 = (s * s) as f64;
    let (m, eta) = match mode {
        Mode::Strict => {
            // 6 tau rho_F <= beta^2 s^2 (m^2 - 1)
            let need = 6.0 * tau * est.rho_fast;
            if need <= 0.0 {
                (1, 0.0)
            } else {
                let coef = beta * beta * s2;
                let fits = |m: usize| coef * ((m as f64) * (m as f64) - 1.0) >= need;
                if !fits(MAX_STAGES) {
                    return Err(Error::NumericOverflow(format!("inner stage count exceeds {MAX_STAGES}")));
                }
                let mut m = ((need / coef + 1.0).sqrt().ceil() as usize).max(2);
                while !fits(m) {
                    m += 1;
                }
                while m > 2 && fits(m - 1) {
                    m -= 1;
                }
                let m2 = (m * m) as f64;
                (m, 6.0 * tau / (beta * s2) * m2 / (m2 - 1.0))
            }
        }
        Mode::Relaxed => {
            let eta = 2.0 * tau / (beta * s2);
            (smallest_stage_count(eta * est.rho_fast, beta_for_damping(inner_damping))?, eta)
        }
    };
    Ok(MrkcParameters { s, m, eta, tau, mode, outer_damping, inner_damping })
}

fn check_finite(v: &[f64], time: f64, stage: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { time, stage })
    }
}

/// One RKC step of size `tau` for `y' = f(t, y)`.
///
/// Performs exactly `tableau.stages` evaluations of `rhs`. Stage `j` is
/// evaluated at `t + c_j tau`, the time the stage has reached.
pub fn rkc_step<F>(mut rhs: F, t: f64, y: &[f64], tau: f64, tableau: &ChebTableau) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut fk = vec![0.0; n];
    let mut k_prev = y.to_vec();
    rhs(t, &k_prev, &mut fk);
    let mut k_cur: Vec<f64> = k_prev.iter().zip(&fk).map(|(k, f)| k + tableau.mu[1] * tau * f).collect();
    check_finite(&k_cur, t, 1)?;

    let (mut c_prev, mut c_cur) = (0.0, tableau.mu[1]);
    for j in 2..=tableau.stages {
        let (nu, kappa, mu) = (tableau.nu[j], tableau.kappa[j], tableau.mu[j]);
        rhs(t + c_cur * tau, &k_cur, &mut fk);
        // k_prev <- k_j, then rotate so k_cur holds the newest stage
        for i in 0..n {
            k_prev[i] = nu * k_cur[i] + kappa * k_prev[i] + mu * tau * fk[i];
        }
        std::mem::swap(&mut k_prev, &mut k_cur);
        check_finite(&k_cur, t, j)?;
        let c_next = nu * c_cur + kappa * c_prev + mu;
        c_prev = c_cur;
        c_cur = c_next;
    }
    Ok(k_cur)
}

/// Runs the `m`-stage inner recurrence on `u' = f_F(u) + fs` over `[0, eta]`
/// starting from `y`, with `fs` the frozen slow force, and returns
/// `(u_eta - y) / eta`.
///
/// The increments `g_j = (u_j - y) / eta` are propagated instead of `u_j`,
/// which avoids the cancellation in `u_eta - y` and is exact algebra since
/// `nu_j + kappa_j = 1`.
fn inner_increment<P: SplitRhs>(
    sys: &mut SplitSystem<P>,
    t: f64,
    y: &[f64],
    fs: &[f64],
    eta: f64,
    inner: &ChebTableau,
) -> Result<Vec<f64>> {
    let n = y.len();
    let mut ff = vec![0.0; n];
    let mut u = vec![0.0; n];
    sys.eval_fast(t, y, &mut ff);
    let mut g_prev = vec![0.0; n];
    let mut g_cur: Vec<f64> = ff.iter().zip(fs).map(|(a, b)| inner.mu[1] * (a + b)).collect();
    check_finite(&g_cur, t, 1)?;
    for j in 2..=inner.stages {
        for i in 0..n {
            u[i] = y[i] + eta * g_cur[i];
        }
        sys.eval_fast(t, &u, &mut ff);
        let (nu, kappa, mu) = (inner.nu[j], inner.kappa[j], inner.mu[j]);
        for i in 0..n {
            g_prev[i] = nu * g_cur[i] + kappa * g_prev[i] + mu * (ff[i] + fs[i]);
        }
        std::mem::swap(&mut g_prev, &mut g_cur);
        check_finite(&g_cur, t, j)?;
    }
    Ok(g_cur)
}

/// The inner solution `u_eta`, one `m`-stage RKC step of length `eta` on the
/// auxiliary problem `u' = f_F(u) + f_S(y)`, `u(0) = y`.
pub fn inner_solve<P: SplitRhs>(
    sys: &mut SplitSystem<P>,
    t: f64,
    y: &[f64],
    params: &MrkcParameters,
    inner: &ChebTableau,
) -> Result<Vec<f64>> {
    let mut fs = vec![0.0; y.len()];
    sys.eval_slow(t, y, &mut fs);
    let g = inner_increment(sys, t, y, &fs, params.eta, inner)?;
    Ok(y.iter().zip(&g).map(|(a, b)| a + params.eta * b).collect())
}

/// Discrete averaged force `fbar_eta(y) = (u_eta - y) / eta`.
///
/// Costs one slow and `m` fast evaluations. With `m = 1` the inner step is
/// explicit Euler and the result is `f(y)` for every `eta`; `eta = 0` is
/// accepted in that case.
pub fn averaged_force<P: SplitRhs>(
    sys: &mut SplitSystem<P>,
    t: f64,
    y: &[f64],
    params: &MrkcParameters,
    inner: &ChebTableau,
) -> Result<Vec<f64>> {
    if inner.stages != params.m {
        return Err(Error::invalid(format!(
            "inner tableau has {} stages, parameters ask for {}",
            inner.stages, params.m
        )));
    }
    let mut fs = vec![0.0; y.len()];
    sys.eval_slow(t, y, &mut fs);
    if params.m == 1 && params.eta == 0.0 {
        let mut ff = vec![0.0; y.len()];
        sys.eval_fast(t, y, &mut ff);
        for (a, b) in ff.iter_mut().zip(&fs) {
            *a += b;
        }
        check_finite(&ff, t, 1)?;
        return Ok(ff);
    }
    if !(params.eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive when m > 1, got {}", params.eta)));
    }
    inner_increment(sys, t, y, &fs, params.eta, inner)
}

/// One mRKC step: the outer `s`-stage recurrence with every force replaced by
/// [`averaged_force`]. Exactly `s` slow and `s * m` fast evaluations.
pub fn mrkc_step<P: SplitRhs>(
    sys: &mut SplitSystem<P>,
    t: f64,
    y: &[f64],
    params: &MrkcParameters,
    outer: &ChebTableau,
    inner: &ChebTableau,
) -> Result<Vec<f64>> {
    if outer.stages != params.s {
        return Err(Error::invalid(format!(
            "outer tableau has {} stages, parameters ask for {}",
            outer.stages, params.s
        )));
    }
    let tau = params.tau;
    let n = y.len();
    let mut k_prev = y.to_vec();
    let fbar = averaged_force(sys, t, &k_prev, params, inner)?;
    let mut k_cur: Vec<f64> = k_prev.iter().zip(&fbar).map(|(k, f)| k + outer.mu[1] * tau * f).collect();
    check_finite(&k_cur, t, 1)?;
    let (mut c_prev, mut c_cur) = (0.0, outer.mu[1]);
    for j in 2..=outer.stages {
        let fbar = averaged_force(sys, t + c_cur * tau, &k_cur, params, inner)?;
        let (nu, kappa, mu) = (outer.nu[j], outer.kappa[j], outer.mu[j]);
        for i in 0..n {
            k_prev[i] = nu * k_cur[i] + kappa * k_prev[i] + mu * tau * fbar[i];
        }
        std::mem::swap(&mut k_prev, &mut k_cur);
        check_finite(&k_cur, t, j)?;
        let c_next = nu * c_cur + kappa * c_prev + mu;
        c_prev = c_cur;
        c_cur = c_next;
    }
    Ok(k_cur)
}

/// How spectral radii are obtained at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoPolicy {
    /// Nonlinear power method on `f_F`, `f_S` (mRKC) or `f` (RKC), warm-started
    /// from the previous step's direction.
    PowerMethod(PowerMethodConfig),
    /// [`SplitRhs::spectral_radii`]; fails if the problem does not provide them.
    Analytic,
    Fixed(SpectralEstimates),
}

impl Default for RhoPolicy {
    fn default() -> Self {
        RhoPolicy::PowerMethod(PowerMethodConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateConfig {
    pub method: Method,
    pub tau: f64,
    pub mode: Mode,
    pub damping: f64,
    /// Overrides the mode's default inner damping.
    pub inner_damping: Option<f64>,
    pub rho_policy: RhoPolicy,
    pub record_trajectory: bool,
}

impl IntegrateConfig {
    pub fn rkc(tau: f64) -> Self {
        IntegrateConfig {
            method: Method::Rkc,
            tau,
            mode: Mode::Strict,
            damping: DEFAULT_DAMPING,
            inner_damping: None,
            rho_policy: RhoPolicy::default(),
            record_trajectory: false,
        }
    }

    pub fn mrkc(tau: f64, mode: Mode) -> Self {
        IntegrateConfig { method: Method::Mrkc, mode, ..Self::rkc(tau) }
    }

    pub fn with_rho_policy(mut self, policy: RhoPolicy) -> Self {
        self.rho_policy = policy;
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn with_trajectory(mut self) -> Self {
        self.record_trajectory = true;
        self
    }
}

/// Per-step bookkeeping, one row of the stage-history output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time at the start of the step.
    pub t: f64,
    pub tau: f64,
    pub s: usize,
    /// Inner stages (mRKC only).
    pub m: Option<usize>,
    pub eta: Option<f64>,
    pub rho_fast: Option<f64>,
    pub rho_slow: Option<f64>,
    /// Full spectral radius (RKC only).
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub t_final: f64,
    pub y_final: Vec<f64>,
    /// Step start times and states plus the final point, when recording was requested.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub counts: EvalCounts,
}

/// Warm-start state for per-step power-method estimates.
#[derive(Default)]
struct RhoTracker {
    fast: Option<Vec<f64>>,
    slow: Option<Vec<f64>>,
    full: Option<Vec<f64>>,
}

fn estimate_part<F>(rhs: F, t: f64, y: &[f64], cfg: &PowerMethodConfig, warm: &mut Option<Vec<f64>>) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let est = power_iterate(rhs, t, y, cfg, warm.as_deref())?;
    *warm = Some(est.direction);
    Ok(est.estimate)
}

fn estimates_for_step<P: SplitRhs>(
    problem: &P,
    method: Method,
    policy: &RhoPolicy,
    t: f64,
    y: &[f64],
    tracker: &mut RhoTracker,
) -> Result<SpectralEstimates> {
    match policy {
        RhoPolicy::Fixed(e) => Ok(*e),
        RhoPolicy::Analytic => problem
            .spectral_radii(t, y)
            .ok_or_else(|| Error::Unsupported("problem provides no analytic spectral radii".into())),
        RhoPolicy::PowerMethod(cfg) => match method {
            Method::Mrkc => {
                let rho_fast = estimate_part(|t, y, o| problem.eval_fast(t, y, o), t, y, cfg, &mut tracker.fast)?;
                let rho_slow = estimate_part(|t, y, o| problem.eval_slow(t, y, o), t, y, cfg, &mut tracker.slow)?;
                Ok(SpectralEstimates::new(rho_fast, rho_slow))
            }
            Method::Rkc => {
                let n = y.len();
                let mut tmp = vec![0.0; n];
                let full = |t: f64, y: &[f64], o: &mut [f64]| {
                    problem.eval_fast(t, y, o);
                    problem.eval_slow(t, y, &mut tmp);
                    for (a, b) in o.iter_mut().zip(&tmp) {
                        *a += b;
                    }
                };
                let rho = estimate_part(full, t, y, cfg, &mut tracker.full)?;
                Ok(SpectralEstimates { rho_fast: f64::NAN, rho_slow: f64::NAN, rho_full: Some(rho) })
            }
        },
    }
}

/// Fixed-step integration from `t0` to `t_end`; the last step is shortened to land on `t_end`.
pub fn integrate<P: SplitRhs>(
    sys: &mut SplitSystem<P>,
    y0: &[f64],
    t0: f64,
    t_end: f64,
    cfg: &IntegrateConfig,
) -> Result<Solution> {
    if y0.len() != sys.dim() {
        return Err(Error::invalid(format!("initial state has length {}, system dimension is {}", y0.len(), sys.dim())));
    }
    if !(t_end > t0) {
        return Err(Error::invalid(format!("need t_end > t0, got [{t0}, {t_end}]")));
    }
    if !(cfg.tau > 0.0) || !cfg.tau.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {}", cfg.tau)));
    }
    let n_steps = (((t_end - t0) / cfg.tau) - 1e-9).ceil().max(1.0) as usize;
    let inner_damping = cfg.inner_damping.unwrap_or(match cfg.mode {
        Mode::Strict => cfg.damping,
        Mode::Relaxed => RELAXED_INNER_DAMPING,
    });

    let mut y = y0.to_vec();
    let mut tracker = RhoTracker::default();
    let mut steps = Vec::with_capacity(n_steps);
    let mut times = Vec::new();
    let mut states = Vec::new();

    for k in 0..n_steps {
        let t = t0 + k as f64 * cfg.tau;
        let h = if k + 1 == n_steps { t_end - t } else { cfg.tau };
        if cfg.record_trajectory {
            times.push(t);
            states.push(y.clone());
        }
        let est = estimates_for_step(sys.problem(), cfg.method, &cfg.rho_policy, t, &y, &mut tracker)?;
        let y_next = match cfg.method {
            Method::Rkc => {
                let rho = est.full();
                let s = select_rkc_stages(h, rho, cfg.damping)?;
                let tab = ChebTableau::new(s, cfg.damping)?;
                steps.push(StepRecord {
                    t,
                    tau: h,
                    s,
                    m: None,
                    eta: None,
                    rho_fast: None,
                    rho_slow: None,
                    rho: Some(rho),
                });
                rkc_step(|tt, yy, out| sys.eval_full(tt, yy, out), t, &y, h, &tab)
            }
            Method::Mrkc => {
                let params = select_mrkc_parameters_with(h, &est, cfg.mode, cfg.damping, inner_damping)?;
                let outer = params.outer_tableau()?;
                let inner = params.inner_tableau()?;
                steps.push(StepRecord {
                    t,
                    tau: h,
                    s: params.s,
                    m: Some(params.m),
                    eta: Some(params.eta),
                    rho_fast: Some(est.rho_fast),
                    rho_slow: Some(est.rho_slow),
                    rho: None,
                });
                mrkc_step(sys, t, &y, &params, &outer, &inner)
            }
        };
        y = match y_next {
            Ok(v) => v,
            Err(Error::BlowUp { stage, .. }) => return Err(Error::BlowUp { time: t, stage }),
            Err(e) => return Err(e),
        };
    }
    if cfg.record_trajectory {
        times.push(t_end);
        states.push(y.clone());
    }
    Ok(Solution { t_final: t_end, y_final: y, times, states, steps, counts: sys.counts() })
}

/// Classical fixed-step fourth-order Runge-Kutta, used to manufacture reference solutions.
pub fn rk4_reference<F>(mut rhs: F, y0: &[f64], t0: f64, t_end: f64, tau: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t_end > t0) || !(tau > 0.0) {
        return Err(Error::invalid("rk4 needs t_end > t0 and tau > 0"));
    }
    let n = y0.len();
    let n_steps = (((t_end - t0) / tau) - 1e-9).ceil().max(1.0) as usize;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for k in 0..n_steps {
        let t = t0 + k as f64 * tau;
        let h = if k + 1 == n_steps { t_end - t } else { tau };
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(&y, t, 4)?;
    }
    Ok(y)
}
