//! Convergence studies, stage histories and the problem registry used by the
//! command-line driver and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{
    integrate, rk4_reference, IntegrateConfig, Method, RhoPolicy, Solution, SpectralEstimates, SplitRhs, SplitSystem,
};
use crate::par;
use crate::problems::{
    integro_differential_system, multirate_test_system, refined_heat_1d, robertson_system, IntegroDiff, IntegroDiffConfig,
    MultirateTest, RefinedHeat1D, RefinedHeat1DConfig, Robertson, TestProblem,
};

/// Any of the registered test problems.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Robertson(Robertson),
    Multirate(MultirateTest),
    Heat(Box<RefinedHeat1D>),
    IntDiff(Box<IntegroDiff>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ProblemSpec {
    Robertson,
    Multirate { lambda: f64, zeta: f64 },
    Heat(RefinedHeat1DConfig),
    Intdiff(IntegroDiffConfig),
}

impl ProblemSpec {
    pub const NAMES: [&'static str; 4] = ["robertson", "multirate", "heat", "intdiff"];

    /// Default configuration for a problem name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "robertson" => Ok(ProblemSpec::Robertson),
            "multirate" => Ok(ProblemSpec::Multirate { lambda: -1e4, zeta: -1.0 }),
            "heat" => Ok(ProblemSpec::Heat(RefinedHeat1DConfig::default())),
            "intdiff" => Ok(ProblemSpec::Intdiff(IntegroDiffConfig::default())),
            other => Err(Error::invalid(format!("unknown problem '{other}', expected one of {:?}", Self::NAMES))),
        }
    }

    pub fn build(&self) -> Result<AnyProblem> {
        Ok(match *self {
            ProblemSpec::Robertson => AnyProblem::Robertson(robertson_system()),
            ProblemSpec::Multirate { lambda, zeta } => AnyProblem::Multirate(multirate_test_system(lambda, zeta)?),
            ProblemSpec::Heat(cfg) => AnyProblem::Heat(Box::new(refined_heat_1d(cfg)?)),
            ProblemSpec::Intdiff(cfg) => AnyProblem::IntDiff(Box::new(integro_differential_system(cfg)?)),
        })
    }

    /// Time interval used when none is given.
    pub fn default_t_end(&self) -> f64 {
        match self {
            ProblemSpec::Robertson => 100.0,
            ProblemSpec::Multirate { .. } => 1.0,
            ProblemSpec::Heat(_) => 0.5,
            ProblemSpec::Intdiff(_) => 1.0,
        }
    }

    /// How spectral radii are obtained by default: Robertson uses the power
    /// method, the others have exact or bounding values.
    pub fn default_rho_policy(&self) -> RhoPolicy {
        match self {
            ProblemSpec::Robertson => RhoPolicy::default(),
            _ => RhoPolicy::Analytic,
        }
    }
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            AnyProblem::Robertson($p) => $body,
            AnyProblem::Multirate($p) => $body,
            AnyProblem::Heat($p) => $body,
            AnyProblem::IntDiff($p) => $body,
        }
    };
}

impl SplitRhs for AnyProblem {
    fn dim(&self) -> usize {
        dispatch!(self, p => p.dim())
    }
    fn eval_fast(&self, t: f64, y: &[f64], out: &mut [f64]) {
        dispatch!(self, p => p.eval_fast(t, y, out))
    }
    fn eval_slow(&self, t: f64, y: &[f64], out: &mut [f64]) {
        dispatch!(self, p => p.eval_slow(t, y, out))
    }
    fn spectral_radii(&self, t: f64, y: &[f64]) -> Option<SpectralEstimates> {
        dispatch!(self, p => p.spectral_radii(t, y))
    }
}

impl TestProblem for AnyProblem {
    fn name(&self) -> &'static str {
        dispatch!(self, p => p.name())
    }
    fn initial_state(&self) -> Vec<f64> {
        dispatch!(self, p => p.initial_state())
    }
    fn error_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        dispatch!(self, p => p.error_norm(a, b))
    }
    fn exact_solution(&self, t: f64) -> Option<Vec<f64>> {
        dispatch!(self, p => p.exact_solution(t))
    }
}

/// Source of the reference solution in a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reference {
    /// Classical RK4 on `f_F + f_S` with the given step.
    Rk4 { tau: f64 },
    /// RKC with the given step and the study's spectral-radius policy.
    Rkc { tau: f64 },
    /// The problem's exact solution.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub dt: f64,
    pub err: f64,
    pub s_mean: f64,
    /// Mean inner stages; NaN for RKC.
    pub m_mean: f64,
    /// Mean inner step; NaN for RKC.
    pub eta_mean: f64,
    pub n_fast_evals: u64,
    pub n_slow_evals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub records: Vec<ConvergenceRecord>,
    pub observed_order: f64,
    pub reference: Vec<f64>,
    pub finals: Vec<Vec<f64>>,
}

/// Least-squares slope of `log err` against `log dt`.
pub fn observed_order(records: &[ConvergenceRecord]) -> f64 {
    let pts: Vec<(f64, f64)> = records.iter().filter(|r| r.err > 0.0).map(|r| (r.dt.ln(), r.err.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn reference_solution<P: TestProblem + Sync>(
    problem: &P,
    t_end: f64,
    reference: Reference,
    base: &IntegrateConfig,
) -> Result<Vec<f64>> {
    let y0 = problem.initial_state();
    match reference {
        Reference::Exact => problem
            .exact_solution(t_end)
            .ok_or_else(|| Error::Unsupported(format!("problem '{}' has no exact solution", problem.name()))),
        Reference::Rk4 { tau } => {
            let n = problem.dim();
            let mut tmp = vec![0.0; n];
            rk4_reference(
                |t, y, out| {
                    problem.eval_fast(t, y, out);
                    problem.eval_slow(t, y, &mut tmp);
                    out.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
                },
                &y0,
                0.0,
                t_end,
                tau,
            )
        }
        Reference::Rkc { tau } => {
            let cfg = IntegrateConfig { method: Method::Rkc, tau, record_trajectory: false, ..*base };
            Ok(integrate(&mut SplitSystem::new(problem), &y0, 0.0, t_end, &cfg)?.y_final)
        }
    }
}

pub fn summarize(dt: f64, err: f64, sol: &Solution) -> ConvergenceRecord {
    ConvergenceRecord {
        dt,
        err,
        s_mean: mean(sol.steps.iter().map(|s| s.s as f64)),
        m_mean: mean(sol.steps.iter().filter_map(|s| s.m.map(|m| m as f64))),
        eta_mean: mean(sol.steps.iter().filter_map(|s| s.eta)),
        n_fast_evals: sol.counts.fast,
        n_slow_evals: sol.counts.slow,
    }
}

/// Runs `base` at every step size in `taus` (independently, in parallel when
/// enabled) and measures final-time errors against `reference`.
pub fn convergence_study<P: TestProblem + Sync>(
    problem: &P,
    base: &IntegrateConfig,
    taus: &[f64],
    t_end: f64,
    reference: Reference,
) -> Result<ConvergenceStudy> {
    if taus.is_empty() {
        return Err(Error::invalid("need at least one step size"));
    }
    let y_ref = reference_solution(problem, t_end, reference, base)?;
    let y0 = problem.initial_state();
    let runs: Vec<Result<(ConvergenceRecord, Vec<f64>)>> = par::map_slice(taus, |&tau| {
        let cfg = IntegrateConfig { tau, record_trajectory: false, ..*base };
        let sol = integrate(&mut SplitSystem::new(problem), &y0, 0.0, t_end, &cfg)?;
        let err = problem.error_norm(&sol.y_final, &y_ref);
        Ok((summarize(tau, err, &sol), sol.y_final))
    });
    let mut records = Vec::with_capacity(taus.len());
    let mut finals = Vec::with_capacity(taus.len());
    for r in runs {
        let (rec, y) = r?;
        records.push(rec);
        finals.push(y);
    }
    let observed_order = observed_order(&records);
    Ok(ConvergenceStudy { records, observed_order, reference: y_ref, finals })
}

/// `tau = 2^-k` for `k` in `lo..=hi`.
pub fn dyadic_steps(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k)).collect()
}

/// True if `seq` never increases (`non_increasing`) or never decreases.
pub fn is_monotone(seq: &[usize], non_increasing: bool) -> bool {
    seq.windows(2).all(|w| if non_increasing { w[1] <= w[0] } else { w[1] >= w[0] })
}
