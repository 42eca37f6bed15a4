//! The four subcommands. Each builds a CSV table and a summary.

use anyhow::{bail, Context, Result};
use serde_json::json;

use mrkc::dense_spectral_radius;
use mrkc::experiments::{convergence_study, dyadic_steps, ProblemSpec, Reference};
use mrkc::integrators::{select_mrkc_parameters, DEFAULT_DAMPING};
use mrkc::problems::TestProblem;
use mrkc::stability_lab::{
    eta_lower_bound, linspace, log_negative_grid, max_violation, phi, phi_m, scan_phi_continuous, scan_phi_window,
    scan_scalar_stability, scan_splitting_stability, scan_two_by_two, speedup_model, CostInputs, ScalarScan, ScanRecord,
    TwoByTwoScan,
};
use mrkc::{integrate, ChebTableau, IntegrateConfig, Method, Mode, RhoPolicy, SplitRhs, SplitSystem};

use crate::args::{pick, ConvergenceArgs, FileConfig, MethodArg, ModeArg, ProblemArgs, RunArgs, ScanArgs, ScanKind, SpeedupArgs};
use crate::output::{num, Summary, Table};

/// Stability checks allow this much round-off above the threshold.
const SCAN_TOL: f64 = 1e-9;

pub struct Common {
    pub seed: Option<u64>,
    pub eps: f64,
    pub file: FileConfig,
}

pub struct Outcome {
    pub table: Table,
    pub summary: Summary,
}

/// Problem, method, mode and time interval after merging flags, file and defaults.
struct Setup {
    name: String,
    spec: ProblemSpec,
    method: Method,
    mode: Mode,
    t_end: f64,
    seed: Option<u64>,
    eps: f64,
}

impl Setup {
    fn resolve(p: &ProblemArgs, c: &Common) -> Result<Self> {
        let f = &c.file;
        let name = pick(p.problem.clone(), f.problem.clone(), "robertson".to_string());
        let mut spec = ProblemSpec::by_name(&name)?;
        if let ProblemSpec::Multirate { lambda, zeta } = &mut spec {
            *lambda = pick(p.lambda, f.lambda, *lambda);
            *zeta = pick(p.zeta, f.zeta, *zeta);
        } else if p.lambda.is_some() || p.zeta.is_some() {
            bail!(mrkc::Error::InvalidInput("--lambda and --zeta only apply to the multirate problem".into()));
        }
        let method = match pick(p.method, f.method, MethodArg::Mrkc) {
            MethodArg::Rkc => Method::Rkc,
            MethodArg::Mrkc => Method::Mrkc,
        };
        let default_mode = if matches!(spec, ProblemSpec::Heat(_)) { ModeArg::Relaxed } else { ModeArg::Strict };
        let mode = match pick(p.mode, f.mode, default_mode) {
            ModeArg::Strict => Mode::Strict,
            ModeArg::Relaxed => Mode::Relaxed,
        };
        let t_end = pick(p.t_end, f.t_end, spec.default_t_end());
        if !(t_end > 0.0 && t_end.is_finite()) {
            bail!(mrkc::Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
        }
        Ok(Setup { name, spec, method, mode, t_end, seed: c.seed, eps: c.eps })
    }

    fn config(&self, tau: f64) -> IntegrateConfig {
        let mut policy = self.spec.default_rho_policy();
        if let (RhoPolicy::PowerMethod(pm), Some(seed)) = (&mut policy, self.seed) {
            pm.seed = seed;
        }
        let base = match self.method {
            Method::Rkc => IntegrateConfig::rkc(tau),
            Method::Mrkc => IntegrateConfig::mrkc(tau, self.mode),
        };
        base.with_rho_policy(policy).with_damping(self.eps)
    }

    fn json(&self) -> serde_json::Value {
        json!({
            "problem": self.spec,
            "method": self.method,
            "mode": self.mode,
            "t_end": self.t_end,
            "eps": self.eps,
            "seed": self.seed,
        })
    }
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        bail!(mrkc::Error::InvalidInput("need at least one step size".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        bail!(mrkc::Error::InvalidInput(format!("step sizes must be positive, got {t}")));
    }
    Ok(())
}

fn default_taus(spec: &ProblemSpec) -> Vec<f64> {
    match spec {
        ProblemSpec::Robertson => dyadic_steps(2, 7),
        ProblemSpec::Multirate { .. } => dyadic_steps(3, 8),
        ProblemSpec::Heat(_) => dyadic_steps(4, 9),
        ProblemSpec::Intdiff(_) => dyadic_steps(3, 9),
    }
}

/// Parses `exact`, `rk4`, `rk4:<tau>` or `rkc:<tau>`. Plain `rk4` picks
/// `min(1e-4, 2 / rho)` using the full radius at the initial state when known.
fn parse_reference(text: &str, problem: &impl TestProblem) -> Result<Reference> {
    let bad = || mrkc::Error::InvalidInput(format!("bad reference '{text}', expected exact, rk4, rk4:<tau> or rkc:<tau>"));
    let step = |v: &str| -> Result<f64> {
        let tau: f64 = v.parse().map_err(|_| bad())?;
        if !(tau > 0.0 && tau.is_finite()) {
            bail!(bad());
        }
        Ok(tau)
    };
    Ok(match text.split_once(':') {
        None if text == "exact" => Reference::Exact,
        None if text == "rk4" => {
            let y0 = problem.initial_state();
            let rho = problem.spectral_radii(0.0, &y0).map(|e| e.full()).unwrap_or(0.0);
            let tau = if rho > 0.0 { (2.0 / rho).min(1e-4) } else { 1e-4 };
            Reference::Rk4 { tau }
        }
        Some(("rk4", v)) => Reference::Rk4 { tau: step(v)? },
        Some(("rkc", v)) => Reference::Rkc { tau: step(v)? },
        _ => bail!(bad()),
    })
}

fn default_reference(spec: &ProblemSpec) -> &'static str {
    match spec {
        ProblemSpec::Robertson => "rk4:1e-4",
        ProblemSpec::Multirate { .. } => "exact",
        ProblemSpec::Heat(_) => "rk4",
        ProblemSpec::Intdiff(_) => "rkc:6.103515625e-5",
    }
}

pub fn convergence(a: &ConvergenceArgs, c: &Common) -> Result<Outcome> {
    let setup = Setup::resolve(&a.problem, c)?;
    let f = &c.file;
    let taus = pick(a.tau.clone(), f.tau.clone().map(|t| t.into_vec()), default_taus(&setup.spec));
    check_taus(&taus)?;
    let problem = setup.spec.build()?;
    let ref_text = pick(a.reference.clone(), f.reference.clone(), default_reference(&setup.spec).to_string());
    let reference = parse_reference(&ref_text, &problem)?;

    let study = convergence_study(&problem, &setup.config(taus[0]), &taus, setup.t_end, reference)?;
    let mut table = Table::new(&["dt", "err", "s_mean", "m_mean", "eta_mean", "n_fast_evals", "n_slow_evals"]);
    let mut records = study.records.clone();
    records.sort_by(|x, y| x.dt.total_cmp(&y.dt));
    for r in &records {
        table.push(vec![
            num(r.dt),
            num(r.err),
            num(r.s_mean),
            num(r.m_mean),
            num(r.eta_mean),
            r.n_fast_evals.to_string(),
            r.n_slow_evals.to_string(),
        ]);
    }
    let order = study.observed_order;
    let mut params = setup.json();
    params["tau"] = json!(taus);
    params["reference"] = json!(reference);
    let text = format!(
        "convergence {} {:?} {:?}: observed order {:.3} over {} step sizes, smallest error {:.3e}",
        setup.name,
        setup.method,
        setup.mode,
        order,
        taus.len(),
        records.first().map_or(f64::NAN, |r| r.err),
    );
    let summary = Summary {
        command: "convergence".into(),
        parameters: params,
        pass: None,
        max_violation: None,
        observed_order: Some(order),
        results: None,
        text,
    };
    Ok(Outcome { table, summary })
}

pub fn run(a: &RunArgs, c: &Common) -> Result<Outcome> {
    let setup = Setup::resolve(&a.problem, c)?;
    let f = &c.file;
    let file_tau = match f.tau.clone().map(|t| t.into_vec()) {
        Some(v) if v.len() == 1 => Some(v[0]),
        Some(_) => bail!(mrkc::Error::InvalidInput("run takes a single tau".into())),
        None => None,
    };
    let tau = pick(a.tau, file_tau, default_taus(&setup.spec)[0]);
    check_taus(&[tau])?;
    let problem = setup.spec.build()?;
    let mut cfg = setup.config(tau);
    if a.states.is_some() {
        cfg = cfg.with_trajectory();
    }
    let y0 = problem.initial_state();
    let sol = integrate(&mut SplitSystem::new(&problem), &y0, 0.0, setup.t_end, &cfg)?;

    let opt = |v: Option<f64>| num(v.unwrap_or(f64::NAN));
    let table = match setup.method {
        Method::Mrkc => {
            let mut t = Table::new(&["t", "s", "m", "eta", "rhoF", "rhoS"]);
            for r in &sol.steps {
                t.push(vec![
                    num(r.t),
                    r.s.to_string(),
                    r.m.map_or_else(String::new, |m| m.to_string()),
                    opt(r.eta),
                    opt(r.rho_fast),
                    opt(r.rho_slow),
                ]);
            }
            t
        }
        Method::Rkc => {
            let mut t = Table::new(&["t", "s", "rho"]);
            for r in &sol.steps {
                t.push(vec![num(r.t), r.s.to_string(), opt(r.rho)]);
            }
            t
        }
    };
    if let Some(path) = &a.states {
        let mut header = vec!["t".to_string()];
        header.extend((0..problem.dim()).map(|i| format!("y{i}")));
        let mut traj = Table::new(&header);
        for (t, y) in sol.times.iter().zip(&sol.states) {
            let mut row = vec![num(*t)];
            row.extend(y.iter().map(|v| num(*v)));
            traj.push(row);
        }
        traj.write(Some(path)).with_context(|| format!("writing trajectory {}", path.display()))?;
    }

    let mut params = setup.json();
    params["tau"] = json!(tau);
    let results = json!({
        "t_final": sol.t_final,
        "steps": sol.steps.len(),
        "fast_evals": sol.counts.fast,
        "slow_evals": sol.counts.slow,
        "y_final": sol.y_final,
    });
    let text = format!(
        "run {} {:?} {:?}: {} steps to t = {}, {} fast / {} slow evaluations",
        setup.name,
        setup.method,
        setup.mode,
        sol.steps.len(),
        sol.t_final,
        sol.counts.fast,
        sol.counts.slow
    );
    let summary = Summary {
        command: "run".into(),
        parameters: params,
        pass: None,
        max_violation: None,
        observed_order: None,
        results: Some(results),
        text,
    };
    Ok(Outcome { table, summary })
}

pub fn speedup(a: &SpeedupArgs, c: &Common) -> Result<Outcome> {
    let f = &c.file;
    let n = pick(a.cf_points, f.cf_points, 11);
    if n < 2 {
        bail!(mrkc::Error::InvalidInput("need at least two c_F points".into()));
    }
    let ratios = pick(a.ratios.clone(), f.ratios.clone(), vec![1.0, 4.0, 10.0, 100.0, 1000.0]);
    let mut rows = Vec::new();
    for &r in &ratios {
        for c_fast in linspace(0.0, 1.0, n) {
            let sp = speedup_model(CostInputs { c_fast, rho_ratio: r })?;
            rows.push((c_fast, r, sp));
        }
    }
    rows.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut table = Table::new(&["c_fast", "rho_ratio", "s", "s_bar", "c_fast_max"]);
    for (cf, r, sp) in &rows {
        table.push(vec![num(*cf), num(*r), num(sp.s), num(sp.s_bar), num(sp.c_fast_max)]);
    }
    let best = rows.iter().map(|x| x.2.s.max(x.2.s_bar)).fold(f64::NEG_INFINITY, f64::max);
    let summary = Summary {
        command: "speedup".into(),
        parameters: json!({ "cf_points": n, "ratios": ratios }),
        pass: None,
        max_violation: None,
        observed_order: None,
        results: None,
        text: format!("speedup: {} rows, largest speed-up {best:.4}", rows.len()),
    };
    Ok(Outcome { table, summary })
}

fn scan_table(mut recs: Vec<ScanRecord>) -> Table {
    recs.sort_by(|a, b| a.abscissa.total_cmp(&b.abscissa).then(a.parameter.total_cmp(&b.parameter)));
    let mut table = Table::new(&["abscissa", "parameter", "value", "threshold"]);
    for r in &recs {
        table.push(vec![num(r.abscissa), num(r.parameter), num(r.value), num(r.threshold)]);
    }
    table
}

pub fn scan(a: &ScanArgs, c: &Common) -> Result<Outcome> {
    let f = &c.file;
    let kind = a.kind.or(f.scan).unwrap_or(ScanKind::TwoByTwo);
    let points = pick(a.points, f.points, 200);
    if points < 2 {
        bail!(mrkc::Error::InvalidInput("need at least two grid points".into()));
    }
    let eps = c.eps;
    let (recs, params, label) = match kind {
        ScanKind::Scalar => {
            let s = pick(a.s, f.s, 10);
            let m = pick(a.m, f.m, 8);
            let tau = pick(a.tau, f.tau.clone().map(|t| t.into_vec()[0]), 1.0);
            let ell_s = ChebTableau::new(s, eps)?.ell;
            let ell_m = ChebTableau::new(m, eps)?.ell;
            let eta = pick(a.eta, f.eta, eta_lower_bound(tau, ell_s, m));
            let cfg = ScalarScan { s, m, outer_damping: eps, inner_damping: eps, tau, eta };
            let zeta = linspace(-ell_s / tau, 0.0, points);
            let lambda = linspace(-ell_m / eta, 0.0, points);
            let recs = scan_scalar_stability(&cfg, &zeta, &lambda)?;
            (recs, json!(cfg), "|R_sm| <= 1")
        }
        ScanKind::PhiWindow => {
            let m = pick(a.m, f.m, 8);
            let m2 = (m * m) as f64;
            let w = pick(a.w, f.w, -6.0 * m2 / (m2 - 1.0));
            if !(w < 0.0) {
                bail!(mrkc::Error::InvalidInput(format!("w must be negative, got {w}")));
            }
            let ell_m = ChebTableau::new(m, eps)?.ell;
            let grid = linspace(-ell_m, 0.0, points);
            let mut recs = Vec::with_capacity(points);
            for &z in &grid {
                let v = z * phi_m(m, eps, z)?;
                // Inside the window means w <= v <= 0; the signed distance outside is max(w - v, v).
                recs.push(ScanRecord { abscissa: z, parameter: w, value: (w - v).max(v), threshold: 0.0 });
            }
            let (lo, hi) = scan_phi_window(m, eps, w, &grid)?;
            (recs, json!({ "m": m, "eps": eps, "w": w, "min": lo, "max": hi }), "w <= z Phi_m(z) <= 0")
        }
        ScanKind::PhiContinuous => {
            let eta = pick(a.eta, f.eta, 1.0);
            let zeta = pick(a.zeta, f.zeta, -2.0);
            if !(eta > 0.0 && zeta < 0.0) {
                bail!(mrkc::Error::InvalidInput("need eta > 0 and zeta < 0".into()));
            }
            let grid = log_negative_grid(1e-6, 1e6, points);
            let mut recs = Vec::with_capacity(grid.len());
            for &lambda in &grid {
                let v = phi(eta * lambda) * (lambda + zeta);
                recs.push(ScanRecord { abscissa: lambda, parameter: zeta, value: (zeta - v).max(v), threshold: 0.0 });
            }
            let ok = scan_phi_continuous(eta, zeta, &grid)?;
            (recs, json!({ "eta": eta, "zeta": zeta, "inside": ok }), "zeta <= phi(eta lambda)(lambda + zeta) <= 0")
        }
        ScanKind::TwoByTwo => {
            let d = TwoByTwoScan::default();
            let cfg = TwoByTwoScan {
                s: pick(a.s, f.s, d.s),
                m: pick(a.m, f.m, d.m),
                damping: eps,
                tau: pick(a.tau, f.tau.clone().map(|t| t.into_vec()[0]), d.tau),
                sigma_factor: pick(a.sigma_factor, f.sigma_factor, d.sigma_factor),
                eta_factor: pick(a.eta_factor, f.eta_factor, d.eta_factor),
            };
            let ell_m = cfg.inner_ell()?;
            let grid = linspace(-ell_m, 0.0, points);
            (scan_two_by_two(&cfg, &grid)?, json!(cfg), "eta rho(A_eta) <= eta |zeta|")
        }
        ScanKind::Splitting => {
            let name = pick(None, f.problem.clone(), "heat".to_string());
            let ProblemSpec::Heat(hc) = ProblemSpec::by_name(&name)? else {
                bail!(mrkc::Error::InvalidInput("the splitting scan uses the heat problem".into()));
            };
            let heat = mrkc::problems::refined_heat_1d(hc)?;
            let split = heat.splitting()?;
            let tau = pick(a.tau, f.tau.clone().map(|t| t.into_vec()[0]), 0.1);
            let est = mrkc::SpectralEstimates::new(
                dense_spectral_radius(&split.a_fast)?,
                dense_spectral_radius(&split.a_slow)?,
            );
            let p = select_mrkc_parameters(tau, &est, Mode::Strict, eps)?;
            let beta = ChebTableau::new(p.s, eps)?.beta;
            let lo = 2.0 * tau / (beta * (p.s * p.s) as f64);
            let grid = linspace(lo.min(p.eta), p.eta, points);
            let recs = scan_splitting_stability(&split, tau, p.s, eps, &grid)?;
            let params = json!({ "problem": name, "tau": tau, "s": p.s, "eps": eps, "rho_fast": est.rho_fast,
                "rho_slow": est.rho_slow, "eta_strict": p.eta });
            (recs, params, "tau rho(Abar_eta) <= beta s^2")
        }
    };
    let worst = max_violation(&recs);
    let max_v = worst.map(|r| r.violation());
    let pass = max_v.is_none_or(|v| v <= SCAN_TOL * worst.map_or(1.0, |r| r.threshold.abs().max(1.0)));
    let kind_name = serde_json::to_value(kind)?.as_str().unwrap_or_default().to_string();
    let text = format!(
        "scan {kind_name}: {} points, {label}: {}, max violation {:.3e}{}",
        recs.len(),
        if pass { "holds" } else { "violated" },
        max_v.unwrap_or(f64::NAN),
        worst.map_or_else(String::new, |r| format!(" at abscissa {:.6e}", r.abscissa)),
    );
    let mut parameters = params;
    parameters["scan"] = json!(kind_name);
    parameters["points"] = json!(points);
    let summary = Summary {
        command: "scan".into(),
        parameters,
        pass: Some(pass),
        max_violation: max_v,
        observed_order: None,
        results: None,
        text,
    };
    Ok(Outcome { table: scan_table(recs), summary })
}

pub fn default_eps(file: &FileConfig, flag: Option<f64>) -> Result<f64> {
    let eps = pick(flag, file.eps, DEFAULT_DAMPING);
    if !(eps >= 0.0 && eps.is_finite()) {
        bail!(mrkc::Error::InvalidInput(format!("eps must be nonnegative, got {eps}")));
    }
    Ok(eps)
}
