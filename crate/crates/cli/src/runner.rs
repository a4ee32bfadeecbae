//! Executes a scenario and writes its artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use critsds_core::conjugation::{self, Conjugator, IntervalPhi};
use critsds_core::engine::{self, Interval};
use critsds_core::group;
use critsds_core::maps::{self, FamilySpec};
use critsds_core::measure::{self, LogBinnedMeasure, LOW_COUNT};
use critsds_core::parallel;
use critsds_core::reflected::{self, ReflectedSpec};
use critsds_core::renewal::{self, PoissonConfig, StepLaw, CENSOR_WARN};
use critsds_core::rng::{derive_seed, stream};
use critsds_core::synthetic;
use critsds_core::Dist;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Diagnostic, MeasureConfig, MeasureSel, ScenarioConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not enough data to decide.
    Inconclusive,
    /// Reported values without a pass/fail rule.
    Info,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticResult {
    pub check: &'static str,
    pub seed: u64,
    pub status: Status,
    /// One-line digest for the summary table.
    pub headline: String,
    pub report: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureSummary {
    pub which: MeasureSel,
    pub bins: usize,
    pub total_steps: u64,
    pub recorded: u64,
    pub under: u64,
    pub over: u64,
    pub out_of_range_fraction: f64,
    pub coverage_flag: bool,
    pub reference_mass: f64,
}

impl MeasureSummary {
    fn of(which: MeasureSel, m: &LogBinnedMeasure) -> Self {
        MeasureSummary {
            which,
            bins: m.counts.len(),
            total_steps: m.total_steps,
            recorded: m.recorded(),
            under: m.under,
            over: m.over,
            out_of_range_fraction: m.out_of_range_fraction(),
            coverage_flag: m.coverage_flag(),
            reference_mass: m.reference_mass(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub scenario: String,
    pub target: String,
    pub status: Status,
    /// Wall-clock seconds since the Unix epoch; the only field that differs
    /// between reruns.
    pub timestamp: u64,
    pub measures: Vec<MeasureSummary>,
    pub diagnostics: Vec<DiagnosticResult>,
    /// The effective configuration (seed and `--quick` applied); rerunning it
    /// reproduces this output.
    pub config: ScenarioConfig,
    #[serde(skip)]
    pub natural: Option<LogBinnedMeasure>,
    #[serde(skip)]
    pub conjugated: Option<LogBinnedMeasure>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub quick: bool,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

/// Runs `config` and returns every report. Results do not depend on the
/// thread count.
pub fn run(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, CliError> {
    let mut cfg = if opts.quick { config.quick() } else { config.clone() };
    if let Some(s) = opts.seed {
        cfg.engine.seed = s;
    }
    cfg.validate()?;
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
            pool.install(|| execute(cfg))
        }
        None => execute(cfg),
    }
}

fn execute(cfg: ScenarioConfig) -> Result<RunOutput, CliError> {
    let (natural, conjugated) = build_measures(&cfg)?;
    let mut measures = Vec::new();
    if let Some(m) = &natural {
        measures.push(MeasureSummary::of(MeasureSel::Natural, m));
    }
    if let Some(m) = &conjugated {
        measures.push(MeasureSummary::of(MeasureSel::Conjugated, m));
    }
    let mut diagnostics = Vec::with_capacity(cfg.diagnostics.len());
    for (i, d) in cfg.diagnostics.iter().enumerate() {
        let seed = derive_seed(cfg.engine.seed, i as u64 + 1);
        let m = match d.reads() {
            Some(MeasureSel::Natural) => natural.as_ref(),
            Some(MeasureSel::Conjugated) => conjugated.as_ref(),
            None => None,
        };
        let (status, headline, report) = dispatch(d, &cfg, m, seed)?;
        diagnostics.push(DiagnosticResult { check: d.name(), seed, status, headline, report });
    }
    let status = if diagnostics.iter().any(|d| d.status == Status::Fail) { Status::Fail } else { Status::Pass };
    let timestamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(RunOutput {
        scenario: cfg.name.clone(),
        target: cfg.target.clone(),
        status,
        timestamp,
        measures,
        diagnostics,
        config: cfg,
        natural,
        conjugated,
    })
}

fn push_conjugated(m: &mut LogBinnedMeasure, c: &Conjugator, x: f64) {
    match c {
        // s(x) = sign(x) e^|x| beyond 1: bin by the logarithm.
        Conjugator::Exponential if x.abs() > 1.0 => m.push_log(x < 0.0, x.abs()),
        _ => m.push(c.forward(x)),
    }
}

type Measures = (Option<LogBinnedMeasure>, Option<LogBinnedMeasure>);

fn build_measures(cfg: &ScenarioConfig) -> Result<Measures, CliError> {
    let e = &cfg.engine;
    match &cfg.measure {
        MeasureConfig::None => Ok((None, None)),
        MeasureConfig::Synthetic { law, samples, layout } => {
            Ok((Some(synthetic::synthetic_measure(law, layout, *samples, e.seed)?), None))
        }
        MeasureConfig::Occupation { layout, conjugated_layout } => {
            let conj = conjugated_layout.as_ref().zip(cfg.conjugation.as_ref());
            let parts = parallel::try_replicas(e.chains, |c| -> critsds_core::Result<Measures> {
                let mut m = LogBinnedMeasure::new(layout.clone())?;
                let mut mc = match conj {
                    Some((l, _)) => Some(LogBinnedMeasure::new(l.clone())?),
                    None => None,
                };
                engine::run_chain(&cfg.family, e.seed, c, e.x0, e.steps, e.stride, |_, x| {
                    m.push(x);
                    if let (Some(mc), Some((_, k))) = (mc.as_mut(), conj) {
                        push_conjugated(mc, k, x);
                    }
                })?;
                m.add_steps(e.steps);
                if let Some(mc) = mc.as_mut() {
                    mc.add_steps(e.steps);
                }
                Ok((Some(m), mc))
            })?;
            let mut m = LogBinnedMeasure::new(layout.clone())?;
            let mut mc = match conj {
                Some((l, _)) => Some(LogBinnedMeasure::new(l.clone())?),
                None => None,
            };
            for (a, b) in &parts {
                if let Some(a) = a {
                    m.merge(a)?;
                }
                if let (Some(total), Some(b)) = (mc.as_mut(), b) {
                    total.merge(b)?;
                }
            }
            Ok((Some(m), mc))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn step_law(law: &Option<Dist>, family: &FamilySpec) -> Result<StepLaw, CliError> {
    Ok(match law {
        Some(d) => StepLaw::new(d.clone())?,
        None => StepLaw::from_family(family)?,
    })
}

fn reflected_spec(family: &FamilySpec, check: &str) -> Result<ReflectedSpec, CliError> {
    match family {
        FamilySpec::Reflected { u } => Ok(ReflectedSpec::new(u.clone())?),
        _ => Err(CliError::Config(format!("{check} needs a reflected family"))),
    }
}

fn need(m: Option<&LogBinnedMeasure>) -> Result<&LogBinnedMeasure, CliError> {
    m.ok_or_else(|| CliError::Config("diagnostic needs a recorded measure".into()))
}

type Outcome = (Status, String, Value);

fn dispatch(d: &Diagnostic, cfg: &ScenarioConfig, m: Option<&LogBinnedMeasure>, seed: u64) -> Result<Outcome, CliError> {
    let family = &cfg.family;
    let mut rng = stream(seed, 0);
    Ok(match d {
        Diagnostic::GroupAlgebra { samples, tolerance } => {
            let r = group::axiom_check(*samples, seed, *tolerance);
            let h = format!("max rel err assoc {:.1e}, inverse {:.1e}, action {:.1e}", r.associativity, r.inverse, r.action);
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::Sandwich { replicas, steps, x0, family: over } => {
            let spec = over.as_ref().unwrap_or(family);
            let x0 = x0.unwrap_or(if over.is_some() { 0.0 } else { cfg.engine.x0 });
            // A violation aborts the run as a hard invariant failure.
            let r = engine::envelope_replicas(spec, seed, *replicas, *steps, x0)?;
            let h = format!("{:?}: {} steps checked, {} violations", r.family, r.checked, r.violations);
            (Status::from_pass(r.violations == 0), h, to_json(&r))
        }
        Diagnostic::Criticality { samples } => {
            let r = maps::criticality_audit(family, *samples as usize, &mut rng)?;
            let h = format!("E log A = {:.4} +- {:.4}", r.mean_log_a, r.se);
            (Status::from_pass(r.critical), h, to_json(&r))
        }
        Diagnostic::UniquenessAudit { samples, grid } => {
            let r = maps::uniqueness_criterion_audit(family, *samples as usize, grid, &mut rng)?;
            let h = format!(
                "beta {:?}, cond2 violations {}, cond3 violations {}",
                r.cond1.beta, r.cond2.violations, r.cond3.violations
            );
            (Status::from_pass(r.pass()), h, to_json(&r))
        }
        Diagnostic::LocalContraction { x, y, k, replicas, times, tolerance, ratio_replicas, ratio_steps, thresholds } => {
            let c = engine::coupled_pair(family, *x, *y, Interval::new(k.0, k.1), seed, *replicas, times)?;
            // A decrease of the normalized ratio aborts the run.
            let r = engine::normalized_ratio(family, *y, derive_seed(seed, 1), *ratio_replicas, *ratio_steps, thresholds)?;
            let last = c.mean.last().copied().unwrap_or(f64::NAN);
            let bound = tolerance * (x - y).abs();
            let h = format!("d_n = {last:.3e} at n = {} (bound {bound:.3e}), ratio violations {}", times[times.len() - 1], r.violations);
            let report = json!({
                "bound": bound,
                "coupled": c,
                "ratio": {
                    "y": r.y,
                    "replicas": r.replicas,
                    "steps": r.steps,
                    "thresholds": r.thresholds,
                    "crossing_fraction": r.crossing_fraction(),
                    "violations": r.violations,
                    "final_log_rho": r.final_log_rho,
                },
            });
            (Status::from_pass(last <= bound && r.violations == 0), h, report)
        }
        Diagnostic::PowerConjugation { a, b, c, alpha_range, samples, grid_max } => {
            let r = conjugation::power_conjugation_audit(a, b, c, *alpha_range, *samples, *grid_max, &mut rng)?;
            let h = format!(
                "{} maps: {} envelope failures, {} slope mismatches, max B0 {:.3}",
                r.samples, r.envelope_failures, r.slope_mismatches, r.max_b0
            );
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::IntervalConjugation { a } => {
            let phi = IntervalPhi::Cubic { a: *a };
            let r = conjugation::interval_report(&phi)?;
            let map = conjugation::interval_conjugate(phi)?;
            let h = format!("A = {:.4}, B = {:.4}, implied C_r >= {:.4}", map.a, map.b, r.implied_c_r);
            (Status::Info, h, json!({ "a": map.a, "b": map.b, "report": to_json(&r) }))
        }
        Diagnostic::GwEnvelope { alpha, x_max, samples, eps } => {
            let r = maps::gw_envelope_constant(family, *alpha, *x_max, *samples as usize, *eps, &mut rng)?;
            let h = format!("p99 B = {:.3}, max B = {:.3}, E(log+ B)^(2+eps) = {:.3}", r.p99, r.max, r.log_moment);
            let report = json!({
                "alpha": r.alpha, "x_max": r.x_max, "samples": r.values.len(),
                "p99": r.p99, "max": r.max, "log_moment": r.log_moment, "eps": r.eps,
            });
            (Status::Info, h, report)
        }
        Diagnostic::TailHomogeneity { z_grid, m_ratio, max_flatness, .. } => {
            let r = measure::tail_homogeneity_report(need(m)?, z_grid, *m_ratio, *max_flatness)?;
            let h = format!("flatness {:.3} (max {})", r.flatness, r.max_flatness);
            let status = if r.rows.iter().all(|row| row.low_confidence) {
                Status::Inconclusive
            } else {
                Status::from_pass(r.pass)
            };
            (status, h, to_json(&r))
        }
        Diagnostic::PositiveMass { z_grid, m_ratio, .. } => {
            let r = measure::tail_homogeneity_report(need(m)?, z_grid, *m_ratio, f64::INFINITY)?;
            let eligible: Vec<_> = r.rows.iter().filter(|row| row.counts >= LOW_COUNT).collect();
            let positive = eligible.iter().all(|row| row.h > 0.0);
            let h = format!("{} of {} windows eligible, all positive: {positive}", eligible.len(), r.rows.len());
            let status = if eligible.is_empty() { Status::Inconclusive } else { Status::from_pass(positive) };
            (status, h, json!({ "eligible": eligible.len(), "rows": r.rows }))
        }
        Diagnostic::LogGrowth { k_grid, min_r2, .. } => {
            let r = measure::log_growth_fit(need(m)?, k_grid, *min_r2)?;
            let h = format!("slope {:.4}, R^2 {:.5} (min {})", r.slope, r.r2, r.min_r2);
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::SlowVariation { phi, x_grid, y_grid, band, k_ceiling, .. } => {
            let r = measure::slow_variation_check(need(m)?, phi, x_grid, y_grid, *band, *k_ceiling)?;
            let last = r.ratios.last().cloned().unwrap_or_default();
            let h = format!("last row {:?}, K_hat {:.3}", last.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(), r.k_hat);
            let status = if !r.pass && r.low_count { Status::Inconclusive } else { Status::from_pass(r.pass) };
            (status, h, to_json(&r))
        }
        Diagnostic::Invariance { push_samples, window, inflation } => {
            let r = measure::invariance_residual(need(m)?, family, *push_samples, *window, *inflation, &mut rng)?;
            let h = format!("TV distance {:.4}, chi2 z {:.2} over {} bins", r.distance, r.z_stat, r.bins);
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::MartingaleBound { u, v, horizon, chains } => {
            let (u, v) = (Interval::new(u.0, u.1), Interval::new(v.0, v.1));
            let r = measure::martingale_bound_check(need(m)?, family, u, v, *horizon, *chains, seed)?;
            let h = format!("nu(V) {:.4} vs P {:.4} x nu(U) {:.4}, margin {:.4}", r.nu_v, r.p_hat, r.nu_u, r.margin);
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::Feller { steps, threshold } => {
            let spec = reflected_spec(family, "feller")?;
            let r = reflected::feller_oracle_check(&spec, *steps, *threshold, seed)?;
            let h = match r.ks {
                Some(ks) => format!("KS {ks:.5} (threshold {})", r.threshold),
                None => "skipped: lattice step law".into(),
            };
            let status = r.pass.map_or(Status::Inconclusive, Status::from_pass);
            (status, h, to_json(&r))
        }
        Diagnostic::CriticalTail { phi, x_grid, max_flatness, .. } => {
            let r = reflected::critical_tail_check(need(m)?, phi, x_grid, *max_flatness)?;
            let h = format!("flatness {:.3} (max {})", r.flatness, r.max_flatness);
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::EmbeddedLadder { starts, excursion_horizon, phi, layout } => {
            let spec = reflected_spec(family, "embedded_ladder")?;
            let r = reflected::embedded_ladder_measure(&spec, layout, *starts, *excursion_horizon, seed)?;
            let value = r.functional(phi)?;
            let h = format!("nu_0(phi) = {value:.4}, censored {:.4}", r.censored);
            let status = if r.censored > CENSOR_WARN { Status::Inconclusive } else { Status::Info };
            let report = json!({
                "value": value, "starts": r.starts, "burn_in": r.burn_in,
                "excursion_horizon": r.excursion_horizon, "censored": r.censored,
                "ladder_redraws": r.ladder_redraws,
            });
            (status, h, report)
        }
        Diagnostic::WienerHopf { law, chains, horizon, rel_tol } => {
            let law = step_law(law, family)?;
            let r = renewal::wiener_hopf_check(&law, *chains, *horizon, seed)?;
            let ratio = format!("product/sigma^2 = {:.4} [{:.4}, {:.4}]", r.ratio, r.ratio_ci95.0, r.ratio_ci95.1);
            match r.exact {
                Some(x) => {
                    let et = (r.s_t.mean - x.s_t).abs() / x.s_t.abs();
                    let el = (r.s_l.mean - x.s_l).abs() / x.s_l.abs();
                    let h = format!("rel err E S_t {et:.4}, E S_l {el:.4}; {ratio}");
                    let report = json!({ "rel_err_t": et, "rel_err_l": el, "rel_tol": rel_tol, "report": to_json(&r) });
                    (Status::from_pass(et <= *rel_tol && el <= *rel_tol), h, report)
                }
                None => (Status::Info, ratio, to_json(&r)),
            }
        }
        Diagnostic::PoissonLimit { ramp, law, x_grid, chains, horizon, panels } => {
            let law = step_law(law, family)?;
            let k = *ramp;
            let f = move |x: f64| x.clamp(0.0, k);
            let (lo, hi) = law.dist.effective_support();
            let pc = PoissonConfig { chains: *chains, horizon: *horizon, seed, g_range: (-hi, k - lo), panels: *panels };
            let r = renewal::poisson_limit_check(&f, &[0.0, k], &law, x_grid, &pc)?;
            let (last, last_int) = r.rows.last().map_or((f64::NAN, f64::NAN), |row| (row.lhs.mean, row.lhs_integral.mean));
            let h = format!(
                "pointwise {last:.4} vs {:.4}; integral {last_int:.3} vs {:.3} (pass {:?})",
                r.rhs.mean, r.rhs_integral.mean, r.integral_pass
            );
            (Status::from_pass(r.pass), h, to_json(&r))
        }
        Diagnostic::Duality { g, law, x, chains, k_max, horizon } => {
            let law = step_law(law, family)?;
            let support = g.support().ok_or_else(|| CliError::Config("duality needs a compactly supported g".into()))?;
            let gf = |y: f64| g.eval(y);
            let r = renewal::duality_r_check(&gf, support, &law, *x, *chains, *k_max, *horizon, seed)?;
            let h = format!(
                "ladder {:.4} vs excursion {:.4} (diff {:.4}, se {:.4})",
                r.ladder_side.mean, r.excursion_side.mean, r.diff, r.combined_se
            );
            (Status::from_pass(r.pass), h, to_json(&r))
        }
    })
}

/// `diagnostics.json` content.
pub fn diagnostics_json(out: &RunOutput) -> String {
    let mut s = serde_json::to_string_pretty(out).expect("reports serialize");
    s.push('\n');
    s
}

/// Human-readable summary table.
pub fn summary_text(out: &RunOutput) -> String {
    let mut s = String::new();
    let e = &out.config.engine;
    let _ = writeln!(s, "scenario {} ({})", out.scenario, out.target);
    let _ = writeln!(s, "seed {}  steps {}  chains {}", e.seed, e.steps, e.chains);
    for m in &out.measures {
        let _ = writeln!(
            s,
            "measure {:?}: {} recorded, out of range {:.4}{}",
            m.which,
            m.recorded,
            m.out_of_range_fraction,
            if m.coverage_flag { " (coverage flag)" } else { "" }
        );
    }
    let w = out.diagnostics.iter().map(|d| d.check.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<w$}  {:<12}  detail", "check", "status");
    for d in &out.diagnostics {
        let _ = writeln!(s, "{:<w$}  {:<12}  {}", d.check, d.status.label(), d.headline);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "overall {}", out.status.label());
    s
}

/// Writes `measure.csv` (and `conjugated_measure.csv`), `diagnostics.json`
/// and `summary.txt` into `dir`.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), CliError> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        files.push(p);
        Ok(())
    };
    if let Some(m) = &out.natural {
        put("measure.csv", &m.to_csv())?;
    }
    if let Some(m) = &out.conjugated {
        put("conjugated_measure.csv", &m.to_csv())?;
    }
    put("diagnostics.json", &diagnostics_json(out))?;
    put("summary.txt", &summary_text(out))?;
    Ok(files)
}
