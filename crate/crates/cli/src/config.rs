//! Scenario configuration: one TOML document per experiment.

use std::path::{Path, PathBuf};

use critsds_core::conjugation::Conjugator;
use critsds_core::maps::{Domain, FamilySpec};
use critsds_core::measure::Layout;
use critsds_core::phi::Phi;
use critsds_core::synthetic::SyntheticLaw;
use critsds_core::Dist;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn one() -> u64 {
    1
}

/// A complete experiment description. Together with the master seed it
/// determines every output byte except the timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Short name of the result the scenario exercises.
    pub target: String,
    #[serde(default)]
    pub description: String,
    pub family: FamilySpec,
    /// Coordinates in which a second occupation measure is recorded.
    #[serde(default)]
    pub conjugation: Option<Conjugator>,
    pub engine: EngineConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default)]
    pub quick: QuickConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "one")]
    pub chains: u64,
    #[serde(default = "one")]
    pub stride: u64,
    #[serde(default)]
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    /// Occupation measure of the engine chains.
    Occupation {
        #[serde(default)]
        layout: Layout,
        /// Layout of the measure recorded through `conjugation`.
        #[serde(default)]
        conjugated_layout: Option<Layout>,
    },
    /// Direct draws from a known law, for calibrating the diagnostics.
    Synthetic {
        law: SyntheticLaw,
        samples: u64,
        #[serde(default)]
        layout: Layout,
    },
    None,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig::Occupation { layout: Layout::default(), conjugated_layout: None }
    }
}

/// Which recorded measure a diagnostic reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureSel {
    #[default]
    Natural,
    Conjugated,
}

fn default_divisor() -> u64 {
    100
}

/// Budget reduction under `--quick`: steps, chains, replicas and sample
/// counts are divided by `divisor` (never below a small floor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuickConfig {
    #[serde(default = "default_divisor")]
    pub divisor: u64,
}

impl Default for QuickConfig {
    fn default() -> Self {
        QuickConfig { divisor: default_divisor() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn tol_1e12() -> f64 {
    1e-12
}
fn default_m_ratio() -> f64 {
    2.0
}
fn default_band() -> (f64, f64) {
    (0.8, 1.25)
}
fn default_k_ceiling() -> f64 {
    10.0
}
fn default_inflation() -> f64 {
    1.0
}
fn default_horizon() -> u64 {
    critsds_core::renewal::DEFAULT_HORIZON
}
fn default_panels() -> usize {
    64
}
fn default_rel_tol() -> f64 {
    0.01
}
fn default_grid_max() -> f64 {
    1e8
}
fn default_eps() -> f64 {
    0.1
}

/// One diagnostic and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Diagnostic {
    /// Associativity, inverse and action laws of `Aff(R)`.
    GroupAlgebra {
        samples: u64,
        #[serde(default = "tol_1e12")]
        tolerance: f64,
    },
    /// `Z_n <= X_n <= Y_n` on independent replicas; `family` overrides the
    /// scenario family.
    Sandwich {
        replicas: u64,
        steps: u64,
        #[serde(default)]
        x0: Option<f64>,
        #[serde(default)]
        family: Option<FamilySpec>,
    },
    /// Monte Carlo `E[log A]`.
    Criticality { samples: u64 },
    /// The three conditions of the uniqueness criterion on `[0, inf)`.
    UniquenessAudit { samples: u64, grid: Vec<f64> },
    /// Coupled pair distance plus the normalized-ratio monotonicity.
    LocalContraction {
        x: f64,
        y: f64,
        k: (f64, f64),
        replicas: u64,
        times: Vec<u64>,
        /// Pass when the last replica mean is at most `tolerance |x - y|`.
        tolerance: f64,
        ratio_replicas: u64,
        ratio_steps: u64,
        #[serde(default)]
        thresholds: Vec<f64>,
    },
    /// Power conjugation of randomly drawn `alpha`-perturbed affine maps.
    PowerConjugation {
        a: Dist,
        b: Dist,
        c: Dist,
        alpha_range: (f64, f64),
        samples: u64,
        #[serde(default = "default_grid_max")]
        grid_max: f64,
    },
    /// Interval-conjugation constants of the cubic map with slope `a`.
    IntervalConjugation { a: f64 },
    /// Empirical law of the Galton–Watson envelope constant.
    GwEnvelope {
        alpha: f64,
        x_max: u64,
        samples: u64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    TailHomogeneity {
        z_grid: Vec<f64>,
        #[serde(default = "default_m_ratio")]
        m_ratio: f64,
        max_flatness: f64,
        #[serde(default)]
        on: MeasureSel,
    },
    /// `nu_hat[z, M z] > 0` wherever the window holds enough counts.
    PositiveMass {
        z_grid: Vec<f64>,
        #[serde(default = "default_m_ratio")]
        m_ratio: f64,
        #[serde(default)]
        on: MeasureSel,
    },
    LogGrowth {
        k_grid: Vec<f64>,
        min_r2: f64,
        #[serde(default)]
        on: MeasureSel,
    },
    SlowVariation {
        phi: Phi,
        x_grid: Vec<f64>,
        y_grid: Vec<f64>,
        #[serde(default = "default_band")]
        band: (f64, f64),
        #[serde(default = "default_k_ceiling")]
        k_ceiling: f64,
        #[serde(default)]
        on: MeasureSel,
    },
    /// One-step push of the natural measure against itself.
    Invariance {
        push_samples: u64,
        window: (f64, f64),
        #[serde(default = "default_inflation")]
        inflation: f64,
    },
    MartingaleBound { u: (f64, f64), v: (f64, f64), horizon: u64, chains: u64 },
    /// Closed-form `(1 - F) dx` for a reflected walk with nonnegative steps.
    Feller { steps: u64, threshold: f64 },
    CriticalTail {
        phi: Phi,
        x_grid: Vec<f64>,
        max_flatness: f64,
        #[serde(default)]
        on: MeasureSel,
    },
    /// Two-stage estimate of `nu_0(phi)` from the embedded ladder chain.
    EmbeddedLadder {
        starts: u64,
        excursion_horizon: u64,
        phi: Phi,
        #[serde(default)]
        layout: Layout,
    },
    /// Ladder means against the lattice oracle, and the product against
    /// `sigma^2` (informational).
    WienerHopf {
        #[serde(default)]
        law: Option<Dist>,
        chains: u64,
        #[serde(default = "default_horizon")]
        horizon: u64,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    /// Both Poisson limits for the ramp `f = clamp(x, 0, ramp)`.
    PoissonLimit {
        ramp: f64,
        #[serde(default)]
        law: Option<Dist>,
        x_grid: Vec<f64>,
        chains: u64,
        #[serde(default = "default_horizon")]
        horizon: u64,
        #[serde(default = "default_panels")]
        panels: usize,
    },
    /// Ladder/excursion duality integrated against `g`.
    Duality {
        g: Phi,
        #[serde(default)]
        law: Option<Dist>,
        x: f64,
        chains: u64,
        k_max: u64,
        #[serde(default = "default_horizon")]
        horizon: u64,
    },
}

impl Diagnostic {
    pub fn name(&self) -> &'static str {
        match self {
            Diagnostic::GroupAlgebra { .. } => "group_algebra",
            Diagnostic::Sandwich { .. } => "sandwich",
            Diagnostic::Criticality { .. } => "criticality",
            Diagnostic::UniquenessAudit { .. } => "uniqueness_audit",
            Diagnostic::LocalContraction { .. } => "local_contraction",
            Diagnostic::PowerConjugation { .. } => "power_conjugation",
            Diagnostic::IntervalConjugation { .. } => "interval_conjugation",
            Diagnostic::GwEnvelope { .. } => "gw_envelope",
            Diagnostic::TailHomogeneity { .. } => "tail_homogeneity",
            Diagnostic::PositiveMass { .. } => "positive_mass",
            Diagnostic::LogGrowth { .. } => "log_growth",
            Diagnostic::SlowVariation { .. } => "slow_variation",
            Diagnostic::Invariance { .. } => "invariance",
            Diagnostic::MartingaleBound { .. } => "martingale_bound",
            Diagnostic::Feller { .. } => "feller",
            Diagnostic::CriticalTail { .. } => "critical_tail",
            Diagnostic::EmbeddedLadder { .. } => "embedded_ladder",
            Diagnostic::WienerHopf { .. } => "wiener_hopf",
            Diagnostic::PoissonLimit { .. } => "poisson_limit",
            Diagnostic::Duality { .. } => "duality",
        }
    }

    /// Measure the diagnostic reads, if any.
    pub fn reads(&self) -> Option<MeasureSel> {
        match self {
            Diagnostic::TailHomogeneity { on, .. }
            | Diagnostic::PositiveMass { on, .. }
            | Diagnostic::LogGrowth { on, .. }
            | Diagnostic::SlowVariation { on, .. }
            | Diagnostic::CriticalTail { on, .. } => Some(*on),
            Diagnostic::Invariance { .. } | Diagnostic::MartingaleBound { .. } => Some(MeasureSel::Natural),
            _ => None,
        }
    }

    fn shrink(&mut self, d: u64) {
        let s = |v: &mut u64, floor: u64| *v = (*v / d).max(floor.min(*v));
        match self {
            Diagnostic::GroupAlgebra { samples, .. }
            | Diagnostic::Criticality { samples }
            | Diagnostic::UniquenessAudit { samples, .. }
            | Diagnostic::PowerConjugation { samples, .. }
            | Diagnostic::GwEnvelope { samples, .. } => s(samples, 10),
            Diagnostic::Sandwich { replicas, steps, .. } => {
                s(replicas, 2);
                s(steps, 100);
            }
            Diagnostic::LocalContraction { replicas, ratio_replicas, ratio_steps, .. } => {
                s(replicas, 10);
                s(ratio_replicas, 2);
                s(ratio_steps, 100);
            }
            Diagnostic::Invariance { push_samples, .. } => s(push_samples, 10_000),
            Diagnostic::MartingaleBound { chains, .. } => s(chains, 100),
            Diagnostic::Feller { steps, .. } => s(steps, 10_000),
            Diagnostic::EmbeddedLadder { starts, .. } => s(starts, 1000),
            Diagnostic::WienerHopf { chains, .. }
            | Diagnostic::PoissonLimit { chains, .. }
            | Diagnostic::Duality { chains, .. } => s(chains, 500),
            Diagnostic::IntervalConjugation { .. }
            | Diagnostic::TailHomogeneity { .. }
            | Diagnostic::PositiveMass { .. }
            | Diagnostic::LogGrowth { .. }
            | Diagnostic::SlowVariation { .. }
            | Diagnostic::CriticalTail { .. } => {}
        }
    }

    fn validate(&self, i: usize) -> Result<(), CliError> {
        let field = |f: &str| format!("diagnostics[{i}].{f}");
        let positive = |v: u64, f: &str| {
            if v == 0 {
                Err(CliError::Config(format!("{} must be >= 1", field(f))))
            } else {
                Ok(())
            }
        };
        let nonempty = |n: usize, f: &str| {
            if n == 0 {
                Err(CliError::Config(format!("{} must not be empty", field(f))))
            } else {
                Ok(())
            }
        };
        let phi_ok = |p: &Phi, f: &str| p.validate().map_err(|e| CliError::Config(format!("{}: {e}", field(f))));
        match self {
            Diagnostic::GroupAlgebra { samples, .. }
            | Diagnostic::Criticality { samples }
            | Diagnostic::GwEnvelope { samples, .. }
            | Diagnostic::PowerConjugation { samples, .. } => positive(*samples, "samples"),
            Diagnostic::UniquenessAudit { samples, grid } => {
                positive(*samples, "samples")?;
                nonempty(grid.len(), "grid")
            }
            Diagnostic::Sandwich { replicas, steps, family, .. } => {
                positive(*replicas, "replicas")?;
                positive(*steps, "steps")?;
                if let Some(f) = family {
                    f.validate().map_err(|e| CliError::Config(format!("{}: {e}", field("family"))))?;
                }
                Ok(())
            }
            Diagnostic::LocalContraction { replicas, times, ratio_replicas, ratio_steps, k, .. } => {
                positive(*replicas, "replicas")?;
                positive(*ratio_replicas, "ratio_replicas")?;
                positive(*ratio_steps, "ratio_steps")?;
                nonempty(times.len(), "times")?;
                if times.windows(2).any(|w| w[0] >= w[1]) || times[0] == 0 {
                    return Err(CliError::Config(format!("{} must be increasing and >= 1", field("times"))));
                }
                if !(k.0 <= k.1) {
                    return Err(CliError::Config(format!("{} needs lo <= hi", field("k"))));
                }
                Ok(())
            }
            Diagnostic::IntervalConjugation { a } => {
                if !(*a > 0.0) {
                    return Err(CliError::Config(format!("{} must be > 0", field("a"))));
                }
                Ok(())
            }
            Diagnostic::TailHomogeneity { z_grid, .. } | Diagnostic::PositiveMass { z_grid, .. } => {
                nonempty(z_grid.len(), "z_grid")
            }
            Diagnostic::LogGrowth { k_grid, .. } => nonempty(k_grid.len(), "k_grid"),
            Diagnostic::SlowVariation { phi, x_grid, y_grid, .. } => {
                phi_ok(phi, "phi")?;
                nonempty(x_grid.len(), "x_grid")?;
                nonempty(y_grid.len(), "y_grid")
            }
            Diagnostic::Invariance { push_samples, .. } => positive(*push_samples, "push_samples"),
            Diagnostic::MartingaleBound { horizon, chains, .. } => {
                positive(*horizon, "horizon")?;
                positive(*chains, "chains")
            }
            Diagnostic::Feller { steps, .. } => positive(*steps, "steps"),
            Diagnostic::CriticalTail { phi, x_grid, .. } => {
                phi_ok(phi, "phi")?;
                nonempty(x_grid.len(), "x_grid")
            }
            Diagnostic::EmbeddedLadder { starts, excursion_horizon, phi, .. } => {
                positive(*starts, "starts")?;
                positive(*excursion_horizon, "excursion_horizon")?;
                phi_ok(phi, "phi")
            }
            Diagnostic::WienerHopf { chains, horizon, .. } => {
                positive(*chains, "chains")?;
                positive(*horizon, "horizon")
            }
            Diagnostic::PoissonLimit { chains, horizon, x_grid, .. } => {
                positive(*chains, "chains")?;
                positive(*horizon, "horizon")?;
                nonempty(x_grid.len(), "x_grid")
            }
            Diagnostic::Duality { g, chains, k_max, horizon, .. } => {
                phi_ok(g, "g")?;
                positive(*chains, "chains")?;
                positive(*k_max, "k_max")?;
                positive(*horizon, "horizon")
            }
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a TOML scenario, or the `config` echoed inside a previous
    /// `diagnostics.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(inner) = v.get_mut("config") {
                v = inner.take();
            }
            return serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()));
        }
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |msg: String| CliError::Config(msg);
        if self.name.trim().is_empty() {
            return Err(cfg("name must not be empty".into()));
        }
        self.family.validate().map_err(|e| cfg(format!("family: {e}")))?;
        let e = &self.engine;
        if e.steps == 0 {
            return Err(cfg("engine.steps must be >= 1".into()));
        }
        if e.chains == 0 {
            return Err(cfg("engine.chains must be >= 1".into()));
        }
        if e.stride == 0 {
            return Err(cfg("engine.stride must be >= 1".into()));
        }
        let domain = self.family.domain();
        if !domain.contains(e.x0) {
            return Err(cfg(format!("engine.x0 = {} lies outside the family domain {}", e.x0, domain.name())));
        }
        if self.quick.divisor == 0 {
            return Err(cfg("quick.divisor must be >= 1".into()));
        }
        let mut has_conj = false;
        match &self.measure {
            MeasureConfig::Occupation { layout, conjugated_layout } => {
                layout.validate().map_err(|e| cfg(format!("measure.layout: {e}")))?;
                if let Some(l) = conjugated_layout {
                    l.validate().map_err(|e| cfg(format!("measure.conjugated_layout: {e}")))?;
                    if self.conjugation.is_none() {
                        return Err(cfg("measure.conjugated_layout needs a conjugation".into()));
                    }
                    has_conj = true;
                }
            }
            MeasureConfig::Synthetic { law, samples, layout } => {
                law.validate().map_err(|e| cfg(format!("measure.law: {e}")))?;
                layout.validate().map_err(|e| cfg(format!("measure.layout: {e}")))?;
                if *samples == 0 {
                    return Err(cfg("measure.samples must be >= 1".into()));
                }
            }
            MeasureConfig::None => {}
        }
        if let Some(Conjugator::Interval) = self.conjugation {
            if domain != Domain::Unit {
                return Err(cfg("conjugation: the interval conjugator needs a family on [0,1]".into()));
            }
        }
        for (i, d) in self.diagnostics.iter().enumerate() {
            d.validate(i)?;
            match d.reads() {
                Some(_) if matches!(self.measure, MeasureConfig::None) => {
                    return Err(cfg(format!("diagnostics[{i}] ({}) needs a measure", d.name())));
                }
                Some(MeasureSel::Conjugated) if !has_conj => {
                    return Err(cfg(format!(
                        "diagnostics[{i}] ({}) reads the conjugated measure, which is not recorded",
                        d.name()
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// The reduced-budget variant used by `--quick`.
    pub fn quick(&self) -> Self {
        let mut c = self.clone();
        let d = c.quick.divisor;
        c.engine.steps = (c.engine.steps / d).max(100.min(c.engine.steps));
        if let MeasureConfig::Synthetic { samples, .. } = &mut c.measure {
            *samples = (*samples / d).max(1000.min(*samples));
        }
        for diag in &mut c.diagnostics {
            diag.shrink(d);
        }
        c.quick.divisor = 1;
        c
    }
}
