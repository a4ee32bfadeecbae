//! Random map families: samplable laws on continuous maps with their
//! asymptotic-linearity data `(A, B, alpha)`.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::conjugation::{self, AsymptoticTranslation, Conjugator, IntervalPhi};
use crate::dist::Dist;
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;
use crate::stats::{quantile_sorted, MeanVar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Real,
    NonNegative,
    Naturals,
    Unit,
}

impl Domain {
    pub fn contains(&self, x: f64) -> bool {
        match self {
            Domain::Real => x.is_finite(),
            Domain::NonNegative => x >= 0.0 && x.is_finite(),
            Domain::Naturals => x >= 0.0 && x.fract() == 0.0 && x.is_finite(),
            Domain::Unit => (0.0..=1.0).contains(&x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::Real => "R",
            Domain::NonNegative => "[0,inf)",
            Domain::Naturals => "N",
            Domain::Unit => "[0,1]",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Identity,
    Affine,
    GoldieMax,
    GoldieSqrt,
    Reflected,
    PowerPerturbed,
    Interval,
    ExpReflected,
    GaltonWatson,
    Conjugated,
}

/// One environment of the Galton–Watson family: offspring law `rho`,
/// immigration law and selection weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GwEnvironment {
    pub weight: f64,
    pub offspring: Dist,
    pub immigration: Dist,
}

fn default_alpha_gw() -> f64 {
    0.8
}
fn default_b_horizon() -> u64 {
    1024
}
fn default_cap() -> u64 {
    1 << 24
}
fn default_true() -> bool {
    true
}

/// Law of a random map, as written in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Identity,
    /// `x -> A x + B` with `log A ~ log_a`.
    Affine { log_a: Dist, b: Dist },
    /// `x -> max(A x, B) + C` on `[0, inf)`.
    GoldieMax { a: Dist, b: Dist, c: Dist },
    /// `x -> sqrt(A^2 x^2 + B x + C)` on `[0, inf)`; with `enforce_delta`
    /// draws are conditioned on `B^2 - 4 A^2 C <= 0` by rejection.
    GoldieSqrt {
        a: Dist,
        b: Dist,
        c: Dist,
        #[serde(default = "default_true")]
        enforce_delta: bool,
    },
    /// `x -> |x - u|` on `[0, inf)`.
    Reflected { u: Dist },
    /// `x -> A x + b sign(x)|x|^alpha + c` on `R`.
    PowerPerturbed { alpha: f64, a: Dist, b: Dist, c: Dist },
    /// `r o phi o r^-1` for the cubic interval automorphism with slope
    /// `a = exp(log_a)` at both endpoints; with `conjugated = false` the raw
    /// map of `[0, 1]`.
    Interval {
        log_a: Dist,
        #[serde(default = "default_true")]
        conjugated: bool,
    },
    /// `s o |. - u| o s^-1`, the reflected walk seen through the
    /// exponential conjugation.
    ExpReflected { u: Dist },
    /// `x -> i + sum_{j <= x} r_j` with a random environment.
    GaltonWatson {
        environments: Vec<GwEnvironment>,
        #[serde(default = "default_alpha_gw")]
        alpha: f64,
        /// Range `0..=b_horizon` over which `B` is computed per sample.
        #[serde(default = "default_b_horizon")]
        b_horizon: u64,
        #[serde(default = "default_cap")]
        cap: u64,
    },
}

impl FamilySpec {
    pub fn tag(&self) -> FamilyTag {
        match self {
            FamilySpec::Identity => FamilyTag::Identity,
            FamilySpec::Affine { .. } => FamilyTag::Affine,
            FamilySpec::GoldieMax { .. } => FamilyTag::GoldieMax,
            FamilySpec::GoldieSqrt { .. } => FamilyTag::GoldieSqrt,
            FamilySpec::Reflected { .. } => FamilyTag::Reflected,
            FamilySpec::PowerPerturbed { .. } => FamilyTag::PowerPerturbed,
            FamilySpec::Interval { .. } => FamilyTag::Interval,
            FamilySpec::ExpReflected { .. } => FamilyTag::ExpReflected,
            FamilySpec::GaltonWatson { .. } => FamilyTag::GaltonWatson,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            FamilySpec::Identity | FamilySpec::Affine { .. } | FamilySpec::PowerPerturbed { .. } => Domain::Real,
            FamilySpec::Interval { conjugated, .. } => {
                if *conjugated {
                    Domain::Real
                } else {
                    Domain::Unit
                }
            }
            FamilySpec::GoldieMax { .. }
            | FamilySpec::GoldieSqrt { .. }
            | FamilySpec::Reflected { .. }
            | FamilySpec::ExpReflected { .. } => Domain::NonNegative,
            FamilySpec::GaltonWatson { .. } => Domain::Naturals,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FamilySpec::Identity => Ok(()),
            FamilySpec::Affine { log_a, b } => {
                log_a.validate()?;
                b.validate()
            }
            FamilySpec::GoldieMax { a, b, c } | FamilySpec::GoldieSqrt { a, b, c, .. } => {
                a.validate()?;
                b.validate()?;
                c.validate()
            }
            FamilySpec::Reflected { u } | FamilySpec::ExpReflected { u } => u.validate(),
            FamilySpec::PowerPerturbed { alpha, a, b, c } => {
                if !(0.0..1.0).contains(alpha) {
                    return Err(invalid("power_perturbed alpha must lie in [0,1)"));
                }
                a.validate()?;
                b.validate()?;
                c.validate()
            }
            FamilySpec::Interval { log_a, .. } => {
                log_a.validate()?;
                let (lo, hi) = log_a.effective_support();
                if hi >= 3f64.ln() {
                    return Err(invalid("interval log_a support must stay below ln 3 (cubic monotonicity)"));
                }
                if !lo.is_finite() {
                    return Err(invalid("interval log_a must have bounded support"));
                }
                Ok(())
            }
            FamilySpec::GaltonWatson { environments, alpha, cap, .. } => {
                if environments.is_empty() {
                    return Err(invalid("galton_watson needs at least one environment"));
                }
                if !(0.5..1.0).contains(alpha) {
                    return Err(invalid("galton_watson alpha must lie in (1/2,1)"));
                }
                if *cap == 0 {
                    return Err(invalid("galton_watson cap must be >= 1"));
                }
                for e in environments {
                    if !(e.weight >= 0.0) {
                        return Err(invalid("galton_watson weights must be >= 0"));
                    }
                    e.offspring.validate()?;
                    e.immigration.validate()?;
                    if !e.offspring.is_nonnegative() || !e.immigration.is_nonnegative() {
                        return Err(invalid("galton_watson laws must be nonnegative"));
                    }
                    if !(e.offspring.mean() > 0.0) {
                        return Err(invalid("galton_watson offspring mean must be > 0"));
                    }
                }
                if environments.iter().map(|e| e.weight).sum::<f64>() <= 0.0 {
                    return Err(invalid("galton_watson weights sum to zero"));
                }
                Ok(())
            }
        }
    }

    /// Draws one map.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MapSample> {
        let tag = self.tag();
        let domain = self.domain();
        let sample = match self {
            FamilySpec::Identity => MapSample::new(tag, MapKind::Identity, 1.0, 1.0, 0.0, domain),
            FamilySpec::Affine { log_a, b } => {
                let a = log_a.sample(rng).exp();
                let b = b.sample(rng);
                MapSample::affine(a, b)
            }
            FamilySpec::GoldieMax { a, b, c } => {
                let (a, b, c) = (a.sample(rng), b.sample(rng), c.sample(rng));
                MapSample::goldie_max(a, b, c)
            }
            FamilySpec::GoldieSqrt { a, b, c, enforce_delta } => {
                for _ in 0..10_000 {
                    let (av, bv, cv) = (a.sample(rng), b.sample(rng), c.sample(rng));
                    if *enforce_delta && bv * bv - 4.0 * av * av * cv > 0.0 {
                        continue;
                    }
                    return MapSample::goldie_sqrt(av, bv, cv);
                }
                Err(invalid("goldie_sqrt: no draw with delta <= 0 in 10000 attempts"))
            }
            FamilySpec::Reflected { u } => Ok(MapSample::reflect(u.sample(rng))),
            FamilySpec::PowerPerturbed { alpha, a, b, c } => {
                MapSample::power_perturbed(a.sample(rng), b.sample(rng), c.sample(rng), *alpha)
            }
            FamilySpec::Interval { log_a, conjugated } => {
                let phi = IntervalPhi::Cubic { a: log_a.sample(rng).exp() };
                if *conjugated {
                    conjugation::interval_conjugate(phi)
                } else {
                    Ok(MapSample::interval_raw(phi))
                }
            }
            FamilySpec::ExpReflected { u } => {
                conjugation::exp_conjugate(AsymptoticTranslation::Reflect { u: u.sample(rng) })
            }
            FamilySpec::GaltonWatson { environments, alpha, b_horizon, cap } => {
                let total: f64 = environments.iter().map(|e| e.weight).sum();
                let mut pick = rng.random::<f64>() * total;
                let mut idx = environments.len() - 1;
                for (i, e) in environments.iter().enumerate() {
                    if pick < e.weight {
                        idx = i;
                        break;
                    }
                    pick -= e.weight;
                }
                let env = &environments[idx];
                let immigration = env.immigration.sample(rng).round().max(0.0) as u64;
                let gw = GwMap::new(idx, env.offspring.clone(), immigration, rng.random(), *cap);
                let a = gw.a;
                let b = gw.envelope_constant(*alpha, *b_horizon)?.max(1.0);
                Ok(MapSample {
                    family: tag,
                    kind: MapKind::GaltonWatson(Arc::new(gw)),
                    a,
                    b,
                    alpha: *alpha,
                    domain,
                })
            }
        }?;
        Ok(sample)
    }

    /// Analytic `E[log A]` where the family makes it available.
    pub fn mean_log_a(&self) -> Option<f64> {
        match self {
            FamilySpec::Identity => Some(0.0),
            FamilySpec::Affine { log_a, .. } | FamilySpec::Interval { log_a, .. } => Some(log_a.mean()),
            FamilySpec::GoldieMax { a, .. } | FamilySpec::GoldieSqrt { a, enforce_delta: false, .. } => {
                Some(a.expectation(&|x| x.ln()))
            }
            FamilySpec::PowerPerturbed { a, .. } => Some(a.expectation(&|x| x.ln())),
            FamilySpec::Reflected { .. } => Some(0.0),
            FamilySpec::ExpReflected { u } => Some(-u.mean()),
            FamilySpec::GaltonWatson { environments, .. } => {
                let total: f64 = environments.iter().map(|e| e.weight).sum();
                Some(environments.iter().map(|e| e.weight / total * e.offspring.mean().ln()).sum())
            }
            FamilySpec::GoldieSqrt { .. } => None,
        }
    }
}

/// Evaluation rule of a sampled map.
#[derive(Debug, Clone)]
pub enum MapKind {
    Identity,
    Affine { a: f64, b: f64 },
    GoldieMax { a: f64, b: f64, c: f64 },
    GoldieSqrt { a: f64, b: f64, c: f64 },
    Reflect { u: f64 },
    PowerPerturbed { a: f64, b: f64, c: f64, alpha: f64 },
    /// A map of `[0, 1]`.
    Interval(IntervalPhi),
    /// `r o phi o r^-1` with `r(u) = -1/u + 1/(1-u)`, evaluated through the
    /// endpoint-stable pair representation.
    IntervalConjugate(IntervalPhi),
    /// An asymptotic translation of `R`.
    Translation(AsymptoticTranslation),
    /// `c o inner o c^-1`.
    Conjugated { conj: Conjugator, inner: Box<MapKind> },
    GaltonWatson(Arc<GwMap>),
}

impl MapKind {
    /// Raw evaluation without domain checks.
    #[inline]
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(match self {
            MapKind::Identity => x,
            MapKind::Affine { a, b } => a * x + b,
            MapKind::GoldieMax { a, b, c } => (a * x).max(*b) + c,
            MapKind::GoldieSqrt { a, b, c } => (a * a * x * x + b * x + c).max(0.0).sqrt(),
            MapKind::Reflect { u } => (x - u).abs(),
            MapKind::PowerPerturbed { a, b, c, alpha } => a * x + b * x.signum() * x.abs().powf(*alpha) + c,
            MapKind::Interval(phi) => phi.eval(x),
            MapKind::IntervalConjugate(phi) => conjugation::interval_conjugate_eval(phi, x),
            MapKind::Translation(t) => t.eval(x),
            MapKind::Conjugated { conj, inner } => conj.forward(inner.eval(conj.inverse(x))?),
            MapKind::GaltonWatson(gw) => {
                if x > u64::MAX as f64 {
                    return Err(Error::PopulationCap { x, cap: gw.cap });
                }
                gw.value(x as u64)? as f64
            }
        })
    }
}

/// One realized random map with its linearization data.
#[derive(Debug, Clone)]
pub struct MapSample {
    pub family: FamilyTag,
    pub kind: MapKind,
    /// Asymptotic slope `A(psi)`.
    pub a: f64,
    /// Envelope constant `B(psi) >= 1`.
    pub b: f64,
    pub alpha: f64,
    pub domain: Domain,
}

impl MapSample {
    pub fn new(family: FamilyTag, kind: MapKind, a: f64, b: f64, alpha: f64, domain: Domain) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid(format!("asymptotic slope must be > 0, got {a}")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid(format!("envelope constant must be > 0, got {b}")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0,1), got {alpha}")));
        }
        Ok(MapSample { family, kind, a, b, alpha, domain })
    }

    pub fn identity() -> Self {
        MapSample { family: FamilyTag::Identity, kind: MapKind::Identity, a: 1.0, b: 1.0, alpha: 0.0, domain: Domain::Real }
    }

    /// `x -> a x + b`; envelope constant `max(|b|, 1)`.
    pub fn affine(a: f64, b: f64) -> Result<Self> {
        Self::new(FamilyTag::Affine, MapKind::Affine { a, b }, a, b.abs().max(1.0), 0.0, Domain::Real)
    }

    /// `x -> max(a x, b) + c`; envelope constant `b + c + 1`.
    pub fn goldie_max(a: f64, b: f64, c: f64) -> Result<Self> {
        if b < 0.0 || c < 0.0 {
            return Err(invalid("goldie_max needs b, c >= 0"));
        }
        Self::new(FamilyTag::GoldieMax, MapKind::GoldieMax { a, b, c }, a, (b + c + 1.0).max(1.0), 0.0, Domain::NonNegative)
    }

    /// `x -> sqrt(a^2 x^2 + b x + c)`.
    ///
    /// On `[0, inf)`, `psi(x) - a x = (b x + c)/(psi(x) + a x)`, bounded by
    /// `b/(2a) + sqrt(c)` for `b >= 0` and by `|b|/a + sqrt(c)` otherwise.
    pub fn goldie_sqrt(a: f64, b: f64, c: f64) -> Result<Self> {
        if c < 0.0 {
            return Err(invalid("goldie_sqrt needs c >= 0"));
        }
        if b < 0.0 && b * b > 4.0 * a * a * c {
            return Err(invalid("goldie_sqrt with b < 0 needs delta <= 0 to stay real on [0,inf)"));
        }
        let bound = if b >= 0.0 { b / (2.0 * a) } else { -b / a } + c.sqrt();
        Self::new(FamilyTag::GoldieSqrt, MapKind::GoldieSqrt { a, b, c }, a, bound.max(1.0), 0.0, Domain::NonNegative)
    }

    /// `x -> |x - u|` on `[0, inf)`; `A = 1`, `B = max(|u|, 1)`.
    pub fn reflect(u: f64) -> Self {
        MapSample {
            family: FamilyTag::Reflected,
            kind: MapKind::Reflect { u },
            a: 1.0,
            b: u.abs().max(1.0),
            alpha: 0.0,
            domain: Domain::NonNegative,
        }
    }

    /// `x -> a x + b sign(x)|x|^alpha + c`; envelope constant `max(|b|, |c|, 1)`.
    pub fn power_perturbed(a: f64, b: f64, c: f64, alpha: f64) -> Result<Self> {
        Self::new(
            FamilyTag::PowerPerturbed,
            MapKind::PowerPerturbed { a, b, c, alpha },
            a,
            b.abs().max(c.abs()).max(1.0),
            alpha,
            Domain::Real,
        )
    }

    /// The raw interval map; its linearization data are those of its
    /// conjugate on `R`.
    pub fn interval_raw(phi: IntervalPhi) -> Self {
        MapSample {
            family: FamilyTag::Interval,
            a: 1.0 / phi.slope_at_zero(),
            kind: MapKind::Interval(phi),
            b: 1.0,
            alpha: 0.0,
            domain: Domain::Unit,
        }
    }

    /// Evaluates the map at a domain point.
    #[inline]
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::Domain { x, domain: self.domain.name() });
        }
        self.kind.eval(x)
    }

    /// Affine part `(B, A)` as a group element, exact for affine maps.
    pub fn group_element(&self) -> Option<crate::group::GroupElement> {
        match self.kind {
            MapKind::Affine { a, b } => Some(crate::group::GroupElement { b, a }),
            MapKind::Identity => Some(crate::group::GroupElement::IDENTITY),
            _ => None,
        }
    }

    /// True when the map is nondecreasing on its domain.
    pub fn is_monotone(&self) -> bool {
        match &self.kind {
            MapKind::Reflect { .. } => false,
            MapKind::Conjugated { inner, .. } => !matches!(**inner, MapKind::Reflect { .. }),
            MapKind::Translation(t) => t.is_monotone(),
            MapKind::PowerPerturbed { b, .. } => *b >= 0.0,
            _ => true,
        }
    }
}

/// Galton–Watson generation map with memoized offspring prefix sums, so a
/// sample is a consistent function of `x`.
#[derive(Debug)]
pub struct GwMap {
    pub environment: usize,
    pub a: f64,
    pub immigration: u64,
    pub cap: u64,
    offspring: Dist,
    state: Mutex<GwState>,
}

#[derive(Debug)]
struct GwState {
    rng: SimRng,
    /// `prefix[x] = r_1 + ... + r_x`.
    prefix: Vec<u64>,
}

impl GwMap {
    pub fn new(environment: usize, offspring: Dist, immigration: u64, seed: u64, cap: u64) -> Self {
        GwMap {
            environment,
            a: offspring.mean(),
            immigration,
            cap,
            offspring,
            state: Mutex::new(GwState { rng: SimRng::seed_from_u64(seed), prefix: vec![0] }),
        }
    }

    fn ensure(&self, state: &mut GwState, x: u64) -> Result<()> {
        if x > self.cap {
            return Err(Error::PopulationCap { x: x as f64, cap: self.cap });
        }
        let need = x as usize + 1;
        while state.prefix.len() < need {
            let r = self.offspring.sample(&mut state.rng).round().max(0.0) as u64;
            let last = *state.prefix.last().expect("nonempty");
            state.prefix.push(last + r);
        }
        Ok(())
    }

    /// `psi(x) = i + r_1 + ... + r_x`.
    pub fn value(&self, x: u64) -> Result<u64> {
        let mut state = self.state.lock().expect("gw state poisoned");
        self.ensure(&mut state, x)?;
        Ok(self.immigration + state.prefix[x as usize])
    }

    /// `sup_{x <= x_max} |psi(x) - A x| / (x^alpha + 1)`.
    pub fn envelope_constant(&self, alpha: f64, x_max: u64) -> Result<f64> {
        let mut state = self.state.lock().expect("gw state poisoned");
        self.ensure(&mut state, x_max)?;
        let mut sup: f64 = 0.0;
        for (x, s) in state.prefix.iter().take(x_max as usize + 1).enumerate() {
            let xf = x as f64;
            let v = ((self.immigration + s) as f64 - self.a * xf).abs() / (xf.powf(alpha) + 1.0);
            sup = sup.max(v);
        }
        Ok(sup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// `max_x |psi(x) - A x| - B (1 + |x|^alpha)`; `<= 0` means the envelope holds.
    pub max_violation: f64,
    pub worst_x: f64,
}

impl EnvelopeReport {
    pub fn holds(&self) -> bool {
        self.max_violation <= 0.0
    }
}

/// Checks the `(AL^alpha)` envelope of `map` on `grid`, optionally with
/// overridden `(A, B)`. Rounding in `psi(x) - A x` is allowed for at
/// `8 eps (|psi(x)| + |A x|)`.
pub fn envelope_check_with(map: &MapSample, a: f64, b: f64, grid: &[f64]) -> Result<EnvelopeReport> {
    let mut report = EnvelopeReport { max_violation: f64::NEG_INFINITY, worst_x: f64::NAN };
    for &x in grid {
        let y = map.apply(x)?;
        let rounding = 8.0 * f64::EPSILON * (y.abs() + (a * x).abs());
        let v = (y - a * x).abs() - b * (1.0 + x.abs().powf(map.alpha)) - rounding;
        if v > report.max_violation {
            report = EnvelopeReport { max_violation: v, worst_x: x };
        }
    }
    Ok(report)
}

pub fn envelope_check(map: &MapSample, grid: &[f64]) -> Result<EnvelopeReport> {
    envelope_check_with(map, map.a, map.b, grid)
}

/// Central-difference slope with step `1e-4 (1 + |x|)`.
pub fn fd_slope(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-4 * (1.0 + x.abs());
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Checks that the finite-difference slope of a Goldie square-root map is
/// nondecreasing on `grid` and bounded by `A` (tolerance `1e-9`).
pub fn goldie_sqrt_derivative_check(map: &MapSample, grid: &[f64]) -> Result<bool> {
    let MapKind::GoldieSqrt { a, b, c } = map.kind else {
        return Err(invalid("derivative check needs a goldie_sqrt map"));
    };
    let delta = b * b - 4.0 * a * a * c;
    if delta > 0.0 {
        return Err(invalid(format!("goldie_sqrt derivative check needs delta <= 0, got {delta}")));
    }
    let f = |x: f64| (a * a * x * x + b * x + c).max(0.0).sqrt();
    let mut prev = f64::NEG_INFINITY;
    for &x in grid {
        let s = fd_slope(f, x);
        if s < prev - 1e-9 || s > a + 1e-9 {
            return Ok(false);
        }
        prev = s;
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cond1Report {
    /// `(beta, fraction of samples with inf over the grid >= beta)`.
    pub scan: Vec<(f64, f64)>,
    /// Largest scanned `beta` held by every sample, if any.
    pub beta: Option<f64>,
    pub min_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub checked: u64,
    pub violations: u64,
    /// Worst `(sample index, grid point, excess)`.
    pub worst: Option<(usize, f64, f64)>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessAudit {
    pub samples: usize,
    pub cond1: Cond1Report,
    /// `A x <= psi(x) <= A x + B`.
    pub cond2: ConditionReport,
    /// Lipschitz constant equal to `A`.
    pub cond3: ConditionReport,
}

impl UniquenessAudit {
    pub fn pass(&self) -> bool {
        self.cond1.pass && self.cond2.pass && self.cond3.pass
    }
}

/// Audits the three conditions of the uniqueness criterion on `samples`
/// draws over a grid in `[0, inf)`.
pub fn uniqueness_criterion_audit<R: Rng + ?Sized>(
    spec: &FamilySpec,
    samples: usize,
    grid: &[f64],
    rng: &mut R,
) -> Result<UniquenessAudit> {
    if spec.domain() != Domain::NonNegative {
        return Err(invalid("uniqueness audit needs a family on [0, inf)"));
    }
    let betas = [1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 5.0];
    let mut held = [0u64; 7];
    let mut min_value = f64::INFINITY;
    let mut c2 = ConditionReport { checked: 0, violations: 0, worst: None, pass: true };
    let mut c3 = ConditionReport { checked: 0, violations: 0, worst: None, pass: true };
    let bump = |r: &mut ConditionReport, i: usize, x: f64, excess: f64| {
        r.violations += 1;
        if r.worst.is_none_or(|w| excess > w.2) {
            r.worst = Some((i, x, excess));
        }
    };
    for i in 0..samples {
        let m = spec.sample(rng)?;
        let mut inf = f64::INFINITY;
        for &x in grid {
            let y = m.apply(x)?;
            inf = inf.min(y);
            let tol = 1e-12 * (1.0 + (m.a * x).abs());
            c2.checked += 1;
            let lower = m.a * x - y;
            let upper = y - m.a * x - m.b;
            if lower > tol || upper > tol {
                bump(&mut c2, i, x, lower.max(upper));
            }
            c3.checked += 1;
            let h = 1e-4 * (1.0 + x);
            let lo = (x - h).max(0.0);
            let slope = ((m.kind.eval(x + h)? - m.kind.eval(lo)?) / (x + h - lo)).abs();
            if slope > m.a + 1e-9 * (1.0 + m.a) {
                bump(&mut c3, i, x, slope - m.a);
            }
        }
        min_value = min_value.min(inf);
        for (k, beta) in betas.iter().enumerate() {
            if inf >= *beta {
                held[k] += 1;
            }
        }
    }
    c2.pass = c2.violations == 0;
    c3.pass = c3.violations == 0;
    let scan: Vec<(f64, f64)> = betas.iter().zip(held).map(|(b, h)| (*b, h as f64 / samples.max(1) as f64)).collect();
    let beta = scan.iter().filter(|(_, f)| *f == 1.0).map(|(b, _)| *b).next_back();
    Ok(UniquenessAudit {
        samples,
        cond1: Cond1Report { scan, beta, min_value, pass: beta.is_some() },
        cond2: c2,
        cond3: c3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwEnvelopeReport {
    pub alpha: f64,
    pub x_max: u64,
    /// Sorted per-sample envelope constants.
    pub values: Vec<f64>,
    pub p99: f64,
    pub max: f64,
    /// Empirical `E[(log+ B)^(2+eps)]`.
    pub log_moment: f64,
    pub eps: f64,
}

/// Empirical law of `B(psi) = sup_{x <= x_max} |psi(x) - A x|/(x^alpha + 1)`.
pub fn gw_envelope_constant<R: Rng + ?Sized>(
    spec: &FamilySpec,
    alpha: f64,
    x_max: u64,
    samples: usize,
    eps: f64,
    rng: &mut R,
) -> Result<GwEnvelopeReport> {
    let FamilySpec::GaltonWatson { environments, cap, .. } = spec else {
        return Err(invalid("gw_envelope_constant needs a galton_watson family"));
    };
    if !(0.75 < alpha && alpha < 1.0) {
        return Err(invalid("gw_envelope_constant needs alpha in (3/4, 1)"));
    }
    let spec = FamilySpec::GaltonWatson {
        environments: environments.clone(),
        alpha,
        b_horizon: 0,
        cap: (*cap).max(x_max),
    };
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let m = spec.sample(rng)?;
        let MapKind::GaltonWatson(gw) = &m.kind else { unreachable!() };
        values.push(gw.envelope_constant(alpha, x_max)?);
    }
    values.sort_by(f64::total_cmp);
    let log_moment = values.iter().map(|b| b.ln().max(0.0).powf(2.0 + eps)).sum::<f64>() / samples.max(1) as f64;
    Ok(GwEnvelopeReport {
        alpha,
        x_max,
        p99: quantile_sorted(&values, 0.99),
        max: values.last().copied().unwrap_or(0.0),
        values,
        log_moment,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityAudit {
    pub mean_log_a: f64,
    pub se: f64,
    pub analytic: Option<f64>,
    /// `|mean| <= 3 se` (or the analytic value vanishes).
    pub critical: bool,
}

/// Monte Carlo estimate of `E[log A]`.
pub fn criticality_audit<R: Rng + ?Sized>(spec: &FamilySpec, samples: usize, rng: &mut R) -> Result<CriticalityAudit> {
    let mut mv = MeanVar::new();
    for _ in 0..samples {
        mv.push(spec.sample(rng)?.a.ln());
    }
    let analytic = spec.mean_log_a();
    let critical = match analytic {
        Some(v) => v.abs() < 1e-9,
        None => mv.mean.abs() <= 3.0 * mv.se(),
    };
    Ok(CriticalityAudit { mean_log_a: mv.mean, se: mv.se(), analytic, critical })
}

/// Log-spaced grid from `lo` to `hi` (both > 0) with `n` points.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

/// Uniform grid on `[lo, hi]` with `n` points.
pub fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn affine_examples() {
        let spec = FamilySpec::Affine { log_a: Dist::constant(2f64.ln()), b: Dist::constant(3.0) };
        let m = spec.sample(&mut stream(0, 0)).unwrap();
        assert!((m.a - 2.0).abs() < 1e-15);
        assert_eq!((m.b, m.alpha), (3.0, 0.0));
        assert!((m.apply(1.0).unwrap() - 5.0).abs() < 1e-14);
        let grid = lin_grid(-100.0, 100.0, 201);
        let r = envelope_check(&m, &grid).unwrap();
        assert!((r.max_violation + 3.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn goldie_max_example() {
        let m = MapSample::goldie_max(1.0, 2.0, 0.0).unwrap();
        assert_eq!(m.apply(0.0).unwrap(), 2.0);
        assert_eq!(m.apply(5.0).unwrap(), 5.0);
        let grid = lin_grid(0.0, 1000.0, 10_001);
        assert!(envelope_check_with(&m, 1.0, 2.0, &grid).unwrap().holds());
        assert!(envelope_check(&m, &grid).unwrap().holds());
    }

    #[test]
    fn goldie_sqrt_examples() {
        let m = MapSample::goldie_sqrt(1.0, 0.0, 1.0).unwrap();
        assert_eq!(m.apply(0.0).unwrap(), 1.0);
        let m = MapSample::goldie_sqrt(2.0, 1.0, 1.0).unwrap();
        let grid: Vec<f64> = std::iter::once(0.0).chain(log_grid(1e-6, 1e6, 2000)).collect();
        assert!(envelope_check_with(&m, 2.0, 2.0, &grid).unwrap().holds());
        assert!(envelope_check(&m, &grid).unwrap().holds());
        // Wrong slope: violation at the end of the grid.
        let bad = envelope_check_with(&m, 2.1, 2.0, &grid).unwrap();
        assert!(bad.max_violation > 0.0);
        assert_eq!(bad.worst_x, 1e6);
    }

    #[test]
    fn goldie_sqrt_derivative() {
        let m = MapSample::goldie_sqrt(1.0, 0.0, 1.0).unwrap();
        let grid = lin_grid(0.0, 100.0, 1001);
        assert!(goldie_sqrt_derivative_check(&m, &grid).unwrap());
        // Closed form x/sqrt(x^2+1) as oracle for the slope itself.
        for &x in &grid {
            let fd = fd_slope(|t| (t * t + 1.0).sqrt(), x);
            assert!((fd - x / (x * x + 1.0).sqrt()).abs() < 1e-7);
        }
        let lin = MapSample::goldie_sqrt(2.0, 0.0, 0.0).unwrap();
        assert!(goldie_sqrt_derivative_check(&lin, &lin_grid(1.0, 10.0, 10)).unwrap());
        assert!(goldie_sqrt_derivative_check(&m, &[3.0]).unwrap());
        let pos = MapSample { kind: MapKind::GoldieSqrt { a: 1.0, b: 5.0, c: 1.0 }, ..m };
        assert!(goldie_sqrt_derivative_check(&pos, &grid).is_err());
    }

    #[test]
    fn reflect_example() {
        let m = MapSample::reflect(3.0);
        assert_eq!(m.apply(1.0).unwrap(), 2.0);
        assert!(m.apply(-1.0).is_err());
    }

    #[test]
    fn galton_watson_examples() {
        let env = |off: f64, imm: f64| GwEnvironment { weight: 1.0, offspring: Dist::constant(off), immigration: Dist::constant(imm) };
        let spec = FamilySpec::GaltonWatson { environments: vec![env(1.0, 5.0)], alpha: 0.8, b_horizon: 64, cap: 1 << 20 };
        let m = spec.sample(&mut stream(1, 0)).unwrap();
        assert_eq!(m.a, 1.0);
        assert_eq!(m.apply(7.0).unwrap(), 12.0);
        let mut rng = stream(2, 0);
        let r = gw_envelope_constant(
            &FamilySpec::GaltonWatson { environments: vec![env(1.0, 0.0)], alpha: 0.8, b_horizon: 1, cap: 100 },
            0.8, 100, 5, 0.1, &mut rng,
        )
        .unwrap();
        assert!(r.values.iter().all(|b| *b == 0.0));
        let r = gw_envelope_constant(
            &FamilySpec::GaltonWatson { environments: vec![env(2.0, 0.0)], alpha: 0.8, b_horizon: 1, cap: 100 },
            0.8, 100, 5, 0.1, &mut rng,
        )
        .unwrap();
        assert!(r.values.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn galton_watson_is_a_function_and_capped() {
        let spec = FamilySpec::GaltonWatson {
            environments: vec![GwEnvironment { weight: 1.0, offspring: Dist::Poisson { lambda: 1.3 }, immigration: Dist::constant(1.0) }],
            alpha: 0.8,
            b_horizon: 16,
            cap: 1000,
        };
        let m = spec.sample(&mut stream(3, 0)).unwrap();
        let first: Vec<f64> = (0..50).map(|x| m.apply(x as f64).unwrap()).collect();
        let again: Vec<f64> = (0..50).rev().map(|x| m.apply(x as f64).unwrap()).collect();
        assert_eq!(first, again.into_iter().rev().collect::<Vec<_>>());
        assert!(first.windows(2).all(|w| w[1] >= w[0]));
        assert!(matches!(m.apply(1001.0), Err(Error::PopulationCap { .. })));
        assert!(m.apply(1.5).is_err());
    }

    #[test]
    fn uniqueness_audit_examples() {
        let grid = lin_grid(0.0, 50.0, 201);
        let mut rng = stream(4, 0);
        let gm = FamilySpec::GoldieMax {
            a: Dist::LogNormal { mu: 0.0, sigma: 0.5 },
            b: Dist::Uniform { lo: 0.0, hi: 2.0 },
            c: Dist::Uniform { lo: 1.0, hi: 2.0 },
        };
        let audit = uniqueness_criterion_audit(&gm, 200, &grid, &mut rng).unwrap();
        assert!(audit.cond1.pass && audit.cond1.beta.unwrap() >= 1.0);
        assert!(audit.cond2.pass && audit.cond3.pass, "{audit:?}");

        let refl = FamilySpec::Reflected { u: Dist::Uniform { lo: 0.5, hi: 2.0 } };
        let audit = uniqueness_criterion_audit(&refl, 50, &grid, &mut rng).unwrap();
        assert!(!audit.cond2.pass);
        assert!(audit.cond3.pass);

        let aff = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(1.0) };
        assert!(uniqueness_criterion_audit(&aff, 10, &grid, &mut rng).is_err());
    }

    #[test]
    fn criticality() {
        let spec = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(1.0) };
        let audit = criticality_audit(&spec, 10_000, &mut stream(5, 0)).unwrap();
        assert!(audit.critical);
        assert!(audit.mean_log_a.abs() < 4.0 * audit.se);
    }
}
