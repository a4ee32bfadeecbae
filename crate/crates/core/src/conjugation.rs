//! Conjugations bringing map families to the `(AL)` normal form with
//! `alpha = 0`: power, interval and exponential.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::maps::{self, Domain, FamilyTag, MapKind, MapSample};

/// A monotone bijection `c` used to form `c o psi o c^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "conjugator", rename_all = "snake_case")]
pub enum Conjugator {
    /// `r(x) = sign(x)|x|^(1-alpha)` on `R`.
    Power { alpha: f64 },
    /// `r(u) = -1/u + 1/(1-u)` from `(0, 1)` onto `R`.
    Interval,
    /// `s(x) = e^x` for `x > 1`, `-e^-x` for `x < -1`, `e x` in between.
    Exponential,
}

impl Conjugator {
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        match *self {
            Conjugator::Power { alpha } => x.signum() * x.abs().powf(1.0 - alpha),
            Conjugator::Interval => -1.0 / x + 1.0 / (1.0 - x),
            Conjugator::Exponential => exp_s(x),
        }
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            Conjugator::Power { alpha } => y.signum() * y.abs().powf(1.0 / (1.0 - alpha)),
            Conjugator::Interval => r_inverse_pair(y).0,
            Conjugator::Exponential => exp_s_inv(y),
        }
    }
}

#[inline]
pub fn exp_s(x: f64) -> f64 {
    if x > 1.0 {
        x.exp()
    } else if x < -1.0 {
        -(-x).exp()
    } else {
        std::f64::consts::E * x
    }
}

#[inline]
pub fn exp_s_inv(y: f64) -> f64 {
    let e = std::f64::consts::E;
    if y > e {
        y.ln()
    } else if y < -e {
        -(-y).ln()
    } else {
        y / e
    }
}

/// `(u, 1 - u)` with `r(u) = x`, each component computed without
/// cancellation.
#[inline]
pub fn r_inverse_pair(x: f64) -> (f64, f64) {
    // r(u) = x solves x v^2 - (x + 2) v + 1 = 0 for v = 1 - u.
    let root = (x * x + 4.0).sqrt();
    if x >= 0.0 {
        let v = 2.0 / (x + 2.0 + root);
        (1.0 - v, v)
    } else {
        let u = 2.0 / (-x + 2.0 + root);
        (u, 1.0 - u)
    }
}

#[inline]
fn r_from_pair(u: f64, v: f64) -> f64 {
    -1.0 / u + 1.0 / v
}

/// Automorphisms of `[0, 1]` fixing both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phi", rename_all = "snake_case")]
pub enum IntervalPhi {
    Identity,
    /// `u + (a - 1) u (1 - u)(1 - 2u)`: slope `a` at both endpoints,
    /// increasing for `0 < a < 3`.
    Cubic { a: f64 },
    /// `u^2`.
    Square,
    /// `c u / (c u + 1 - u)`: slope `c` at 0 and `1/c` at 1.
    Mobius { c: f64 },
}

impl IntervalPhi {
    /// `(phi(u), 1 - phi(u))` given `(u, 1 - u)`.
    #[inline]
    pub fn eval_pair(&self, u: f64, v: f64) -> (f64, f64) {
        match *self {
            IntervalPhi::Identity => (u, v),
            IntervalPhi::Cubic { a } => {
                let h = (a - 1.0) * u * v * (v - u);
                (u + h, v - h)
            }
            IntervalPhi::Square => (u * u, v * (1.0 + u)),
            IntervalPhi::Mobius { c } => {
                let d = c * u + v;
                (c * u / d, v / d)
            }
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.eval_pair(u, 1.0 - u).0
    }

    pub fn slope_at_zero(&self) -> f64 {
        match *self {
            IntervalPhi::Identity => 1.0,
            IntervalPhi::Cubic { a } => a,
            IntervalPhi::Square => 0.0,
            IntervalPhi::Mobius { c } => c,
        }
    }

    pub fn slope_at_one(&self) -> f64 {
        match *self {
            IntervalPhi::Identity => 1.0,
            IntervalPhi::Cubic { a } => a,
            IntervalPhi::Square => 2.0,
            IntervalPhi::Mobius { c } => 1.0 / c,
        }
    }
}

/// `r o phi o r^-1 (x)`.
#[inline]
pub fn interval_conjugate_eval(phi: &IntervalPhi, x: f64) -> f64 {
    let (u, v) = r_inverse_pair(x);
    let (p, q) = phi.eval_pair(u, v);
    r_from_pair(p, q)
}

/// Maps of `R` that behave like translations towards the origin by `u` at
/// infinity, `|phi(x) - x + sign(x) u| <= v e^-|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "translation", rename_all = "snake_case")]
pub enum AsymptoticTranslation {
    Identity,
    /// `|x - u|` on `[0, inf)`.
    Reflect { u: f64 },
    /// `x - u clamp(x, -1, 1)`.
    ClampedShift { u: f64 },
}

impl AsymptoticTranslation {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            AsymptoticTranslation::Identity => x,
            AsymptoticTranslation::Reflect { u } => (x - u).abs(),
            AsymptoticTranslation::ClampedShift { u } => x - u * x.clamp(-1.0, 1.0),
        }
    }

    pub fn u(&self) -> f64 {
        match *self {
            AsymptoticTranslation::Identity => 0.0,
            AsymptoticTranslation::Reflect { u } | AsymptoticTranslation::ClampedShift { u } => u,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            AsymptoticTranslation::Reflect { .. } => Domain::NonNegative,
            _ => Domain::Real,
        }
    }

    pub fn is_monotone(&self) -> bool {
        match *self {
            AsymptoticTranslation::Reflect { .. } => false,
            AsymptoticTranslation::ClampedShift { u } => u <= 1.0,
            AsymptoticTranslation::Identity => true,
        }
    }

    /// Points beyond which the map is an exact translation, and its kinks.
    fn structure(&self) -> (f64, Vec<f64>) {
        match *self {
            AsymptoticTranslation::Identity => (0.0, vec![]),
            AsymptoticTranslation::Reflect { u } => ((u + 1.0).max(1.0).max(u.abs() + 1.0), vec![u, u - 1.0, u + 1.0, 1.0]),
            AsymptoticTranslation::ClampedShift { u } => (u.abs() + 2.0, vec![-1.0, 1.0, u + 1.0, -u - 1.0]),
        }
    }
}

/// Safety factor applied to measured envelope sups.
pub const B_SAFETY: f64 = 1.25;

fn sup_deviation(f: impl Fn(f64) -> f64, a: f64, grid: &[f64]) -> f64 {
    grid.iter().map(|&x| (f(x) - a * x).abs()).fold(0.0, f64::max)
}

/// Symmetric grid: zero, and `±` a log grid on `[lo, hi]`.
pub fn symmetric_log_grid(lo: f64, hi: f64, n: usize, domain: Domain) -> Vec<f64> {
    let pos = maps::log_grid(lo, hi, n);
    let mut g = vec![0.0];
    g.extend(pos.iter().copied());
    if domain == Domain::Real {
        g.extend(pos.iter().map(|x| -x));
    }
    g
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerConjugateReport {
    #[serde(skip)]
    pub map: MapSample,
    pub a0: f64,
    pub b0: f64,
    /// `log+ B0 / (|log A| + log+ B + 1)`, the smallest constant consistent
    /// with this sample.
    pub c_alpha: f64,
}

/// Internal grid used to size `B0`.
pub fn power_grid(domain: Domain) -> Vec<f64> {
    symmetric_log_grid(1e-3, 1e9, 600, domain)
}

/// `r o psi o r^-1` with `r(x) = sign(x)|x|^(1-alpha)`.
pub fn power_conjugate(map: &MapSample) -> Result<PowerConjugateReport> {
    let alpha = map.alpha;
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid("power conjugation needs 0 <= alpha < 1"));
    }
    if alpha == 0.0 {
        return Ok(PowerConjugateReport { map: map.clone(), a0: map.a, b0: map.b, c_alpha: 0.0 });
    }
    if !matches!(map.domain, Domain::Real | Domain::NonNegative) {
        return Err(invalid("power conjugation needs a map of R or [0, inf)"));
    }
    let grid = power_grid(map.domain);
    let inner_grid: Vec<f64> = grid.iter().map(|&y| Conjugator::Power { alpha }.inverse(y)).collect();
    let env = maps::envelope_check(map, &inner_grid)?;
    if !env.holds() {
        return Err(Error::EnvelopeFailure { x: env.worst_x, violation: env.max_violation });
    }
    let conj = Conjugator::Power { alpha };
    let kind = MapKind::Conjugated { conj, inner: Box::new(map.kind.clone()) };
    let a0 = map.a.powf(1.0 - alpha);
    let mut sup = 0.0f64;
    for &x in &grid {
        sup = sup.max((kind.eval(x)? - a0 * x).abs());
    }
    let b0 = (B_SAFETY * sup).max(1.0);
    let c_alpha = b0.ln().max(0.0) / (map.a.ln().abs() + map.b.ln().max(0.0) + 1.0);
    let out = MapSample::new(FamilyTag::Conjugated, kind, a0, b0, 0.0, map.domain)?;
    Ok(PowerConjugateReport { map: out, a0, b0, c_alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaConstants {
    pub b0_1: f64,
    pub b0_2: f64,
    pub b0_3: f64,
    pub b1_1: f64,
    pub b1_2: f64,
    pub b1_3: f64,
}

impl BetaConstants {
    /// Positive infima and finite suprema.
    pub fn valid(&self) -> bool {
        self.b0_1 > 0.0
            && self.b0_2 > 0.0
            && self.b1_1 > 0.0
            && self.b1_2 > 0.0
            && self.b0_3.is_finite()
            && self.b1_3.is_finite()
    }

    /// The bracket of the interval-conjugation bound, i.e. the bound on
    /// `B` with `C_r = 1`.
    pub fn bound(&self, a: f64) -> f64 {
        (1.0 + a + self.b0_3) / (a * self.b0_2)
            + 1.0 / self.b0_1
            + (1.0 + a + self.b1_3) / (a * self.b1_2)
            + 1.0 / self.b1_1
    }
}

/// Chebyshev–Lobatto points on `[0, 1/2]` without 0, and on `[1/2, 1]`
/// without 1.
pub fn chebyshev_halves(n: usize) -> (Vec<f64>, Vec<f64>) {
    let node = |k: usize| 0.25 * (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos());
    let left = (1..=n).map(node).collect();
    let right = (0..n).map(|k| 0.5 + node(k)).collect();
    (left, right)
}

pub fn beta_constants_on(phi: &IntervalPhi, left: &[f64], right: &[f64]) -> BetaConstants {
    let a0 = phi.slope_at_zero();
    let a1 = phi.slope_at_one();
    let mut c = BetaConstants {
        b0_1: f64::INFINITY,
        b0_2: f64::INFINITY,
        b0_3: 0.0,
        b1_1: f64::INFINITY,
        b1_2: f64::INFINITY,
        b1_3: 0.0,
    };
    for &u in left {
        let (p, q) = phi.eval_pair(u, 1.0 - u);
        c.b0_1 = c.b0_1.min(q);
        c.b0_2 = c.b0_2.min(p / u);
        c.b0_3 = c.b0_3.max(((p - a0 * u) / (u * u)).abs());
    }
    for &u in right {
        let v = 1.0 - u;
        let (p, q) = phi.eval_pair(u, v);
        c.b1_1 = c.b1_1.min(p);
        c.b1_2 = c.b1_2.min(q / v);
        // phi(u) - 1 - a (u - 1) = -q + a v.
        c.b1_3 = c.b1_3.max(((a1 * v - q) / (v * v)).abs());
    }
    c
}

/// The six constants on the default grid of `10^4` Chebyshev points per half.
pub fn beta_constants(phi: &IntervalPhi) -> BetaConstants {
    let (l, r) = chebyshev_halves(10_000);
    beta_constants_on(phi, &l, &r)
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalReport {
    pub a_phi: f64,
    pub betas: BetaConstants,
    /// Bound bracket with `C_r = 1`.
    pub bound: f64,
    /// Grid sup of `|Psi(x) - x / a_phi|`.
    pub measured_sup: f64,
    /// `measured_sup / bound`, an empirical lower bound on `C_r`.
    pub implied_c_r: f64,
}

fn interval_grid() -> Vec<f64> {
    symmetric_log_grid(1e-2, 1e6, 80, Domain::Real)
}

fn interval_slope(phi: &IntervalPhi) -> Result<f64> {
    let (s0, s1) = (phi.slope_at_zero(), phi.slope_at_one());
    if !(s0 > 0.0) || (s0 - s1).abs() > 1e-9 * s0.max(s1) {
        return Err(invalid(format!("interval map needs phi'(0) = phi'(1) > 0, got {s0} and {s1}")));
    }
    Ok(s0)
}

/// `Psi = r o phi o r^-1` with `A = 1 / a_phi` and `B` the safety-scaled grid
/// sup of `|Psi(x) - A x|`.
pub fn interval_conjugate(phi: IntervalPhi) -> Result<MapSample> {
    let a_phi = interval_slope(&phi)?;
    let a = 1.0 / a_phi;
    let sup = sup_deviation(|x| interval_conjugate_eval(&phi, x), a, &interval_grid());
    MapSample::new(FamilyTag::Interval, MapKind::IntervalConjugate(phi), a, (B_SAFETY * sup).max(1.0), 0.0, Domain::Real)
}

/// Full audit of the interval conjugation: endpoint slopes, beta constants
/// on the default grid, the bound bracket and the measured envelope.
pub fn interval_report(phi: &IntervalPhi) -> Result<IntervalReport> {
    let a_phi = interval_slope(phi)?;
    let betas = beta_constants(phi);
    if !betas.valid() {
        return Err(Error::Degenerate(format!("beta constants out of range: {betas:?}")));
    }
    let bound = betas.bound(a_phi);
    let grid = symmetric_log_grid(1e-3, 1e6, 1000, Domain::Real);
    let measured_sup = sup_deviation(|x| interval_conjugate_eval(phi, x), 1.0 / a_phi, &grid);
    Ok(IntervalReport { a_phi, betas, bound, measured_sup, implied_c_r: measured_sup / bound })
}

/// Audited `v` in `|phi(x) - x + sign(x) u| <= v e^-|x|` over `[-50, 50]`.
pub fn translation_envelope(t: &AsymptoticTranslation) -> f64 {
    let u = t.u();
    let lo = if t.domain() == Domain::NonNegative { 0.0 } else { -50.0 };
    maps::lin_grid(lo, 50.0, 20_001)
        .into_iter()
        .map(|x| (t.eval(x) - x + x.signum() * u).abs() * x.abs().exp())
        .fold(0.0, f64::max)
}

/// `s o phi o s^-1` with `A = e^-u`.
pub fn exp_conjugate(t: AsymptoticTranslation) -> Result<MapSample> {
    let u = t.u();
    if !u.is_finite() || u.abs() > 600.0 {
        return Err(invalid(format!("translation length {u} out of range")));
    }
    let a = (-u).exp();
    let kind = MapKind::Conjugated { conj: Conjugator::Exponential, inner: Box::new(MapKind::Translation(t)) };
    let domain = t.domain();
    let (exact_from, kinks) = t.structure();
    // Beyond s(exact_from) the conjugate is exactly x -> a x.
    let hi = exp_s(exact_from);
    let lo = if domain == Domain::NonNegative { 0.0 } else { -hi };
    let mut grid = maps::lin_grid(lo, hi, 129);
    grid.extend(kinks.iter().map(|k| exp_s(*k)).filter(|x| *x >= lo && *x <= hi));
    grid.extend(maps::log_grid(1e-3, hi.max(2e-3), 32).into_iter().filter(|x| *x >= lo));
    let mut sup = 0.0f64;
    for &x in &grid {
        sup = sup.max((kind.eval(x)? - a * x).abs());
    }
    MapSample::new(FamilyTag::ExpReflected, kind, a, (B_SAFETY * sup).max(1.0), 0.0, domain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAuditReport {
    pub samples: u64,
    pub alpha_range: (f64, f64),
    pub grid_max: f64,
    /// Samples whose conjugate broke `|Psi(x) - A0 x| <= B0` on the grid.
    pub envelope_failures: u64,
    /// Samples with `A0 != A^(1 - alpha)` bit for bit.
    pub slope_mismatches: u64,
    /// Largest `max_violation` seen (negative: slack everywhere).
    pub max_violation: f64,
    pub max_b0: f64,
    /// Largest per-sample `c_alpha`, an empirical lower bound on the
    /// constant in `log+ B0 <= C (|log A| + log+ B + 1)`.
    pub max_c_alpha: f64,
    pub pass: bool,
}

/// Draws `samples` maps `x -> A x + B sign(x)|x|^alpha + C` with `alpha`
/// uniform on `alpha_range`, conjugates each to `alpha = 0`, and checks the
/// reported `(A0, B0)` on a symmetric log grid reaching `grid_max`.
pub fn power_conjugation_audit<R: rand::Rng + ?Sized>(
    a: &crate::dist::Dist,
    b: &crate::dist::Dist,
    c: &crate::dist::Dist,
    alpha_range: (f64, f64),
    samples: u64,
    grid_max: f64,
    rng: &mut R,
) -> Result<PowerAuditReport> {
    let (lo, hi) = alpha_range;
    if !(0.0 <= lo && lo <= hi && hi < 1.0) {
        return Err(invalid("alpha_range must satisfy 0 <= lo <= hi < 1"));
    }
    if !(grid_max > 1.0) {
        return Err(invalid("grid_max must exceed 1"));
    }
    let grid = symmetric_log_grid(1e-3, grid_max, 400, Domain::Real);
    let mut out = PowerAuditReport {
        samples,
        alpha_range,
        grid_max,
        envelope_failures: 0,
        slope_mismatches: 0,
        max_violation: f64::NEG_INFINITY,
        max_b0: 0.0,
        max_c_alpha: 0.0,
        pass: false,
    };
    for _ in 0..samples {
        let alpha = lo + (hi - lo) * rng.random::<f64>();
        let map = MapSample::power_perturbed(a.sample(rng), b.sample(rng), c.sample(rng), alpha)?;
        let r = power_conjugate(&map)?;
        if r.a0 != map.a.powf(1.0 - alpha) {
            out.slope_mismatches += 1;
        }
        let env = maps::envelope_check_with(&r.map, r.a0, r.b0, &grid)?;
        if !env.holds() {
            out.envelope_failures += 1;
        }
        out.max_violation = out.max_violation.max(env.max_violation);
        out.max_b0 = out.max_b0.max(r.b0);
        out.max_c_alpha = out.max_c_alpha.max(r.c_alpha);
    }
    out.pass = out.envelope_failures == 0 && out.slope_mismatches == 0;
    Ok(out)
}
