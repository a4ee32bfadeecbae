//! Seeded trajectory simulation: forward and backward orbits, affine
//! envelopes, coupled pairs and the normalized ratio.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::maps::{FamilySpec, FamilyTag, MapSample};
use crate::parallel;
use crate::rng::{stream, SimRng};
use crate::stats::MeanVar;

/// Trajectories abort once `|x|` exceeds this guard.
pub const OVERFLOW_GUARD: f64 = 1e300;

/// Relative tolerance of the sandwich and monotone-ratio assertions.
pub const REL_TOL: f64 = 1e-12;

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub seed: u64,
    /// Replica index; selects the random stream of `seed`.
    #[serde(default)]
    pub chain: u64,
    pub steps: u64,
    pub initial_points: Vec<f64>,
    #[serde(default = "default_stride")]
    pub stride: u64,
    /// After this step, record only at geometrically spaced times (ratio
    /// 1.01) instead of every `stride` steps.
    #[serde(default)]
    pub geometric_after: Option<u64>,
}

impl TrajectoryConfig {
    pub fn new(seed: u64, steps: u64, x0: f64) -> Self {
        TrajectoryConfig { seed, chain: 0, steps, initial_points: vec![x0], stride: 1, geometric_after: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps must be >= 1"));
        }
        if self.stride == 0 {
            return Err(invalid("stride must be >= 1"));
        }
        if self.initial_points.is_empty() {
            return Err(invalid("at least one initial point is required"));
        }
        Ok(())
    }

    fn records(&self, n: u64, next_geo: &mut f64) -> bool {
        match self.geometric_after {
            Some(g) if n > g => {
                if n as f64 >= *next_geo {
                    while *next_geo <= n as f64 {
                        *next_geo = (*next_geo * 1.01).max(*next_geo + 1.0);
                    }
                    true
                } else {
                    false
                }
            }
            _ => n.is_multiple_of(self.stride),
        }
    }
}

#[inline]
fn guard(step: u64, x: f64) -> Result<f64> {
    if x.abs() > OVERFLOW_GUARD || x.is_nan() {
        return Err(Error::Overflow { step, value: x, guard: OVERFLOW_GUARD });
    }
    Ok(x)
}

/// Forward orbit `X_n = Psi_n(X_{n-1})` yielding recorded `(n, X_n)`,
/// starting with `(0, x)`.
pub struct ForwardStream<'a> {
    spec: &'a FamilySpec,
    config: &'a TrajectoryConfig,
    rng: SimRng,
    x: f64,
    n: u64,
    next_geo: f64,
    started: bool,
    done: bool,
}

impl Iterator for ForwardStream<'_> {
    type Item = Result<(u64, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.next_geo = self.config.geometric_after.map_or(0.0, |g| g as f64 + 1.0);
            return Some(Ok((0, self.x)));
        }
        while self.n < self.config.steps {
            self.n += 1;
            let step = self.spec.sample(&mut self.rng).and_then(|m| m.apply(self.x)).and_then(|y| guard(self.n, y));
            match step {
                Ok(y) => self.x = y,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
            if self.config.records(self.n, &mut self.next_geo) {
                return Some(Ok((self.n, self.x)));
            }
        }
        self.done = true;
        None
    }
}

/// One stream per initial point, all driven by the same maps.
pub fn simulate_forward<'a>(spec: &'a FamilySpec, config: &'a TrajectoryConfig) -> Result<Vec<ForwardStream<'a>>> {
    config.validate()?;
    spec.validate()?;
    let domain = spec.domain();
    config
        .initial_points
        .iter()
        .map(|&x| {
            if !domain.contains(x) {
                return Err(Error::Domain { x, domain: domain.name() });
            }
            Ok(ForwardStream {
                spec,
                config,
                rng: stream(config.seed, config.chain),
                x,
                n: 0,
                next_geo: 0.0,
                started: false,
                done: false,
            })
        })
        .collect()
}

/// Runs one chain and hands every `stride`-th state `X_n`, `n >= 1`, to
/// `visit`. Returns the final state.
pub fn run_chain(
    spec: &FamilySpec,
    seed: u64,
    chain: u64,
    x0: f64,
    steps: u64,
    stride: u64,
    mut visit: impl FnMut(u64, f64),
) -> Result<f64> {
    let mut rng = stream(seed, chain);
    let mut x = x0;
    let stride = stride.max(1);
    for n in 1..=steps {
        let m = spec.sample(&mut rng)?;
        x = guard(n, m.kind.eval(x)?)?;
        if n % stride == 0 {
            visit(n, x);
        }
    }
    Ok(x)
}

/// Draws the first `steps` maps of chain `config.chain`.
pub fn sample_maps(spec: &FamilySpec, seed: u64, chain: u64, steps: u64) -> Result<Vec<MapSample>> {
    let mut rng = stream(seed, chain);
    (0..steps).map(|_| spec.sample(&mut rng)).collect()
}

/// Backward values `Psi_1 o ... o Psi_n (x)` at recorded `n`, using the
/// same maps as the forward orbit. Quadratic in `steps`.
pub fn simulate_backward(spec: &FamilySpec, config: &TrajectoryConfig, x: f64) -> Result<Vec<(u64, f64)>> {
    config.validate()?;
    let maps = sample_maps(spec, config.seed, config.chain, config.steps)?;
    backward_values(&maps, x, config)
}

fn backward_values(maps: &[MapSample], x: f64, config: &TrajectoryConfig) -> Result<Vec<(u64, f64)>> {
    let mut out = vec![(0, x)];
    let mut next_geo = config.geometric_after.map_or(0.0, |g| g as f64 + 1.0);
    for n in 1..=maps.len() as u64 {
        if !config.records(n, &mut next_geo) {
            continue;
        }
        let mut v = x;
        for m in maps[..n as usize].iter().rev() {
            v = guard(n, m.apply(v)?)?;
        }
        out.push((n, v));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTriple {
    pub n: u64,
    pub z: f64,
    pub x: f64,
    pub y: f64,
}

#[inline]
fn sandwich_ok(t: &EnvelopeTriple) -> bool {
    let scale = t.z.abs().max(t.x.abs()).max(t.y.abs()).max(1.0);
    t.z - t.x <= REL_TOL * scale && t.x - t.y <= REL_TOL * scale
}

/// `Z_n = A_n Z_{n-1} - B_n <= X_n <= Y_n = A_n Y_{n-1} + B_n`, driven by
/// the same maps, with the sandwich asserted at every step.
pub fn simulate_envelopes(spec: &FamilySpec, config: &TrajectoryConfig) -> Result<Vec<EnvelopeTriple>> {
    config.validate()?;
    let x0 = config.initial_points[0];
    let mut out = Vec::new();
    let mut next_geo = config.geometric_after.map_or(0.0, |g| g as f64 + 1.0);
    out.push(EnvelopeTriple { n: 0, z: x0, x: x0, y: x0 });
    envelope_run(spec, config.seed, config.chain, x0, config.steps, |t| {
        if config.records(t.n, &mut next_geo) {
            out.push(*t);
        }
    })?;
    Ok(out)
}

fn envelope_run(
    spec: &FamilySpec,
    seed: u64,
    chain: u64,
    x0: f64,
    steps: u64,
    mut visit: impl FnMut(&EnvelopeTriple),
) -> Result<()> {
    spec.validate()?;
    let domain = spec.domain();
    if !domain.contains(x0) {
        return Err(Error::Domain { x: x0, domain: domain.name() });
    }
    let mut rng = stream(seed, chain);
    let (mut z, mut x, mut y) = (x0, x0, x0);
    for n in 1..=steps {
        let m = spec.sample(&mut rng)?;
        if m.alpha != 0.0 {
            return Err(invalid("affine envelopes need alpha = 0 maps"));
        }
        z = guard(n, m.a * z - m.b)?;
        x = guard(n, m.kind.eval(x)?)?;
        y = guard(n, m.a * y + m.b)?;
        let t = EnvelopeTriple { n, z, x, y };
        if !sandwich_ok(&t) {
            return Err(Error::SandwichViolation { step: n, z, x, y });
        }
        visit(&t);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichSummary {
    pub family: FamilyTag,
    pub replicas: u64,
    pub steps: u64,
    pub checked: u64,
    pub violations: u64,
}

/// Runs the envelope recursion on `replicas` independent chains. A violation
/// aborts with [`Error::SandwichViolation`].
pub fn envelope_replicas(spec: &FamilySpec, seed: u64, replicas: u64, steps: u64, x0: f64) -> Result<SandwichSummary> {
    let counts = parallel::try_replicas(replicas, |chain| {
        let mut checked = 0u64;
        envelope_run(spec, seed, chain, x0, steps, |_| checked += 1)?;
        Ok::<u64, Error>(checked)
    })?;
    Ok(SandwichSummary { family: spec.tag(), replicas, steps, checked: counts.iter().sum(), violations: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledReport {
    pub x: f64,
    pub y: f64,
    pub k: Interval,
    pub replicas: u64,
    /// Times at which `d_n` is averaged.
    pub times: Vec<u64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Number of recorded `(replica, n)` with `|X^x - X^y| > A_1...A_n |x - y|`
    /// (only meaningful for families whose Lipschitz constant is `A`).
    pub lipschitz_violations: u64,
}

/// `d_n = 1_K(X_n^x) |X_n^x - X_n^y|` under common randomness, averaged over
/// replicas at each of `times`.
pub fn coupled_pair(
    spec: &FamilySpec,
    x: f64,
    y: f64,
    k: Interval,
    seed: u64,
    replicas: u64,
    times: &[u64],
) -> Result<CoupledReport> {
    let horizon = times.iter().copied().max().unwrap_or(0);
    let per = parallel::try_replicas(replicas, |chain| -> Result<(Vec<f64>, u64)> {
        let mut rng = stream(seed, chain);
        let (mut a, mut b) = (x, y);
        let mut log_prod = 0.0f64;
        let mut d = Vec::with_capacity(times.len());
        let mut viol = 0u64;
        let mut ti = 0;
        for n in 1..=horizon {
            let m = spec.sample(&mut rng)?;
            a = guard(n, m.kind.eval(a)?)?;
            b = guard(n, m.kind.eval(b)?)?;
            log_prod += m.a.ln();
            while ti < times.len() && times[ti] == n {
                let gap = (a - b).abs();
                if gap > log_prod.exp() * (x - y).abs() * (1.0 + 1e-9) + 1e-300 {
                    viol += 1;
                }
                d.push(if k.contains(a) { gap } else { 0.0 });
                ti += 1;
            }
        }
        Ok((d, viol))
    })?;
    let mut acc = vec![MeanVar::new(); times.len()];
    let mut lipschitz_violations = 0;
    for (d, v) in &per {
        for (m, val) in acc.iter_mut().zip(d) {
            m.push(*val);
        }
        lipschitz_violations += v;
    }
    Ok(CoupledReport {
        x,
        y,
        k,
        replicas,
        times: times.to_vec(),
        mean: acc.iter().map(|m| m.mean).collect(),
        se: acc.iter().map(|m| m.se()).collect(),
        lipschitz_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub y: f64,
    pub replicas: u64,
    pub steps: u64,
    pub thresholds: Vec<f64>,
    /// Per replica and threshold, the first `n` with `rho_n > M`.
    pub first_crossing: Vec<Vec<Option<u64>>>,
    pub violations: u64,
    /// Final `log rho_n` per replica.
    pub final_log_rho: Vec<f64>,
}

impl RatioReport {
    /// Fraction of replicas crossing each threshold.
    pub fn crossing_fraction(&self) -> Vec<f64> {
        (0..self.thresholds.len())
            .map(|j| {
                self.first_crossing.iter().filter(|c| c[j].is_some()).count() as f64 / self.replicas.max(1) as f64
            })
            .collect()
    }
}

/// `rho_n = X_n^y / (A_1 ... A_n)`, asserted nondecreasing through the local
/// form `X_n >= A_n X_{n-1}` (relative tolerance `1e-12`).
pub fn normalized_ratio(
    spec: &FamilySpec,
    y: f64,
    seed: u64,
    replicas: u64,
    steps: u64,
    thresholds: &[f64],
) -> Result<RatioReport> {
    let log_m: Vec<f64> = thresholds.iter().map(|m| m.ln()).collect();
    let per = parallel::try_replicas(replicas, |chain| -> Result<(Vec<Option<u64>>, f64)> {
        let mut rng = stream(seed, chain);
        let mut x = y;
        let mut log_prod = 0.0f64;
        let mut first = vec![None; thresholds.len()];
        for n in 1..=steps {
            let m = spec.sample(&mut rng)?;
            let next = guard(n, m.kind.eval(x)?)?;
            let floor = m.a * x;
            if next < floor - REL_TOL * floor.abs() {
                let prev = x / log_prod.exp();
                log_prod += m.a.ln();
                return Err(Error::MonotoneViolation { step: n, prev, next: next / log_prod.exp() });
            }
            x = next;
            log_prod += m.a.ln();
            let log_rho = x.ln() - log_prod;
            for (j, lm) in log_m.iter().enumerate() {
                if first[j].is_none() && log_rho > *lm {
                    first[j] = Some(n);
                }
            }
        }
        Ok((first, x.ln() - log_prod))
    })?;
    let (first_crossing, final_log_rho) = per.into_iter().unzip();
    Ok(RatioReport {
        y,
        replicas,
        steps,
        thresholds: thresholds.to_vec(),
        first_crossing,
        violations: 0,
        final_log_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Dist;
    use crate::group::GroupElement;

    fn det_affine(a: f64, b: f64) -> FamilySpec {
        FamilySpec::Affine { log_a: Dist::constant(a.ln()), b: Dist::constant(b) }
    }

    fn collect(spec: &FamilySpec, cfg: &TrajectoryConfig) -> Vec<Vec<(u64, f64)>> {
        simulate_forward(spec, cfg).unwrap().into_iter().map(|s| s.map(|r| r.unwrap()).collect()).collect()
    }

    #[test]
    fn identity_dynamics_are_constant() {
        let cfg = TrajectoryConfig::new(1, 50, 3.5);
        let out = collect(&FamilySpec::Identity, &cfg);
        assert!(out[0].iter().all(|(_, x)| *x == 3.5));
        assert_eq!(out[0].len(), 51);
    }

    #[test]
    fn doubling_orbit_closed_form() {
        let cfg = TrajectoryConfig::new(1, 20, 0.0);
        let out = collect(&det_affine(2.0, 1.0), &cfg);
        for (n, x) in &out[0] {
            assert_eq!(*x, 2f64.powi(*n as i32) - 1.0);
        }
    }

    #[test]
    fn determinism_contract() {
        let spec = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(1.0) };
        let cfg = TrajectoryConfig { initial_points: vec![0.0, 2.0], ..TrajectoryConfig::new(9, 500, 0.0) };
        assert_eq!(collect(&spec, &cfg), collect(&spec, &cfg));
        let other = TrajectoryConfig { seed: 10, ..cfg.clone() };
        assert_ne!(collect(&spec, &cfg), collect(&spec, &other));
    }

    #[test]
    fn affine_coupling_is_exact_dilation() {
        let spec = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.3), b: Dist::normal(0.0, 1.0) };
        let cfg = TrajectoryConfig { initial_points: vec![1.0, 4.0], ..TrajectoryConfig::new(3, 200, 0.0) };
        let out = collect(&spec, &cfg);
        let maps = sample_maps(&spec, 3, 0, 200).unwrap();
        let mut prod = 1.0;
        for n in 1..=200usize {
            prod *= maps[n - 1].a;
            let diff = out[1][n].1 - out[0][n].1;
            assert!((diff - prod * 3.0).abs() <= 1e-9 * (diff.abs() + 1.0));
        }
    }

    #[test]
    fn overflow_is_reported() {
        let cfg = TrajectoryConfig::new(1, 2000, 1.0);
        let out: Vec<_> = simulate_forward(&det_affine(2.0, 1.0), &cfg).unwrap().remove(0).collect();
        assert!(matches!(out.last().unwrap(), Err(Error::Overflow { .. })));
    }

    #[test]
    fn geometric_thinning() {
        let cfg = TrajectoryConfig { geometric_after: Some(100), ..TrajectoryConfig::new(1, 100_000, 0.0) };
        let out = collect(&FamilySpec::Identity, &cfg);
        let ns: Vec<u64> = out[0].iter().map(|p| p.0).collect();
        assert_eq!(&ns[..101], &(0..=100).collect::<Vec<_>>()[..]);
        assert!(ns.len() < 1200);
        assert!(ns.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn backward_examples() {
        let spec = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::normal(1.0, 1.0) };
        let cfg = TrajectoryConfig::new(5, 1, 0.7);
        let back = simulate_backward(&spec, &cfg, 0.7).unwrap();
        let fwd = collect(&spec, &cfg);
        assert_eq!(back[1], fwd[0][1]);

        let det = det_affine(1.5, 2.0);
        let cfg = TrajectoryConfig::new(5, 10, 0.7);
        assert_eq!(simulate_backward(&det, &cfg, 0.7).unwrap(), collect(&det, &cfg)[0]);

        let cfg = TrajectoryConfig::new(5, 2, 0.7);
        let maps = sample_maps(&spec, 5, 0, 2).unwrap();
        let g1 = GroupElement::new(maps[0].group_element().unwrap().b, maps[0].a).unwrap();
        let g2 = maps[1].group_element().unwrap();
        let back = simulate_backward(&spec, &cfg, 0.7).unwrap();
        assert!((back[2].1 - g1.compose(&g2).act(0.7)).abs() < 1e-12);
    }

    #[test]
    fn envelope_examples() {
        let aff = det_affine(1.0, 2.0);
        let tr = simulate_envelopes(&aff, &TrajectoryConfig::new(0, 5, 0.0)).unwrap();
        assert!(tr.iter().all(|t| t.x == t.y));
        assert!(tr[1..].iter().all(|t| t.z < t.x));

        let gm = FamilySpec::GoldieMax { a: Dist::constant(1.0), b: Dist::constant(2.0), c: Dist::constant(0.0) };
        let tr = simulate_envelopes(&gm, &TrajectoryConfig::new(0, 1, 0.0)).unwrap();
        assert_eq!(tr[1].x, 2.0);
        assert!(tr[1].y >= 2.0 && tr[1].z <= 2.0);
    }

    #[test]
    fn inverted_triple_fails_sandwich() {
        let t = EnvelopeTriple { n: 1, z: 0.0, x: 2.0, y: 1.0 };
        assert!(!sandwich_ok(&t));
    }

    #[test]
    fn coupled_identical_points_vanish() {
        let spec = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(1.0) };
        let r = coupled_pair(&spec, 2.0, 2.0, Interval::new(0.0, 10.0), 1, 20, &[10, 100]).unwrap();
        assert!(r.mean.iter().all(|m| *m == 0.0));
        assert_eq!(r.lipschitz_violations, 0);
    }

    #[test]
    fn ratio_examples() {
        let lin = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(0.0) };
        let r = normalized_ratio(&lin, 3.0, 1, 4, 100, &[10.0]).unwrap();
        assert!(r.final_log_rho.iter().all(|v| (v - 3f64.ln()).abs() < 1e-9));
        let aff = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(1.0) };
        let r = normalized_ratio(&aff, 0.0, 1, 4, 100, &[1.0]).unwrap();
        assert!(r.first_crossing.iter().all(|c| c[0].is_some()));
        let shrink = FamilySpec::Affine { log_a: Dist::constant(0.0), b: Dist::constant(-1.0) };
        assert!(matches!(normalized_ratio(&shrink, 5.0, 1, 1, 3, &[]), Err(Error::MonotoneViolation { .. })));
    }
}
