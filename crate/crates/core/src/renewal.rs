//! Ladder epochs of the centered walk `S_n = -(log A_1 + ... + log A_n)`,
//! the duality and Poisson-equation limits built on them, and the
//! Wiener–Hopf product.
//!
//! Conventions: `t` is the weak ascending epoch (`S_k >= ` previous ladder
//! height), `l` the strict descending one (`S_k <` previous ladder height).
//! The Poisson equation is `mu_bar * f = f + g`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{real_gcd, Dist};
use crate::error::{invalid, Error, Result};
use crate::maps::FamilySpec;
use crate::measure::LogBinnedMeasure;
use crate::parallel;
use crate::phi::Phi;
use crate::quad;
use crate::rng::{derive_seed, stream};
use crate::stats::{Estimate, MeanVar};

/// Default horizon for first ladder epochs, which have infinite mean.
pub const DEFAULT_HORIZON: u64 = 1_000_000;

/// Censoring above this fraction biases ladder means visibly.
pub const CENSOR_WARN: f64 = 0.01;

/// Law `mu_bar` of one increment `-log A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLaw {
    pub dist: Dist,
}

impl StepLaw {
    pub fn new(dist: Dist) -> Result<Self> {
        dist.validate()?;
        Ok(StepLaw { dist })
    }

    /// Increment law of an affine or interval family (the negated `log A`),
    /// or the step law `u` of a reflected family.
    pub fn from_family(spec: &FamilySpec) -> Result<Self> {
        match spec {
            FamilySpec::Affine { log_a, .. } | FamilySpec::Interval { log_a, .. } => {
                Self::new(negate(log_a).ok_or_else(|| invalid("cannot negate this log A law"))?)
            }
            // The reflected walk is driven by S_n = u_1 + ... + u_n.
            FamilySpec::Reflected { u } => Self::new(u.clone()),
            _ => Err(invalid("step law extraction needs an affine, interval or reflected family")),
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }

    pub fn mean(&self) -> f64 {
        self.dist.mean()
    }

    /// `sigma^2 = E[X^2]`.
    pub fn sigma2(&self) -> f64 {
        self.dist.second_moment()
    }
}

fn negate(d: &Dist) -> Option<Dist> {
    Some(match d {
        Dist::Constant { value } => Dist::Constant { value: -value },
        Dist::Normal { mean, sd } => Dist::Normal { mean: -mean, sd: *sd },
        Dist::Uniform { lo, hi } => Dist::Uniform { lo: -hi, hi: -lo },
        Dist::TwoPoint { x, y, p } => Dist::TwoPoint { x: -x, y: -y, p: *p },
        Dist::Discrete { values, weights } => {
            Dist::Discrete { values: values.iter().map(|v| -v).collect(), weights: weights.clone() }
        }
        _ => return None,
    })
}

/// Ladder epochs and heights of a finite increment sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LadderStats {
    pub steps: u64,
    pub s: f64,
    pub t_epochs: Vec<u64>,
    pub t_heights: Vec<f64>,
    pub l_epochs: Vec<u64>,
    pub l_heights: Vec<f64>,
}

impl LadderStats {
    /// Adds one increment; returns whether it created an ascending and a
    /// descending ladder epoch.
    pub fn push(&mut self, inc: f64) -> (bool, bool) {
        self.steps += 1;
        self.s += inc;
        let top = self.t_heights.last().copied().unwrap_or(0.0);
        let bottom = self.l_heights.last().copied().unwrap_or(0.0);
        let up = self.s >= top;
        let down = self.s < bottom;
        if up {
            self.t_epochs.push(self.steps);
            self.t_heights.push(self.s);
        }
        if down {
            self.l_epochs.push(self.steps);
            self.l_heights.push(self.s);
        }
        (up, down)
    }
}

pub fn ladder_decompose(increments: &[f64]) -> LadderStats {
    let mut st = LadderStats::default();
    for &x in increments {
        st.push(x);
    }
    st
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderMeans {
    pub chains: u64,
    pub horizon: u64,
    /// `E[S_t1]` over chains with `t1 <= horizon`.
    pub s_t: Option<Estimate>,
    /// `E[S_l1]` over chains with `l1 <= horizon`.
    pub s_l: Option<Estimate>,
    pub censored_t: f64,
    pub censored_l: f64,
    pub bias_warning: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct LadderPair {
    t: MeanVar,
    l: MeanVar,
    censored_t: u64,
    censored_l: u64,
}

fn first_heights(law: &StepLaw, rng: &mut impl Rng, horizon: u64) -> (Option<f64>, Option<f64>) {
    let (mut st, mut sl) = (None, None);
    let mut s = 0.0;
    for _ in 0..horizon {
        s += law.sample(rng);
        if st.is_none() && s >= 0.0 {
            st = Some(s);
        }
        if sl.is_none() && s < 0.0 {
            sl = Some(s);
        }
        if st.is_some() && sl.is_some() {
            break;
        }
    }
    (st, sl)
}

fn check_nondegenerate(law: &StepLaw) -> Result<()> {
    if law.sigma2() == 0.0 {
        return Err(Error::Degenerate("all increments are zero".into()));
    }
    Ok(())
}

/// Monte Carlo `E[S_t1]` and `E[S_l1]`. Chains run in blocks that merge in
/// order, so results do not depend on the thread count.
pub fn estimate_ladder_means(law: &StepLaw, chains: u64, horizon: u64, seed: u64) -> Result<LadderMeans> {
    check_nondegenerate(law)?;
    if chains == 0 || horizon == 0 {
        return Err(invalid("ladder means need chains > 0 and horizon > 0"));
    }
    const BLOCK: u64 = 256;
    let blocks = chains.div_ceil(BLOCK);
    let parts = parallel::replicas(blocks, |b| {
        let mut acc = LadderPair::default();
        for c in b * BLOCK..((b + 1) * BLOCK).min(chains) {
            let mut rng = stream(seed, c);
            let (st, sl) = first_heights(law, &mut rng, horizon);
            match st {
                Some(h) => acc.t.push(h),
                None => acc.censored_t += 1,
            }
            match sl {
                Some(h) => acc.l.push(h),
                None => acc.censored_l += 1,
            }
        }
        acc
    });
    let mut tot = LadderPair::default();
    for p in &parts {
        tot.t.merge(&p.t);
        tot.l.merge(&p.l);
        tot.censored_t += p.censored_t;
        tot.censored_l += p.censored_l;
    }
    let ct = tot.censored_t as f64 / chains as f64;
    let cl = tot.censored_l as f64 / chains as f64;
    Ok(LadderMeans {
        chains,
        horizon,
        s_t: (tot.t.n > 0).then(|| Estimate::from(&tot.t)),
        s_l: (tot.l.n > 0).then(|| Estimate::from(&tot.l)),
        censored_t: ct,
        censored_l: cl,
        bias_warning: ct > CENSOR_WARN || cl > CENSOR_WARN,
    })
}

/// Exact first ladder heights of a finitely supported lattice law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactLadder {
    pub s_t: f64,
    pub s_l: f64,
    pub span: f64,
    /// Truncation depth of the first-passage system.
    pub depth: usize,
    /// Change in either mean at the last depth doubling.
    pub truncation_change: f64,
}

/// Solves the first-passage equations of the lattice walk on a truncated
/// half-line (far states copy the deepest one) and doubles the depth until
/// the answer stops moving.
pub fn lattice_ladder_means(law: &StepLaw) -> Result<ExactLadder> {
    check_nondegenerate(law)?;
    let atoms = law.dist.atoms().ok_or_else(|| invalid("exact ladder means need a finitely supported law"))?;
    let atoms: Vec<(f64, f64)> = atoms.into_iter().filter(|(_, p)| *p > 0.0).collect();
    let mut span = 0.0;
    for (v, _) in &atoms {
        span = real_gcd(span, v.abs()).ok_or_else(|| invalid("law is not carried by a lattice through 0"))?;
    }
    let steps: Vec<(i64, f64)> = atoms.iter().map(|(v, p)| ((v / span).round() as i64, *p)).collect();
    let reach = steps.iter().map(|(k, _)| k.unsigned_abs() as usize).max().unwrap_or(1);
    let mut depth = 16 * reach.max(1);
    let mut prev: Option<(f64, f64)> = None;
    loop {
        let st = first_passage(&steps, depth, true)?;
        let sl = first_passage(&steps, depth, false)?;
        if let Some((pt, pl)) = prev {
            let change = (st - pt).abs().max((sl - pl).abs());
            if change < 1e-13 * (1.0 + st.abs() + sl.abs()) || depth >= 2048 {
                return Ok(ExactLadder { s_t: st * span, s_l: sl * span, span, depth, truncation_change: change * span });
            }
        }
        prev = Some((st, sl));
        depth *= 2;
    }
}

/// Expected first passage position: weak up-crossing of 0 when `up`,
/// strict down-crossing otherwise, in lattice units, starting from 0.
fn first_passage(steps: &[(i64, f64)], depth: usize, up: bool) -> Result<f64> {
    // State j in 0..depth is the distance from the boundary on the side the
    // walk has not yet crossed: position -j for `up`, +j otherwise.
    let dir = if up { 1 } else { -1 };
    let stop = |pos: i64| if up { pos >= 0 } else { pos < 0 };
    let n = depth;
    let mut a = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    for j in 0..n {
        a[j * n + j] += 1.0;
        let pos = -dir * j as i64;
        for &(k, p) in steps {
            let next = pos + k;
            if stop(next) {
                rhs[j] += p * next as f64;
            } else {
                let idx = ((-dir * next) as usize).min(n - 1);
                a[j * n + idx] -= p;
            }
        }
    }
    let x = solve_dense(&mut a, &mut rhs, n)?;
    Ok(x[0])
}

fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("nonempty");
        if a[piv * n + col].abs() < 1e-300 {
            return Err(Error::Degenerate("singular first-passage system".into()));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerHopfReport {
    pub sigma2: f64,
    pub s_t: Estimate,
    pub s_l: Estimate,
    pub product: f64,
    pub product_se: f64,
    /// `E[S_l] E[S_t] / sigma^2`.
    pub ratio: f64,
    pub ratio_ci95: (f64, f64),
    pub sign: i8,
    /// The 95% interval excludes 1, i.e. the data disagree with
    /// `E[S_l] E[S_t] = sigma^2` read literally.
    pub discrepancy: bool,
    pub censored_t: f64,
    pub censored_l: f64,
    pub exact: Option<ExactLadder>,
}

/// Informational comparison of `E[S_l] E[S_t]` with `sigma^2`.
pub fn wiener_hopf_check(law: &StepLaw, chains: u64, horizon: u64, seed: u64) -> Result<WienerHopfReport> {
    let m = estimate_ladder_means(law, chains, horizon, seed)?;
    let (Some(t), Some(l)) = (m.s_t, m.s_l) else {
        return Err(Error::Degenerate("a ladder epoch was censored on every chain".into()));
    };
    let sigma2 = law.sigma2();
    let product = t.mean * l.mean;
    let product_se = ((t.mean * l.se).powi(2) + (l.mean * t.se).powi(2)).sqrt();
    let ratio = product / sigma2;
    let h = crate::stats::Z95 * product_se / sigma2;
    let ci = (ratio - h, ratio + h);
    Ok(WienerHopfReport {
        sigma2,
        s_t: t,
        s_l: l,
        product,
        product_se,
        ratio,
        ratio_ci95: ci,
        sign: if product < 0.0 { -1 } else { 1 },
        discrepancy: !(ci.0 <= 1.0 && 1.0 <= ci.1),
        censored_t: m.censored_t,
        censored_l: m.censored_l,
        exact: lattice_ladder_means(law).ok(),
    })
}

/// `f_phi(x) = int phi(e^-x (u - v0)) nu_hat(du)`, normalized by the
/// reference window.
pub fn f_phi_eval(m: &LogBinnedMeasure, phi: &Phi, v0: f64, x: f64) -> Result<f64> {
    let (a, b) = phi.support().ok_or_else(|| invalid("f_phi needs compactly supported phi"))?;
    if a <= 0.0 {
        return Err(invalid("f_phi needs phi supported in (0, inf)"));
    }
    let z = x.exp();
    let breaks: Vec<f64> = phi.breakpoints().iter().map(|t| v0 + z * t).collect();
    let raw = m.integrate(&|u| phi.eval((u - v0) / z), v0 + a * z, v0 + b * z, &breaks)?;
    let r = m.reference_mass();
    if r <= 0.0 {
        return Err(Error::Degenerate("reference window carries no mass".into()));
    }
    Ok(raw / r)
}

/// `g(x) = (mu_bar * f)(x) - f(x)`, checked against a doubled quadrature.
/// `breaks` lists kinks of `f`; laws with a density integrate piecewise
/// between them, atomic laws are summed exactly.
pub fn poisson_residual(
    f: &dyn Fn(f64) -> f64,
    breaks: &[f64],
    law: &StepLaw,
    x: f64,
    panels: usize,
    tol: f64,
) -> Result<f64> {
    let conv = |panels: usize| {
        if law.dist.pdf(0.0).is_some() {
            let (lo, hi) = law.dist.effective_support();
            let mut kinks: Vec<f64> = breaks.iter().map(|b| b - x).collect();
            if let Dist::Uniform { lo, hi } = law.dist {
                kinks.extend([lo, hi]);
            }
            quad::piecewise(|y| f(x + y) * law.dist.pdf(y).unwrap_or(0.0), lo, hi, &kinks, panels)
        } else {
            law.dist.expectation_with(&|y| f(x + y), panels)
        }
    };
    let coarse = conv(panels);
    let fine = conv(2 * panels);
    let diff = (fine - coarse).abs();
    if diff > tol * (1.0 + fine.abs()) {
        return Err(Error::Quadrature(diff));
    }
    Ok(fine - f(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonRow {
    pub x: f64,
    /// `E[f(x + S_t)] - f(x)`.
    pub lhs: Estimate,
    /// `E int_x^(x+S_t) f(z) dz`.
    pub lhs_integral: Estimate,
    pub censored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonLimitReport {
    pub rows: Vec<PoissonRow>,
    pub int_g: f64,
    pub int_g_x: f64,
    /// `max |g|` at the ends of the integration range (tail decay audit).
    pub g_tail: f64,
    /// `max f / (1 + x^+)` over the audit grid, and whether `f >= 0` there.
    pub growth_constant: f64,
    pub nonnegative: bool,
    pub s_l: Estimate,
    /// `-(1 / E[S_l]) int g`.
    pub rhs: Estimate,
    /// `(1 / E[S_l]) int g(x) x dx`, meaningful when `int g = 0`.
    pub rhs_integral: Estimate,
    pub combined_se: f64,
    pub pass: bool,
    /// The second limit agrees within 3 combined SE (informational).
    pub integral_pass: Option<bool>,
    pub bias_warning: bool,
}

#[derive(Debug, Clone)]
pub struct PoissonConfig {
    pub chains: u64,
    pub horizon: u64,
    pub seed: u64,
    /// Range carrying `g`.
    pub g_range: (f64, f64),
    pub panels: usize,
}

/// Monte Carlo left sides of both Poisson limits at each `x` against their
/// quadrature right sides.
pub fn poisson_limit_check(
    f: &(dyn Fn(f64) -> f64 + Sync),
    f_breaks: &[f64],
    law: &StepLaw,
    x_grid: &[f64],
    cfg: &PoissonConfig,
) -> Result<PoissonLimitReport> {
    check_nondegenerate(law)?;
    if x_grid.is_empty() || cfg.chains == 0 {
        return Err(invalid("poisson limit check needs x values and chains"));
    }
    let (glo, ghi) = cfg.g_range;
    let g = |y: f64| poisson_residual(f, f_breaks, law, y, cfg.panels, 1e-9);
    for y in [glo, 0.5 * (glo + ghi), ghi] {
        g(y)?;
    }
    let mut breaks: Vec<f64> = f_breaks.to_vec();
    let (slo, shi) = law.dist.effective_support();
    for b in f_breaks {
        breaks.push(b - shi);
        breaks.push(b - slo);
    }
    let gv = |y: f64| g(y).unwrap_or(f64::NAN);
    let int_g = quad::piecewise(gv, glo, ghi, &breaks, 64);
    let int_g_x = quad::piecewise(|y| y * gv(y), glo, ghi, &breaks, 64);
    if !int_g.is_finite() || !int_g_x.is_finite() {
        return Err(Error::Quadrature(f64::NAN));
    }
    let g_tail = gv(glo).abs().max(gv(ghi).abs());
    let audit: Vec<f64> = (0..=200).map(|i| glo + (ghi - glo) * i as f64 / 200.0).collect();
    let growth_constant = audit.iter().map(|&y| f(y) / (1.0 + y.max(0.0))).fold(0.0, f64::max);
    let nonnegative = audit.iter().all(|&y| f(y) >= 0.0);

    let means = estimate_ladder_means(law, cfg.chains, cfg.horizon, derive_seed(cfg.seed, 1))?;
    let s_l = means.s_l.ok_or_else(|| Error::Degenerate("descending ladder censored on every chain".into()))?;
    let rhs_of = |c: f64| {
        let v = c / s_l.mean;
        Estimate { n: s_l.n, mean: v, se: (c * s_l.se / (s_l.mean * s_l.mean)).abs(), ci95: (v, v) }
    };
    let rhs = {
        let mut e = rhs_of(-int_g);
        e.ci95 = (e.mean - 1.96 * e.se, e.mean + 1.96 * e.se);
        e
    };
    let rhs_integral = {
        let mut e = rhs_of(int_g_x);
        e.ci95 = (e.mean - 1.96 * e.se, e.mean + 1.96 * e.se);
        e
    };

    let mut rows = Vec::with_capacity(x_grid.len());
    let mut any_warn = means.bias_warning;
    for (ix, &x) in x_grid.iter().enumerate() {
        let seed = derive_seed(cfg.seed, 100 + ix as u64);
        let parts = parallel::replicas(cfg.chains.div_ceil(256), |b| {
            let (mut d, mut i, mut cens) = (MeanVar::new(), MeanVar::new(), 0u64);
            for c in b * 256..((b + 1) * 256).min(cfg.chains) {
                let mut rng = stream(seed, c);
                match first_heights_t(law, &mut rng, cfg.horizon) {
                    Some(h) => {
                        d.push(f(x + h) - f(x));
                        i.push(quad::piecewise(f, x, x + h, f_breaks, 2));
                    }
                    None => cens += 1,
                }
            }
            (d, i, cens)
        });
        let (mut d, mut i, mut cens) = (MeanVar::new(), MeanVar::new(), 0u64);
        for (pd, pi, pc) in &parts {
            d.merge(pd);
            i.merge(pi);
            cens += pc;
        }
        let censored = cens as f64 / cfg.chains as f64;
        any_warn |= censored > CENSOR_WARN;
        rows.push(PoissonRow { x, lhs: Estimate::from(&d), lhs_integral: Estimate::from(&i), censored });
    }
    let last = rows.last().expect("nonempty");
    let combined_se = (last.lhs.se.powi(2) + rhs.se.powi(2)).sqrt();
    let pass = (last.lhs.mean - rhs.mean).abs() <= 3.0 * combined_se + 1e-9;
    let integral_pass = (int_g.abs() < 1e-6).then(|| {
        let se = (last.lhs_integral.se.powi(2) + rhs_integral.se.powi(2)).sqrt();
        (last.lhs_integral.mean - rhs_integral.mean).abs() <= 3.0 * se + 1e-9
    });
    Ok(PoissonLimitReport {
        rows,
        int_g,
        int_g_x,
        g_tail,
        growth_constant,
        nonnegative,
        s_l,
        rhs,
        rhs_integral,
        combined_se,
        pass,
        integral_pass,
        bias_warning: any_warn,
    })
}

fn first_heights_t(law: &StepLaw, rng: &mut impl Rng, horizon: u64) -> Option<f64> {
    let mut s = 0.0;
    for _ in 0..horizon {
        s += law.sample(rng);
        if s >= 0.0 {
            return Some(s);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub x: f64,
    /// `sum_(k <= k_max) E[g(x + S_(l_k))]`, with `l_0 = 0`.
    pub ladder_side: Estimate,
    /// `E[sum_(n < t) g(x + S_n)]`.
    pub excursion_side: Estimate,
    pub diff: f64,
    pub combined_se: f64,
    /// Fraction of chains whose `k_max`-th descending height was still at
    /// or above the lower end of `supp g`.
    pub leakage: f64,
    /// Fraction of all chains (both sides) stopped by the horizon.
    pub censored: f64,
    pub pass: bool,
}

/// Both sides of the duality `sum_k P(S_(l_k) in .) = E sum_(n<t) 1(S_n in .)`
/// integrated against a compactly supported `g`.
#[allow(clippy::too_many_arguments)]
pub fn duality_r_check(
    g: &(dyn Fn(f64) -> f64 + Sync),
    g_support: (f64, f64),
    law: &StepLaw,
    x: f64,
    chains: u64,
    k_max: u64,
    horizon: u64,
    seed: u64,
) -> Result<DualityReport> {
    check_nondegenerate(law)?;
    if chains == 0 {
        return Err(invalid("duality check needs chains > 0"));
    }
    let lo = g_support.0;
    let ladder = parallel::replicas(chains.div_ceil(256), |b| {
        let (mut acc, mut leak, mut cens) = (MeanVar::new(), 0u64, 0u64);
        for c in b * 256..((b + 1) * 256).min(chains) {
            let mut rng = stream(derive_seed(seed, 1), c);
            let (mut s, mut bottom, mut k, mut sum) = (0.0, 0.0, 0u64, g(x));
            let mut steps = 0u64;
            while k < k_max && x + bottom >= lo && steps < horizon {
                s += law.sample(&mut rng);
                steps += 1;
                if s < bottom {
                    bottom = s;
                    k += 1;
                    sum += g(x + s);
                }
            }
            if x + bottom >= lo {
                if k == k_max {
                    leak += 1;
                } else {
                    cens += 1;
                }
            }
            acc.push(sum);
        }
        (acc, leak, cens)
    });
    let excursion = parallel::replicas(chains.div_ceil(256), |b| {
        let (mut acc, mut cens) = (MeanVar::new(), 0u64);
        for c in b * 256..((b + 1) * 256).min(chains) {
            let mut rng = stream(derive_seed(seed, 2), c);
            let (mut s, mut sum, mut done) = (0.0, g(x), false);
            for _ in 0..horizon {
                s += law.sample(&mut rng);
                if s >= 0.0 {
                    done = true;
                    break;
                }
                sum += g(x + s);
            }
            if !done {
                cens += 1;
            }
            acc.push(sum);
        }
        (acc, cens)
    });
    let (mut l, mut leak, mut cens) = (MeanVar::new(), 0u64, 0u64);
    for (a, k, c) in &ladder {
        l.merge(a);
        leak += k;
        cens += c;
    }
    let mut e = MeanVar::new();
    for (a, k) in &excursion {
        e.merge(a);
        cens += k;
    }
    let combined_se = (l.se().powi(2) + e.se().powi(2)).sqrt();
    let diff = l.mean - e.mean;
    Ok(DualityReport {
        x,
        ladder_side: Estimate::from(&l),
        excursion_side: Estimate::from(&e),
        diff,
        combined_se,
        leakage: leak as f64 / chains as f64,
        censored: cens as f64 / (2 * chains) as f64,
        pass: diff.abs() <= 3.0 * combined_se + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingReport {
    pub x: f64,
    pub n: u64,
    /// Paired `f(x + S_(t^n)) - f(x) - sum_(k < t^n) g(x + S_k)`.
    pub residual: Estimate,
    pub pass: bool,
}

/// Optional stopping at a finite horizon:
/// `E f(x + S_(t^n)) - f(x) = E sum_(k < t^n) g(x + S_k)`.
pub fn optional_stopping_check(
    f: &(dyn Fn(f64) -> f64 + Sync),
    law: &StepLaw,
    x: f64,
    n: u64,
    chains: u64,
    panels: usize,
    seed: u64,
) -> Result<StoppingReport> {
    let parts = parallel::try_replicas(chains, |c| -> Result<f64> {
        let mut rng = stream(seed, c);
        let (mut s, mut sum) = (0.0, 0.0);
        for _ in 0..n {
            sum += poisson_residual(f, &[], law, x + s, panels, 1e-6)?;
            s += law.sample(&mut rng);
            if s >= 0.0 {
                break;
            }
        }
        Ok(f(x + s) - f(x) - sum)
    })?;
    let m: MeanVar = parts.into_iter().collect();
    Ok(StoppingReport { x, n, pass: m.mean.abs() <= 3.0 * m.se() + 1e-12, residual: Estimate::from(&m) })
}
