//! Scalar parameter laws used by map families and step laws.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad;

/// A real-valued probability law, serializable into scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Constant { value: f64 },
    Normal { mean: f64, sd: f64 },
    /// `exp(N(mu, sigma^2))`.
    LogNormal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    /// `x` with probability `p`, otherwise `y`.
    TwoPoint { x: f64, y: f64, p: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
    Poisson { lambda: f64 },
    /// The inner law pushed through `clamp(lo, hi)`.
    Clamp {
        inner: Box<Dist>,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
}

const DEFAULT_PANELS: usize = 96;

impl Dist {
    pub fn constant(value: f64) -> Self {
        Dist::Constant { value }
    }

    pub fn normal(mean: f64, sd: f64) -> Self {
        Dist::Normal { mean, sd }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be finite")))
            }
        };
        match self {
            Dist::Constant { value } => finite(*value, "value"),
            Dist::Normal { mean, sd } => {
                finite(*mean, "mean")?;
                if !(*sd >= 0.0 && sd.is_finite()) {
                    return Err(invalid("normal sd must be >= 0"));
                }
                Ok(())
            }
            Dist::LogNormal { mu, sigma } => {
                finite(*mu, "mu")?;
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid("lognormal sigma must be >= 0"));
                }
                Ok(())
            }
            Dist::Uniform { lo, hi } => {
                finite(*lo, "lo")?;
                finite(*hi, "hi")?;
                if lo >= hi {
                    return Err(invalid("uniform requires lo < hi"));
                }
                Ok(())
            }
            Dist::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(invalid("exponential rate must be > 0"));
                }
                Ok(())
            }
            Dist::TwoPoint { x, y, p } => {
                finite(*x, "x")?;
                finite(*y, "y")?;
                if !(0.0..=1.0).contains(p) {
                    return Err(invalid("two_point p must lie in [0,1]"));
                }
                Ok(())
            }
            Dist::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(invalid("discrete law needs matching nonempty values/weights"));
                }
                if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return Err(invalid("discrete weights must be finite and >= 0"));
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(invalid("discrete weights sum to zero"));
                }
                values.iter().try_for_each(|v| finite(*v, "discrete value"))
            }
            Dist::Poisson { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(invalid("poisson lambda must be > 0"));
                }
                Ok(())
            }
            Dist::Clamp { inner, lo, hi } => {
                if let (Some(l), Some(h)) = (lo, hi) {
                    if l > h {
                        return Err(invalid("clamp requires lo <= hi"));
                    }
                }
                inner.validate()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Constant { value } => *value,
            Dist::Normal { mean, sd } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                mean + sd * z
            }
            Dist::LogNormal { mu, sigma } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Dist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Dist::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
            Dist::TwoPoint { x, y, p } => {
                if rng.random::<f64>() < *p {
                    *x
                } else {
                    *y
                }
            }
            Dist::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().expect("nonempty")
            }
            Dist::Poisson { lambda } => Poisson::new(*lambda).expect("validated").sample(rng),
            Dist::Clamp { inner, lo, hi } => {
                let mut v = inner.sample(rng);
                if let Some(l) = lo {
                    v = v.max(*l);
                }
                if let Some(h) = hi {
                    v = v.min(*h);
                }
                v
            }
        }
    }

    /// Finite atoms with their probabilities, for purely atomic laws with
    /// finitely many atoms.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Dist::Constant { value } => Some(vec![(*value, 1.0)]),
            Dist::TwoPoint { x, y, p } => Some(vec![(*x, *p), (*y, 1.0 - p)]),
            Dist::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                Some(values.iter().zip(weights).map(|(v, w)| (*v, w / total)).collect())
            }
            _ => None,
        }
    }

    /// `E[f(X)]`, exact for atomic laws and by Gauss–Legendre quadrature
    /// with the given panel count otherwise.
    pub fn expectation_with(&self, f: &dyn Fn(f64) -> f64, panels: usize) -> f64 {
        if let Some(atoms) = self.atoms() {
            return atoms.iter().map(|(v, p)| p * f(*v)).sum();
        }
        match self {
            Dist::Normal { mean, sd } => {
                if *sd == 0.0 {
                    return f(*mean);
                }
                std_normal_expectation(&|z| f(mean + sd * z), panels)
            }
            Dist::LogNormal { mu, sigma } => {
                std_normal_expectation(&|z| f((mu + sigma * z).exp()), panels)
            }
            Dist::Uniform { lo, hi } => quad::gauss_legendre(f, *lo, *hi, panels) / (hi - lo),
            Dist::Exponential { rate } => {
                let tail = 40.0 / rate;
                quad::gauss_legendre(|x| f(x) * rate * (-rate * x).exp(), 0.0, tail, panels * 4)
            }
            Dist::Poisson { lambda } => {
                let kmax = (lambda + 20.0 * lambda.sqrt() + 30.0).ceil() as u64;
                let mut logp = -lambda;
                let mut s = 0.0;
                for k in 0..=kmax {
                    if k > 0 {
                        logp += lambda.ln() - (k as f64).ln();
                    }
                    s += logp.exp() * f(k as f64);
                }
                s
            }
            Dist::Clamp { inner, lo, hi } => {
                let (l, h) = (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY));
                inner.expectation_with(&|x| f(x.clamp(l, h)), panels)
            }
            Dist::Constant { .. } | Dist::TwoPoint { .. } | Dist::Discrete { .. } => unreachable!(),
        }
    }

    pub fn expectation(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.expectation_with(f, DEFAULT_PANELS)
    }

    pub fn mean(&self) -> f64 {
        match self {
            Dist::Constant { value } => *value,
            Dist::Normal { mean, .. } => *mean,
            Dist::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Dist::Uniform { lo, hi } => 0.5 * (lo + hi),
            Dist::Exponential { rate } => 1.0 / rate,
            Dist::Poisson { lambda } => *lambda,
            _ => self.expectation(&|x| x),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Dist::Constant { .. } => 0.0,
            Dist::Normal { sd, .. } => sd * sd,
            Dist::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Dist::Exponential { rate } => 1.0 / (rate * rate),
            Dist::Poisson { lambda } => *lambda,
            _ => {
                let m = self.mean();
                self.expectation(&|x| (x - m).powi(2))
            }
        }
    }

    /// Second moment `E[X^2]`.
    pub fn second_moment(&self) -> f64 {
        let m = self.mean();
        self.variance() + m * m
    }

    /// Distribution function `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if let Some(atoms) = self.atoms() {
            return atoms.iter().filter(|(v, _)| *v <= x).map(|(_, p)| p).sum();
        }
        match self {
            Dist::Normal { mean, sd } => {
                if *sd == 0.0 {
                    return if x >= *mean { 1.0 } else { 0.0 };
                }
                crate::stats::normal_cdf((x - mean) / sd)
            }
            Dist::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    crate::stats::normal_cdf((x.ln() - mu) / sigma)
                }
            }
            Dist::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Dist::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Dist::Poisson { lambda } => {
                if x < 0.0 {
                    return 0.0;
                }
                let kmax = x.floor() as u64;
                let mut logp = -lambda;
                let mut s = 0.0;
                for k in 0..=kmax {
                    if k > 0 {
                        logp += lambda.ln() - (k as f64).ln();
                    }
                    s += logp.exp();
                }
                s.min(1.0)
            }
            Dist::Clamp { inner, lo, hi } => {
                if lo.is_some_and(|l| x < l) {
                    0.0
                } else if hi.is_some_and(|h| x >= h) {
                    1.0
                } else {
                    inner.cdf(x)
                }
            }
            Dist::Constant { .. } | Dist::TwoPoint { .. } | Dist::Discrete { .. } => unreachable!(),
        }
    }

    /// Density for absolutely continuous laws.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        match self {
            Dist::Normal { mean, sd } if *sd > 0.0 => {
                let z = (x - mean) / sd;
                Some((-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            }
            Dist::LogNormal { mu, sigma } if *sigma > 0.0 => {
                if x <= 0.0 {
                    return Some(0.0);
                }
                let z = (x.ln() - mu) / sigma;
                Some((-0.5 * z * z).exp() / (x * sigma * (2.0 * std::f64::consts::PI).sqrt()))
            }
            Dist::Uniform { lo, hi } => Some(if x >= *lo && x < *hi { 1.0 / (hi - lo) } else { 0.0 }),
            Dist::Exponential { rate } => Some(if x >= 0.0 { rate * (-rate * x).exp() } else { 0.0 }),
            _ => None,
        }
    }

    /// Smallest closed interval carrying all but a negligible part of the mass.
    pub fn effective_support(&self) -> (f64, f64) {
        if let Some(atoms) = self.atoms() {
            let lo = atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
            let hi = atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
            return (lo, hi);
        }
        match self {
            Dist::Normal { mean, sd } => (mean - 12.0 * sd, mean + 12.0 * sd),
            Dist::LogNormal { mu, sigma } => (0.0, (mu + 12.0 * sigma).exp()),
            Dist::Uniform { lo, hi } => (*lo, *hi),
            Dist::Exponential { rate } => (0.0, 40.0 / rate),
            Dist::Poisson { lambda } => (0.0, lambda + 20.0 * lambda.sqrt() + 30.0),
            Dist::Clamp { inner, lo, hi } => {
                let (a, b) = inner.effective_support();
                let a = lo.map_or(a, |l| a.max(l));
                let b = hi.map_or(b, |h| b.min(h));
                (a.min(b), b)
            }
            Dist::Constant { .. } | Dist::TwoPoint { .. } | Dist::Discrete { .. } => unreachable!(),
        }
    }

    /// Span of the smallest lattice `{c + k h}` carrying the law, if the law
    /// is (heuristically) lattice. Degenerate laws report span 0.
    pub fn lattice_span(&self) -> Option<f64> {
        match self {
            Dist::Poisson { .. } => Some(1.0),
            _ => {
                let atoms = self.atoms()?;
                let base = atoms[0].0;
                let mut g = 0.0;
                for (v, p) in &atoms {
                    if *p > 0.0 {
                        g = real_gcd(g, (v - base).abs())?;
                    }
                }
                Some(g)
            }
        }
    }

    /// True when the law puts all mass on `[0, inf)`.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            Dist::Exponential { .. } | Dist::Poisson { .. } | Dist::LogNormal { .. } => true,
            Dist::Uniform { lo, .. } => *lo >= 0.0,
            Dist::Normal { mean, sd } => *sd == 0.0 && *mean >= 0.0,
            Dist::Clamp { inner, lo, .. } => lo.is_some_and(|l| l >= 0.0) || inner.is_nonnegative(),
            _ => self.atoms().is_some_and(|a| a.iter().all(|(v, p)| *v >= 0.0 || *p == 0.0)),
        }
    }
}

fn std_normal_expectation(f: &dyn Fn(f64) -> f64, panels: usize) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    quad::gauss_legendre(|z| f(z) * (-0.5 * z * z).exp() * norm, -12.0, 12.0, panels)
}

/// Approximate gcd of nonnegative reals; `None` when the ratio does not
/// resolve to a rational with a small denominator.
pub(crate) fn real_gcd(a: f64, b: f64) -> Option<f64> {
    let (mut x, mut y) = if a >= b { (a, b) } else { (b, a) };
    let scale = x.max(1e-300);
    for _ in 0..64 {
        if y <= 1e-9 * scale {
            // Spans far below the atom spread are numerically irrational.
            return (x >= 1e-6 * scale || x == 0.0).then_some(x);
        }
        let r = x % y;
        x = y;
        y = if r > y - 1e-9 * scale { 0.0 } else { r };
    }
    None
}
