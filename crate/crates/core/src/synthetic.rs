//! Reference measures with known tails, sampled directly by inverse CDF and
//! binned like simulated occupation measures. They serve as oracles for the
//! tail diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measure::{Layout, LogBinnedMeasure};
use crate::parallel;
use crate::rng::stream;

/// Density on `[lo, hi]` (mirrored to `[-hi, -lo]` when `two_sided`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density", rename_all = "snake_case")]
pub enum SyntheticLaw {
    /// `dx / x`.
    LogUniform { lo: f64, hi: f64, two_sided: bool },
    /// `dx`.
    Lebesgue { lo: f64, hi: f64, two_sided: bool },
    /// `x^(gamma - 1) dx`; `gamma = 0` is `dx/x`, `gamma = -kappa` is `dx/x^(1+kappa)`.
    Power { gamma: f64, lo: f64, hi: f64, two_sided: bool },
}

impl SyntheticLaw {
    fn parts(&self) -> (f64, f64, f64, bool) {
        match *self {
            SyntheticLaw::LogUniform { lo, hi, two_sided } => (0.0, lo, hi, two_sided),
            SyntheticLaw::Lebesgue { lo, hi, two_sided } => (1.0, lo, hi, two_sided),
            SyntheticLaw::Power { gamma, lo, hi, two_sided } => (gamma, lo, hi, two_sided),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (g, lo, hi, _) = self.parts();
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(invalid("synthetic law needs lo < hi"));
        }
        if g <= 0.0 && lo <= 0.0 {
            return Err(invalid("synthetic law with gamma <= 0 needs lo > 0"));
        }
        if lo < 0.0 {
            return Err(invalid("synthetic law needs lo >= 0"));
        }
        Ok(())
    }

    /// `int_a^b x^(g-1) dx` for `0 <= a <= b`.
    fn primitive_mass(g: f64, a: f64, b: f64) -> f64 {
        if g == 0.0 {
            (b / a).ln()
        } else {
            (b.powf(g) - a.powf(g)) / g
        }
    }

    /// Exact mass of `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let (g, lo, hi, two) = self.parts();
        let side = |a: f64, b: f64| {
            let (a, b) = (a.max(lo), b.min(hi));
            if b > a {
                Self::primitive_mass(g, a, b)
            } else {
                0.0
            }
        };
        let mut m = side(a, b);
        if two {
            m += side(-b, -a);
        }
        m
    }

    pub fn total_mass(&self) -> f64 {
        let (g, lo, hi, two) = self.parts();
        Self::primitive_mass(g, lo, hi) * if two { 2.0 } else { 1.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (g, lo, hi, two) = self.parts();
        let u: f64 = rng.random();
        let x = if g == 0.0 {
            lo * (hi / lo).powf(u)
        } else {
            let (a, b) = (lo.powf(g), hi.powf(g));
            (a + u * (b - a)).powf(1.0 / g).clamp(lo, hi)
        };
        if two && rng.random::<bool>() {
            -x
        } else {
            x
        }
    }
}

/// Bins `samples` independent draws; chunks run in parallel and merge in
/// order so the result depends only on `seed`.
pub fn synthetic_measure(law: &SyntheticLaw, layout: &Layout, samples: u64, seed: u64) -> Result<LogBinnedMeasure> {
    law.validate()?;
    const CHUNK: u64 = 1 << 18;
    let chunks = samples.div_ceil(CHUNK);
    let parts = parallel::try_replicas(chunks, |c| {
        let mut m = LogBinnedMeasure::new(layout.clone())?;
        let mut rng = stream(seed, c);
        let n = CHUNK.min(samples - c * CHUNK);
        for _ in 0..n {
            m.push(law.sample(&mut rng));
        }
        m.add_steps(n);
        Ok(m)
    })?;
    let mut total = LogBinnedMeasure::new(layout.clone())?;
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}
