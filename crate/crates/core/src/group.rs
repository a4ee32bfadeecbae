//! The affine group `Aff(R)`: pairs `(b, a)` with `a > 0` acting by
//! `x -> a x + b`, random walks on it, and hitting probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::parallel;
use crate::rng::{stream, SimRng};
use crate::stats::wilson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub b: f64,
    pub a: f64,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { b: 0.0, a: 1.0 };

    pub fn new(b: f64, a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("group element needs finite b and a > 0, got ({b}, {a})")));
        }
        Ok(GroupElement { b, a })
    }

    /// The dilation `(0, a)`.
    pub fn dilation(a: f64) -> Result<Self> {
        Self::new(0.0, a)
    }

    pub fn compose(&self, h: &GroupElement) -> GroupElement {
        GroupElement { b: self.b + self.a * h.b, a: self.a * h.a }
    }

    pub fn invert(&self) -> GroupElement {
        GroupElement { b: -self.b / self.a, a: 1.0 / self.a }
    }

    pub fn act(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    /// Equality up to `tol`, relative in `a` and scaled by `|b| + 1` in `b`.
    pub fn approx_eq(&self, other: &GroupElement, tol: f64) -> bool {
        (self.a - other.a).abs() <= tol * self.a.abs().max(other.a.abs())
            && (self.b - other.b).abs() <= tol * (self.b.abs().max(other.b.abs()) + 1.0)
    }
}

impl std::ops::Mul for GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: GroupElement) -> GroupElement {
        self.compose(&rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// `L_n = g_n ... g_1`.
    Left,
    /// `R_n = g_1 ... g_n`.
    Right,
}

/// Prefix products `P_0 = e, P_1, ..., P_n` in the requested order.
pub fn walk_prefixes(steps: &[GroupElement], order: Order) -> Vec<GroupElement> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut acc = GroupElement::IDENTITY;
    out.push(acc);
    for g in steps {
        acc = match order {
            Order::Left => g.compose(&acc),
            Order::Right => acc.compose(g),
        };
        out.push(acc);
    }
    out
}

/// Named subsets of the group used as stopping regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum Region {
    All,
    Empty,
    /// Open box `b_lo < b < b_hi`, `a_lo < a < a_hi`.
    Box { b_lo: f64, b_hi: f64, a_lo: f64, a_hi: f64 },
    /// `(0, z) V_0 = {|b| < z b0, z/a0 < a < z a0}`.
    W { z: f64, a0: f64, b0: f64 },
    /// `V_0 (0, 1/z) = {|b| < b0, 1/(a0 z) < a < a0/z}`.
    V { z: f64, a0: f64, b0: f64 },
    /// Elements mapping `[u_lo, u_hi]` into `[v_lo, v_hi]`.
    MapsInto { u_lo: f64, u_hi: f64, v_lo: f64, v_hi: f64 },
}

impl Region {
    pub fn contains(&self, g: &GroupElement) -> bool {
        match *self {
            Region::All => true,
            Region::Empty => false,
            Region::Box { b_lo, b_hi, a_lo, a_hi } => g.b > b_lo && g.b < b_hi && g.a > a_lo && g.a < a_hi,
            Region::W { z, a0, b0 } => g.b.abs() < z * b0 && g.a > z / a0 && g.a < z * a0,
            Region::V { z, a0, b0 } => g.b.abs() < b0 && g.a > 1.0 / (a0 * z) && g.a < a0 / z,
            Region::MapsInto { u_lo, u_hi, v_lo, v_hi } => {
                // a > 0, so the image of [u_lo, u_hi] is [act(u_lo), act(u_hi)].
                g.act(u_lo) >= v_lo && g.act(u_hi) <= v_hi
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub hits: u64,
    pub chains: u64,
    pub horizon: u64,
    pub estimate: f64,
    pub ci95: (f64, f64),
}

impl HittingEstimate {
    pub fn from_counts(hits: u64, chains: u64, horizon: u64) -> Self {
        HittingEstimate {
            hits,
            chains,
            horizon,
            estimate: hits as f64 / chains as f64,
            ci95: wilson(hits, chains),
        }
    }

    /// Binomial standard error of the estimate.
    pub fn se(&self) -> f64 {
        let p = self.estimate;
        (p * (1.0 - p) / self.chains as f64).sqrt()
    }
}

/// Estimates `P(T_W <= horizon)` for the right walk `R_n` started at the
/// identity, where `T_W = inf{n >= 0 : R_n in W}`.
///
/// `step` draws one `(b, a)` pair; chain `i` uses stream `i` of `seed`.
pub fn estimate_hitting_probability<S, P>(
    step: S,
    region: P,
    horizon: u64,
    chains: u64,
    seed: u64,
) -> Result<HittingEstimate>
where
    S: Fn(&mut SimRng) -> (f64, f64) + Sync + Send,
    P: Fn(&GroupElement) -> bool + Sync + Send,
{
    if horizon == 0 || chains == 0 {
        return Err(invalid("horizon and chains must be >= 1"));
    }
    let outcomes = parallel::try_replicas(chains, |chain| -> Result<bool> {
        let mut rng = stream(seed, chain);
        let mut r = GroupElement::IDENTITY;
        if region(&r) {
            return Ok(true);
        }
        for _ in 0..horizon {
            let (b, a) = step(&mut rng);
            if !(a > 0.0) {
                return Err(Error::InvalidParameter(format!("step sampler produced a = {a}")));
            }
            r = r.compose(&GroupElement { b, a });
            if region(&r) {
                return Ok(true);
            }
        }
        Ok(false)
    })?;
    let hits = outcomes.iter().filter(|h| **h).count() as u64;
    Ok(HittingEstimate::from_counts(hits, chains, horizon))
}

/// Worst relative errors of the group axioms over random elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: u64,
    pub associativity: f64,
    pub inverse: f64,
    pub action: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks associativity, two-sided inverses and the action law on `samples`
/// random triples with `log a ~ N(0, 1)` and `b ~ N(0, 10^2)`. Errors are
/// relative to the magnitude of the summed terms, so cancellation does not
/// inflate them.
pub fn axiom_check(samples: u64, seed: u64, tolerance: f64) -> AxiomReport {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = stream(seed, 0);
    let draw = |rng: &mut SimRng| {
        let z: f64 = StandardNormal.sample(rng);
        let w: f64 = StandardNormal.sample(rng);
        GroupElement { b: 10.0 * w, a: z.exp() }
    };
    let rel = |d: f64, scale: f64| if scale == 0.0 { d.abs() } else { d.abs() / scale };
    let (mut assoc, mut inv, mut act) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let (g, h, k) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let x: f64 = StandardNormal.sample(&mut rng);
        let x = 10.0 * x;
        let l = (g * h) * k;
        let r = g * (h * k);
        let b_scale = g.b.abs() + g.a * h.b.abs() + g.a * h.a * k.b.abs();
        assoc = assoc.max(rel(l.a - r.a, l.a)).max(rel(l.b - r.b, b_scale));
        for e in [g * g.invert(), g.invert() * g] {
            inv = inv.max(rel(e.a - 1.0, 1.0)).max(rel(e.b, g.b.abs().max(g.b.abs() / g.a)));
        }
        let direct = (g * h).act(x);
        let nested = g.act(h.act(x));
        act = act.max(rel(direct - nested, g.a * h.a * x.abs() + g.a * h.b.abs() + g.b.abs()));
    }
    AxiomReport {
        samples,
        associativity: assoc,
        inverse: inv,
        action: act,
        tolerance,
        pass: assoc < tolerance && inv < tolerance && act < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(b: f64, a: f64) -> GroupElement {
        GroupElement::new(b, a).unwrap()
    }

    #[test]
    fn product_examples() {
        assert_eq!(GroupElement::IDENTITY * g(3.0, 4.0), g(3.0, 4.0));
        assert_eq!(g(1.0, 2.0) * g(3.0, 4.0), g(7.0, 8.0));
        assert_eq!(g(7.0, 8.0).invert(), g(-7.0 / 8.0, 1.0 / 8.0));
        assert_eq!(GroupElement::IDENTITY.invert(), GroupElement::IDENTITY);
        assert!((g(2.5, 3.0) * g(2.5, 3.0).invert()).approx_eq(&GroupElement::IDENTITY, 1e-12));
    }

    #[test]
    fn action_examples() {
        assert_eq!(GroupElement::IDENTITY.act(5.0), 5.0);
        assert_eq!(g(1.0, 2.0).act(3.0), 7.0);
        let x = 0.3;
        assert_eq!((g(1.0, 2.0) * g(3.0, 4.0)).act(x), g(1.0, 2.0).act(g(3.0, 4.0).act(x)));
    }

    #[test]
    fn axioms_hold_to_rounding() {
        let r = axiom_check(10_000, 3, 1e-12);
        assert!(r.pass, "{r:?}");
        assert!(r.associativity > 0.0, "errors should be measured, not identically zero");
    }

    #[test]
    fn rejects_nonpositive_dilation() {
        assert!(GroupElement::new(0.0, 0.0).is_err());
        assert!(GroupElement::new(0.0, -1.0).is_err());
        assert!(GroupElement::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn prefixes() {
        assert_eq!(walk_prefixes(&[], Order::Right), vec![GroupElement::IDENTITY]);
        let steps = [g(1.0, 2.0), g(3.0, 4.0)];
        assert_eq!(
            walk_prefixes(&steps, Order::Right),
            vec![GroupElement::IDENTITY, g(1.0, 2.0), g(7.0, 8.0)]
        );
        let left = walk_prefixes(&steps, Order::Left);
        // Independent oracle: multiply reversed prefix explicitly.
        for n in 0..=steps.len() {
            let mut brute = GroupElement::IDENTITY;
            for s in steps[..n].iter().rev() {
                brute = GroupElement { b: brute.b + brute.a * s.b, a: brute.a * s.a };
            }
            assert_eq!(left[n], brute);
        }
        assert_eq!(left[2], g(3.0 + 4.0, 8.0));
    }

    #[test]
    fn hitting_trivial_regions() {
        let step = |_: &mut SimRng| (1.0, 0.5);
        let all = estimate_hitting_probability(step, |g| Region::All.contains(g), 5, 50, 1).unwrap();
        assert_eq!(all.estimate, 1.0);
        let none = estimate_hitting_probability(step, |g| Region::Empty.contains(g), 5, 50, 1).unwrap();
        assert_eq!(none.estimate, 0.0);
    }

    #[test]
    fn deterministic_halving_hits_at_step_three() {
        // a(R_n) = 2^-n and the region is open, so a = 1/4 at n = 2 is not inside.
        let region = Region::Box { b_lo: f64::NEG_INFINITY, b_hi: f64::INFINITY, a_lo: 0.0, a_hi: 0.25 };
        let step = |_: &mut SimRng| (1.0, 0.5);
        let h2 = estimate_hitting_probability(step, |g| region.contains(g), 2, 10, 0).unwrap();
        assert_eq!(h2.estimate, 0.0);
        let h3 = estimate_hitting_probability(step, |g| region.contains(g), 3, 10, 0).unwrap();
        assert_eq!(h3.estimate, 1.0);
    }

    #[test]
    fn hitting_rejects_bad_sampler_and_budget() {
        let bad = |_: &mut SimRng| (0.0, -1.0);
        assert!(estimate_hitting_probability(bad, |_| false, 3, 2, 0).is_err());
        let ok = |_: &mut SimRng| (0.0, 1.0);
        assert!(estimate_hitting_probability(ok, |_| false, 0, 2, 0).is_err());
        assert!(estimate_hitting_probability(ok, |_| false, 1, 0, 0).is_err());
    }

    #[test]
    fn maps_into_region() {
        let r = Region::MapsInto { u_lo: 10.0, u_hi: 20.0, v_lo: 0.0, v_hi: 5.0 };
        assert!(r.contains(&g(0.0, 0.2)));
        assert!(!r.contains(&g(0.0, 0.3)));
        assert!(!r.contains(&g(-3.0, 0.2)));
    }
}
