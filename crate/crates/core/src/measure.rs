//! Empirical invariant Radon measures from occupation counts, and the tail
//! diagnostics built on them.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Interval;
use crate::error::{invalid, Error, Result};
use crate::group::{estimate_hitting_probability, GroupElement, Region};
use crate::maps::FamilySpec;
use crate::parallel;
use crate::phi::Phi;
use crate::quad;
use crate::rng::stream;
use crate::stats::{linear_fit, normal_two_sided_p, sign_runs, wilson};

/// Windows with fewer counts than this are flagged as low confidence.
pub const LOW_COUNT: f64 = 100.0;

fn default_reference() -> (f64, f64) {
    (1.0, std::f64::consts::E)
}

/// Bin layout: `core_bins` uniform bins on `[-x_core, x_core)` and
/// `bins_per_decade * decades` geometric bins on each side beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub x_core: f64,
    pub core_bins: usize,
    pub bins_per_decade: usize,
    pub decades: usize,
    /// Normalization window `I_0`.
    #[serde(default = "default_reference")]
    pub reference: (f64, f64),
}

impl Default for Layout {
    fn default() -> Self {
        Layout { x_core: 1.0, core_bins: 64, bins_per_decade: 16, decades: 8, reference: default_reference() }
    }
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_core > 0.0 && self.x_core.is_finite()) {
            return Err(invalid("layout.x_core must be > 0"));
        }
        if self.core_bins == 0 || self.bins_per_decade == 0 {
            return Err(invalid("layout.core_bins and layout.bins_per_decade must be >= 1"));
        }
        let (lo, hi) = self.reference;
        if !(lo < hi) {
            return Err(invalid("layout.reference needs lo < hi"));
        }
        if lo < -self.x_max() || hi > self.x_max() {
            return Err(invalid("layout.reference must lie inside the covered range"));
        }
        Ok(())
    }

    pub fn x_max(&self) -> f64 {
        self.x_core * 10f64.powi(self.decades as i32)
    }

    fn tail_bins(&self) -> usize {
        self.bins_per_decade * self.decades
    }

    pub fn n_bins(&self) -> usize {
        2 * self.tail_bins() + self.core_bins
    }

    /// Ascending bin edges, `n_bins + 1` of them.
    pub fn edges(&self) -> Vec<f64> {
        let t = self.tail_bins();
        let tail = |j: usize| self.x_core * 10f64.powf(j as f64 / self.bins_per_decade as f64);
        let mut e = Vec::with_capacity(self.n_bins() + 1);
        for j in (1..=t).rev() {
            e.push(-tail(j));
        }
        let w = 2.0 * self.x_core / self.core_bins as f64;
        for i in 0..self.core_bins {
            e.push(-self.x_core + w * i as f64);
        }
        for j in 0..=t {
            e.push(tail(j));
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    NegTail,
    Core,
    PosTail,
}

/// Where a point fell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Bin(usize),
    Under,
    Over,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogBinnedMeasure {
    pub layout: Layout,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Visits below `-x_max`.
    pub under: u64,
    /// Visits at or above `x_max`.
    pub over: u64,
    /// Simulated steps behind the counts (thinned steps included).
    pub total_steps: u64,
}

impl LogBinnedMeasure {
    pub fn new(layout: Layout) -> Result<Self> {
        layout.validate()?;
        let edges = layout.edges();
        Ok(LogBinnedMeasure { counts: vec![0; edges.len() - 1], edges, layout, under: 0, over: 0, total_steps: 0 })
    }

    fn kind(&self, i: usize) -> BinKind {
        let t = self.layout.tail_bins();
        if i < t {
            BinKind::NegTail
        } else if i < t + self.layout.core_bins {
            BinKind::Core
        } else {
            BinKind::PosTail
        }
    }

    /// Bin of `x`; bins are half-open `[lo, hi)`.
    #[inline]
    pub fn slot(&self, x: f64) -> Slot {
        let l = &self.layout;
        let t = l.tail_bins();
        let i = if x.abs() < l.x_core {
            let w = 2.0 * l.x_core / l.core_bins as f64;
            t + (((x + l.x_core) / w) as usize).min(l.core_bins - 1)
        } else if x >= l.x_core {
            let j = (l.bins_per_decade as f64 * (x / l.x_core).log10()).floor();
            if j >= t as f64 {
                if x >= self.edges[self.edges.len() - 1] {
                    return Slot::Over;
                }
                self.edges.len() - 2
            } else {
                t + l.core_bins + j.max(0.0) as usize
            }
        } else if x.is_nan() {
            return Slot::Over;
        } else {
            // x <= -x_core: bin [-e_{j+1}, -e_j) with e_j < -x <= e_{j+1}.
            let j = (l.bins_per_decade as f64 * (-x / l.x_core).log10()).ceil() - 1.0;
            if j >= t as f64 {
                if x < self.edges[0] {
                    return Slot::Under;
                }
                0
            } else {
                t - 1 - j.max(0.0) as usize
            }
        };
        Slot::Bin(self.fix_rounding(i, x))
    }

    #[inline]
    fn fix_rounding(&self, mut i: usize, x: f64) -> usize {
        while i > 0 && x < self.edges[i] {
            i -= 1;
        }
        while i + 1 < self.counts.len() && x >= self.edges[i + 1] {
            i += 1;
        }
        i
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        match self.slot(x) {
            Slot::Bin(i) => self.counts[i] += 1,
            Slot::Under => self.under += 1,
            Slot::Over => self.over += 1,
        }
    }

    /// Records `sign * exp(ln_abs)` without forming it, for states whose
    /// magnitude exceeds the floating range.
    pub fn push_log(&mut self, negative: bool, ln_abs: f64) {
        if ln_abs < 700.0 {
            let v = ln_abs.exp();
            self.push(if negative { -v } else { v });
        } else if negative {
            self.under += 1;
        } else {
            self.over += 1;
        }
    }

    pub fn add_steps(&mut self, steps: u64) {
        self.total_steps += steps;
    }

    pub fn recorded(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.under + self.over
    }

    /// Fraction of recorded visits outside the layout.
    pub fn out_of_range_fraction(&self) -> f64 {
        let r = self.recorded();
        if r == 0 {
            0.0
        } else {
            (self.under + self.over) as f64 / r as f64
        }
    }

    /// Flag for more than 1% of visits outside the layout.
    pub fn coverage_flag(&self) -> bool {
        self.out_of_range_fraction() > 0.01
    }

    /// Exact count addition; layouts must match.
    pub fn merge(&mut self, other: &LogBinnedMeasure) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.under += other.under;
        self.over += other.over;
        self.total_steps += other.total_steps;
        Ok(())
    }

    fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        let (a, b) = (self.edges[0], self.edges[self.edges.len() - 1]);
        if lo < a || hi > b {
            return Err(Error::Coverage(format!("[{lo}, {hi}] leaves the layout range [{a}, {b}]")));
        }
        Ok(())
    }

    fn bin_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let first = match self.slot(lo) {
            Slot::Bin(i) => i,
            Slot::Under => 0,
            Slot::Over => self.counts.len() - 1,
        };
        let last = match self.slot(hi) {
            Slot::Bin(i) => i,
            Slot::Under => 0,
            Slot::Over => self.counts.len() - 1,
        };
        (first, last)
    }

    /// Count-weighted integral `int_lo^hi f dnu` (raw, unnormalized), with the
    /// mass of each bin spread uniformly in `x` in the core and uniformly in
    /// `log|x|` in the tails.
    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64]) -> Result<f64> {
        self.check_range(lo, hi)?;
        if hi <= lo {
            return Ok(0.0);
        }
        let (first, last) = self.bin_range(lo, hi);
        let mut total = 0.0;
        for i in first..=last {
            let c = self.counts[i];
            if c == 0 {
                continue;
            }
            let (e0, e1) = (self.edges[i], self.edges[i + 1]);
            let (a, b) = (lo.max(e0), hi.min(e1));
            if b <= a {
                continue;
            }
            let c = c as f64;
            let v = match self.kind(i) {
                BinKind::Core => c / (e1 - e0) * quad::piecewise(f, a, b, breaks, 2),
                BinKind::PosTail => {
                    let norm = c / (e1 / e0).ln();
                    norm * quad::piecewise(|u| f(u) / u, a, b, breaks, 2)
                }
                BinKind::NegTail => {
                    let norm = c / (e0 / e1).ln();
                    norm * quad::piecewise(|u| f(u) / -u, a, b, breaks, 2)
                }
            };
            total += v;
        }
        Ok(total)
    }

    /// Raw mass of `[lo, hi]` with fractional bin overlap.
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        self.check_range(lo, hi)?;
        if hi <= lo {
            return Ok(0.0);
        }
        let (first, last) = self.bin_range(lo, hi);
        let mut total = 0.0;
        for i in first..=last {
            let c = self.counts[i];
            if c == 0 {
                continue;
            }
            let (e0, e1) = (self.edges[i], self.edges[i + 1]);
            let (a, b) = (lo.max(e0), hi.min(e1));
            if b <= a {
                continue;
            }
            let frac = match self.kind(i) {
                BinKind::Core => (b - a) / (e1 - e0),
                BinKind::PosTail => (b / a).ln() / (e1 / e0).ln(),
                BinKind::NegTail => (a / b).ln() / (e0 / e1).ln(),
            };
            total += c as f64 * frac;
        }
        Ok(total)
    }

    /// Tilt `tau` of the in-bin density `1 + tau (2t - 1)` on `t in [0, 1]`,
    /// from the neighbouring bins' densities. Core bins only; tail bins
    /// keep their log-uniform shape.
    fn within_bin_tilt(&self, i: usize) -> f64 {
        if self.kind(i) != BinKind::Core || self.counts[i] == 0 {
            return 0.0;
        }
        let width = |j: usize| self.edges[j + 1] - self.edges[j];
        let mid = |j: usize| 0.5 * (self.edges[j] + self.edges[j + 1]);
        let dens = |j: usize| self.counts[j] as f64 / width(j);
        let left = (i > 0 && self.counts[i - 1] > 0).then(|| i - 1);
        let right = (i + 1 < self.counts.len() && self.counts[i + 1] > 0).then_some(i + 1);
        let slope = match (left, right) {
            (Some(l), Some(r)) => (dens(r) - dens(l)) / (mid(r) - mid(l)),
            (Some(l), None) => (dens(i) - dens(l)) / (mid(i) - mid(l)),
            (None, Some(r)) => (dens(r) - dens(i)) / (mid(r) - mid(i)),
            (None, None) => 0.0,
        };
        (slope * width(i) / (2.0 * dens(i))).clamp(-1.0, 1.0)
    }

    /// Mass of the reference window `I_0`.
    pub fn reference_mass(&self) -> f64 {
        let (lo, hi) = self.layout.reference;
        self.mass(lo, hi).unwrap_or(0.0)
    }

    fn reference_or_err(&self) -> Result<f64> {
        let r = self.reference_mass();
        if r <= 0.0 {
            return Err(Error::Degenerate("reference window carries no mass".into()));
        }
        Ok(r)
    }

    /// `nu_hat([lo, hi]) = mass / mass(I_0)`.
    pub fn normalized_mass(&self, lo: f64, hi: f64) -> Result<f64> {
        Ok(self.mass(lo, hi)? / self.reference_or_err()?)
    }

    /// CSV with a layout header; re-import with [`LogBinnedMeasure::from_csv`]
    /// is exact.
    pub fn to_csv(&self) -> String {
        let l = &self.layout;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# layout x_core={} core_bins={} bins_per_decade={} decades={} reference={},{}",
            l.x_core, l.core_bins, l.bins_per_decade, l.decades, l.reference.0, l.reference.1
        );
        let _ = writeln!(s, "# total_steps={} under={} over={}", self.total_steps, self.under, self.over);
        let _ = writeln!(s, "bin_lo,bin_hi,count,normalized");
        let r = self.reference_mass();
        for (i, c) in self.counts.iter().enumerate() {
            let norm = if r > 0.0 { *c as f64 / r } else { 0.0 };
            let _ = writeln!(s, "{},{},{},{}", self.edges[i], self.edges[i + 1], c, norm);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let parse_err = |m: &str| Error::Parse(m.to_string());
        let head = lines.next().ok_or_else(|| parse_err("empty csv"))?;
        let head = head.strip_prefix("# layout ").ok_or_else(|| parse_err("missing layout header"))?;
        let mut layout = Layout::default();
        for kv in head.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| parse_err("bad layout field"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| parse_err("bad number"));
            match k {
                "x_core" => layout.x_core = num(v)?,
                "core_bins" => layout.core_bins = v.parse().map_err(|_| parse_err("bad core_bins"))?,
                "bins_per_decade" => layout.bins_per_decade = v.parse().map_err(|_| parse_err("bad bins_per_decade"))?,
                "decades" => layout.decades = v.parse().map_err(|_| parse_err("bad decades"))?,
                "reference" => {
                    let (a, b) = v.split_once(',').ok_or_else(|| parse_err("bad reference"))?;
                    layout.reference = (num(a)?, num(b)?);
                }
                _ => return Err(parse_err("unknown layout field")),
            }
        }
        let mut m = LogBinnedMeasure::new(layout)?;
        let meta = lines.next().ok_or_else(|| parse_err("missing totals header"))?;
        let meta = meta.strip_prefix("# ").ok_or_else(|| parse_err("bad totals header"))?;
        for kv in meta.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| parse_err("bad totals field"))?;
            let v: u64 = v.parse().map_err(|_| parse_err("bad total"))?;
            match k {
                "total_steps" => m.total_steps = v,
                "under" => m.under = v,
                "over" => m.over = v,
                _ => return Err(parse_err("unknown totals field")),
            }
        }
        lines.next();
        for (i, line) in lines.enumerate() {
            let mut cols = line.split(',');
            let lo: f64 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| parse_err("bad bin_lo"))?;
            let hi: f64 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| parse_err("bad bin_hi"))?;
            let c: u64 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| parse_err("bad count"))?;
            if i >= m.counts.len() || lo != m.edges[i] || hi != m.edges[i + 1] {
                return Err(parse_err("bin edges do not match the layout"));
            }
            m.counts[i] = c;
        }
        Ok(m)
    }
}

/// Builds a measure from a stream of states.
pub fn accumulate(states: impl IntoIterator<Item = f64>, layout: &Layout) -> Result<LogBinnedMeasure> {
    let mut m = LogBinnedMeasure::new(layout.clone())?;
    for x in states {
        m.push(x);
        m.total_steps += 1;
    }
    Ok(m)
}

/// Occupation measure of `chains` independent trajectories of `spec` from
/// `x0`, each run for `steps` steps and recording every `stride`-th state.
/// Chains are merged in index order.
pub fn occupation_measure(
    spec: &FamilySpec,
    layout: &Layout,
    seed: u64,
    chains: u64,
    steps: u64,
    stride: u64,
    x0: f64,
) -> Result<LogBinnedMeasure> {
    let parts = parallel::try_replicas(chains, |chain| {
        let mut m = LogBinnedMeasure::new(layout.clone())?;
        crate::engine::run_chain(spec, seed, chain, x0, steps, stride, |_, x| m.push(x))?;
        m.total_steps = steps;
        Ok::<_, Error>(m)
    })?;
    let mut total = LogBinnedMeasure::new(layout.clone())?;
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}

/// `int phi(u / z) dnu_hat(u)`, normalized by the reference window.
pub fn dilated_functional(m: &LogBinnedMeasure, phi: &Phi, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(invalid("dilation z must be > 0"));
    }
    let (a, b) = phi.support().ok_or_else(|| invalid("dilated functional needs compactly supported phi"))?;
    let breaks: Vec<f64> = phi.breakpoints().iter().map(|t| t * z).collect();
    Ok(m.integrate(&|u| phi.eval(u / z), a * z, b * z, &breaks)? / m.reference_or_err()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub z: f64,
    pub counts: f64,
    pub h: f64,
    /// Poisson relative error of `h`.
    pub rel_se: f64,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub m_ratio: f64,
    pub rows: Vec<TailRow>,
    /// `max h / min h`.
    pub flatness: f64,
    pub max_flatness: f64,
    /// `min_z nu_hat[z, M z]`, the lower level of the dilation windows.
    pub min_window: f64,
    pub pass: bool,
}

/// `h(z) = nu_hat[z, M z] / log M` over `z_grid`, with flatness `max/min`.
pub fn tail_homogeneity_report(m: &LogBinnedMeasure, z_grid: &[f64], m_ratio: f64, max_flatness: f64) -> Result<TailReport> {
    if !(m_ratio > 1.0) {
        return Err(invalid("tail homogeneity needs M > 1"));
    }
    if z_grid.is_empty() {
        return Err(invalid("empty z grid"));
    }
    let r = m.reference_or_err()?;
    let mut rows = Vec::with_capacity(z_grid.len());
    for &z in z_grid {
        let c = m.mass(z, m_ratio * z)?;
        rows.push(TailRow {
            z,
            counts: c,
            h: c / r / m_ratio.ln(),
            rel_se: if c > 0.0 { 1.0 / c.sqrt() } else { f64::INFINITY },
            low_confidence: c < LOW_COUNT,
        });
    }
    let max = rows.iter().map(|r| r.h).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min);
    let flatness = if min > 0.0 { max / min } else { f64::INFINITY };
    Ok(TailReport {
        m_ratio,
        min_window: min * m_ratio.ln(),
        pass: flatness <= max_flatness,
        rows,
        flatness,
        max_flatness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub k: Vec<f64>,
    pub mass: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub residual_sign_runs: usize,
    /// Few long residual runs: systematic curvature against the line.
    pub nonlinearity_flag: bool,
    pub min_r2: f64,
    pub pass: bool,
}

/// Least-squares fit of `nu_hat[-e^k, e^k]` against `k`.
pub fn log_growth_fit(m: &LogBinnedMeasure, k_grid: &[f64], min_r2: f64) -> Result<GrowthReport> {
    if k_grid.len() < 3 {
        return Err(invalid("log growth fit needs at least 3 grid points"));
    }
    let r = m.reference_or_err()?;
    let mut mass = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let e = k.exp();
        mass.push(m.mass(-e, e)? / r);
    }
    let fit = linear_fit(k_grid, &mass).ok_or_else(|| invalid("degenerate k grid"))?;
    let runs = sign_runs(&fit.residuals);
    let nonlinear = k_grid.len() >= 6 && runs <= 3 && fit.r2 < 0.999;
    Ok(GrowthReport {
        k: k_grid.to_vec(),
        mass,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        residual_sign_runs: runs,
        nonlinearity_flag: nonlinear,
        min_r2,
        pass: fit.r2 >= min_r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowVariationReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `ratios[i][j] = L(e^(x_i + y_j)) / L(e^(x_i))`.
    pub ratios: Vec<Vec<f64>>,
    pub band: (f64, f64),
    pub last_row_in_band: bool,
    /// `max r / (1 + y)`.
    pub k_hat: f64,
    pub k_ceiling: f64,
    pub low_count: bool,
    pub pass: bool,
}

/// Ratio matrix of `L(z) = int phi(u / z) dnu_hat(u)` along log scales.
pub fn slow_variation_check(
    m: &LogBinnedMeasure,
    phi: &Phi,
    x_grid: &[f64],
    y_grid: &[f64],
    band: (f64, f64),
    k_ceiling: f64,
) -> Result<SlowVariationReport> {
    if x_grid.is_empty() || y_grid.is_empty() {
        return Err(invalid("slow variation needs nonempty grids"));
    }
    let (pa, pb) = phi.support().ok_or_else(|| invalid("slow variation needs compactly supported phi"))?;
    let r = m.reference_or_err()?;
    let mut ratios = Vec::with_capacity(x_grid.len());
    let mut low = false;
    let mut k_hat: f64 = 0.0;
    for &x in x_grid {
        let base = dilated_functional(m, phi, x.exp())?;
        low |= base * r < LOW_COUNT || m.mass(pa * x.exp(), pb * x.exp())? < LOW_COUNT;
        let mut row = Vec::with_capacity(y_grid.len());
        for &y in y_grid {
            let v = if y == 0.0 { 1.0 } else { dilated_functional(m, phi, (x + y).exp())? / base };
            k_hat = k_hat.max(v / (1.0 + y));
            row.push(v);
        }
        ratios.push(row);
    }
    let last = ratios.last().expect("nonempty");
    let last_row_in_band = last.iter().all(|v| *v >= band.0 && *v <= band.1);
    Ok(SlowVariationReport {
        x: x_grid.to_vec(),
        y: y_grid.to_vec(),
        pass: last_row_in_band && k_hat <= k_ceiling,
        ratios,
        band,
        last_row_in_band,
        k_hat,
        k_ceiling,
        low_count: low,
    })
}

/// Inverse CDF of the density `1 + tau (2t - 1)` on `[0, 1]`.
fn trapezoid_quantile(tau: f64, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let b = 1.0 - tau;
    (2.0 * q / (b + (b * b + 4.0 * tau * q).sqrt())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub window: (f64, f64),
    pub bins: usize,
    /// `1/2 sum |p_hat - c_hat|` over window-normalized bins.
    pub distance: f64,
    pub chi2: f64,
    /// `(chi2 - bins) / sqrt(2 bins)`.
    pub z_stat: f64,
    pub max_abs_z: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Compares `nu_hat` with its one-step push `mu * nu_hat` on the bins inside
/// `window`.
///
/// `push_samples` representatives are shared among occupied bins in
/// proportion to their counts (at least one each), so every representative
/// carries about the same weight and sends it through a freshly sampled map. Representatives follow a
/// linear in-bin density fitted to the neighbouring bins in the core and
/// are log-uniform in the tails. Per-bin noise is `inflation * (c + p)` plus the
/// push sampling variance; `inflation` accounts for serial correlation of
/// the occupation counts (1 for independent samples).
pub fn invariance_residual<R: Rng + ?Sized>(
    m: &LogBinnedMeasure,
    spec: &FamilySpec,
    push_samples: u64,
    window: (f64, f64),
    inflation: f64,
    rng: &mut R,
) -> Result<InvarianceReport> {
    if m.counts.iter().all(|c| *c == 0) {
        return Err(invalid("invariance residual needs a nonempty measure"));
    }
    let n = m.counts.len();
    let total: u64 = m.counts.iter().sum();
    let mut pushed = vec![0.0f64; n];
    let mut push_var = vec![0.0f64; n];
    let domain = spec.domain();
    for i in 0..n {
        let c = m.counts[i];
        if c == 0 {
            continue;
        }
        let k = ((push_samples as f64 * c as f64 / total as f64).round() as usize).max(1);
        let w = c as f64 / k as f64;
        let (e0, e1) = (m.edges[i], m.edges[i + 1]);
        let tilt = m.within_bin_tilt(i);
        for r in 0..k {
            // Stratified position in (0, 1), then the in-bin coordinate
            // (linear in the core, logarithmic in the tails).
            let q = (r as f64 + rng.random::<f64>()) / k as f64;
            let t = trapezoid_quantile(tilt, q);
            let x = match m.kind(i) {
                BinKind::Core => e0 + (e1 - e0) * t,
                BinKind::PosTail => e0 * (e1 / e0).powf(t),
                BinKind::NegTail => e0 * (e1 / e0).powf(t),
            };
            let x = if domain.contains(x) { x } else { x.max(0.0).round() };
            let y = spec.sample(rng)?.kind.eval(x)?;
            if let Slot::Bin(j) = m.slot(y) {
                pushed[j] += w;
                push_var[j] += w * w;
            }
        }
    }
    let inside = |i: usize| m.edges[i] >= window.0 && m.edges[i + 1] <= window.1;
    let idx: Vec<usize> = (0..n).filter(|&i| inside(i)).collect();
    if idx.is_empty() {
        return Err(invalid("invariance window contains no whole bin"));
    }
    let tot_c: f64 = idx.iter().map(|&i| m.counts[i] as f64).sum();
    let tot_p: f64 = idx.iter().map(|&i| pushed[i]).sum();
    if tot_c <= 0.0 || tot_p <= 0.0 {
        return Err(Error::Degenerate("invariance window carries no mass".into()));
    }
    let mut distance = 0.0;
    let mut chi2 = 0.0;
    let mut max_abs_z: f64 = 0.0;
    let mut bins = 0usize;
    for &i in &idx {
        let c = m.counts[i] as f64;
        // Compare on the count scale after matching window totals.
        let p = pushed[i] * tot_c / tot_p;
        distance += 0.5 * (p / tot_c - c / tot_c).abs();
        let var = inflation * (c + p) + push_var[i] * (tot_c / tot_p).powi(2);
        if var > 0.0 {
            let z = (p - c) / var.sqrt();
            chi2 += z * z;
            max_abs_z = max_abs_z.max(z.abs());
            bins += 1;
        }
    }
    let z_stat = if bins > 0 { (chi2 - bins as f64) / (2.0 * bins as f64).sqrt() } else { 0.0 };
    Ok(InvarianceReport {
        window,
        bins,
        distance,
        chi2,
        z_stat,
        max_abs_z,
        p_value: if z_stat > 0.0 { 0.5 * normal_two_sided_p(z_stat) } else { 1.0 },
        pass: z_stat <= 3.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HittingMethod {
    /// `U` is already inside `V`: `T = 0`.
    Trivial,
    /// Exact right walk on the affine group.
    AffineGroup,
    /// Affine envelopes of general maps; a sufficient condition, so the
    /// estimate is a lower bound.
    Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub u: Interval,
    pub v: Interval,
    pub nu_u: f64,
    pub nu_v: f64,
    pub p_hat: f64,
    pub p_ci95: (f64, f64),
    pub horizon: u64,
    pub chains: u64,
    pub method: HittingMethod,
    /// `nu_hat(V) - P_hat nu_hat(U)`.
    pub margin: f64,
    pub combined_se: f64,
    pub pass: bool,
}

/// Checks `nu(V) >= P(T_W < inf) nu(U)` with `W = {psi : psi(U) in V}`.
pub fn martingale_bound_check(
    m: &LogBinnedMeasure,
    spec: &FamilySpec,
    u: Interval,
    v: Interval,
    horizon: u64,
    chains: u64,
    seed: u64,
) -> Result<MartingaleReport> {
    let r = m.reference_or_err()?;
    let cu = m.mass(u.lo, u.hi)?;
    let cv = m.mass(v.lo, v.hi)?;
    if cu <= 0.0 {
        return Err(invalid("martingale check needs nu_hat(U) > 0"));
    }
    let (nu_u, nu_v) = (cu / r, cv / r);
    let (hits, method) = if u.lo >= v.lo && u.hi <= v.hi {
        (chains, HittingMethod::Trivial)
    } else if matches!(spec, FamilySpec::Affine { .. } | FamilySpec::Identity) {
        let region = Region::MapsInto { u_lo: u.lo, u_hi: u.hi, v_lo: v.lo, v_hi: v.hi };
        let est = estimate_hitting_probability(
            |rng| {
                let g = spec
                    .sample(rng)
                    .ok()
                    .and_then(|m| m.group_element())
                    .unwrap_or(GroupElement { b: 0.0, a: f64::NAN });
                (g.b, g.a)
            },
            |g| region.contains(g),
            horizon,
            chains,
            seed,
        )?;
        (est.hits, HittingMethod::AffineGroup)
    } else {
        let outcomes = parallel::try_replicas(chains, |chain| -> Result<bool> {
            let mut rng = stream(seed, chain);
            let (mut a, mut b_lo, mut b_hi) = (1.0f64, 0.0f64, 0.0f64);
            for _ in 0..horizon {
                let s = spec.sample(&mut rng)?;
                b_lo -= a * s.b;
                b_hi += a * s.b;
                a *= s.a;
                if a * u.lo + b_lo >= v.lo && a * u.hi + b_hi <= v.hi {
                    return Ok(true);
                }
            }
            Ok(false)
        })?;
        (outcomes.iter().filter(|h| **h).count() as u64, HittingMethod::Envelope)
    };
    let p_hat = hits as f64 / chains as f64;
    let p_se = (p_hat * (1.0 - p_hat) / chains as f64).sqrt();
    let se_v = cv.sqrt() / r;
    let se_u = cu.sqrt() / r;
    let combined_se = (se_v * se_v + (p_hat * se_u).powi(2) + (nu_u * p_se).powi(2)).sqrt();
    let margin = nu_v - p_hat * nu_u;
    Ok(MartingaleReport {
        u,
        v,
        nu_u,
        nu_v,
        p_hat,
        p_ci95: wilson(hits, chains),
        horizon,
        chains,
        method,
        margin,
        combined_se,
        pass: margin >= -3.0 * combined_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Dist;

    fn decade_layout() -> Layout {
        Layout { x_core: 1.0, core_bins: 4, bins_per_decade: 1, decades: 4, reference: (1.0, 10.0) }
    }

    #[test]
    fn edges_and_slots() {
        let m = LogBinnedMeasure::new(decade_layout()).unwrap();
        assert_eq!(m.edges.len(), m.counts.len() + 1);
        assert!(m.edges.windows(2).all(|w| w[0] < w[1]));
        for (i, w) in m.edges.windows(2).enumerate() {
            assert_eq!(m.slot(w[0]), Slot::Bin(i), "lower edge {}", w[0]);
            let mid = 0.5 * (w[0] + w[1]);
            assert_eq!(m.slot(mid), Slot::Bin(i));
        }
        assert_eq!(m.slot(1e4), Slot::Over);
        assert_eq!(m.slot(-1e4), Slot::Bin(0));
        assert_eq!(m.slot(-1e4 - 1.0), Slot::Under);
    }

    #[test]
    fn accumulate_examples() {
        let m = accumulate([2.5; 10], &decade_layout()).unwrap();
        assert_eq!(m.counts.iter().filter(|c| **c > 0).count(), 1);
        let m = accumulate([1.0, 10.0, 100.0], &decade_layout()).unwrap();
        assert_eq!(m.counts.iter().filter(|c| **c == 1).count(), 3);
        let s1 = [0.3, -7.0, 55.0];
        let s2 = [1e3, 2.0];
        let mut a = accumulate(s1, &decade_layout()).unwrap();
        a.merge(&accumulate(s2, &decade_layout()).unwrap()).unwrap();
        let all = accumulate(s1.iter().chain(&s2).copied(), &decade_layout()).unwrap();
        assert_eq!(a, all);
    }

    #[test]
    fn merge_rejects_layout_mismatch() {
        let mut a = LogBinnedMeasure::new(decade_layout()).unwrap();
        let b = LogBinnedMeasure::new(Layout::default()).unwrap();
        assert_eq!(a.merge(&b), Err(Error::LayoutMismatch));
    }

    #[test]
    fn csv_round_trip() {
        let m = accumulate([0.3, -7.0, 55.0, 2.0, 2.0, 3.0], &Layout::default()).unwrap();
        let back = LogBinnedMeasure::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn fractional_mass_in_tails_is_logarithmic() {
        let m = accumulate([5.0; 100], &decade_layout()).unwrap();
        let half = m.mass(1.0, 10f64.sqrt()).unwrap();
        assert!((half - 50.0).abs() < 1e-9);
    }

    #[test]
    fn dilated_functional_examples() {
        let mut m = LogBinnedMeasure::new(Layout::default()).unwrap();
        for x in [1.5, 1.5, 2.0, 15.0, 12.0, 2.5] {
            m.push(x);
        }
        let phi = Phi::Indicator { a: 1.0, b: 2.0 };
        let d1 = dilated_functional(&m, &phi, 1.0).unwrap();
        assert!((d1 - m.normalized_mass(1.0, 2.0).unwrap()).abs() < 1e-12);
        let d10 = dilated_functional(&m, &phi, 10.0).unwrap();
        assert!((d10 - m.normalized_mass(10.0, 20.0).unwrap()).abs() < 1e-12);
        assert!(dilated_functional(&m, &phi, 1e9).is_err());
    }

    #[test]
    fn tail_report_rejects_unit_ratio() {
        let m = accumulate([1.5, 2.0], &Layout::default()).unwrap();
        assert!(tail_homogeneity_report(&m, &[10.0], 1.0, 1.4).is_err());
    }

    #[test]
    fn growth_fit_examples() {
        let m = accumulate([0.0; 50].into_iter().chain([1.5; 5]), &Layout::default()).unwrap();
        let r = log_growth_fit(&m, &[1.0, 2.0, 3.0, 4.0], 0.98).unwrap();
        assert!(r.slope.abs() < 1e-12);
        assert!(log_growth_fit(&m, &[1.0, 2.0], 0.98).is_err());
    }

    #[test]
    fn slow_variation_y_zero_is_one() {
        let m = accumulate((1..2000).map(|i| i as f64 * 0.37), &Layout::default()).unwrap();
        let r = slow_variation_check(&m, &Phi::Indicator { a: 1.0, b: 2.0 }, &[1.0, 2.0], &[0.0], (0.8, 1.25), 10.0).unwrap();
        assert!(r.ratios.iter().all(|row| row[0] == 1.0));
    }

    #[test]
    fn trapezoid_quantile_inverts_cdf() {
        for tau in [-1.0, -0.3, 0.0, 0.6, 1.0] {
            for q in [0.0, 0.1, 0.5, 0.9, 1.0] {
                let t = trapezoid_quantile(tau, q);
                assert!((tau * t * t + (1.0 - tau) * t - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invariance_of_identity_family_is_exact() {
        let m = accumulate((0..5000).map(|i| ((i * 7919) % 1000) as f64 * 0.05 - 20.0), &Layout::default()).unwrap();
        let r = invariance_residual(&m, &FamilySpec::Identity, 20_000, (-10.0, 10.0), 1.0, &mut stream(1, 0)).unwrap();
        assert!(r.distance < 1e-12, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn martingale_trivial_cases() {
        let mut m = LogBinnedMeasure::new(Layout::default()).unwrap();
        for x in [1.5, 3.0, 12.0, 15.0, 0.5] {
            m.push(x);
        }
        let spec = FamilySpec::Affine { log_a: Dist::normal(0.0, 0.5), b: Dist::constant(1.0) };
        let same = Interval::new(10.0, 20.0);
        let r = martingale_bound_check(&m, &spec, same, same, 10, 10, 1).unwrap();
        assert_eq!(r.p_hat, 1.0);
        assert_eq!(r.method, HittingMethod::Trivial);
        assert!(r.margin.abs() < 1e-12 && r.pass);
        let wide = Interval::new(-1e7, 1e7);
        let r = martingale_bound_check(&m, &spec, same, wide, 10, 10, 1).unwrap();
        assert!(r.p_hat == 1.0 && r.nu_v >= r.nu_u && r.pass);
    }
}
