use critsds_core::dist::Dist;
use critsds_core::measure::{dilated_functional, Layout};
use critsds_core::phi::Phi;
use critsds_core::renewal::{
    duality_r_check, estimate_ladder_means, f_phi_eval, lattice_ladder_means, ladder_decompose, optional_stopping_check,
    poisson_limit_check, wiener_hopf_check, PoissonConfig, StepLaw,
};
use critsds_core::rng::stream;
use critsds_core::stats::{ks_two_sample, ks_two_sample_pvalue};
use critsds_core::synthetic::{synthetic_measure, SyntheticLaw};
use std::collections::BTreeMap;

fn skewed() -> StepLaw {
    StepLaw::new(Dist::TwoPoint { x: 1.0, y: -0.5, p: 1.0 / 3.0 }).unwrap()
}

/// Propagates the sub-probability of not yet having ladder-crossed, by
/// exact position (in half units), for `depth` steps.
fn enumerate_first_heights(depth: usize, up: bool) -> (f64, f64) {
    let steps = [(2i64, 1.0 / 3.0), (-1i64, 2.0 / 3.0)];
    let mut alive: BTreeMap<i64, f64> = BTreeMap::from([(0, 1.0)]);
    let mut mean = 0.0;
    for _ in 0..depth {
        let mut next = BTreeMap::new();
        for (&pos, &p) in &alive {
            for (k, q) in steps {
                let y = pos + k;
                let crossed = if up { y >= 0 } else { y < 0 };
                if crossed {
                    mean += p * q * y as f64 * 0.5;
                } else {
                    *next.entry(y).or_insert(0.0) += p * q;
                }
            }
        }
        alive = next;
    }
    (mean, alive.values().sum())
}

#[test]
fn skewed_two_point_exact_heights() {
    let e = lattice_ladder_means(&skewed()).unwrap();
    // Down steps are -1/2 and skip-free, so S_l = -1/2 surely.
    assert!((e.s_l + 0.5).abs() < 1e-12, "{e:?}");
    // Path enumeration: the unresolved mass times the largest possible
    // height (1) bounds the truncation error.
    let (partial, rest) = enumerate_first_heights(4000, true);
    assert!(e.s_t >= partial - 1e-12 && e.s_t <= partial + rest + 1e-12, "{e:?} {partial} {rest}");
    assert!(rest < 0.05);
    // Independent closed form: E[S_t] E[-S_l] = sigma^2 / 2 with sigma^2 = 1/2.
    assert!((e.s_t - 0.5).abs() < 1e-10, "{e:?}");
    let (l_partial, l_rest) = enumerate_first_heights(200, false);
    // Every resolved path ends at -1/2.
    assert!((l_partial + 0.5 * (1.0 - l_rest)).abs() < 1e-12);
}

#[test]
fn monte_carlo_ladder_means_match_exact() {
    let law = skewed();
    let e = lattice_ladder_means(&law).unwrap();
    let m = estimate_ladder_means(&law, 100_000, 100_000, 11).unwrap();
    let t = m.s_t.unwrap();
    let l = m.s_l.unwrap();
    assert!((t.mean - e.s_t).abs() < 4.0 * t.se + 1e-3, "{t:?}");
    assert!((l.mean - e.s_l).abs() < 1e-12, "{l:?}");
    assert!(m.censored_t < 0.01);
}

#[test]
fn wiener_hopf_ratio_is_scale_invariant() {
    let base = wiener_hopf_check(&skewed(), 50_000, 100_000, 3).unwrap();
    let scaled_law = StepLaw::new(Dist::TwoPoint { x: 3.0, y: -1.5, p: 1.0 / 3.0 }).unwrap();
    let scaled = wiener_hopf_check(&scaled_law, 50_000, 100_000, 3).unwrap();
    // Same seed and uniforms: every height scales by exactly 3.
    assert!((base.ratio - scaled.ratio).abs() < 1e-12, "{} vs {}", base.ratio, scaled.ratio);
    assert!((scaled.s_t.mean - 3.0 * base.s_t.mean).abs() < 1e-9);
    assert_eq!(base.sign, -1);
    let exact = base.exact.unwrap();
    assert!((exact.s_t * exact.s_l / base.sigma2 + 0.5).abs() < 1e-10);
}

#[test]
fn ascending_heights_telescope() {
    let law = StepLaw::new(Dist::normal(0.0, 1.0)).unwrap();
    let (mut second, mut summed) = (Vec::new(), Vec::new());
    let mut first = Vec::new();
    for c in 0..8000u64 {
        let mut rng = stream(5, c);
        let incs: Vec<f64> = (0..20_000).map(|_| law.sample(&mut rng)).collect();
        let st = ladder_decompose(&incs);
        if st.t_heights.len() >= 2 {
            second.push(st.t_heights[1]);
            first.push(st.t_heights[0]);
        }
    }
    // Sum of two independent first heights vs the second ladder height.
    let half = first.len() / 2;
    for i in 0..half.min(second.len() / 2) {
        summed.push(first[2 * i] + first[2 * i + 1]);
    }
    let second = &mut second[..summed.len()].to_vec();
    let d = ks_two_sample(second, &mut summed);
    let p = ks_two_sample_pvalue(d, second.len(), summed.len());
    assert!(p > 0.01, "d={d} p={p}");
}

#[test]
fn duality_agrees_for_normal_steps() {
    let law = StepLaw::new(Dist::normal(0.0, 1.0)).unwrap();
    let g = |y: f64| if (-2.0..0.0).contains(&y) { 1.0 } else { 0.0 };
    let r = duality_r_check(&g, (-2.0, 0.0), &law, 0.0, 40_000, 1000, 1_000_000, 7).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.leakage == 0.0 && r.censored < 0.01, "{r:?}");
    // g(x) itself contributes 0 at x = 0 (half-open support), so both
    // sides are near 2 / E|S_l| + overshoot correction.
    assert!(r.ladder_side.mean > 1.5 && r.ladder_side.mean < 4.0, "{r:?}");
}

#[test]
fn poisson_ramp_limit() {
    let k = 5.0;
    let f = move |x: f64| x.clamp(0.0, k);
    let law = StepLaw::new(Dist::normal(0.0, 1.0)).unwrap();
    let cfg = PoissonConfig { chains: 20_000, horizon: 100_000, seed: 9, g_range: (-12.0, k + 12.0), panels: 64 };
    let r = poisson_limit_check(&f, &[0.0, k], &law, &[0.0, 2.0, 20.0], &cfg).unwrap();
    assert!(r.int_g.abs() < 1e-8, "{}", r.int_g);
    assert!(r.g_tail < 1e-12);
    assert!(r.pass, "{r:?}");
    assert!(r.nonnegative && r.growth_constant <= 1.0);
    // Second limit: E[S_t] K against (1/E S_l)(-K sigma^2 / 2).
    assert!((r.int_g_x + k / 2.0).abs() < 1e-6, "{}", r.int_g_x);
    assert_eq!(r.integral_pass, Some(true), "{r:?}");
}

#[test]
fn optional_stopping_identity_at_finite_horizon() {
    let f = |x: f64| (x / 3.0).tanh() + 1.0;
    let law = StepLaw::new(Dist::normal(0.0, 1.0)).unwrap();
    let r = optional_stopping_check(&f, &law, -2.0, 15, 4000, 16, 21).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn f_phi_reduces_to_dilation_and_tends_to_da_over_a() {
    let law = SyntheticLaw::LogUniform { lo: 1.0, hi: 1e8, two_sided: false };
    let m = synthetic_measure(&law, &Layout::default(), 2_000_000, 13).unwrap();
    let phi = Phi::Indicator { a: 1.0, b: 2.0 };
    let x = 10f64.ln();
    let a = f_phi_eval(&m, &phi, 0.0, x).unwrap();
    let b = dilated_functional(&m, &phi, 10.0).unwrap();
    assert!((a - b).abs() < 1e-12);
    for x in [8.0, 12.0] {
        let shifted = f_phi_eval(&m, &phi, 5.0, x).unwrap();
        let plain = dilated_functional(&m, &phi, f64::exp(x)).unwrap();
        assert!((shifted - plain).abs() < 0.03 * plain, "x={x}");
        assert!((shifted / 2f64.ln() - 1.0).abs() < 0.05, "x={x} {shifted}");
    }
}
