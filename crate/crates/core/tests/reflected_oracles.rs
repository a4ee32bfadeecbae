use critsds_core::dist::Dist;
use critsds_core::maps::FamilySpec;
use critsds_core::measure::{invariance_residual, tail_homogeneity_report, Layout, LogBinnedMeasure};
use critsds_core::phi::Phi;
use critsds_core::reflected::{
    critical_tail_check, embedded_ladder_measure, feller_oracle_check, reflected_occupation, simulate_reflected,
    ReflectedSpec,
};
use critsds_core::rng::stream;
use critsds_core::synthetic::{synthetic_measure, SyntheticLaw};

fn linear_layout() -> Layout {
    Layout { x_core: 256.0, core_bins: 512, bins_per_decade: 16, decades: 4, reference: (0.0, 1.0) }
}

#[test]
fn feller_closed_form_exponential_and_uniform() {
    for u in [Dist::Exponential { rate: 1.0 }, Dist::Uniform { lo: 0.0, hi: 1.0 }] {
        let r = feller_oracle_check(&ReflectedSpec::new(u.clone()).unwrap(), 1_000_000, 0.01, 17).unwrap();
        assert_eq!(r.pass, Some(true), "{u:?}: {r:?}");
    }
}

#[test]
fn wrong_law_is_detected_by_ks() {
    // Exp(1) steps compared against the Feller law of Exp(2) steps.
    let spec = ReflectedSpec::new(Dist::Exponential { rate: 1.0 }).unwrap();
    let mut ys: Vec<f64> = simulate_reflected(&spec, 0.0, 3, 0, 200_000).unwrap().collect();
    let d = critsds_core::stats::ks_distance(&mut ys, |y| 1.0 - (-2.0 * y).exp());
    assert!(d > 0.1);
}

#[test]
fn centered_walk_stays_nonnegative() {
    let spec = ReflectedSpec::new(Dist::normal(0.0, 1.0)).unwrap();
    assert!(simulate_reflected(&spec, 0.0, 1, 0, 1_000_000).unwrap().all(|y| y >= 0.0));
}

#[test]
fn synthetic_laws_and_translation_flatness() {
    let grid = [10.0, 20.0, 50.0, 100.0];
    let phi = Phi::Indicator { a: 0.0, b: 1.0 };
    let leb = SyntheticLaw::Lebesgue { lo: 0.0, hi: 200.0, two_sided: false };
    let m = synthetic_measure(&leb, &linear_layout(), 2_000_000, 1).unwrap();
    let r = critical_tail_check(&m, &phi, &grid, 1.35).unwrap();
    assert!(r.pass && r.flatness < 1.03, "{r:?}");
    let logu = SyntheticLaw::LogUniform { lo: 0.5, hi: 1e4, two_sided: false };
    let m = synthetic_measure(&logu, &linear_layout(), 2_000_000, 2).unwrap();
    let r = critical_tail_check(&m, &phi, &grid, 1.35).unwrap();
    assert!(!r.pass, "{r:?}");
    // nu[x, x+1] = log(1 + 1/x): roughly 1/x decay.
    let want = (1.0 + 0.1f64).ln() / (1.0 + 0.01f64).ln();
    assert!((r.values[0] / r.values[3] / want - 1.0).abs() < 0.1, "{r:?}");
}

#[test]
fn embedded_ladder_measure_is_proportional_to_occupation() {
    let spec = ReflectedSpec::new(Dist::normal(0.0, 1.0)).unwrap();
    let layout = Layout { x_core: 16.0, core_bins: 64, bins_per_decade: 8, decades: 3, reference: (0.0, 1.0) };
    let emb = embedded_ladder_measure(&spec, &layout, 100_000, 100_000, 4).unwrap();
    assert!(emb.censored < 0.01, "{}", emb.censored);
    let (direct, _) = reflected_occupation(&spec, &layout, &Layout::default(), 5, 16, 2_000_000, 0.0).unwrap();
    let mut ratios = Vec::new();
    for k in 0..10 {
        let (a, b) = (k as f64, k as f64 + 1.0);
        ratios.push(emb.measure.normalized_mass(a, b).unwrap() / direct.normalized_mass(a, b).unwrap());
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(ratios.iter().all(|r| (r / mean - 1.0).abs() < 0.1), "{ratios:?}");
}

#[test]
fn embedded_smoke_with_jittered_two_point_steps() {
    // +-1 steps plus a small continuous jitter: aperiodic, still centered.
    let u = Dist::Discrete { values: vec![-1.05, -0.95, 0.95, 1.05], weights: vec![1.0; 4] };
    let spec = ReflectedSpec::new(u).unwrap();
    let layout = Layout { x_core: 16.0, core_bins: 64, bins_per_decade: 8, decades: 3, reference: (0.0, 1.0) };
    let emb = embedded_ladder_measure(&spec, &layout, 20_000, 100_000, 6).unwrap();
    let phi = Phi::Indicator { a: 0.0, b: 1.0 };
    assert!(emb.functional(&phi).unwrap() > 0.0);
    let (direct, _) = reflected_occupation(&spec, &layout, &Layout::default(), 7, 8, 1_000_000, 0.0).unwrap();
    let r = emb.measure.normalized_mass(2.0, 4.0).unwrap() / direct.normalized_mass(2.0, 4.0).unwrap();
    assert!((r - 1.0).abs() < 0.15, "{r}");
}

#[test]
fn exp_conjugated_route_agrees_with_translation_route() {
    let spec = ReflectedSpec::new(Dist::normal(0.0, 1.0)).unwrap();
    let exp_layout = Layout { x_core: 1.0, core_bins: 16, bins_per_decade: 16, decades: 48, reference: (1.0, std::f64::consts::E) };
    let (m, e) = reflected_occupation(&spec, &linear_layout(), &exp_layout, 8, 8, 1_000_000, 0.0).unwrap();
    let grid = [10.0, 20.0, 50.0, 100.0];
    let phi = Phi::Indicator { a: 0.0, b: 1.0 };
    let t = critical_tail_check(&m, &phi, &grid, 1.35).unwrap();
    let z: Vec<f64> = grid.iter().map(|x| f64::exp(*x)).collect();
    let h = tail_homogeneity_report(&e, &z, std::f64::consts::E, 1.35).unwrap();
    // Same windows [x, x+1] seen through s(y) = e^y: equal up to the
    // fractional-bin rule.
    for (a, b) in t.values.iter().zip(&h.rows) {
        let ra = a / t.values[0];
        let rb = b.h / h.rows[0].h;
        assert!((ra - rb).abs() < 0.05, "{ra} vs {rb}");
    }
    assert_eq!(t.pass, h.pass);
}

#[test]
fn feller_measure_is_invariant_under_its_own_steps() {
    let u = Dist::Exponential { rate: 1.0 };
    let layout = Layout { x_core: 8.0, core_bins: 64, bins_per_decade: 8, decades: 2, reference: (0.0, 1.0) };
    // I.i.d. draws from the Feller law Exp(1).
    let mut rng = stream(10, 0);
    let mut m = LogBinnedMeasure::new(layout).unwrap();
    for _ in 0..1_000_000 {
        m.push(u.sample(&mut rng));
    }
    let spec = FamilySpec::Reflected { u: u.clone() };
    let r = invariance_residual(&m, &spec, 2_000_000, (0.0, 6.0), 1.0, &mut stream(11, 0)).unwrap();
    assert!(r.pass && r.z_stat.abs() < 3.0, "{r:?}");
    // Negative control: the same measure pushed by Exp(1/2) steps.
    let wrong = FamilySpec::Reflected { u: Dist::Exponential { rate: 0.5 } };
    let r = invariance_residual(&m, &wrong, 2_000_000, (0.0, 6.0), 1.0, &mut stream(12, 0)).unwrap();
    assert!(!r.pass && r.z_stat > 5.0, "{r:?}");
}
