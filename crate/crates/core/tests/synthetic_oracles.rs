use critsds_core::measure::{dilated_functional, log_growth_fit, slow_variation_check, tail_homogeneity_report, Layout};
use critsds_core::phi::Phi;
use critsds_core::synthetic::{synthetic_measure, SyntheticLaw};

const Z_GRID: [f64; 4] = [1e1, 1e2, 1e3, 1e4];
const K_GRID: [f64; 8] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

fn log_uniform() -> SyntheticLaw {
    SyntheticLaw::LogUniform { lo: 1.0, hi: 1e8, two_sided: true }
}

#[test]
fn dx_over_x_dilated_functional_is_log_two() {
    let m = synthetic_measure(&log_uniform(), &Layout::default(), 4_000_000, 1).unwrap();
    let phi = Phi::Indicator { a: 1.0, b: 2.0 };
    for z in [1.0, 10.0, 1e3, 1e5] {
        let v = dilated_functional(&m, &phi, z).unwrap();
        assert!((v / 2f64.ln() - 1.0).abs() < 0.03, "z={z} v={v}");
    }
}

#[test]
fn dx_over_x_is_homogeneous_and_grows_linearly() {
    let m = synthetic_measure(&log_uniform(), &Layout::default(), 4_000_000, 2).unwrap();
    let t = tail_homogeneity_report(&m, &Z_GRID, 2.0, 1.4).unwrap();
    assert!(t.pass && t.flatness < 1.06, "{t:?}");
    let g = log_growth_fit(&m, &K_GRID, 0.98).unwrap();
    assert!(g.pass && g.r2 > 0.999, "{g:?}");
    // Reference window [1, e] has mass 1, so the slope is 2.
    assert!((g.slope - 2.0).abs() < 0.05, "{g:?}");
}

#[test]
fn steeper_tail_is_rejected() {
    let law = SyntheticLaw::Power { gamma: -0.5, lo: 1.0, hi: 1e8, two_sided: false };
    let m = synthetic_measure(&law, &Layout::default(), 4_000_000, 3).unwrap();
    let t = tail_homogeneity_report(&m, &Z_GRID, 2.0, 1.4).unwrap();
    assert!(!t.pass && (t.flatness / 10f64.powf(1.5) - 1.0).abs() < 0.1, "{t:?}");
    // h(z) ~ z^(-1/2): one decade costs a factor sqrt(10).
    let r = t.rows[0].h / t.rows[1].h;
    assert!((r / 10f64.sqrt() - 1.0).abs() < 0.1, "{r}");
}

#[test]
fn lebesgue_fails_log_growth() {
    let law = SyntheticLaw::Lebesgue { lo: 0.0, hi: 2e4, two_sided: true };
    let m = synthetic_measure(&law, &Layout::default(), 4_000_000, 4).unwrap();
    let g = log_growth_fit(&m, &K_GRID, 0.98).unwrap();
    assert!(!g.pass, "{g:?}");
    assert!(g.nonlinearity_flag);
}

#[test]
fn slow_variation_on_synthetic_laws() {
    let phi = Phi::Indicator { a: 1.0, b: 2.0 };
    let xs = [4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
    let ys = [0.5, 1.0, 2.0];
    let m = synthetic_measure(&log_uniform(), &Layout::default(), 4_000_000, 5).unwrap();
    let r = slow_variation_check(&m, &phi, &xs, &ys, (0.8, 1.25), 10.0).unwrap();
    assert!(r.pass);
    assert!(r.ratios.iter().flatten().all(|v| (v - 1.0).abs() < 0.06), "{:?}", r.ratios);

    let law = SyntheticLaw::Power { gamma: 0.3, lo: 1.0, hi: 1e8, two_sided: false };
    let m = synthetic_measure(&law, &Layout::default(), 4_000_000, 6).unwrap();
    let r = slow_variation_check(&m, &phi, &xs, &ys, (0.8, 1.25), 10.0).unwrap();
    assert!(!r.pass);
    for row in &r.ratios {
        for (v, y) in row.iter().zip(ys) {
            assert!((v / (0.3 * y).exp() - 1.0).abs() < 0.1, "{v} vs y={y}");
        }
    }
}

#[test]
fn diagnostics_ignore_overall_scale() {
    let m = synthetic_measure(&log_uniform(), &Layout::default(), 500_000, 7).unwrap();
    let mut doubled = m.clone();
    doubled.merge(&m).unwrap();
    let a = tail_homogeneity_report(&m, &Z_GRID, 2.0, 1.4).unwrap();
    let b = tail_homogeneity_report(&doubled, &Z_GRID, 2.0, 1.4).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert!((ra.h - rb.h).abs() < 1e-12 * ra.h.abs().max(1.0));
    }
    let ga = log_growth_fit(&m, &K_GRID, 0.98).unwrap();
    let gb = log_growth_fit(&doubled, &K_GRID, 0.98).unwrap();
    assert!((ga.slope - gb.slope).abs() < 1e-12);
}
