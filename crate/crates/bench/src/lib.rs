//! Fixtures shared by the criterion benches.

use critsds_core::maps::FamilySpec;
use critsds_core::Dist;

/// Critical affine family with `Var log A = 1/4` and `B >= 1`.
pub fn critical_affine() -> FamilySpec {
    FamilySpec::Affine {
        log_a: Dist::normal(0.0, 0.5),
        b: Dist::Clamp { inner: Box::new(Dist::LogNormal { mu: 0.0, sigma: 0.5 }), lo: Some(1.0), hi: None },
    }
}

/// Reflected walk with standard normal steps.
pub fn reflected_normal() -> FamilySpec {
    FamilySpec::Reflected { u: Dist::normal(0.0, 1.0) }
}
