//! Scenarios bundled into the binary.

use crate::config::ScenarioConfig;
use crate::CliError;

/// `(file stem, TOML source)` of every bundled scenario.
pub const BUNDLED: &[(&str, &str)] = &[
    ("group_axioms", include_str!("../scenarios/group_axioms.toml")),
    ("envelope_sandwich", include_str!("../scenarios/envelope_sandwich.toml")),
    ("affine_critical", include_str!("../scenarios/affine_critical.toml")),
    ("affine_critical_wide", include_str!("../scenarios/affine_critical_wide.toml")),
    ("affine_martingale_bound", include_str!("../scenarios/affine_martingale_bound.toml")),
    ("goldie_max_contraction", include_str!("../scenarios/goldie_max_contraction.toml")),
    ("feller_exponential", include_str!("../scenarios/feller_exponential.toml")),
    ("feller_uniform", include_str!("../scenarios/feller_uniform.toml")),
    ("reflected_critical", include_str!("../scenarios/reflected_critical.toml")),
    ("poisson_ramp", include_str!("../scenarios/poisson_ramp.toml")),
    ("wiener_hopf_two_point", include_str!("../scenarios/wiener_hopf_two_point.toml")),
    ("power_conjugation", include_str!("../scenarios/power_conjugation.toml")),
    ("interval_conjugation", include_str!("../scenarios/interval_conjugation.toml")),
    ("synthetic_dx_over_x", include_str!("../scenarios/synthetic_dx_over_x.toml")),
    ("galton_watson_envelope", include_str!("../scenarios/galton_watson_envelope.toml")),
];

pub fn scenario(name: &str) -> Result<ScenarioConfig, CliError> {
    let stem = name.strip_suffix(".toml").unwrap_or(name);
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == stem)
        .ok_or_else(|| CliError::Config(format!("unknown scenario {name:?}; see `critsds list`")))?;
    ScenarioConfig::from_toml(text)
}

/// `(name, target, description)` for every bundled scenario.
pub fn list() -> Result<Vec<(String, String, String)>, CliError> {
    BUNDLED
        .iter()
        .map(|(n, _)| scenario(n).map(|c| (c.name, c.target, c.description)))
        .collect()
}
