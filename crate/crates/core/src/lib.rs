//! Simulation and numerical verification for critical stochastic dynamical
//! systems `X_n = Psi_n(X_{n-1})` on the real line, where the asymptotic
//! slopes `A` of the random maps satisfy `E[log A] = 0`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conjugation;
pub mod dist;
pub mod engine;
pub mod error;
pub mod group;
pub mod maps;
pub mod measure;
pub mod phi;
pub mod parallel;
pub mod quad;
pub mod reflected;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use dist::Dist;
pub use error::{Error, Result};
pub use group::{GroupElement, Order, Region};
pub use conjugation::Conjugator;
pub use maps::{Domain, FamilySpec, MapSample};
pub use measure::{Layout, LogBinnedMeasure};
pub use phi::Phi;
pub use renewal::StepLaw;
pub use synthetic::SyntheticLaw;
