//! Named test functions used by the diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phi", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phi {
    /// `1_[a, b]`.
    Indicator { a: f64, b: f64 },
    /// C^1 piecewise cubic bump on `[a, b]`: smoothstep up to 1 at the
    /// midpoint and back down.
    Bump { a: f64, b: f64 },
    /// `0` for `x < 0`, `x` on `[0, k]`, `k` beyond.
    Ramp { k: f64 },
    Constant { c: f64 },
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl Phi {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Phi::Indicator { a, b } | Phi::Bump { a, b } => {
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(invalid("phi support needs finite a < b"));
                }
                Ok(())
            }
            Phi::Ramp { k } => {
                if !(k > 0.0) {
                    return Err(invalid("ramp needs k > 0"));
                }
                Ok(())
            }
            Phi::Constant { .. } => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Phi::Indicator { a, b } => {
                if x >= a && x <= b {
                    1.0
                } else {
                    0.0
                }
            }
            Phi::Bump { a, b } => {
                let m = 0.5 * (a + b);
                if x <= a || x >= b {
                    0.0
                } else if x <= m {
                    smoothstep((x - a) / (m - a))
                } else {
                    smoothstep((b - x) / (b - m))
                }
            }
            Phi::Ramp { k } => x.clamp(0.0, k),
            Phi::Constant { c } => c,
        }
    }

    /// Closed support, `None` when unbounded.
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            Phi::Indicator { a, b } | Phi::Bump { a, b } => Some((a, b)),
            Phi::Ramp { .. } | Phi::Constant { .. } => None,
        }
    }

    /// Points where `phi` or its derivative is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Phi::Indicator { a, b } => vec![a, b],
            Phi::Bump { a, b } => vec![a, 0.5 * (a + b), b],
            Phi::Ramp { k } => vec![0.0, k],
            Phi::Constant { .. } => vec![],
        }
    }

    /// `int phi(x) dx` for compactly supported `phi`.
    pub fn integral(&self) -> Option<f64> {
        match *self {
            Phi::Indicator { a, b } => Some(b - a),
            Phi::Bump { a, b } => Some(0.5 * (b - a)),
            _ => None,
        }
    }

    /// `int phi(a) da / a` for `phi` supported in `(0, inf)`.
    pub fn integral_dx_over_x(&self) -> Option<f64> {
        match *self {
            Phi::Indicator { a, b } if a > 0.0 => Some((b / a).ln()),
            Phi::Bump { a, b } if a > 0.0 => {
                Some(quad::piecewise(|x| self.eval(x) / x, a, b, &self.breakpoints(), 16))
            }
            _ => None,
        }
    }
}
