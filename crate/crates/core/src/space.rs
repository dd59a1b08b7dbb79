//! Norm geometry of the ambient space.
//!
//! Spaces are `ℝⁿ` with an `ℓᵖ` norm, `1 < p ≤ 2`. Their modulus of
//! convexity is of second order, `δ(ε) ≥ c·ε²`, which is what turns a
//! midpoint estimate into a ball inclusion (see [`midpoint_ball_radius`]).
//! Geometric sampling elsewhere in the crate is Euclidean.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible second-order constant (attained by Hilbert spaces).
pub const MAX_SECOND_ORDER_CONSTANT: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceSpecRaw", into = "SpaceSpecRaw")]
pub struct SpaceSpec {
    dim: usize,
    p: f64,
    c: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceSpecRaw {
    dim: usize,
    #[serde(default = "default_p")]
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
}

fn default_p() -> f64 {
    2.0
}

impl TryFrom<SpaceSpecRaw> for SpaceSpec {
    type Error = Error;

    fn try_from(raw: SpaceSpecRaw) -> Result<Self> {
        SpaceSpec::new(raw.dim, raw.p, raw.c)
    }
}

impl From<SpaceSpec> for SpaceSpecRaw {
    fn from(s: SpaceSpec) -> Self {
        SpaceSpecRaw {
            dim: s.dim,
            p: s.p,
            c: Some(s.c),
        }
    }
}

impl SpaceSpec {
    /// `c` defaults to `(p−1)/8` (which is `1/8` for `p = 2`). A weaker
    /// user constant is accepted; anything above the default is rejected.
    pub fn new(dim: usize, p: f64, c: Option<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("space dimension must be at least 1".into()));
        }
        if !(p > 1.0 && p <= 2.0) {
            return Err(Error::UnsupportedSpace(format!("norm exponent p = {p} outside (1, 2]")));
        }
        let default_c = (p - 1.0) / 8.0;
        let c = c.unwrap_or(default_c);
        if !(c > 0.0 && c <= MAX_SECOND_ORDER_CONSTANT) {
            return Err(Error::UnsupportedSpace(format!("second-order constant c = {c} outside (0, 1/8]")));
        }
        if c > default_c {
            return Err(Error::UnsupportedSpace(format!(
                "c = {c} exceeds the certified constant {default_c} for p = {p}"
            )));
        }
        Ok(Self { dim, p, c })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(dim, 2.0, None).expect("valid Euclidean space")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn is_hilbert(&self) -> bool {
        self.p == 2.0
    }
}

/// `δ(ε)`: exact for `p = 2`, the certified lower bound `(p−1)/8·ε²` for
/// `p < 2`.
pub fn modulus_of_convexity(space: &SpaceSpec, eps: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::Domain(format!("separation eps = {eps} outside [0, 2]")));
    }
    if !(space.p > 1.0 && space.p <= 2.0) {
        return Err(Error::UnsupportedSpace(format!("p = {}", space.p)));
    }
    let v = if space.is_hilbert() {
        // 1 − √(1 − ε²/4), written to avoid cancellation for small ε.
        let q = eps * eps / 4.0;
        q / (1.0 + (1.0 - q).sqrt())
    } else {
        (space.p - 1.0) / 8.0 * eps * eps
    };
    Ok(v.clamp(0.0, 1.0))
}

pub fn second_order_constant(space: &SpaceSpec) -> f64 {
    space.c
}

/// Radius `ρ = c·‖x1 − x2‖²/r` of the ball around the midpoint that stays in
/// any ball `B(x₀, r)` containing both points.
pub fn midpoint_ball_radius(space: &SpaceSpec, x1: &DVector<f64>, x2: &DVector<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("ball radius r = {r} must be positive")));
    }
    if x1.len() != x2.len() {
        return Err(Error::Dimension("midpoint_ball_radius: points differ in dimension".into()));
    }
    let dist2 = (x1 - x2).norm_squared();
    Ok(space.c * dist2 / r)
}
