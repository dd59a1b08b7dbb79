//! Deterministic sampling of balls, spheres and fibers.
//!
//! Every random draw is keyed by `(seed, stream, index)` so that parallel
//! evaluation produces the same samples regardless of thread count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sampling budgets shared by the image, regularity and optimization code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub seed: u64,
    /// Number of domain (ball) samples.
    pub n_x: usize,
    /// Interior samples drawn from each fiber.
    pub n_y: usize,
    /// Pair budget for midpoint probing and regularity ratio sampling.
    pub pair_budget: usize,
    /// Fraction of ball samples placed on the bounding sphere.
    pub boundary_fraction: f64,
    /// Half-width of the box `{|y_i| ≤ L}` used to clip unbounded fibers.
    pub bounding_box: Option<f64>,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            n_x: 2000,
            n_y: 4,
            pair_budget: 100_000,
            boundary_fraction: 0.2,
            bounding_box: None,
        }
    }
}

impl SamplerSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Streams separate independent uses of one seed.
pub mod stream {
    pub const BALL: u64 = 1;
    pub const FIBER: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const REG_PAIRS: u64 = 4;
    pub const LIP: u64 = 5;
    pub const CONTINUITY: u64 = 6;
    pub const GRID: u64 = 7;
    pub const STARTS: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for draw `index` of `stream` under `seed`.
pub fn index_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(stream.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ index));
    ChaCha8Rng::seed_from_u64(key)
}

pub fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform point in the closed unit ball.
pub fn random_in_unit_ball<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    let u = random_unit_vector(dim, rng);
    let radius = rng.gen::<f64>().powf(1.0 / dim as f64);
    u * radius
}

/// Seeded ball sample: the first `round(n·boundary_fraction)` points lie on
/// the sphere `‖x − center‖ = radius`, the rest fill the ball.
///
/// Points come from a Halton sequence under a seeded random shift (modulo
/// 1), which leaves far smaller gaps than independent uniform draws. The
/// interior uses the area-preserving polar map in dimension 2 and rejection
/// from the cube otherwise. Beyond 16 dimensions the draws are independent.
pub fn ball_points(
    center: &DVector<f64>,
    radius: f64,
    n: usize,
    boundary_fraction: f64,
    seed: u64,
    stream: u64,
) -> Vec<DVector<f64>> {
    if radius == 0.0 {
        return vec![center.clone()];
    }
    let dim = center.len();
    let n_boundary = ((n as f64) * boundary_fraction.clamp(0.0, 1.0)).round() as usize;
    if dim > PRIMES.len() {
        return (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = index_rng(seed, stream, i as u64);
                let offset = if i < n_boundary {
                    random_unit_vector(dim, &mut rng)
                } else {
                    random_in_unit_ball(dim, &mut rng)
                };
                center + offset * radius
            })
            .collect();
    }
    let mut rng = index_rng(seed, stream, u64::MAX);
    let shift: Vec<f64> = (0..dim.max(2)).map(|_| rng.gen()).collect();
    let mut out = Vec::with_capacity(n);
    out.extend(unit_sphere_points(dim, n_boundary, &shift));
    out.extend(unit_ball_points(dim, n - n_boundary, &shift));
    out.into_par_iter().map(|u| center + u * radius).collect()
}

fn shifted_halton(i: u64, coord: usize, shift: &[f64]) -> f64 {
    (halton(i, PRIMES[coord]) + shift[coord]).fract()
}

fn unit_sphere_points(dim: usize, n: usize, shift: &[f64]) -> Vec<DVector<f64>> {
    match dim {
        1 => (0..n)
            .map(|k| DVector::from_element(1, if (k + (shift[0] < 0.5) as usize).is_multiple_of(2) { 1.0 } else { -1.0 }))
            .collect(),
        2 => (0..n)
            .map(|k| {
                let t = std::f64::consts::TAU * shifted_halton(k as u64 + 1, 0, shift);
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(n);
            let mut i = 1u64;
            while out.len() < n {
                let v = cube_point(dim, i, shift);
                let r = v.norm();
                if r <= 1.0 && r > 1e-3 {
                    out.push(v / r);
                }
                i += 1;
            }
            out
        }
    }
}

fn cube_point(dim: usize, i: u64, shift: &[f64]) -> DVector<f64> {
    DVector::from_fn(dim, |j, _| 2.0 * shifted_halton(i, j, shift) - 1.0)
}

fn unit_ball_points(dim: usize, n: usize, shift: &[f64]) -> Vec<DVector<f64>> {
    match dim {
        1 => (0..n)
            .map(|k| DVector::from_element(1, 2.0 * shifted_halton(k as u64 + 1, 0, shift) - 1.0))
            .collect(),
        2 => (0..n)
            .map(|k| {
                let i = k as u64 + 1;
                let r = shifted_halton(i, 0, shift).sqrt();
                let t = std::f64::consts::TAU * shifted_halton(i, 1, shift);
                DVector::from_vec(vec![r * t.cos(), r * t.sin()])
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(n);
            let mut i = 1u64;
            while out.len() < n {
                let v = cube_point(dim, i, shift);
                if v.norm() <= 1.0 {
                    out.push(v);
                }
                i += 1;
            }
            out
        }
    }
}

/// Radical inverse of `i` in the given prime base.
pub fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Number of deterministic sphere directions used for inner-norm suprema:
/// 4096 up to dimension 4, then `1024·2^dim` capped at `2^16`.
pub fn default_direction_count(dim: usize) -> usize {
    if dim <= 4 {
        4096
    } else {
        (1024usize << dim.min(16)).min(1 << 16)
    }
}

/// Deterministic low-discrepancy directions on the unit sphere of `ℝ^dim`.
///
/// Dimension 1 gives `±1`; dimension 2 gives equally spaced angles starting
/// at angle 0; higher dimensions push a Halton sequence through Box–Muller.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<DVector<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / count as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let pairs = dim.div_ceil(2);
            assert!(2 * pairs <= PRIMES.len(), "dimension too large for Halton directions");
            let mut out = Vec::with_capacity(count);
            let mut i = 1u64;
            while out.len() < count {
                let mut coords = Vec::with_capacity(2 * pairs);
                for p in 0..pairs {
                    let u1 = halton(i, PRIMES[2 * p]).max(1e-300);
                    let u2 = halton(i, PRIMES[2 * p + 1]);
                    let r = (-2.0 * u1.ln()).sqrt();
                    let t = std::f64::consts::TAU * u2;
                    coords.push(r * t.cos());
                    coords.push(r * t.sin());
                }
                coords.truncate(dim);
                let v = DVector::from_vec(coords);
                let n = v.norm();
                if n > 1e-12 {
                    out.push(v / n);
                }
                i += 1;
            }
            out
        }
    }
}

/// Levels of the multi-scale offset ladder: shell `j` holds radii in
/// `(2^{-j-1}, 2^{-j}]`.
pub const LADDER_MIN_LEVEL: i32 = -8;
pub const LADDER_MAX_LEVEL: i32 = 30;

/// Offset drawn from a random shell of the scale ladder, plus a uniformly
/// random direction. The ladder is fixed, so filtering a master list of such
/// offsets by `‖offset‖ ≤ r` yields nested sets as `r` shrinks.
pub fn ladder_offset<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    let level = rng.gen_range(LADDER_MIN_LEVEL..=LADDER_MAX_LEVEL);
    let outer = 2f64.powi(-level);
    let t: f64 = rng.gen();
    let radius = outer * (0.5 + 0.5 * t);
    random_unit_vector(dim, rng) * radius
}

/// Dirichlet(1,…,1) weights, i.e. uniform on the simplex.
pub fn simplex_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| -(rng.gen::<f64>().max(1e-300)).ln()).collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_points_are_deterministic_and_inside() {
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = ball_points(&c, 0.3, 500, 0.2, 9, stream::BALL);
        let b = ball_points(&c, 0.3, 500, 0.2, 9, stream::BALL);
        assert_eq!(a, b);
        for (i, p) in a.iter().enumerate() {
            let d = (p - &c).norm();
            assert!(d <= 0.3 + 1e-12);
            if i < 100 {
                assert!((d - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_directions_are_unit() {
        for dim in 1..=6 {
            let dirs = sphere_directions(dim, 256);
            assert!(!dirs.is_empty());
            for d in dirs {
                assert!((d.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(default_direction_count(3), 4096);
        assert_eq!(default_direction_count(5), 32768);
        assert_eq!(default_direction_count(9), 65536);
    }

    #[test]
    fn ladder_covers_small_scales() {
        let mut rng = index_rng(1, 2, 3);
        let small = (0..4000)
            .map(|_| ladder_offset(2, &mut rng).norm())
            .filter(|&r| r < 1e-3)
            .count();
        assert!(small > 1000);
    }
}
