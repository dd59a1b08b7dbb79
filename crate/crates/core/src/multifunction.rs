//! Convex multifunctions with polyhedral graphs, the sum `f + G`, and
//! sampled images of balls.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::lp::{self, LpOutcome};
use crate::polyhedron::Polyhedron;
use crate::sampling::{ball_points, index_rng, random_in_unit_ball, stream, SamplerSpec};
use crate::smooth::SmoothMap;

/// Anything whose values and inverse images admit distance queries.
pub trait SetValuedMap: Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    /// `d(v, F(x))`, `+∞` when `F(x)` is empty.
    fn dist_to_value(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<ExtReal>;
    /// `d(x, F⁻¹(v))`, `+∞` when `F⁻¹(v)` is empty.
    fn dist_to_preimage(&self, v: &DVector<f64>, x: &DVector<f64>) -> Result<ExtReal>;
    /// Representative points of `F(x)` (extreme points first), with up to
    /// `n` additional seeded samples.
    fn value_samples(&self, x: &DVector<f64>, n: usize, seed: u64, index: u64) -> Result<Vec<DVector<f64>>>;
}

/// `G` with `graph G = {(x, y) : A·x + B·y ≤ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralMultifunction {
    x_coef: DMatrix<f64>,
    y_coef: DMatrix<f64>,
    rhs: DVector<f64>,
    sublinear: bool,
    /// Nonempty fibers share the recession cone `{r : B·r ≤ 0}`.
    bounded_fibers: bool,
}

/// A fiber `G(x)` as an inequality system together with its emptiness.
#[derive(Debug, Clone, PartialEq)]
pub struct Fiber {
    pub set: Polyhedron,
    pub empty: bool,
}

impl PolyhedralMultifunction {
    /// Fails when the dimensions disagree or the graph is empty.
    pub fn new(x_coef: DMatrix<f64>, y_coef: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let k = rhs.len();
        if x_coef.nrows() != k || y_coef.nrows() != k {
            return Err(Error::Dimension(format!(
                "graph rows: A has {}, B has {}, b has {k}",
                x_coef.nrows(),
                y_coef.nrows()
            )));
        }
        if rhs.iter().chain(x_coef.iter()).chain(y_coef.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("graph data must be finite".into()));
        }
        let joint = Polyhedron::new(concat_columns(&x_coef, &y_coef), rhs.clone())?;
        if joint.is_empty()? {
            return Err(Error::Invalid("multifunction graph is empty".into()));
        }
        let sublinear = rhs.iter().all(|&v| v == 0.0);
        let bounded_fibers = crate::polyhedron::recession_directions(&y_coef)?.is_empty();
        Ok(Self {
            x_coef,
            y_coef,
            rhs,
            sublinear,
            bounded_fibers,
        })
    }

    /// Row-major construction used by configuration files.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], rhs: &[f64]) -> Result<Self> {
        let x_coef = crate::smooth::matrix_from_rows(a, "A")?;
        let y_coef = crate::smooth::matrix_from_rows(b, "B")?;
        // Empty row lists lose the column count; callers always give rows.
        Self::new(x_coef, y_coef, DVector::from_column_slice(rhs))
    }

    /// The process `x ↦ {A·x}` (graph `y = A·x` as inequality pairs).
    pub fn linear(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let mut x_coef = DMatrix::zeros(2 * m, n);
        let mut y_coef = DMatrix::zeros(2 * m, m);
        for i in 0..m {
            for j in 0..n {
                x_coef[(2 * i, j)] = -a[(i, j)];
                x_coef[(2 * i + 1, j)] = a[(i, j)];
            }
            y_coef[(2 * i, i)] = 1.0;
            y_coef[(2 * i + 1, i)] = -1.0;
        }
        Self::new(x_coef, y_coef, DVector::zeros(2 * m)).expect("graph of a linear map is nonempty")
    }

    /// `x ↦ {0}` in `ℝᵐ`.
    pub fn zero_process(n: usize, m: usize) -> Self {
        Self::linear(&DMatrix::zeros(m, n))
    }

    /// `x ↦ x + [lo, hi]ⁿ`.
    pub fn translated_box(n: usize, lo: f64, hi: f64) -> Self {
        let mut x_coef = DMatrix::zeros(2 * n, n);
        let mut y_coef = DMatrix::zeros(2 * n, n);
        let mut rhs = DVector::zeros(2 * n);
        for i in 0..n {
            x_coef[(2 * i, i)] = -1.0;
            y_coef[(2 * i, i)] = 1.0;
            rhs[2 * i] = hi;
            x_coef[(2 * i + 1, i)] = 1.0;
            y_coef[(2 * i + 1, i)] = -1.0;
            rhs[2 * i + 1] = -lo;
        }
        Self::new(x_coef, y_coef, rhs).expect("box graph is nonempty")
    }

    /// `x ↦ [lo, hi]ᵐ`, independent of `x ∈ ℝⁿ`.
    pub fn constant_box(n: usize, m: usize, lo: f64, hi: f64) -> Self {
        let x_coef = DMatrix::zeros(2 * m, n);
        let mut y_coef = DMatrix::zeros(2 * m, m);
        let mut rhs = DVector::zeros(2 * m);
        for i in 0..m {
            y_coef[(2 * i, i)] = 1.0;
            rhs[2 * i] = hi;
            y_coef[(2 * i + 1, i)] = -1.0;
            rhs[2 * i + 1] = -lo;
        }
        Self::new(x_coef, y_coef, rhs).expect("box graph is nonempty")
    }

    pub fn x_coef(&self) -> &DMatrix<f64> {
        &self.x_coef
    }

    pub fn y_coef(&self) -> &DMatrix<f64> {
        &self.y_coef
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn is_sublinear(&self) -> bool {
        self.sublinear
    }

    /// `x ↦ {0}`: no dependence on `x` and the single value `0`.
    pub fn is_zero_process(&self) -> Result<bool> {
        if !self.sublinear || !self.bounded_fibers || self.x_coef.iter().any(|&v| v != 0.0) {
            return Ok(false);
        }
        let verts = self.fiber_set(&DVector::zeros(self.dim_x()))?.vertices();
        Ok(verts.len() == 1 && verts[0].amax() <= 1e-12)
    }

    pub fn has_bounded_fibers(&self) -> bool {
        self.bounded_fibers
    }

    pub fn graph(&self) -> Polyhedron {
        Polyhedron {
            m: concat_columns(&self.x_coef, &self.y_coef),
            d: self.rhs.clone(),
        }
    }

    pub fn contains(&self, x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
        let s = &self.x_coef * x + &self.y_coef * y - &self.rhs;
        s.iter().all(|&v| v <= tol)
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.x_coef.ncols() {
            return Err(Error::Dimension(format!("G expects x in ℝ^{}, got {}", self.x_coef.ncols(), x.len())));
        }
        Ok(())
    }

    fn check_y(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.y_coef.ncols() {
            return Err(Error::Dimension(format!("G expects y in ℝ^{}, got {}", self.y_coef.ncols(), y.len())));
        }
        Ok(())
    }

    /// `G(x) = {y : B·y ≤ b − A·x}`.
    pub fn fiber(&self, x: &DVector<f64>) -> Result<Fiber> {
        let set = self.fiber_set(x)?;
        let empty = set.is_empty()?;
        Ok(Fiber { set, empty })
    }

    fn fiber_set(&self, x: &DVector<f64>) -> Result<Polyhedron> {
        self.check_x(x)?;
        Polyhedron::new(self.y_coef.clone(), &self.rhs - &self.x_coef * x)
    }

    /// `G⁻¹(v) = {u : A·u ≤ b − B·v}`.
    pub fn preimage_set(&self, v: &DVector<f64>) -> Result<Polyhedron> {
        self.check_y(v)?;
        Polyhedron::new(self.x_coef.clone(), &self.rhs - &self.y_coef * v)
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(!self.fiber_set(x)?.is_empty()?)
    }

    /// `d(v, G(x))`.
    pub fn dist_point_to_fiber(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<ExtReal> {
        self.check_y(v)?;
        self.fiber_set(x)?.distance(v)
    }

    /// `d(x, G⁻¹(v))`.
    pub fn dist_point_to_preimage(&self, v: &DVector<f64>, x: &DVector<f64>) -> Result<ExtReal> {
        self.check_x(x)?;
        self.preimage_set(v)?.distance(x)
    }

    /// Vertices of `G(x)` (clipped to `{|y_i| ≤ clip}` when given) and
    /// whether the unclipped fiber is unbounded.
    pub fn fiber_vertices(&self, x: &DVector<f64>, clip: Option<f64>) -> Result<(Vec<DVector<f64>>, bool)> {
        let set = self.fiber_set(x)?;
        let unbounded = !self.bounded_fibers;
        let verts = match (unbounded, clip) {
            (true, Some(w)) => set.clipped(w).vertices(),
            _ => set.vertices(),
        };
        Ok((verts, unbounded))
    }

    /// Hausdorff excess `e(G(x), G(x0)) = sup_{y ∈ G(x)} d(y, G(x0))`,
    /// attained at a vertex of `G(x)` for bounded fibers.
    pub fn usc_excess(&self, x0: &DVector<f64>, x: &DVector<f64>) -> Result<ExtReal> {
        let base = self.fiber_set(x0)?;
        let moved = self.fiber_set(x)?;
        if moved.is_empty()? {
            return Ok(ExtReal::ZERO);
        }
        if !self.bounded_fibers {
            return Err(Error::UnboundedFiber("excess over an unbounded fiber".into()));
        }
        let mut worst = ExtReal::ZERO;
        for y in moved.vertices() {
            worst = worst.max(base.distance(&y)?);
        }
        Ok(worst)
    }
}

impl SetValuedMap for PolyhedralMultifunction {
    fn dim_x(&self) -> usize {
        self.x_coef.ncols()
    }

    fn dim_y(&self) -> usize {
        self.y_coef.ncols()
    }

    fn dist_to_value(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<ExtReal> {
        self.dist_point_to_fiber(x, v)
    }

    fn dist_to_preimage(&self, v: &DVector<f64>, x: &DVector<f64>) -> Result<ExtReal> {
        self.dist_point_to_preimage(v, x)
    }

    fn value_samples(&self, x: &DVector<f64>, n: usize, seed: u64, index: u64) -> Result<Vec<DVector<f64>>> {
        fiber_points(self, x, n, None, seed, index)
    }
}

fn fiber_points(
    g: &PolyhedralMultifunction,
    x: &DVector<f64>,
    n: usize,
    clip: Option<f64>,
    seed: u64,
    index: u64,
) -> Result<Vec<DVector<f64>>> {
    let set = g.fiber_set(x)?;
    let (mut verts, unbounded) = g.fiber_vertices(x, clip)?;
    if unbounded && n > 0 && clip.is_none() {
        return Err(Error::UnboundedFiber(
            "fiber is unbounded; configure a bounding box to sample it".into(),
        ));
    }
    let body = match (unbounded, clip) {
        (true, Some(w)) => set.clipped(w),
        _ => set,
    };
    let mut rng = index_rng(seed, stream::FIBER, index);
    let interior = body.sample_interior(&verts, n, &mut rng);
    verts.extend(interior);
    Ok(verts)
}

fn concat_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `F = f + G`.
#[derive(Debug, Clone)]
pub struct SumMap {
    pub f: SmoothMap,
    pub g: PolyhedralMultifunction,
}

const PREIMAGE_MAX_ITER: usize = 60;

impl SumMap {
    /// Checks dimensions and that sampled points of the domain ball of `f`
    /// (plus its center) lie in `dom G`.
    pub fn new(f: SmoothMap, g: PolyhedralMultifunction) -> Result<Self> {
        if f.dim_in() != g.dim_x() || f.dim_out() != g.dim_y() {
            return Err(Error::Dimension(format!(
                "f: ℝ^{} → ℝ^{} but G: ℝ^{} ⇉ ℝ^{}",
                f.dim_in(),
                f.dim_out(),
                g.dim_x(),
                g.dim_y()
            )));
        }
        let dom = f.domain().clone();
        let mut probes = vec![dom.center.clone()];
        probes.extend(ball_points(&dom.center, dom.radius, 64, 0.5, 0xd0, stream::GRID));
        for x in &probes {
            if !g.in_domain(x)? {
                return Err(Error::Domain(format!("G has an empty value at {:?} inside the domain of f", x.as_slice())));
            }
        }
        Ok(Self { f, g })
    }

    /// Points of `f(x) + G(x)`: the vertices of the fiber plus `n` samples.
    pub fn value_points(&self, x: &DVector<f64>, n: usize, clip: Option<f64>, seed: u64, index: u64) -> Result<Vec<DVector<f64>>> {
        let fx = self.f.eval(x)?;
        let mut pts = fiber_points(&self.g, x, n, clip, seed, index)?;
        if pts.is_empty() {
            return Err(Error::Domain(format!("empty value F({:?})", x.as_slice())));
        }
        for p in &mut pts {
            *p += &fx;
        }
        Ok(pts)
    }

    /// A point of `F⁻¹(v)` near `x`, found by projecting `x` onto successive
    /// linearizations of `{u : A·u + B·(v − f(u)) ≤ b}` around the current
    /// iterate. Exact projection for affine `f`; for nonlinear `f` it is the
    /// nearby preimage reached from `x`. `None` if a linearization is empty.
    pub fn nearest_preimage(&self, v: &DVector<f64>, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let a = self.g.x_coef();
        let b = self.g.y_coef();
        let rhs = self.g.rhs();
        let scale = 1f64.max(rhs.amax()).max(v.amax());
        let mut u = x.clone();
        for _ in 0..PREIMAGE_MAX_ITER {
            let fu = self.f.eval(&u)?;
            let jac = self.f.jacobian_raw(&u)?;
            let m = a - b * &jac;
            let d = rhs - b * (v - &fu + &jac * &u);
            let lin = Polyhedron::new(m, d)?;
            let next = match lin.project(x)? {
                Some(p) => p.point,
                None => return Ok(None),
            };
            let step = (&next - &u).norm();
            u = next;
            if step <= 1e-13 * (1.0 + u.norm()) {
                break;
            }
        }
        let resid = self.membership_residual(&u, v)?;
        if resid > 1e-9 * scale {
            return Err(Error::numerical("preimage iteration did not reach the graph", resid));
        }
        Ok(Some(u))
    }

    /// Largest violation of `v − f(u) ∈ G(u)`.
    pub fn membership_residual(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let s = self.g.x_coef() * u + self.g.y_coef() * (v - self.f.eval(u)?) - self.g.rhs();
        Ok(s.max().max(0.0))
    }
}

impl SetValuedMap for SumMap {
    fn dim_x(&self) -> usize {
        self.g.dim_x()
    }

    fn dim_y(&self) -> usize {
        self.g.dim_y()
    }

    fn dist_to_value(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<ExtReal> {
        let fx = self.f.eval(x)?;
        self.g.dist_point_to_fiber(x, &(v - fx))
    }

    /// `d(x, F⁻¹(v))`, see [`SumMap::nearest_preimage`].
    fn dist_to_preimage(&self, v: &DVector<f64>, x: &DVector<f64>) -> Result<ExtReal> {
        Ok(match self.nearest_preimage(v, x)? {
            Some(u) => ExtReal::Finite((&u - x).norm()),
            None => ExtReal::PosInf,
        })
    }

    fn value_samples(&self, x: &DVector<f64>, n: usize, seed: u64, index: u64) -> Result<Vec<DVector<f64>>> {
        self.value_points(x, n, None, seed, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub seed: u64,
    pub n_x: usize,
    pub n_y: usize,
    pub eps: f64,
    pub n_points: usize,
}

/// Sampled image points with the domain point each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<DVector<f64>>,
    pub origins: Vec<DVector<f64>>,
    pub meta: CloudMeta,
}

impl PointCloud {
    /// A cloud without preimage information.
    pub fn from_points(points: Vec<DVector<f64>>) -> Self {
        let meta = CloudMeta {
            seed: 0,
            n_x: points.len(),
            n_y: 0,
            eps: 0.0,
            n_points: points.len(),
        };
        Self {
            points,
            origins: Vec::new(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
}

/// Seeded sample of `F(B(x0, eps))`: for each ball point `x`, the vertices of
/// `f(x) + G(x)` plus `n_y` further fiber samples.
pub fn sum_image_of_ball(fmap: &SumMap, x0: &DVector<f64>, eps: f64, sampler: &SamplerSpec) -> Result<PointCloud> {
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("eps = {eps} must be nonnegative")));
    }
    let dom = fmap.f.domain();
    if (x0 - &dom.center).norm() + eps > dom.radius * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "B(x0, {eps}) leaves the domain ball of radius {} of f",
            dom.radius
        )));
    }
    let xs = ball_points(x0, eps, sampler.n_x.max(1), sampler.boundary_fraction, sampler.seed, stream::BALL);
    let per_x: Vec<Vec<DVector<f64>>> = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| fmap.value_points(x, sampler.n_y, sampler.bounding_box, sampler.seed, i as u64))
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut origins = Vec::new();
    for (x, pts) in xs.iter().zip(per_x) {
        for p in pts {
            points.push(p);
            origins.push(x.clone());
        }
    }
    let meta = CloudMeta {
        seed: sampler.seed,
        n_x: xs.len(),
        n_y: sampler.n_y,
        eps,
        n_points: points.len(),
    };
    Ok(PointCloud { points, origins, meta })
}

/// `G(x) = {y ∈ ℝ² : y₁·y₂ = x}`, the inverse of `g(y) = y₁y₂`. Convex
/// graph fails here, so this map is only a regularity test subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductLevelInverse {
    /// Half-width of the window used when sampling the (unbounded) values.
    pub sample_half_width: f64,
}

impl Default for ProductLevelInverse {
    fn default() -> Self {
        Self { sample_half_width: 4.0 }
    }
}

impl ProductLevelInverse {
    /// `d(v, {y : y₁y₂ = x})` from the real critical points of
    /// `t ↦ (t − v₁)² + (x/t − v₂)²`, i.e. roots of
    /// `t⁴ − v₁t³ + x·v₂·t − x² = 0`.
    pub fn dist_to_level(x: f64, v1: f64, v2: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(v1.abs().min(v2.abs()));
        }
        let coeffs = [-x * x, x * v2, 0.0, -v1]; // a0, a1, a2, a3 of the monic quartic
        let mut companion = DMatrix::<f64>::zeros(4, 4);
        for i in 1..4 {
            companion[(i, i - 1)] = 1.0;
        }
        for i in 0..4 {
            companion[(i, 3)] = -coeffs[i];
        }
        let poly = |t: f64| t.powi(4) - v1 * t.powi(3) + x * v2 * t - x * x;
        let dpoly = |t: f64| 4.0 * t.powi(3) - 3.0 * v1 * t * t + x * v2;
        let obj = |t: f64| (t - v1).powi(2) + (x / t - v2).powi(2);
        let polish = |mut t: f64| {
            for _ in 0..50 {
                let dp = dpoly(t);
                if dp == 0.0 {
                    break;
                }
                let step = poly(t) / dp;
                t -= step;
                if step.abs() <= 1e-15 * t.abs().max(1e-300) {
                    break;
                }
            }
            t
        };
        // Every nonzero t is a point of the curve, so candidates from
        // complex roots are harmless. The quartic is −x² at 0 and positive
        // beyond the Cauchy bound, which brackets one root on each side.
        let bound = 1.0 + coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let mut candidates: Vec<f64> = companion.complex_eigenvalues().iter().map(|z| polish(z.re)).collect();
        for side in [1.0, -1.0] {
            let (mut lo, mut hi) = (0.0f64, side * bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if poly(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            candidates.push(polish(hi));
        }
        let mut best = f64::INFINITY;
        for t in candidates {
            if t != 0.0 && t.is_finite() {
                best = best.min(obj(t));
            }
        }
        if !best.is_finite() {
            return Err(Error::numerical("no real critical point on the level curve", f64::NAN));
        }
        Ok(best.sqrt())
    }
}

impl SetValuedMap for ProductLevelInverse {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        2
    }

    fn dist_to_value(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<ExtReal> {
        Ok(ExtReal::Finite(Self::dist_to_level(x[0], v[0], v[1])?))
    }

    fn dist_to_preimage(&self, v: &DVector<f64>, x: &DVector<f64>) -> Result<ExtReal> {
        Ok(ExtReal::Finite((x[0] - v[0] * v[1]).abs()))
    }

    fn value_samples(&self, x: &DVector<f64>, n: usize, seed: u64, index: u64) -> Result<Vec<DVector<f64>>> {
        let w = self.sample_half_width;
        let mut rng = index_rng(seed, stream::FIBER, index);
        let level = x[0];
        let mut out = Vec::with_capacity(n.max(1));
        if level == 0.0 {
            out.push(DVector::zeros(2));
        }
        let lo = if level == 0.0 { 0.0 } else { (level.abs() / w).min(w) };
        for k in 0..n {
            let t = lo + (w - lo) * rng.gen::<f64>();
            let t = if rng.gen::<bool>() { t } else { -t };
            let y = if level == 0.0 {
                if k % 2 == 0 {
                    DVector::from_vec(vec![t, 0.0])
                } else {
                    DVector::from_vec(vec![0.0, t])
                }
            } else {
                DVector::from_vec(vec![t, level / t])
            };
            out.push(y);
        }
        Ok(out)
    }
}

/// Random point of `graph G` for tests and property checks: a domain point
/// near `center` and a fiber point.
pub fn random_graph_point<R: Rng + ?Sized>(
    g: &PolyhedralMultifunction,
    center: &DVector<f64>,
    radius: f64,
    rng: &mut R,
) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
    let x = center + random_in_unit_ball(g.dim_x(), rng) * radius;
    let set = g.fiber_set(&x)?;
    let c = DVector::from_fn(g.dim_y(), |_, _| rng.gen::<f64>() - 0.5);
    let bounds = vec![(-1e3, 1e3); g.dim_y()];
    Ok(match lp::minimize(&c, &set.m, &set.d, Some(&bounds))? {
        LpOutcome::Optimal { point, .. } => Some((x, point)),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::{Ball, MapSpec};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn diagonal() -> PolyhedralMultifunction {
        PolyhedralMultifunction::linear(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0]))
    }

    #[test]
    fn diagonal_fiber_is_singleton() {
        let g = diagonal();
        assert!(g.is_sublinear());
        let fib = g.fiber(&v(&[1.0])).unwrap();
        assert!(!fib.empty);
        let verts = fib.set.vertices();
        assert_eq!(verts.len(), 1);
        assert!((&verts[0] - v(&[1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn empty_fiber() {
        // G(x) = {y : y ≤ −1 − x, −y ≤ 0}: empty for x > −1.
        let g = PolyhedralMultifunction::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            v(&[-1.0, 0.0]),
        )
        .unwrap();
        assert!(g.fiber(&v(&[0.0])).unwrap().empty);
        assert!(!g.fiber(&v(&[-2.0])).unwrap().empty);
        assert_eq!(g.dist_point_to_fiber(&v(&[0.0]), &v(&[0.0])).unwrap(), ExtReal::PosInf);
    }

    #[test]
    fn box_fiber() {
        let g = PolyhedralMultifunction::translated_box(2, 0.0, 1.0);
        let verts = g.fiber(&v(&[0.0, 0.0])).unwrap().set.vertices();
        assert_eq!(verts.len(), 4);
        assert!((g.dist_point_to_fiber(&v(&[0.0, 0.0]), &v(&[2.0, 0.5])).unwrap().to_f64() - 1.0).abs() < 1e-12);
        assert_eq!(g.dist_point_to_fiber(&v(&[0.0, 0.0]), &v(&[0.5, 0.5])).unwrap().to_f64(), 0.0);
    }

    #[test]
    fn diagonal_distances() {
        let g = diagonal();
        assert!((g.dist_point_to_fiber(&v(&[0.0]), &v(&[1.0, 0.0])).unwrap().to_f64() - 1.0).abs() < 1e-12);
        assert!((g.dist_point_to_preimage(&v(&[1.0, 1.0]), &v(&[0.0])).unwrap().to_f64() - 1.0).abs() < 1e-12);
        assert_eq!(g.dist_point_to_preimage(&v(&[1.0, 0.0]), &v(&[0.0])).unwrap(), ExtReal::PosInf);
        assert_eq!(g.dist_point_to_preimage(&v(&[0.3, 0.3]), &v(&[0.3])).unwrap().to_f64(), 0.0);
    }

    #[test]
    fn empty_graph_rejected() {
        let r = PolyhedralMultifunction::new(
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            v(&[0.0, -1.0]),
        );
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn parabola_image_points() {
        let f = MapSpec::Parabola2d.build(Ball::new(v(&[0.0]), 1.0)).unwrap();
        let fmap = SumMap::new(f, diagonal()).unwrap();
        let sampler = SamplerSpec {
            n_x: 200,
            ..SamplerSpec::default()
        };
        let cloud = sum_image_of_ball(&fmap, &v(&[0.0]), 0.5, &sampler).unwrap();
        assert_eq!(cloud.len(), 200);
        for (p, x) in cloud.points.iter().zip(&cloud.origins) {
            let t = x[0];
            assert!(t.abs() <= 0.5 + 1e-12);
            assert!((p[0] - t).abs() < 1e-9 && (p[1] - (t * t + t)).abs() < 1e-9);
        }
        let single = sum_image_of_ball(&fmap, &v(&[0.0]), 0.0, &sampler).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single.points[0].norm() < 1e-12);
    }

    #[test]
    fn unbounded_fiber_needs_bounding_box() {
        // G(x) = {y : y ≥ x}
        let g = PolyhedralMultifunction::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0), v(&[0.0]))
            .unwrap();
        let f = SmoothMap::linear(DMatrix::zeros(1, 1), Ball::new(v(&[0.0]), 1.0));
        let fmap = SumMap::new(f, g).unwrap();
        let mut sampler = SamplerSpec {
            n_x: 10,
            ..SamplerSpec::default()
        };
        assert!(matches!(
            sum_image_of_ball(&fmap, &v(&[0.0]), 0.5, &sampler),
            Err(Error::UnboundedFiber(_))
        ));
        sampler.bounding_box = Some(3.0);
        let cloud = sum_image_of_ball(&fmap, &v(&[0.0]), 0.5, &sampler).unwrap();
        assert!(cloud.points.iter().all(|p| p[0] <= 3.0 + 1e-9 && p[0] >= -0.5 - 1e-9));
    }

    #[test]
    fn sum_map_preimage_distance_linear() {
        // F(x) = 2x + {x} = {3x}; F⁻¹(v) = v/3.
        let f = SmoothMap::linear(DMatrix::from_element(1, 1, 2.0), Ball::new(v(&[0.0]), 2.0));
        let fmap = SumMap::new(f, PolyhedralMultifunction::linear(&DMatrix::from_element(1, 1, 1.0))).unwrap();
        let d = fmap.dist_to_preimage(&v(&[1.5]), &v(&[0.0])).unwrap().to_f64();
        assert!((d - 0.5).abs() < 1e-12);
        let d = fmap.dist_to_value(&v(&[0.0]), &v(&[1.5])).unwrap().to_f64();
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sum_map_preimage_distance_nonlinear() {
        // F(x) = x + x², preimage of v near 0 is (−1 + √(1+4v))/2.
        let f = SmoothMap::new(1, 1, Ball::new(v(&[0.0]), 1.0), |x| v(&[x[0] * x[0]]));
        let fmap = SumMap::new(f, PolyhedralMultifunction::linear(&DMatrix::from_element(1, 1, 1.0))).unwrap();
        let target = 0.3;
        let root = (-1.0 + (1.0f64 + 4.0 * target).sqrt()) / 2.0;
        let d = fmap.dist_to_preimage(&v(&[target]), &v(&[0.05])).unwrap().to_f64();
        assert!((d - (root - 0.05).abs()).abs() < 1e-10, "{d}");
    }

    #[test]
    fn level_curve_distance_matches_dense_sampling() {
        for &(x, v1, v2) in &[(0.5, 1.0, 0.2), (-0.3, 0.7, 0.9), (0.01, 3.0, 0.05), (2.0, -1.0, -1.5), (0.0, 0.4, -0.2)] {
            let d = ProductLevelInverse::dist_to_level(x, v1, v2).unwrap();
            let brute = if x == 0.0 {
                v1.abs().min(v2.abs())
            } else {
                let mut best = f64::INFINITY;
                for k in 1..=400_000 {
                    let s = k as f64 / 400_000.0;
                    let t = 20.0 * s * s;
                    for t in [t, -t] {
                        best = best.min(((t - v1).powi(2) + (x / t - v2).powi(2)).sqrt());
                    }
                }
                best
            };
            assert!((d - brute).abs() < 1e-4, "x={x} v=({v1},{v2}): {d} vs {brute}");
            assert!(d <= brute + 1e-12);
        }
    }

    #[test]
    fn usc_excess_of_translated_box() {
        let g = PolyhedralMultifunction::translated_box(2, 0.0, 1.0);
        let e = g.usc_excess(&v(&[0.0, 0.0]), &v(&[0.1, 0.0])).unwrap().to_f64();
        assert!((e - 0.1).abs() < 1e-12);
        let e = g.usc_excess(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap().to_f64();
        assert!(e < 1e-12);
    }
}
