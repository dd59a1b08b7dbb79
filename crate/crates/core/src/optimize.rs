//! Efficient pairs of localized vector problems `min_C Φ(x)` over
//! `B(x₀, ε)` with `Φ = q + Q`, and their Lagrangian scalarization.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::image::KdTree;
use crate::lp::{self, LpOutcome};
use crate::multifunction::{sum_image_of_ball, PointCloud, PolyhedralMultifunction, SumMap};
use crate::polyhedron::Polyhedron;
use crate::sampling::{ball_points, stream, SamplerSpec};
use crate::smooth::SmoothMap;

/// Tolerance of the LP membership test used by the dominance audit.
pub const AUDIT_TOL: f64 = 1e-6;
/// Relative slack of the boundary property `‖x_ε − x₀‖ ≈ ε`.
pub const BOUNDARY_RTOL: f64 = 1e-3;
const DUAL_TOL: f64 = 1e-12;
const PREIMAGE_STARTS: usize = 8;

/// Finitely generated, pointed, full-dimensional ordering cone.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCone {
    generators: Vec<DVector<f64>>,
    dual_generators: Vec<DVector<f64>>,
}

impl OrderingCone {
    /// Builds the cone and its dual from generators. The dual generators are
    /// the facet normals, found from `(m−1)`-subsets of generators.
    pub fn new(generators: Vec<Vec<f64>>) -> Result<Self> {
        let gens = Self::check_generators(generators)?;
        let m = gens[0].len();
        let mut duals: Vec<DVector<f64>> = Vec::new();
        for subset in combinations(gens.len(), m - 1) {
            let mut a = DMatrix::zeros(m, m);
            for (row, &j) in subset.iter().enumerate() {
                a.set_row(row, &gens[j].transpose());
            }
            let Some(normal) = null_vector(&a) else { continue };
            let dots: Vec<f64> = gens.iter().map(|g| normal.dot(g)).collect();
            let scale = gens.iter().map(|g| g.norm()).fold(0.0, f64::max);
            let tol = 1e-10 * scale;
            let oriented = if dots.iter().all(|&d| d >= -tol) {
                normal
            } else if dots.iter().all(|&d| d <= tol) {
                -normal
            } else {
                continue;
            };
            if !duals.iter().any(|d| (d - &oriented).norm() < 1e-9) {
                duals.push(oriented);
            }
        }
        duals.sort_by(lex_cmp);
        Self::with_dual(gens, duals)
    }

    /// The nonnegative orthant of `ℝ^m`.
    pub fn orthant(m: usize) -> Self {
        let gens: Vec<DVector<f64>> = (0..m).map(|i| DVector::from_fn(m, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
        Self {
            dual_generators: gens.clone(),
            generators: gens,
        }
    }

    /// Cone with user-supplied dual generators, verified against the
    /// generators.
    pub fn with_dual_generators(generators: Vec<Vec<f64>>, dual: Vec<Vec<f64>>) -> Result<Self> {
        let gens = Self::check_generators(generators)?;
        let duals = dual.into_iter().map(DVector::from_vec).collect();
        Self::with_dual(gens, duals)
    }

    fn check_generators(generators: Vec<Vec<f64>>) -> Result<Vec<DVector<f64>>> {
        let m = generators.first().map_or(0, |g| g.len());
        if m == 0 {
            return Err(Error::Invalid("cone needs at least one nonempty generator".into()));
        }
        let gens: Vec<DVector<f64>> = generators.into_iter().map(DVector::from_vec).collect();
        for g in &gens {
            if g.len() != m {
                return Err(Error::Dimension(format!("cone generator of length {} in ℝ^{m}", g.len())));
            }
            if !g.iter().all(|v| v.is_finite()) || g.norm() == 0.0 {
                return Err(Error::Invalid("cone generators must be finite and nonzero".into()));
            }
        }
        let mat = DMatrix::from_columns(&gens);
        if mat.rank(1e-10 * mat.amax()) < m {
            return Err(Error::Invalid("ordering cone is not full-dimensional".into()));
        }
        for g in &gens {
            if cone_contains(&mat, &(-g), 0.0)? {
                return Err(Error::Invalid("ordering cone is not pointed".into()));
            }
        }
        Ok(gens)
    }

    fn with_dual(generators: Vec<DVector<f64>>, dual_generators: Vec<DVector<f64>>) -> Result<Self> {
        let m = generators[0].len();
        if dual_generators.is_empty() {
            return Err(Error::Invalid("empty dual cone".into()));
        }
        for d in &dual_generators {
            if d.len() != m {
                return Err(Error::Dimension(format!("dual generator of length {} in ℝ^{m}", d.len())));
            }
            for g in &generators {
                if d.dot(g) < -DUAL_TOL * d.norm() * g.norm() {
                    return Err(Error::Invalid(format!(
                        "dual generator {:?} is negative on generator {:?}",
                        d.as_slice(),
                        g.as_slice()
                    )));
                }
            }
        }
        Ok(Self {
            generators,
            dual_generators,
        })
    }

    pub fn dim(&self) -> usize {
        self.generators[0].len()
    }

    pub fn generators(&self) -> &[DVector<f64>] {
        &self.generators
    }

    pub fn dual_generators(&self) -> &[DVector<f64>] {
        &self.dual_generators
    }

    /// LP membership: `y` is within `tol` (sup-norm) of a conic combination
    /// of the generators.
    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> Result<bool> {
        cone_contains(&DMatrix::from_columns(&self.generators), y, tol)
    }

    /// Unit vector along the sum of the dual generators; an interior point of
    /// the dual cone.
    pub fn dual_center(&self) -> DVector<f64> {
        let s: DVector<f64> = self.dual_generators.iter().map(|d| d.normalize()).sum();
        s.normalize()
    }

    /// Unit vector along the sum of the normalized generators.
    pub fn center(&self) -> DVector<f64> {
        let s: DVector<f64> = self.generators.iter().map(|g| g.normalize()).sum();
        s.normalize()
    }

    /// Coordinates `z = D·y` in which `y − y' ∈ C` reads `z ≥ z'`.
    fn coordinates(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dual_generators.len(), self.dual_generators.iter().map(|d| d.dot(y)))
    }
}

fn cone_contains(gens: &DMatrix<f64>, y: &DVector<f64>, tol: f64) -> Result<bool> {
    let k = gens.ncols();
    let m = gens.nrows();
    let mut a = DMatrix::zeros(2 * m, k);
    a.rows_mut(0, m).copy_from(gens);
    a.rows_mut(m, m).copy_from(&(-gens));
    let mut d = DVector::zeros(2 * m);
    for i in 0..m {
        d[i] = y[i] + tol;
        d[m + i] = -y[i] + tol;
    }
    let bounds = vec![(0.0, f64::INFINITY); k];
    Ok(matches!(lp::minimize(&DVector::zeros(k), &a, &d, Some(&bounds))?, LpOutcome::Optimal { .. }))
}

fn null_vector(a: &DMatrix<f64>) -> Option<DVector<f64>> {
    let m = a.ncols();
    if m == 1 {
        return Some(DVector::from_element(1, 1.0));
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let tol = 1e-10 * sv.max().max(1e-300);
    let (imin, _) = sv.argmin();
    let rank = sv.iter().filter(|&&s| s > tol).count();
    (rank == m - 1).then(|| v_t.row(imin).transpose().normalize())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Indices of the `C`-minimal points of `points` (exact duplicates keep
/// their first occurrence), sorted increasingly.
pub fn pareto_front(points: &[DVector<f64>], cone: &OrderingCone) -> Vec<usize> {
    let z: Vec<DVector<f64>> = points.par_iter().map(|y| cone.coordinates(y)).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    // A dominator has a smaller coordinate sum, or the same sum and a
    // lexicographically smaller z.
    order.sort_by(|&i, &j| z[i].sum().total_cmp(&z[j].sum()).then_with(|| lex_cmp(&z[i], &z[j])).then(i.cmp(&j)));
    let mut front: Vec<usize> = Vec::new();
    for &i in &order {
        let dominated = front.iter().any(|&f| z[f].iter().zip(z[i].iter()).all(|(a, b)| a <= b));
        if !dominated {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

/// Sampled bound on `Φ = q + Q` near `x₀`:
/// `W = q(x₀) + Q(x₀) + B(0, 2η)`, that is `B(q(x₀), η) + B(Q(x₀), η)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBound {
    pub center: Vec<f64>,
    pub fiber_vertices: Vec<Vec<f64>>,
    pub eta: f64,
    pub radius: f64,
    /// Largest sampled distance from `Φ(x)` to `q(x₀) + Q(x₀)`.
    pub max_distance: f64,
    /// All points of an independent validation sample lie in `W`.
    pub validated: bool,
    pub samples: usize,
}

/// Bounds `Φ` on `B(x₀, radius)` by sampling, then checks the bound on a
/// second sample.
pub fn local_boundedness_check(
    q: &SmoothMap,
    big_q: &PolyhedralMultifunction,
    x0: &DVector<f64>,
    radius: f64,
    sampler: &SamplerSpec,
) -> Result<LocalBound> {
    if !big_q.has_bounded_fibers() {
        return Err(Error::Precondition("Q has unbounded values (recession directions)".into()));
    }
    let (verts, _) = big_q.fiber_vertices(x0, None)?;
    if verts.is_empty() {
        return Err(Error::Precondition("Q(x0) is empty".into()));
    }
    let q0 = q.eval(x0)?;
    let spread = |seed: u64| -> Result<f64> {
        let xs = ball_points(x0, radius, sampler.n_x.max(1), sampler.boundary_fraction, seed, stream::GRID);
        let worst: Vec<f64> = xs
            .par_iter()
            .map(|x| -> Result<f64> {
                let shift = q.eval(x)? - &q0;
                let (vx, _) = big_q.fiber_vertices(x, None)?;
                let mut w = 0.0f64;
                for v in vx {
                    let d = big_q.dist_point_to_fiber(x0, &(v + &shift))?;
                    w = w.max(d.to_f64());
                }
                Ok(w)
            })
            .collect::<Result<_>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    };
    let max_distance = spread(sampler.seed)?;
    let eta = (0.5 * 1.25 * max_distance).max(1e-9);
    let check = spread(sampler.seed ^ 0xb0_0bed)?;
    Ok(LocalBound {
        center: q0.as_slice().to_vec(),
        fiber_vertices: verts.iter().map(|v| v.as_slice().to_vec()).collect(),
        eta,
        radius,
        max_distance: max_distance.max(check),
        validated: check <= 2.0 * eta,
        samples: 2 * sampler.n_x.max(1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficientPair {
    pub x_eps: Vec<f64>,
    pub y_eps: Vec<f64>,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalarizer: Option<Vec<f64>>,
    /// `‖x_ε − x₀‖ / ε`.
    pub boundary_ratio: f64,
    pub membership_residual: f64,
}

/// An efficient pair together with the cloud it was extracted from.
#[derive(Debug, Clone)]
pub struct EfficientSearch {
    pub pair: EfficientPair,
    pub cloud: PointCloud,
    /// Indices of the undominated cloud points.
    pub front: Vec<usize>,
    /// Radius actually used; smaller than requested when `Φ` is only
    /// bounded on a smaller ball.
    pub effective_eps: f64,
    pub bound: LocalBound,
}

/// Samples `Φ(B(x₀, ε))`, filters its `C`-minimal points and returns the
/// minimal point with the smallest value of the dual-center functional
/// (ties broken lexicographically), with a preimage on the sphere.
pub fn find_efficient_pair(
    phi: &SumMap,
    x0: &DVector<f64>,
    eps: f64,
    cone: &OrderingCone,
    sampler: &SamplerSpec,
) -> Result<EfficientSearch> {
    if cone.dim() != phi.f.dim_out() {
        return Err(Error::Dimension(format!("cone in ℝ^{} for Φ into ℝ^{}", cone.dim(), phi.f.dim_out())));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps = {eps} must be positive")));
    }
    let dom = phi.f.domain();
    let room = dom.radius - (x0 - &dom.center).norm();
    let effective_eps = eps.min(room);
    if !(effective_eps > 0.0) {
        return Err(Error::Domain("x0 is not interior to the domain of f".into()));
    }
    let bound = local_boundedness_check(&phi.f, &phi.g, x0, effective_eps, sampler)?;
    let cloud = sum_image_of_ball(phi, x0, effective_eps, sampler)?;
    if cloud.is_empty() {
        return Err(Error::Invalid("empty image sample".into()));
    }
    let front = pareto_front(&cloud.points, cone);
    let w = cone.dual_center();
    let best = *front
        .iter()
        .min_by(|&&i, &&j| {
            w.dot(&cloud.points[i])
                .total_cmp(&w.dot(&cloud.points[j]))
                .then_with(|| lex_cmp(&cloud.points[i], &cloud.points[j]))
        })
        .expect("front of a nonempty cloud is nonempty");
    let y = cloud.points[best].clone();

    let tree = KdTree::new(cloud.points.clone());
    let mut starts = vec![cloud.origins[best].clone()];
    let mut seen = vec![best];
    for _ in 0..PREIMAGE_STARTS {
        // Walk outwards through distinct neighbours of `y`.
        let Some((i, _)) = nearest_excluding(&tree, &y, &seen) else { break };
        seen.push(i);
        starts.push(cloud.origins[i].clone());
    }
    starts.push(x0.clone());

    let mut best_x: Option<(DVector<f64>, f64)> = None;
    for s in &starts {
        let Ok(Some(u)) = phi.nearest_preimage(&y, s) else { continue };
        let r = (&u - x0).norm();
        if r > effective_eps * (1.0 + 1e-9) {
            continue;
        }
        if best_x.as_ref().is_none_or(|(_, rb)| r > *rb) {
            best_x = Some((u, r));
        }
    }
    let Some((x_eps, r)) = best_x else {
        return Err(Error::Inconclusive("no preimage of the efficient point was recovered".into()));
    };
    let boundary_ratio = r / effective_eps;
    if boundary_ratio < 1.0 - BOUNDARY_RTOL {
        return Err(Error::Inconclusive(format!(
            "recovered preimage is interior: ‖x_eps − x0‖/eps = {boundary_ratio:.6}"
        )));
    }
    let membership_residual = phi.membership_residual(&x_eps, &y)?;
    Ok(EfficientSearch {
        pair: EfficientPair {
            x_eps: x_eps.as_slice().to_vec(),
            y_eps: y.as_slice().to_vec(),
            eps: effective_eps,
            scalarizer: None,
            boundary_ratio,
            membership_residual,
        },
        cloud,
        front,
        effective_eps,
        bound,
    })
}

fn nearest_excluding(tree: &KdTree, q: &DVector<f64>, seen: &[usize]) -> Option<(usize, f64)> {
    // The tree skips one index; fall back to a scan on collisions.
    match tree.nearest(q, seen.last().copied()) {
        Some((i, d)) if !seen.contains(&i) => Some((i, d)),
        _ => (0..tree.len())
            .filter(|i| !seen.contains(i))
            .map(|i| (i, (tree.point(i) - q).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
    }
}

/// Cloud points `y ≠ y_ε` (sup-norm gap above [`AUDIT_TOL`]) with
/// `y_ε − y ∈ C` to [`AUDIT_TOL`], by LP membership.
pub fn dominance_audit(y_eps: &DVector<f64>, points: &[DVector<f64>], cone: &OrderingCone) -> Result<Vec<usize>> {
    let gens = DMatrix::from_columns(cone.generators());
    let hits: Vec<Option<usize>> = points
        .par_iter()
        .enumerate()
        .map(|(i, y)| -> Result<Option<usize>> {
            let diff = y_eps - y;
            if diff.amax() <= AUDIT_TOL {
                return Ok(None);
            }
            // Cheap rejection: a dual generator strictly negative on `diff`.
            if cone.dual_generators().iter().any(|d| d.dot(&diff) < -AUDIT_TOL * d.lp_norm(1).max(1.0) * 2.0) {
                return Ok(None);
            }
            Ok(cone_contains(&gens, &diff, AUDIT_TOL)?.then_some(i))
        })
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().flatten().collect())
}

/// `L(x, y*) = ⟨y*, q(x)⟩ + min_{y ∈ Q(x)} ⟨y*, y⟩`, `−∞` when the inner LP
/// is unbounded.
pub fn lagrangian(q: &SmoothMap, big_q: &PolyhedralMultifunction, x: &DVector<f64>, ystar: &DVector<f64>) -> Result<ExtReal> {
    let inner = inner_value(big_q, x, ystar)?;
    Ok(match inner {
        ExtReal::Finite(v) => ExtReal::Finite(ystar.dot(&q.eval(x)?) + v),
        other => other,
    })
}

/// `min_{y ∈ Q(x)} ⟨y*, y⟩`.
pub fn inner_value(big_q: &PolyhedralMultifunction, x: &DVector<f64>, ystar: &DVector<f64>) -> Result<ExtReal> {
    let fiber = big_q.fiber(x)?;
    if fiber.empty {
        return Err(Error::Domain(format!("Q({:?}) is empty", x.as_slice())));
    }
    match fiber.set.minimize_linear(ystar)? {
        LpOutcome::Optimal { value, .. } => Ok(ExtReal::Finite(value)),
        LpOutcome::Unbounded => Ok(ExtReal::NegInf),
        LpOutcome::Infeasible => Err(Error::Domain(format!("Q({:?}) is empty", x.as_slice()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAudit {
    pub points: usize,
    /// `L(x_ε, y*)`.
    pub value_at_pair: f64,
    pub min_value: f64,
    pub range: f64,
    pub tolerance: f64,
    /// Grid points with `L = −∞`, left out of the audit.
    pub neg_inf_points: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalarization {
    pub ystar: Vec<f64>,
    /// `min_i ⟨y*, y_i − y_ε⟩` over the cloud.
    pub separation_gap: f64,
    pub grid: GridAudit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Relative grid tolerance of the minimality audit.
pub const GRID_RTOL: f64 = 1e-4;

/// Separates the cloud from `y_ε − C` by the minimum-norm `w` with
/// `⟨w, ḡ⟩ ≥ 1` (`ḡ` the generator center), `⟨w, g⟩ ≥ 0` on generators and
/// `⟨w, y_i − y_ε⟩ ≥ 0` on the cloud, normalizes it, and audits
/// `L(·, y*) ≥ L(x_ε, y*) − tol` on `grid_points` ball points.
pub fn scalarize(
    pair: &EfficientPair,
    phi: &SumMap,
    x0: &DVector<f64>,
    cone: &OrderingCone,
    cloud: &PointCloud,
    grid_points: usize,
    sampler: &SamplerSpec,
) -> Result<Scalarization> {
    let m = cone.dim();
    let y_eps = DVector::from_vec(pair.y_eps.clone());
    let x_eps = DVector::from_vec(pair.x_eps.clone());
    let rows = 1 + cone.generators().len() + cloud.len();
    let mut a = DMatrix::zeros(rows, m);
    let mut d = DVector::zeros(rows);
    a.set_row(0, &(-cone.center()).transpose());
    d[0] = -1.0;
    for (k, g) in cone.generators().iter().enumerate() {
        a.set_row(1 + k, &(-g.normalize()).transpose());
    }
    let base = 1 + cone.generators().len();
    for (i, y) in cloud.points.iter().enumerate() {
        a.set_row(base + i, &(&y_eps - y).transpose());
    }
    let failure = |reason: String| Error::ScalarizationFailure {
        x: pair.x_eps.clone(),
        reason,
    };
    let w = match Polyhedron::new(a, d)?.project(&DVector::zeros(m)) {
        Ok(Some(p)) => p.point,
        Ok(None) => return Err(failure("separation problem is infeasible".into())),
        Err(e) => return Err(failure(format!("separation problem failed: {e}"))),
    };
    if !(w.norm() > 0.0) {
        return Err(failure("zero separator".into()));
    }
    let ystar = w.normalize();
    for g in cone.generators() {
        if ystar.dot(g) < -1e-8 * g.norm() {
            return Err(failure("separator left the dual cone".into()));
        }
    }
    let separation_gap = cloud
        .points
        .iter()
        .map(|y| ystar.dot(&(y - &y_eps)))
        .fold(f64::INFINITY, f64::min);

    let xs = ball_points(x0, pair.eps, grid_points.max(1), sampler.boundary_fraction, sampler.seed, stream::GRID);
    let values: Vec<ExtReal> = xs
        .par_iter()
        .map(|x| lagrangian(&phi.f, &phi.g, x, &ystar))
        .collect::<Result<_>>()?;
    let at_pair = lagrangian(&phi.f, &phi.g, &x_eps, &ystar)?;
    let ExtReal::Finite(at_pair) = at_pair else {
        return Err(failure("L(x_eps, y*) is not finite".into()));
    };
    let finite: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.finite().map(|f| (i, f)))
        .collect();
    let neg_inf_points = values.len() - finite.len();
    let (mut lo, mut hi) = (at_pair, at_pair);
    let mut worst = None;
    for &(i, v) in &finite {
        hi = hi.max(v);
        if v < lo {
            lo = v;
            worst = Some(i);
        }
    }
    let range = hi - lo;
    let tolerance = GRID_RTOL * range;
    let passed = lo >= at_pair - tolerance;
    let mut warnings = Vec::new();
    if neg_inf_points > 0 {
        warnings.push(format!("{neg_inf_points} grid points with L = -inf were skipped"));
    }
    if !passed {
        let x = worst.map(|i| xs[i].as_slice().to_vec()).unwrap_or_default();
        return Err(Error::ScalarizationFailure {
            x,
            reason: format!("L(x, y*) = {lo} below L(x_eps, y*) = {at_pair} by more than {tolerance}"),
        });
    }
    Ok(Scalarization {
        ystar: ystar.as_slice().to_vec(),
        separation_gap,
        grid: GridAudit {
            points: xs.len(),
            value_at_pair: at_pair,
            min_value: lo,
            range,
            tolerance,
            neg_inf_points,
            passed,
        },
        warnings,
    })
}
