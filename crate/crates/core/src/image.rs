//! Sampled convexity checks for images `F(B(x₀, ε))`.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multifunction::{sum_image_of_ball, PointCloud, SumMap};
use crate::sampling::{default_direction_count, index_rng, simplex_weights, sphere_directions, stream, SamplerSpec};

/// Static kd-tree over a point set, for nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<DVector<f64>>,
    /// Point indices in tree order; node `lo..hi` splits at `(lo+hi)/2`.
    order: Vec<usize>,
    axes: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<DVector<f64>>) -> Self {
        let n = points.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut axes = vec![0; n];
        if n > 0 {
            build(&points, &mut order, &mut axes, 0, n);
        }
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    /// Index and distance of the closest point, skipping index `skip`.
    pub fn nearest(&self, q: &DVector<f64>, skip: Option<usize>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut offsets = vec![0.0; q.len()];
        self.search(q.as_slice(), skip, 0, self.points.len(), 0.0, 0.0, &mut offsets, &mut best);
        (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt()))
    }

    /// Distance from `q` to the closest point if it is at least `floor`;
    /// `None` as soon as some point is closer than `floor`.
    pub fn nearest_at_least(&self, q: &DVector<f64>, floor: f64) -> Option<f64> {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut offsets = vec![0.0; q.len()];
        let stop = floor * floor;
        self.search(q.as_slice(), None, 0, self.points.len(), 0.0, stop, &mut offsets, &mut best);
        (best.0 != usize::MAX && best.1 >= stop).then(|| best.1.sqrt())
    }

    /// `cell_d2` is the squared distance from `q` to the cell of `lo..hi`,
    /// `offsets` its per-axis components. The search gives up once the best
    /// squared distance drops below `stop2`.
    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        q: &[f64],
        skip: Option<usize>,
        lo: usize,
        hi: usize,
        cell_d2: f64,
        stop2: f64,
        offsets: &mut [f64],
        best: &mut (usize, f64),
    ) {
        if lo >= hi || cell_d2 > best.1 || best.1 < stop2 {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx].as_slice();
        if Some(idx) != skip {
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                *best = (idx, d2);
            }
        }
        let axis = self.axes[mid];
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, skip, near.0, near.1, cell_d2, stop2, offsets, best);
        let old = offsets[axis];
        let far_d2 = cell_d2 - old * old + diff * diff;
        if far_d2 <= best.1 {
            offsets[axis] = diff;
            self.search(q, skip, far.0, far.1, far_d2, stop2, offsets, best);
            offsets[axis] = old;
        }
    }
}

fn build(points: &[DVector<f64>], order: &mut [usize], axes: &mut [usize], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        if hi > lo {
            axes[lo] = 0;
        }
        return;
    }
    let dim = points[order[lo]].len();
    // Split on the axis of widest spread.
    let mut axis = 0;
    let mut widest = -1.0;
    for a in 0..dim {
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in order[lo..hi].iter().map(|&i| &points[i]) {
            mn = mn.min(p[a]);
            mx = mx.max(p[a]);
        }
        if mx - mn > widest {
            widest = mx - mn;
            axis = a;
        }
    }
    let mid = (lo + hi) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| points[i][axis].total_cmp(&points[j][axis]).then(i.cmp(&j)));
    axes[mid] = axis;
    build(points, order, axes, lo, mid);
    build(points, order, axes, mid + 1, hi);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessPair {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub midpoint: Vec<f64>,
    pub nearest_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub eps: f64,
    pub defect: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_pair: Option<WitnessPair>,
    pub n_points: usize,
    pub seed: u64,
    pub pairs: usize,
    /// Median nearest-neighbour distance of the cloud.
    pub resolution: f64,
    pub diameter: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Largest distance from sampled hull points to the cloud (dimension ≤ 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hull_defect: Option<f64>,
}

/// `max(2·resolution, 0.02·diameter)`.
pub fn pass_threshold(resolution: f64, diameter: f64) -> f64 {
    (2.0 * resolution).max(0.02 * diameter)
}

/// Exact diameter. Points are visited by decreasing distance `r` to the
/// centroid; a pair is skipped once `r_i + r_j` cannot beat the best.
pub fn cloud_diameter(points: &[DVector<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let centroid = points.iter().fold(DVector::zeros(points[0].len()), |acc, p| acc + p) / n as f64;
    let mut by_radius: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - &centroid).norm(), i)).collect();
    by_radius.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let dist2 = |a: &DVector<f64>, b: &DVector<f64>| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut best = 0.0f64;
    for (a, &(ra, i)) in by_radius.iter().enumerate() {
        if 2.0 * ra <= best {
            break;
        }
        for &(rb, j) in &by_radius[a + 1..] {
            if ra + rb <= best {
                break;
            }
            best = best.max(dist2(&points[i], &points[j]).sqrt());
        }
    }
    best
}

/// Median distance from each point to its nearest other point.
pub fn cloud_resolution(tree: &KdTree) -> f64 {
    if tree.len() < 2 {
        return 0.0;
    }
    let mut d: Vec<f64> = (0..tree.len())
        .into_par_iter()
        .map(|i| tree.nearest(tree.point(i), Some(i)).map_or(0.0, |(_, d)| d))
        .collect();
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp);
    d[mid]
}

fn pair_at(n: usize, k: usize) -> (usize, usize) {
    // k-th pair (i < j) in row-major order.
    let mut i = 0;
    let mut k = k;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Midpoint defect of a cloud: the largest distance from the midpoint of a
/// sampled pair to the cloud. All pairs are used when they fit in the
/// budget, otherwise `pair_budget` seeded random pairs.
pub fn convexity_defect(cloud: &PointCloud, probe: &SamplerSpec) -> DefectReport {
    let tree = KdTree::new(cloud.points.clone());
    defect_with_tree(&tree, cloud.meta.eps, probe)
}

fn defect_with_tree(tree: &KdTree, eps: f64, probe: &SamplerSpec) -> DefectReport {
    let n = tree.len();
    let total_pairs = n.saturating_mul(n.saturating_sub(1)) / 2;
    let exhaustive = total_pairs <= probe.pair_budget;
    let n_pairs = if exhaustive { total_pairs } else { probe.pair_budget };
    let pair_of = |k: usize| {
        if exhaustive {
            pair_at(n, k)
        } else {
            let mut rng = index_rng(probe.seed, stream::PAIRS, k as u64);
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        }
    };
    let midpoint = |(i, j): (usize, usize)| (tree.point(i) + tree.point(j)) / 2.0;
    let distances = max_seeking(n_pairs, |k| midpoint(pair_of(k)), tree);
    let mut defect = 0.0f64;
    let mut arg = None;
    for (k, d) in distances.into_iter().enumerate() {
        if let Some(d) = d {
            if d > defect {
                defect = d;
                arg = Some(pair_of(k));
            }
        }
    }
    let witness_pair = arg.map(|(i, j)| {
        let mid = (tree.point(i) + tree.point(j)) / 2.0;
        WitnessPair {
            y1: tree.point(i).as_slice().to_vec(),
            y2: tree.point(j).as_slice().to_vec(),
            midpoint: mid.as_slice().to_vec(),
            nearest_distance: defect,
        }
    });
    let resolution = cloud_resolution(tree);
    let diameter = cloud_diameter(&tree.points);
    let threshold = pass_threshold(resolution, diameter);
    let dim = tree.points.first().map_or(0, |p| p.len());
    let hull_defect = (dim <= 3 && n > 1).then(|| hull_defect(tree, probe));
    DefectReport {
        eps,
        defect,
        witness_pair,
        n_points: n,
        seed: probe.seed,
        pairs: n_pairs,
        resolution,
        diameter,
        threshold,
        passed: defect <= threshold,
        hull_defect,
    }
}

/// Nearest distances of `count` query points, exact for every query that
/// can reach the maximum and `None` for the rest. A head of exact queries
/// sets a floor; later queries stop once a point is closer than the floor.
fn max_seeking(count: usize, query: impl Fn(usize) -> DVector<f64> + Sync, tree: &KdTree) -> Vec<Option<f64>> {
    let head = count.min(MAX_SEEK_HEAD);
    let mut out: Vec<Option<f64>> = (0..head)
        .into_par_iter()
        .map(|k| tree.nearest(&query(k), None).map(|(_, d)| d))
        .collect();
    let floor = out.iter().flatten().copied().fold(0.0, f64::max);
    out.par_extend((head..count).into_par_iter().map(|k| tree.nearest_at_least(&query(k), floor)));
    out
}

const MAX_SEEK_HEAD: usize = 1024;

/// Secondary oracle: distance to the cloud of random convex combinations of
/// `dim + 1` cloud points (points of the hull).
fn hull_defect(tree: &KdTree, probe: &SamplerSpec) -> f64 {
    let n = tree.len();
    let dim = tree.point(0).len();
    let count = probe.pair_budget.min(20_000);
    let combination = |k: usize| {
        let mut rng = index_rng(probe.seed, stream::GRID, k as u64);
        let w = simplex_weights(dim + 1, &mut rng);
        let mut p = DVector::zeros(dim);
        for wi in w {
            p += tree.point(rng.gen_range(0..n)) * wi;
        }
        p
    };
    max_seeking(count, combination, tree).into_iter().flatten().fold(0.0, f64::max)
}

pub fn defect_curve(fmap: &SumMap, x0: &DVector<f64>, eps_list: &[f64], sampler: &SamplerSpec) -> Result<Vec<DefectReport>> {
    eps_list
        .iter()
        .map(|&eps| {
            let cloud = sum_image_of_ball(fmap, x0, eps, sampler)?;
            Ok(convexity_defect(&cloud, sampler))
        })
        .collect()
}

/// Checks that a point on the boundary of the sampled image hull has all of
/// its preimages in `B(x₀, ε)` on the sphere `‖x − x₀‖ = ε` (to 1e−3
/// relative). Preimages are recovered by local solves started from the
/// origins of the nearest cloud points.
pub fn boundary_preimage_check(
    fmap: &SumMap,
    x0: &DVector<f64>,
    eps: f64,
    y_boundary: &DVector<f64>,
    sampler: &SamplerSpec,
) -> Result<bool> {
    let cloud = sum_image_of_ball(fmap, x0, eps, sampler)?;
    if cloud.is_empty() {
        return Err(Error::Invalid("empty image sample".into()));
    }
    let diameter = cloud_diameter(&cloud.points).max(1e-300);
    let tol = 1e-6 * diameter.max(1.0);
    let dirs = sphere_directions(y_boundary.len(), default_direction_count(y_boundary.len()));
    let on_boundary = dirs.par_iter().any(|u| {
        let support = cloud.points.iter().map(|p| u.dot(p)).fold(f64::NEG_INFINITY, f64::max);
        u.dot(y_boundary) >= support - tol
    });
    if !on_boundary {
        return Err(Error::Precondition("point is not on the boundary of the sampled image hull".into()));
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&i, &j| {
        (&cloud.points[i] - y_boundary)
            .norm_squared()
            .total_cmp(&(&cloud.points[j] - y_boundary).norm_squared())
            .then(i.cmp(&j))
    });
    let mut preimages: Vec<DVector<f64>> = Vec::new();
    for &i in order.iter().take(16) {
        let start = &cloud.origins[i];
        if let Some(u) = fmap.nearest_preimage(y_boundary, start)? {
            if (&u - x0).norm() <= eps * (1.0 + 1e-6) {
                preimages.push(u);
            }
        }
    }
    if preimages.is_empty() {
        return Err(Error::Inconclusive("no preimage of the boundary point was recovered".into()));
    }
    Ok(preimages.iter().all(|u| (u - x0).norm() >= eps * (1.0 - 1e-3)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multifunction::PolyhedralMultifunction;
    use crate::smooth::{Ball, MapSpec, SmoothMap};
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn kdtree_matches_brute_force() {
        let mut rng = index_rng(1, 0, 0);
        let pts: Vec<DVector<f64>> = (0..500).map(|_| v(&[rng.gen(), rng.gen(), rng.gen()])).collect();
        let tree = KdTree::new(pts.clone());
        for k in 0..200 {
            let q = v(&[rng.gen(), rng.gen(), rng.gen::<f64>() + 0.1 * k as f64 / 200.0]);
            let brute = pts.iter().map(|p| (p - &q).norm()).fold(f64::INFINITY, f64::min);
            let (_, d) = tree.nearest(&q, None).unwrap();
            assert_eq!(d, brute);
        }
        let (i, _) = tree.nearest(&pts[7], Some(7)).unwrap();
        assert_ne!(i, 7);
    }

    #[test]
    fn floored_search_is_exact_above_the_floor() {
        let mut rng = index_rng(3, 0, 0);
        let pts: Vec<DVector<f64>> = (0..400).map(|_| v(&[rng.gen(), rng.gen()])).collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..300 {
            let q = v(&[rng.gen::<f64>() * 1.4 - 0.2, rng.gen::<f64>() * 1.4 - 0.2]);
            let brute = pts.iter().map(|p| (p - &q).norm()).fold(f64::INFINITY, f64::min);
            for floor in [0.0, 0.02, 0.05, 0.1] {
                match tree.nearest_at_least(&q, floor) {
                    Some(d) => assert_eq!(d, brute),
                    None => assert!(brute < floor),
                }
            }
        }
    }

    #[test]
    fn diameter_matches_brute_force() {
        let mut rng = index_rng(2, 0, 0);
        for dim in 1..=4 {
            let pts: Vec<DVector<f64>> = (0..300).map(|_| DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.3)).collect();
            let mut brute = 0.0f64;
            for a in &pts {
                for b in &pts {
                    brute = brute.max((a - b).norm());
                }
            }
            assert!((cloud_diameter(&pts) - brute).abs() <= 1e-14 * brute);
        }
        assert_eq!(cloud_diameter(&[v(&[1.0, 2.0])]), 0.0);
    }

    #[test]
    fn pair_enumeration() {
        let n = 5;
        let pairs: Vec<_> = (0..10).map(|k| pair_at(n, k)).collect();
        assert_eq!(pairs[0], (0, 1));
        assert_eq!(pairs[3], (0, 4));
        assert_eq!(pairs[4], (1, 2));
        assert_eq!(pairs[9], (3, 4));
    }

    #[test]
    fn singleton_has_zero_defect() {
        let r = convexity_defect(&PointCloud::from_points(vec![v(&[1.0, 2.0])]), &SamplerSpec::default());
        assert_eq!(r.defect, 0.0);
        assert!(r.witness_pair.is_none());
        assert!(r.passed);
    }

    #[test]
    fn disk_passes() {
        let mut rng = index_rng(2, 0, 0);
        let pts: Vec<DVector<f64>> = (0..10_000)
            .map(|_| crate::sampling::random_in_unit_ball(2, &mut rng))
            .collect();
        let r = convexity_defect(&PointCloud::from_points(pts), &SamplerSpec::default());
        assert!(r.passed, "defect {} threshold {}", r.defect, r.threshold);
        assert!(r.defect <= 0.02 * r.diameter);
    }

    #[test]
    fn witness_distance_reproduces() {
        let pts: Vec<DVector<f64>> = (0..=200).map(|k| {
            let x = -0.5 + k as f64 / 200.0;
            v(&[x, x * x + x])
        }).collect();
        let cloud = PointCloud::from_points(pts.clone());
        let r = convexity_defect(&cloud, &SamplerSpec::default());
        let w = r.witness_pair.clone().unwrap();
        let mid = DVector::from_vec(w.midpoint.clone());
        let recomputed = pts.iter().map(|p| (p - &mid).norm()).fold(f64::INFINITY, f64::min);
        assert!((recomputed - r.defect).abs() <= 1e-12);
        assert!(!r.passed);
        let again = convexity_defect(&cloud, &SamplerSpec::default());
        assert_eq!(again.defect.to_bits(), r.defect.to_bits());
    }

    #[test]
    fn scale_equivariance() {
        let pts: Vec<DVector<f64>> = (0..=100).map(|k| {
            let x = -1.0 + k as f64 / 50.0;
            v(&[x, x * x])
        }).collect();
        let base = convexity_defect(&PointCloud::from_points(pts.clone()), &SamplerSpec::default()).defect;
        for lambda in [0.5, 2.0] {
            let scaled: Vec<_> = pts.iter().map(|p| p * lambda).collect();
            let d = convexity_defect(&PointCloud::from_points(scaled), &SamplerSpec::default()).defect;
            assert!((d - lambda * base).abs() <= 1e-12 * d.max(1.0));
        }
    }

    #[test]
    fn linear_boundary_preimage() {
        let f = SmoothMap::linear(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]), Ball::new(v(&[0.0, 0.0]), 1.0));
        let fmap = SumMap::new(f, PolyhedralMultifunction::zero_process(2, 2)).unwrap();
        let sampler = SamplerSpec {
            n_x: 2000,
            ..SamplerSpec::default()
        };
        assert!(boundary_preimage_check(&fmap, &v(&[0.0, 0.0]), 0.5, &v(&[1.0, 0.0]), &sampler).unwrap());
        assert!(matches!(
            boundary_preimage_check(&fmap, &v(&[0.0, 0.0]), 0.5, &v(&[0.1, 0.0]), &sampler),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn parabola_curve_fails() {
        let f = MapSpec::Parabola2d.build(Ball::new(v(&[0.0]), 1.0)).unwrap();
        let g = PolyhedralMultifunction::linear(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
        let fmap = SumMap::new(f, g).unwrap();
        let sampler = SamplerSpec {
            n_x: 2000,
            ..SamplerSpec::default()
        };
        for r in defect_curve(&fmap, &v(&[0.0]), &[0.1, 0.5, 1.0], &sampler).unwrap() {
            assert!(!r.passed, "eps {} defect {} threshold {}", r.eps, r.defect, r.threshold);
        }
        let zero = defect_curve(&fmap, &v(&[0.0]), &[0.0], &sampler).unwrap();
        assert_eq!(zero[0].defect, 0.0);
    }
}
