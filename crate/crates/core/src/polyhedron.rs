//! Polyhedra `{y : M·y ≤ d}` in small dimension.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::lp::{self, LpOutcome};
use crate::qp::{self, Projection};
use crate::sampling::simplex_weights;

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub m: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Polyhedron {
    pub fn new(m: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if m.nrows() != d.len() {
            return Err(Error::Dimension(format!(
                "polyhedron: {} rows but {} right-hand sides",
                m.nrows(),
                d.len()
            )));
        }
        Ok(Self { m, d })
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        let s = &self.m * y - &self.d;
        s.iter().all(|&v| v <= tol)
    }

    pub fn is_empty(&self) -> Result<bool> {
        let c = DVector::zeros(self.dim());
        Ok(matches!(lp::minimize(&c, &self.m, &self.d, None)?, LpOutcome::Infeasible))
    }

    /// Nearest point to `v`; `None` for an empty polyhedron.
    pub fn project(&self, v: &DVector<f64>) -> Result<Option<Projection>> {
        // Nearly inconsistent systems (e.g. y = a and y = a + 1e−9) sit on
        // the edge of both the LDP and the LP tolerances. When the two
        // disagree the LP decides emptiness, and a feasible answer is
        // projected onto the system relaxed by the KKT tolerance.
        match qp::project_polyhedron(&self.m, &self.d, v) {
            Ok(Some(p)) => Ok(Some(p)),
            Ok(None) | Err(Error::Numerical { .. }) if self.is_empty()? => Ok(None),
            Ok(None) | Err(Error::Numerical { .. }) => {
                let scale = 1f64.max(self.d.amax()).max(v.amax());
                let relaxed = self.d.add_scalar(qp::KKT_TOL * scale);
                match qp::project_polyhedron(&self.m, &relaxed, v)? {
                    Some(p) => Ok(Some(p)),
                    None => Err(Error::numerical("LP and projection disagree on emptiness", f64::NAN)),
                }
            }
            Err(e) => Err(e),
        }
    }

    /// `dist(v, P)`, `+∞` when `P` is empty.
    pub fn distance(&self, v: &DVector<f64>) -> Result<ExtReal> {
        Ok(match self.project(v)? {
            Some(p) => ExtReal::Finite(p.distance),
            None => ExtReal::PosInf,
        })
    }

    /// A spanning set of probe directions of the recession cone
    /// `{r : M·r ≤ 0}`; empty iff the polyhedron (if nonempty) is bounded.
    pub fn recession_directions(&self) -> Result<Vec<DVector<f64>>> {
        recession_directions(&self.m)
    }

    pub fn is_bounded(&self) -> Result<bool> {
        Ok(self.recession_directions()?.is_empty())
    }

    /// Intersection with the box `{|y_i| ≤ half_width}`.
    pub fn clipped(&self, half_width: f64) -> Polyhedron {
        let n = self.dim();
        let k = self.m.nrows();
        let mut m = DMatrix::<f64>::zeros(k + 2 * n, n);
        let mut d = DVector::<f64>::zeros(k + 2 * n);
        m.rows_mut(0, k).copy_from(&self.m);
        d.rows_mut(0, k).copy_from(&self.d);
        for i in 0..n {
            m[(k + 2 * i, i)] = 1.0;
            m[(k + 2 * i + 1, i)] = -1.0;
            d[k + 2 * i] = half_width;
            d[k + 2 * i + 1] = half_width;
        }
        Polyhedron { m, d }
    }

    /// Vertices by brute-force enumeration of `dim`-subsets of constraints,
    /// sorted lexicographically. Intended for the small fibers used here.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        let k = self.m.nrows();
        let mut out: Vec<DVector<f64>> = Vec::new();
        if n == 0 || k < n {
            return out;
        }
        let scale = 1f64.max(self.d.amax());
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let sub = self.m.select_rows(&idx);
            let rhs = DVector::from_iterator(n, idx.iter().map(|&i| self.d[i]));
            let svd = sub.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smax > 0.0 && smin > 1e-10 * smax {
                if let Some(y) = sub.lu().solve(&rhs) {
                    if self.contains(&y, FEAS_TOL * scale) && !out.iter().any(|v| (v - &y).amax() <= 1e-9 * scale) {
                        out.push(y);
                    }
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    out.sort_by(|a, b| {
                        a.iter()
                            .zip(b.iter())
                            .map(|(x, y)| x.total_cmp(y))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    });
                    return out;
                }
                i -= 1;
                if idx[i] < k - n + i {
                    idx[i] += 1;
                    for j in i + 1..n {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// `min cᵀy` over the polyhedron.
    pub fn minimize_linear(&self, c: &DVector<f64>) -> Result<LpOutcome> {
        lp::minimize(c, &self.m, &self.d, None)
    }

    /// Samples from a bounded polyhedron given its vertex list: rejection
    /// sampling in the vertex bounding box, topped up with random convex
    /// combinations of vertices when the body is thin.
    pub fn sample_interior<R: Rng + ?Sized>(&self, vertices: &[DVector<f64>], n: usize, rng: &mut R) -> Vec<DVector<f64>> {
        if vertices.len() <= 1 || n == 0 {
            return Vec::new();
        }
        let dim = self.dim();
        let mut lo = vertices[0].clone();
        let mut hi = vertices[0].clone();
        for v in vertices {
            for i in 0..dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        let scale = 1f64.max(self.d.amax());
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n && attempts < 64 * n {
            attempts += 1;
            let y = DVector::from_fn(dim, |i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>());
            if self.contains(&y, FEAS_TOL * scale) {
                out.push(y);
            }
        }
        while out.len() < n {
            let w = simplex_weights(vertices.len(), rng);
            let mut y = DVector::zeros(dim);
            for (wi, v) in w.iter().zip(vertices) {
                y += v * *wi;
            }
            out.push(y);
        }
        out
    }
}

/// Probe directions of `{r : M·r ≤ 0}` found by maximizing `±r_i` over the
/// cone intersected with the unit box.
pub fn recession_directions(m: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let n = m.ncols();
    let zero = DVector::zeros(m.nrows());
    let bounds = vec![(-1.0, 1.0); n];
    let mut out: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(n);
            c[i] = -sign;
            if let LpOutcome::Optimal { value, point } = lp::minimize(&c, m, &zero, Some(&bounds))? {
                if -value > 1e-9 {
                    let r = &point / point.norm();
                    if !out.iter().any(|o| (o - &r).amax() < 1e-9) {
                        out.push(r);
                    }
                }
            }
        }
    }
    Ok(out)
}
