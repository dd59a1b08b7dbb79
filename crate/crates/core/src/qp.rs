//! Active-set quadratic subproblems.
//!
//! Projection onto a polyhedron `{y : M·y ≤ d}` is solved as a least
//! distance program (LDP), which in turn reduces to nonnegative least
//! squares (Lawson–Hanson). Both are finite active-set methods; the result
//! is polished on its active set and accepted only if the KKT residual is
//! at most [`KKT_TOL`] (relative to the problem scale).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const KKT_TOL: f64 = 1e-8;
const ACTIVE_TOL: f64 = 1e-9;
const INFEASIBLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Nnls {
    pub x: DVector<f64>,
    /// `f − E·x`
    pub residual: DVector<f64>,
    pub iterations: usize,
}

fn lstsq_columns(e: &DMatrix<f64>, cols: &[usize], f: &DVector<f64>) -> DVector<f64> {
    let sub = e.select_columns(cols);
    let svd = sub.svd(true, true);
    let tol = 1e-13 * svd.singular_values.max().max(1.0);
    svd.solve(f, tol)
        .unwrap_or_else(|_| DVector::zeros(cols.len()))
}

/// `min ‖E·x − f‖` subject to `x ≥ 0` (Lawson–Hanson).
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> Result<Nnls> {
    let n = e.ncols();
    let max_iter = 3 * n + 50;
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut excluded = vec![false; n];
    let scale = e.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0) * f.amax().max(1.0);
    let tol = 1e-12 * scale * (e.nrows().max(n) as f64);
    let mut iterations = 0;

    loop {
        let r = f - e * &x;
        let w = e.tr_mul(&r);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && !excluded[j] && w[j] > tol && best.is_none_or(|(_, b)| w[j] > b) {
                best = Some((j, w[j]));
            }
        }
        let Some((t, _)) = best else { break };
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::numerical("nnls: iteration limit", r.norm()));
        }
        passive[t] = true;
        let mut first = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let zp = lstsq_columns(e, &cols, f);
            let mut z = DVector::<f64>::zeros(n);
            for (k, &j) in cols.iter().enumerate() {
                z[j] = zp[k];
            }
            if first && z[t] <= 0.0 {
                // The entering column cannot improve the fit; drop it.
                passive[t] = false;
                excluded[t] = true;
                break;
            }
            first = false;
            if cols.iter().all(|&j| z[j] > 0.0) {
                x = z;
                excluded.iter_mut().for_each(|e| *e = false);
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &cols {
                if z[j] <= 0.0 {
                    let a = x[j] / (x[j] - z[j]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            x += (&z - &x) * alpha;
            for &j in &cols {
                if x[j] <= 1e-15 * scale {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let residual = f - e * &x;
    Ok(Nnls {
        x,
        residual,
        iterations,
    })
}

/// Outcome of a least distance program.
#[derive(Debug, Clone, PartialEq)]
pub enum Ldp {
    Infeasible,
    Solution(DVector<f64>),
}

/// `min ‖u‖` subject to `G·u ≥ h`.
pub fn ldp(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<Ldp> {
    let n = g.ncols();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..g.nrows() {
        let row = g.row(i);
        let norm = row.norm();
        if norm <= 1e-14 {
            if h[i] > 1e-12 {
                return Ok(Ldp::Infeasible);
            }
            continue;
        }
        rows.push(row / norm);
        rhs.push(h[i] / norm);
    }
    if rows.is_empty() {
        return Ok(Ldp::Solution(DVector::zeros(n)));
    }
    let k = rows.len();
    let h_scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if h_scale == 0.0 {
        return Ok(Ldp::Solution(DVector::zeros(n)));
    }
    let mut e = DMatrix::<f64>::zeros(n + 1, k);
    for (j, row) in rows.iter().enumerate() {
        for c in 0..n {
            e[(c, j)] = row[c];
        }
        e[(n, j)] = rhs[j] / h_scale;
    }
    let mut f = DVector::<f64>::zeros(n + 1);
    f[n] = 1.0;
    let sol = nnls(&e, &f)?;
    // sol.residual = f − E·w; Lawson–Hanson use r = E·w − f.
    let r = -sol.residual;
    if r.norm() <= INFEASIBLE_TOL {
        return Ok(Ldp::Infeasible);
    }
    let denom = r[n];
    if denom.abs() <= INFEASIBLE_TOL {
        return Ok(Ldp::Infeasible);
    }
    let u = DVector::from_fn(n, |c, _| -r[c] / denom) * h_scale;
    Ok(Ldp::Solution(u))
}

/// A projection together with its certificate quality.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: DVector<f64>,
    pub distance: f64,
    pub kkt_residual: f64,
}

/// Euclidean projection of `v` onto `{y : M·y ≤ d}`; `Ok(None)` when the
/// polyhedron is empty.
pub fn project_polyhedron(m: &DMatrix<f64>, d: &DVector<f64>, v: &DVector<f64>) -> Result<Option<Projection>> {
    let dim = m.ncols();
    if v.len() != dim || d.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "projection: M is {}x{}, d has {}, v has {}",
            m.nrows(),
            dim,
            d.len(),
            v.len()
        )));
    }
    // Shift so that u = y − v:  (−M)·u ≥ M·v − d.
    let slack = m * v - d;
    let g = -m;
    let u = match ldp(&g, &slack)? {
        Ldp::Infeasible => return Ok(None),
        Ldp::Solution(u) => u,
    };
    let y = v + &u;
    let scale = 1f64.max(v.amax()).max(y.amax()).max(d.amax());
    let polished = polish(m, d, v, y, scale)?;
    if polished.kkt_residual > KKT_TOL * scale {
        return Err(Error::numerical("projection onto polyhedron did not meet KKT tolerance", polished.kkt_residual));
    }
    Ok(Some(polished))
}

fn row_normalized(m: &DMatrix<f64>, d: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut mn = m.clone();
    let mut dn = d.clone();
    for i in 0..m.nrows() {
        let norm = m.row(i).norm();
        if norm > 1e-14 {
            mn.row_mut(i).scale_mut(1.0 / norm);
            dn[i] /= norm;
        }
    }
    (mn, dn)
}

fn kkt_residual(mn: &DMatrix<f64>, dn: &DVector<f64>, v: &DVector<f64>, y: &DVector<f64>, scale: f64) -> Result<f64> {
    let viol = mn * y - dn;
    let primal = viol.iter().fold(0.0f64, |a, &s| a.max(s));
    let active: Vec<usize> = (0..mn.nrows())
        .filter(|&i| mn.row(i).norm() > 1e-14 && viol[i] >= -ACTIVE_TOL * scale)
        .collect();
    let grad = v - y;
    let stationarity = if active.is_empty() {
        grad.norm()
    } else {
        let ma_t = mn.select_rows(&active).transpose();
        nnls(&ma_t, &grad)?.residual.norm()
    };
    Ok(primal.max(stationarity))
}

fn polish(m: &DMatrix<f64>, d: &DVector<f64>, v: &DVector<f64>, y: DVector<f64>, scale: f64) -> Result<Projection> {
    let (mn, dn) = row_normalized(m, d);
    let base_res = kkt_residual(&mn, &dn, v, &y, scale)?;
    let viol = &mn * &y - &dn;
    let active: Vec<usize> = (0..mn.nrows())
        .filter(|&i| mn.row(i).norm() > 1e-14 && viol[i] >= -1e3 * ACTIVE_TOL * scale)
        .collect();
    let mut best = Projection {
        distance: (&y - v).norm(),
        point: y,
        kkt_residual: base_res,
    };
    if !active.is_empty() {
        let ma = mn.select_rows(&active);
        let da = DVector::from_iterator(active.len(), active.iter().map(|&i| dn[i]));
        let gram = &ma * ma.transpose();
        let rhs = &ma * v - da;
        let svd = gram.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(1.0);
        if let Ok(lambda) = svd.solve(&rhs, tol) {
            let y1 = v - ma.transpose() * lambda;
            let res1 = kkt_residual(&mn, &dn, v, &y1, scale)?;
            if res1 <= best.kkt_residual {
                best = Projection {
                    distance: (&y1 - v).norm(),
                    point: y1,
                    kkt_residual: res1,
                };
            }
        }
    }
    Ok(best)
}
