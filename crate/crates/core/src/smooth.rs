//! C¹,¹ single-valued maps on a ball.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{index_rng, random_in_unit_ball, stream};
use crate::Provenance;

pub type EvalFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Safety factor applied to sampled (hence lower-bound) Lipschitz estimates.
pub const LIP_INFLATION: f64 = 1.25;
pub const LIP_SAMPLE_PAIRS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: DVector<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (x - &self.center).norm() <= self.radius * (1.0 + 1e-12) + 1e-15
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipEstimate {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Clone)]
pub struct SmoothMap {
    dim_in: usize,
    dim_out: usize,
    eval: EvalFn,
    jac: Option<JacFn>,
    domain: Ball,
    lip_jac: Option<f64>,
    lip_seed: u64,
    lip_cache: Arc<OnceLock<LipEstimate>>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("analytic_jacobian", &self.jac.is_some())
            .field("domain", &self.domain)
            .field("lip_jac", &self.lip_jac)
            .finish()
    }
}

impl SmoothMap {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        domain: Ball,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        assert_eq!(domain.center.len(), dim_in, "domain center dimension");
        Self {
            dim_in,
            dim_out,
            eval: Arc::new(eval),
            jac: None,
            domain,
            lip_jac: None,
            lip_seed: 0x11b,
            lip_cache: Arc::new(OnceLock::new()),
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self.lip_cache = Arc::new(OnceLock::new());
        self
    }

    /// Supplies `Lip(Df)` on the domain (used instead of sampling).
    pub fn with_lip_jac(mut self, lip: f64) -> Self {
        assert!(lip >= 0.0 && lip.is_finite(), "Lip(Df) must be a finite nonnegative number");
        self.lip_jac = Some(lip);
        self.lip_cache = Arc::new(OnceLock::new());
        self
    }

    pub fn with_lip_seed(mut self, seed: u64) -> Self {
        self.lip_seed = seed;
        self.lip_cache = Arc::new(OnceLock::new());
        self
    }

    pub fn with_domain(mut self, domain: Ball) -> Self {
        assert_eq!(domain.center.len(), self.dim_in);
        self.domain = domain;
        self.lip_cache = Arc::new(OnceLock::new());
        self
    }

    /// `x ↦ A·x` with its exact derivative data.
    pub fn linear(a: DMatrix<f64>, domain: Ball) -> Self {
        let (m, n) = a.shape();
        let a_eval = a.clone();
        let a_jac = a.clone();
        SmoothMap::new(n, m, domain, move |x| &a_eval * x)
            .with_jacobian(move |_| a_jac.clone())
            .with_lip_jac(0.0)
    }

    pub fn identity(n: usize, domain: Ball) -> Self {
        Self::linear(DMatrix::identity(n, n), domain)
    }

    /// `x ↦ f(x) − A·x`; the derivative shifts by `−A` and `Lip(Df)` is unchanged.
    pub fn subtract_linear(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.shape(), (self.dim_out, self.dim_in));
        let eval = self.eval.clone();
        let a_eval = a.clone();
        let mut out = SmoothMap::new(self.dim_in, self.dim_out, self.domain.clone(), move |x| eval(x) - &a_eval * x)
            .with_lip_seed(self.lip_seed);
        if let Some(jac) = self.jac.clone() {
            let a_jac = a.clone();
            out = out.with_jacobian(move |x| jac(x) - &a_jac);
        }
        if let Some(l) = self.lip_jac {
            out = out.with_lip_jac(l);
        }
        out
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn domain(&self) -> &Ball {
        &self.domain
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn supplied_lip_jac(&self) -> Option<f64> {
        self.lip_jac
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim_in {
            return Err(Error::Dimension(format!("map expects {} inputs, got {}", self.dim_in, x.len())));
        }
        let y = (self.eval)(x);
        if y.len() != self.dim_out || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("non-finite or mis-sized value at {:?}", x.as_slice())));
        }
        Ok(y)
    }

    fn check_domain(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim_in {
            return Err(Error::Dimension(format!("map expects {} inputs, got {}", self.dim_in, x.len())));
        }
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!(
                "point at distance {} from the domain center exceeds radius {}",
                (x - &self.domain.center).norm(),
                self.domain.radius
            )));
        }
        Ok(())
    }

    /// Central-difference Jacobian with step `h = 1e−6·max(1, ‖x‖)`.
    pub fn finite_difference_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = 1e-6 * x.norm().max(1.0);
        let mut jac = DMatrix::zeros(self.dim_out, self.dim_in);
        for j in 0..self.dim_in {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (self.eval(&xp)? - self.eval(&xm)?) / (2.0 * h);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation("non-finite finite difference".into()));
            }
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// Verifies the analytic Jacobian against central differences at
    /// `n_points` random domain points (relative tolerance `rtol`).
    pub fn check_jacobian(&self, n_points: usize, rtol: f64, seed: u64) -> Result<f64> {
        let Some(jac) = &self.jac else { return Ok(0.0) };
        let mut worst = 0.0f64;
        for i in 0..n_points {
            let mut rng = index_rng(seed, stream::GRID, i as u64);
            let x = &self.domain.center + random_in_unit_ball(self.dim_in, &mut rng) * self.domain.radius;
            let a = jac(&x);
            let fd = self.finite_difference_jacobian(&x)?;
            let rel = (&a - &fd).amax() / a.amax().max(1.0);
            worst = worst.max(rel);
        }
        if worst > rtol {
            return Err(Error::Evaluation(format!(
                "analytic Jacobian disagrees with finite differences (relative error {worst:e})"
            )));
        }
        Ok(worst)
    }

    /// Jacobian without the domain check (used by preimage iterations that
    /// may step slightly outside the ball).
    pub(crate) fn jacobian_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.jac {
            Some(jac) => Ok(jac(x)),
            None => self.finite_difference_jacobian(x),
        }
    }

    pub fn lip_estimate(&self) -> Result<LipEstimate> {
        lip_derivative(self)
    }
}

/// `Df(x)`: the analytic Jacobian when present, central differences otherwise.
pub fn derivative(f: &SmoothMap, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    f.check_domain(x)?;
    let d = match &f.jac {
        Some(jac) => jac(x),
        None => f.finite_difference_jacobian(x)?,
    };
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite derivative".into()));
    }
    Ok(d)
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let ata = a.tr_mul(a);
    let scale = ata.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let s = &ata / scale;
    let mut best = 0.0f64;
    // Start from every coordinate direction plus the all-ones vector so that
    // no start is orthogonal to the dominant eigenvector for all of them.
    let mut starts: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            e
        })
        .collect();
    starts.push(DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64));
    for mut v in starts {
        let mut lambda = 0.0f64;
        for _ in 0..20_000 {
            let w = &s * &v;
            let norm = w.norm();
            if norm == 0.0 {
                break;
            }
            let next = v.dot(&w) / v.dot(&v);
            v = w / norm;
            if (next - lambda).abs() <= 1e-13 * next.abs().max(1e-300) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        best = best.max(lambda);
    }
    (best * scale).max(0.0).sqrt()
}

/// Smallest singular value of a wide (or square) matrix, i.e. of its rows.
pub fn min_row_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() > a.ncols() {
        return 0.0;
    }
    let aat = a * a.transpose();
    let eig = aat.symmetric_eigen();
    eig.eigenvalues.min().max(0.0).sqrt()
}

/// `Lip(Df; domain)`: the supplied constant, or a sampled lower bound over
/// 10⁴ random pairs inflated by [`LIP_INFLATION`] and flagged `estimated`.
pub fn lip_derivative(f: &SmoothMap) -> Result<LipEstimate> {
    if let Some(l) = f.lip_jac {
        return Ok(LipEstimate {
            value: l,
            provenance: Provenance::Analytic,
        });
    }
    if let Some(cached) = f.lip_cache.get() {
        return Ok(*cached);
    }
    if !(f.domain.radius > 0.0) {
        return Err(Error::DegenerateDomain("Lip(Df) needs a domain ball of positive radius".into()));
    }
    let ratios: Vec<f64> = (0..LIP_SAMPLE_PAIRS)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = index_rng(f.lip_seed, stream::LIP, i as u64);
            let u = &f.domain.center + random_in_unit_ball(f.dim_in, &mut rng) * f.domain.radius;
            let v = &f.domain.center + random_in_unit_ball(f.dim_in, &mut rng) * f.domain.radius;
            let gap = (&u - &v).norm();
            if gap < 1e-12 * f.domain.radius {
                return Ok(0.0);
            }
            let du = derivative(f, &u)?;
            let dv = derivative(f, &v)?;
            Ok(operator_norm(&(du - dv)) / gap)
        })
        .collect::<Result<_>>()?;
    let sup = ratios.into_iter().fold(0.0f64, f64::max);
    let est = LipEstimate {
        value: sup * LIP_INFLATION,
        provenance: Provenance::Estimated,
    };
    Ok(*f.lip_cache.get_or_init(|| est))
}

/// `‖(f(x1)+f(x2))/2 − f((x1+x2)/2)‖`.
pub fn midpoint_defect(f: &SmoothMap, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
    // The domain is a ball, so the segment is inside iff both ends are.
    f.check_domain(x1)?;
    f.check_domain(x2)?;
    let mid = (x1 + x2) / 2.0;
    let avg = (f.eval(x1)? + f.eval(x2)?) / 2.0;
    Ok((avg - f.eval(&mid)?).norm())
}

/// Built-in map families with analytic Jacobians and analytic `Lip(Df)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    /// `x ↦ A·x + offset`.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    /// `fᵢ(x) = constantᵢ + linearᵢ·x + xᵀ·formsᵢ·x`.
    Quadratic {
        #[serde(default)]
        constant: Option<Vec<f64>>,
        #[serde(default)]
        linear: Option<Vec<Vec<f64>>>,
        forms: Vec<Vec<Vec<f64>>>,
    },
    /// `x ↦ (0, x²)` on ℝ.
    Parabola2d,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

impl MapSpec {
    pub fn dims(&self) -> Result<(usize, usize)> {
        match self {
            MapSpec::Linear { matrix, .. } => {
                let a = matrix_from_rows(matrix, "linear map")?;
                Ok((a.ncols(), a.nrows()))
            }
            MapSpec::Quadratic { forms, .. } => {
                let n = forms.first().map_or(0, |q| q.len());
                Ok((n, forms.len()))
            }
            MapSpec::Parabola2d => Ok((1, 2)),
        }
    }

    pub fn build(&self, domain: Ball) -> Result<SmoothMap> {
        let (n, m) = self.dims()?;
        if domain.center.len() != n {
            return Err(Error::Dimension(format!("map has {n} inputs but x0 has {}", domain.center.len())));
        }
        match self {
            MapSpec::Linear { matrix, offset } => {
                let a = matrix_from_rows(matrix, "linear map")?;
                let b = match offset {
                    Some(o) if o.len() != m => return Err(Error::Dimension("linear map offset length".into())),
                    Some(o) => DVector::from_vec(o.clone()),
                    None => DVector::zeros(m),
                };
                let a_eval = a.clone();
                Ok(SmoothMap::new(n, m, domain, move |x| &a_eval * x + &b)
                    .with_jacobian(move |_| a.clone())
                    .with_lip_jac(0.0))
            }
            MapSpec::Quadratic { constant, linear, forms } => {
                if m == 0 || n == 0 {
                    return Err(Error::Invalid("quadratic map needs at least one form".into()));
                }
                let qs = forms
                    .iter()
                    .map(|q| matrix_from_rows(q, "quadratic form"))
                    .collect::<Result<Vec<_>>>()?;
                if qs.iter().any(|q| q.shape() != (n, n)) {
                    return Err(Error::Dimension("every quadratic form must be n×n".into()));
                }
                let c = match constant {
                    Some(c) if c.len() != m => return Err(Error::Dimension("quadratic constant length".into())),
                    Some(c) => DVector::from_vec(c.clone()),
                    None => DVector::zeros(m),
                };
                let l = match linear {
                    Some(rows) => {
                        let l = matrix_from_rows(rows, "quadratic linear part")?;
                        if l.shape() != (m, n) {
                            return Err(Error::Dimension("quadratic linear part must be m×n".into()));
                        }
                        l
                    }
                    None => DMatrix::zeros(m, n),
                };
                let sym: Vec<DMatrix<f64>> = qs.iter().map(|q| q + q.transpose()).collect();
                let lip = quadratic_lip(&sym);
                let (qs_e, c_e, l_e) = (qs.clone(), c.clone(), l.clone());
                let eval = move |x: &DVector<f64>| {
                    let lin = &l_e * x;
                    DVector::from_fn(m, |i, _| c_e[i] + lin[i] + x.dot(&(&qs_e[i] * x)))
                };
                let jac = move |x: &DVector<f64>| {
                    let mut j = l.clone();
                    for (i, s) in sym.iter().enumerate() {
                        let row = s * x;
                        for k in 0..n {
                            j[(i, k)] += row[k];
                        }
                    }
                    j
                };
                Ok(SmoothMap::new(n, m, domain, eval).with_jacobian(jac).with_lip_jac(lip))
            }
            MapSpec::Parabola2d => Ok(SmoothMap::new(1, 2, domain, |x| DVector::from_vec(vec![0.0, x[0] * x[0]]))
                .with_jacobian(|x| DMatrix::from_column_slice(2, 1, &[0.0, 2.0 * x[0]]))
                .with_lip_jac(2.0)),
        }
    }
}

/// Upper bound `√λ_max(Σ Sᵢ²)` on `Lip(Df)` for `Df(x)` with rows `xᵀSᵢ`
/// (`Sᵢ` symmetric); exact for a single output.
fn quadratic_lip(sym: &[DMatrix<f64>]) -> f64 {
    let n = sym[0].nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for s in sym {
        acc += s * s;
    }
    acc.symmetric_eigen().eigenvalues.max().max(0.0).sqrt()
}
