//! Metric regularity moduli: sampled pointwise and set-uniform estimates,
//! the inner norm of sublinear maps, and perturbation bounds.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::multifunction::{PolyhedralMultifunction, SetValuedMap};
use crate::sampling::{default_direction_count, index_rng, ladder_offset, random_in_unit_ball, sphere_directions, stream, SamplerSpec};

/// Sampled suprema are lower bounds; this factor turns them into the upper
/// bound used downstream.
pub const SAMPLED_KAPPA_INFLATION: f64 = 1.25;

const ZERO_DEN: f64 = 1e-12;
const POSITIVE_NUM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateKind {
    Analytic,
    Sampled,
    Refuted,
}

/// A violating or maximizing pair with its ratio `d(x, G⁻¹(v)) / d(v, G(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub ratio: ExtReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityCertificate {
    pub kappa: ExtReal,
    pub delta: f64,
    pub zeta: f64,
    pub kind: CertificateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// Number of ratios that entered the supremum.
    pub samples: usize,
    pub seed: u64,
}

impl RegularityCertificate {
    pub fn is_refuted(&self) -> bool {
        self.kind == CertificateKind::Refuted
    }

    /// `κ` to feed into strict inequalities: analytic values as they are,
    /// sampled ones inflated by [`SAMPLED_KAPPA_INFLATION`].
    pub fn upper_kappa(&self) -> ExtReal {
        match self.kind {
            CertificateKind::Sampled => self.kappa.scale(SAMPLED_KAPPA_INFLATION),
            _ => self.kappa,
        }
    }
}

/// `d(x, G⁻¹(v)) / d(v, G(x))` with the zero-denominator conventions;
/// `None` when the pair carries no information.
pub fn regularity_ratio(num: ExtReal, den: ExtReal) -> Option<ExtReal> {
    match den {
        ExtReal::PosInf | ExtReal::NegInf => None,
        ExtReal::Finite(d) if d < ZERO_DEN => {
            if num.is_pos_inf() || num.to_f64() > POSITIVE_NUM {
                Some(ExtReal::PosInf)
            } else {
                // 0/0, or a numerator too small to tell from round-off.
                None
            }
        }
        ExtReal::Finite(d) => Some(match num {
            ExtReal::Finite(n) => ExtReal::Finite(n / d),
            other => other,
        }),
    }
}

pub fn evaluate_ratio<G: SetValuedMap + ?Sized>(g: &G, x: &DVector<f64>, v: &DVector<f64>) -> Result<Option<ExtReal>> {
    let den = g.dist_to_value(x, v)?;
    if matches!(den, ExtReal::PosInf) {
        return Ok(None);
    }
    let num = g.dist_to_preimage(v, x)?;
    Ok(regularity_ratio(num, den))
}

type Probe = (DVector<f64>, DVector<f64>, Option<ExtReal>);

fn sup_of(probes: &[Probe]) -> Option<(usize, ExtReal)> {
    let mut best: Option<(usize, ExtReal)> = None;
    for (i, (_, _, r)) in probes.iter().enumerate() {
        if let Some(r) = r {
            if best.is_none_or(|(_, b)| *r > b) {
                best = Some((i, *r));
            }
        }
    }
    best
}

fn witness_of(p: &Probe) -> Witness {
    Witness {
        x: p.0.as_slice().to_vec(),
        v: p.1.as_slice().to_vec(),
        ratio: p.2.unwrap_or(ExtReal::ZERO),
    }
}

/// Sampled `regat(G; x̄|ȳ)` over `B(x̄, δ) × B(ȳ, ζ)`.
///
/// Offsets come from one seeded master list of multi-scale pairs that is
/// filtered by `δ` and `ζ`, so shrinking either radius only removes samples
/// and never increases the estimate. An infinite supremum is returned as a
/// refuted certificate carrying the offending pair.
pub fn estimate_regat<G: SetValuedMap + ?Sized>(
    g: &G,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    delta: f64,
    zeta: f64,
    grid: &SamplerSpec,
) -> Result<RegularityCertificate> {
    if !(delta >= 0.0 && zeta >= 0.0) {
        return Err(Error::Invalid(format!("radii must be nonnegative (delta = {delta}, zeta = {zeta})")));
    }
    let gap = g.dist_to_value(xbar, ybar)?;
    if !(gap.to_f64() <= 1e-8) {
        return Err(Error::Precondition(format!("(x̄, ȳ) is not in the graph (distance {gap})")));
    }
    let (n, m) = (g.dim_x(), g.dim_y());
    let probes: Vec<Probe> = (0..grid.pair_budget)
        .into_par_iter()
        .map(|i| -> Result<Option<Probe>> {
            let mut rng = index_rng(grid.seed, stream::REG_PAIRS, i as u64);
            let dx = ladder_offset(n, &mut rng);
            let dv = ladder_offset(m, &mut rng);
            if dx.norm() > delta || dv.norm() > zeta {
                return Ok(None);
            }
            let x = xbar + dx;
            let v = ybar + dv;
            let r = evaluate_ratio(g, &x, &v)?;
            Ok(Some((x, v, r)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let samples = probes.iter().filter(|p| p.2.is_some()).count();
    let Some((idx, kappa)) = sup_of(&probes) else {
        return Err(Error::Inconclusive(format!(
            "no valid regularity ratio among {} sampled pairs",
            probes.len()
        )));
    };
    let (kind, witness) = if kappa.is_pos_inf() {
        (CertificateKind::Refuted, Some(witness_of(&probes[idx])))
    } else {
        (CertificateKind::Sampled, None)
    };
    Ok(RegularityCertificate {
        kappa,
        delta,
        zeta,
        kind,
        witness,
        samples,
        seed: grid.seed,
    })
}

/// Random point of `B(0, radius)` spread over scales `radius·2^{-k}`,
/// `k = 0..=20`.
fn multiscale_offset<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    if radius == 0.0 {
        return DVector::zeros(dim);
    }
    let k = rng.gen_range(0..=20);
    random_in_unit_ball(dim, rng) * (radius * 2f64.powi(-k))
}

/// Checks `d(x, G⁻¹(v)) ≤ κ·d(v, G(x))` for `x ∈ B(x̄, δ)` and `v` in the
/// `ζ`-enlargement of `G(x̄)`. Explicit `probes` are evaluated first.
/// The result is refuted (with the worst pair) if any ratio exceeds `κ`.
pub fn verify_reg_for_set<G: SetValuedMap + ?Sized>(
    g: &G,
    xbar: &DVector<f64>,
    kappa: f64,
    delta: f64,
    zeta: f64,
    sampler: &SamplerSpec,
    probes: &[(DVector<f64>, DVector<f64>)],
) -> Result<RegularityCertificate> {
    if !(delta >= 0.0 && zeta >= 0.0 && kappa > 0.0) {
        return Err(Error::Invalid(format!(
            "need kappa > 0 and nonnegative radii (kappa = {kappa}, delta = {delta}, zeta = {zeta})"
        )));
    }
    let base = g.value_samples(xbar, sampler.n_y.max(8), sampler.seed, u64::MAX)?;
    if base.is_empty() {
        return Err(Error::Precondition("x̄ is not in the domain of G".into()));
    }
    let (n, m) = (g.dim_x(), g.dim_y());
    let mut evaluated: Vec<Probe> = probes
        .iter()
        .map(|(x, v)| Ok((x.clone(), v.clone(), evaluate_ratio(g, x, v)?)))
        .collect::<Result<_>>()?;
    let sampled: Vec<Probe> = (0..sampler.pair_budget)
        .into_par_iter()
        .map(|i| -> Result<Probe> {
            let mut rng = index_rng(sampler.seed, stream::REG_PAIRS, i as u64);
            let x = xbar + multiscale_offset(n, delta, &mut rng);
            let y = &base[rng.gen_range(0..base.len())];
            let v = y + multiscale_offset(m, zeta, &mut rng);
            let r = evaluate_ratio(g, &x, &v)?;
            Ok((x, v, r))
        })
        .collect::<Result<_>>()?;
    evaluated.extend(sampled);
    let samples = evaluated.iter().filter(|p| p.2.is_some()).count();
    let tol = kappa * (1.0 + 1e-9);
    let worst = sup_of(&evaluated);
    let (kind, witness) = match worst {
        Some((idx, r)) if r > ExtReal::Finite(tol) => (CertificateKind::Refuted, Some(witness_of(&evaluated[idx]))),
        _ => (CertificateKind::Sampled, None),
    };
    Ok(RegularityCertificate {
        kappa: ExtReal::Finite(kappa),
        delta,
        zeta,
        kind,
        witness,
        samples,
        seed: sampler.seed,
    })
}

/// Inner norm `sup_{‖y‖ ≤ 1} d(0, G⁻¹(y))` of a sublinear `G`: a sweep over
/// deterministic sphere directions followed by a local pattern search
/// around the best one. `+∞` if some sampled direction has no preimage.
pub fn sublinear_inner_norm(g: &PolyhedralMultifunction) -> Result<ExtReal> {
    if !g.is_sublinear() {
        return Err(Error::Precondition("inner norm needs a sublinear map (b = 0)".into()));
    }
    let m = g.dim_y();
    let origin = DVector::zeros(g.dim_x());
    let dirs = sphere_directions(m, default_direction_count(m));
    let values: Vec<ExtReal> = dirs
        .par_iter()
        .map(|y| g.dist_point_to_preimage(y, &origin))
        .collect::<Result<_>>()?;
    if values.iter().any(|v| v.is_pos_inf()) {
        return Ok(ExtReal::PosInf);
    }
    let (mut best_idx, mut best) = (0, f64::NEG_INFINITY);
    for (i, v) in values.iter().enumerate() {
        if v.to_f64() > best {
            best = v.to_f64();
            best_idx = i;
        }
    }
    if m == 1 {
        return Ok(ExtReal::Finite(best));
    }
    let eval = |y: &DVector<f64>| -> Result<ExtReal> { g.dist_point_to_preimage(&(y / y.norm()), &origin) };
    let mut y = dirs[best_idx].clone();
    let mut step = if m == 2 {
        std::f64::consts::TAU / dirs.len() as f64
    } else {
        0.1
    };
    while step > 1e-10 {
        let mut improved = false;
        for axis in tangent_basis(&y) {
            for sign in [1.0, -1.0] {
                let cand = &y + &axis * (sign * step);
                let cand = &cand / cand.norm();
                match eval(&cand)? {
                    ExtReal::PosInf => return Ok(ExtReal::PosInf),
                    val if val.to_f64() > best => {
                        best = val.to_f64();
                        y = cand;
                        improved = true;
                    }
                    _ => {}
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    Ok(ExtReal::Finite(best))
}

/// Orthonormal basis of the complement of the unit vector `y`.
fn tangent_basis(y: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = y.len();
    let mut basis: Vec<DVector<f64>> = vec![y.clone()];
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        for b in &basis {
            let proj = e.dot(b);
            e -= b * proj;
        }
        let n = e.norm();
        if n > 1e-8 {
            basis.push(e / n);
        }
        if basis.len() == m {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// `reg(G; x̄) ≤ regat(G; 0|0)` for sublinear `G`.
pub fn reg_for_set_sublinear(g: &PolyhedralMultifunction, xbar: &DVector<f64>) -> Result<ExtReal> {
    if !g.is_sublinear() {
        return Err(Error::Precondition("needs a sublinear map (b = 0)".into()));
    }
    if !g.in_domain(xbar)? {
        return Err(Error::Precondition("x̄ is not in the domain of G".into()));
    }
    sublinear_inner_norm(g)
}

/// Regularity bound `1/(reg(G)⁻¹ − lip(f))` for `f + G`.
pub fn perturbed_reg_bound(reg_g: ExtReal, lipf: f64) -> Result<ExtReal> {
    if !(reg_g > ExtReal::ZERO) {
        return Err(Error::Invalid(format!("regularity modulus must be positive, got {reg_g}")));
    }
    if !(lipf >= 0.0) {
        return Err(Error::Invalid(format!("Lipschitz modulus must be nonnegative, got {lipf}")));
    }
    let inv = reg_g.recip().to_f64();
    if lipf >= inv {
        return Err(Error::NoCertificate(format!(
            "perturbation too large: lip(f) = {lipf} is not below reg(G)⁻¹ = {inv}"
        )));
    }
    Ok(ExtReal::Finite(1.0 / (inv - lipf)))
}

/// Uniform certificate from pointwise certificates at a finite cover of a
/// compact fiber: smallest `δ`, a third of the smallest `ζ`, largest `κ`.
pub fn compact_values_uplift(certs: &[RegularityCertificate]) -> Result<RegularityCertificate> {
    let first = certs.first().ok_or_else(|| Error::Invalid("empty cover".into()))?;
    if let Some(bad) = certs.iter().find(|c| c.is_refuted()) {
        return Err(Error::Precondition(format!("cover contains a refuted certificate (kappa {})", bad.kappa)));
    }
    let delta = certs.iter().map(|c| c.delta).fold(f64::INFINITY, f64::min);
    let zeta = certs.iter().map(|c| c.zeta).fold(f64::INFINITY, f64::min) / 3.0;
    let kappa = certs.iter().map(|c| c.kappa).fold(ExtReal::ZERO, ExtReal::max);
    let kind = if certs.iter().all(|c| c.kind == CertificateKind::Analytic) {
        CertificateKind::Analytic
    } else {
        CertificateKind::Sampled
    };
    Ok(RegularityCertificate {
        kappa,
        delta,
        zeta,
        kind,
        witness: None,
        samples: certs.iter().map(|c| c.samples).sum(),
        seed: first.seed,
    })
}

/// Violating pair for `y ↦ {y₁y₂ = x}` at `x̄ = 0`: `x_δ = min(δ/2, ζ²/2)`
/// (so `G(x_δ)` stays inside the `ζ`-enlargement of the axes) and
/// `v̄ = (2(κζ + x_δ)/ζ + margin, ζ/2)`.
pub fn product_level_witness(kappa: f64, delta: f64, zeta: f64, margin: f64) -> (DVector<f64>, DVector<f64>) {
    let x_delta = (delta / 2.0).min(zeta * zeta / 2.0);
    let v1 = 2.0 * (kappa * zeta + x_delta) / zeta + margin;
    (DVector::from_element(1, x_delta), DVector::from_vec(vec![v1, zeta / 2.0]))
}
