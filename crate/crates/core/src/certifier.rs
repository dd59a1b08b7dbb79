//! Certified convexity radii for images of balls under `f + G`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::multifunction::{PolyhedralMultifunction, SetValuedMap, SumMap};
use crate::polyhedron::Polyhedron;
use crate::regularity::{
    compact_values_uplift, estimate_regat, perturbed_reg_bound, reg_for_set_sublinear, verify_reg_for_set,
    RegularityCertificate, SAMPLED_KAPPA_INFLATION,
};
use crate::sampling::{ball_points, stream, SamplerSpec};
use crate::smooth::{derivative, lip_derivative, min_row_singular_value, operator_norm, SmoothMap};
use crate::space::{second_order_constant, SpaceSpec};
use crate::Provenance;

pub const DEFAULT_SAFETY: f64 = 0.999;
/// `Df(x₀)` counts as onto when its smallest singular value exceeds this.
pub const SURJECTIVITY_TOL: f64 = 1e-10;

/// Which argument of the minimum defines `ε₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    Delta,
    Delta1,
    Delta2,
    Tau,
    R,
    RegularityGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ingredients {
    pub c: f64,
    #[serde(rename = "regG")]
    pub reg_g: ExtReal,
    #[serde(rename = "normDf")]
    pub norm_df: f64,
    #[serde(rename = "lipDf")]
    pub lip_df: f64,
    pub delta: ExtReal,
    pub delta1: ExtReal,
    pub delta2: ExtReal,
    pub tau: ExtReal,
    pub r: ExtReal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngredientProvenance {
    pub c: Provenance,
    #[serde(rename = "regG")]
    pub reg_g: Provenance,
    #[serde(rename = "normDf")]
    pub norm_df: Provenance,
    #[serde(rename = "lipDf")]
    pub lip_df: Provenance,
    pub delta: Provenance,
    pub delta1: Provenance,
    pub delta2: Provenance,
    pub tau: Provenance,
    pub r: Provenance,
}

impl IngredientProvenance {
    pub fn all(p: Provenance) -> Self {
        Self {
            c: p,
            reg_g: p,
            norm_df: p,
            lip_df: p,
            delta: p,
            delta1: p,
            delta2: p,
            tau: p,
            r: p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub eps0: f64,
    pub binding_term: BindingTerm,
    pub ingredients: Ingredients,
    pub safety: f64,
    pub provenance: IngredientProvenance,
    /// Regularity certificate of `f + G` when it was obtained by sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularity: Option<RegularityCertificate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// `ε₀ = safety · min(δ, δ₁, δ₂, τ, r, 4c(reg G⁻¹ − ‖Df‖)/(Lip(Df) + 1))`.
pub fn certified_radius(ing: &Ingredients, safety: f64) -> Result<ConvexityCertificate> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::Invalid(format!("safety factor {safety} outside (0, 1)")));
    }
    if !(ing.c > 0.0 && ing.c <= 0.125) {
        return Err(Error::Invalid(format!("second-order constant {} outside (0, 1/8]", ing.c)));
    }
    if !(ing.norm_df >= 0.0 && ing.norm_df.is_finite() && ing.lip_df >= 0.0 && ing.lip_df.is_finite()) {
        return Err(Error::Invalid("derivative norms must be finite and nonnegative".into()));
    }
    let radii = [
        (BindingTerm::Delta, ing.delta),
        (BindingTerm::Delta1, ing.delta1),
        (BindingTerm::Delta2, ing.delta2),
        (BindingTerm::Tau, ing.tau),
        (BindingTerm::R, ing.r),
    ];
    for (term, value) in &radii {
        if !(*value > ExtReal::ZERO) {
            return Err(Error::Invalid(format!("{term:?} must be positive, got {value}")));
        }
    }
    if !(ing.reg_g > ExtReal::ZERO) {
        return Err(Error::Invalid(format!("regG must be positive, got {}", ing.reg_g)));
    }
    if ing.reg_g.is_pos_inf() {
        return Err(Error::NoCertificate("regG infinite: G is not metrically regular".into()));
    }
    let gap = 1.0 / ing.reg_g.to_f64() - ing.norm_df;
    if !(gap > 0.0) {
        return Err(Error::NoCertificate(format!(
            "regG = {} is not below 1/normDf = {}",
            ing.reg_g,
            1.0 / ing.norm_df
        )));
    }
    let gap_term = 4.0 * ing.c * gap / (ing.lip_df + 1.0);
    let mut binding = BindingTerm::RegularityGap;
    let mut smallest = ExtReal::Finite(gap_term);
    for (term, value) in radii {
        if value < smallest || (value == smallest && (term as u8) < (binding as u8)) {
            smallest = value;
            binding = term;
        }
    }
    Ok(ConvexityCertificate {
        eps0: safety * smallest.to_f64(),
        binding_term: binding,
        ingredients: *ing,
        safety,
        provenance: IngredientProvenance::all(Provenance::Configured),
        regularity: None,
        notes: Vec::new(),
    })
}

/// Radius of `F = f + G` on which `lip(f) ≤ ‖Df(x₀)‖ + Lip(Df)·t` stays
/// at most half-way into the gap `reg G⁻¹ − ‖Df(x₀)‖`.
fn perturbation_radius(gap: f64, lip: f64) -> ExtReal {
    if lip == 0.0 {
        ExtReal::PosInf
    } else {
        ExtReal::Finite(gap / (2.0 * lip))
    }
}

/// Polyak-type radius for a single-valued `f`: with `h = f − Df(x₀)·x`,
/// `G = Df(x₀)` is a linear process of modulus `1/σ_min(Df(x₀))` and
/// `‖Dh(x₀)‖ = 0`, `Lip(Dh) = Lip(Df)`.
pub fn polyak_radius(f: &SmoothMap, x0: &DVector<f64>, space: &SpaceSpec, safety: f64) -> Result<ConvexityCertificate> {
    let r = available_radius(f, x0)?;
    polyak_radius_within(f, x0, space, r, None, safety)
}

fn available_radius(f: &SmoothMap, x0: &DVector<f64>) -> Result<f64> {
    let dom = f.domain();
    let r = dom.radius - (x0 - &dom.center).norm();
    if !(r > 0.0) {
        return Err(Error::DegenerateDomain(format!("x0 leaves no room in the domain ball (r = {r})")));
    }
    Ok(r)
}

pub fn polyak_radius_within(
    f: &SmoothMap,
    x0: &DVector<f64>,
    space: &SpaceSpec,
    r: f64,
    tau: Option<f64>,
    safety: f64,
) -> Result<ConvexityCertificate> {
    let d0 = derivative(f, x0)?;
    let sigma = min_row_singular_value(&d0);
    if !(sigma > SURJECTIVITY_TOL) {
        return Err(Error::NoCertificate(format!(
            "Df(x0) is not onto (smallest singular value {sigma:e})"
        )));
    }
    let reg_g = ExtReal::Finite(1.0 / sigma);
    // Dh(x₀) = Df(x₀) − Df(x₀)
    let norm_dh = operator_norm(&(derivative(f, x0)? - &d0));
    let lip = lip_derivative(f)?;
    let gap = 1.0 / reg_g.to_f64() - norm_dh;
    let ing = Ingredients {
        c: second_order_constant(space),
        reg_g,
        norm_df: norm_dh,
        lip_df: lip.value,
        delta: perturbation_radius(gap, lip.value),
        delta1: ExtReal::PosInf,
        delta2: ExtReal::PosInf,
        tau: ExtReal::Finite(tau.unwrap_or(r)),
        r: ExtReal::Finite(r),
    };
    let mut cert = certified_radius(&ing, safety)?;
    cert.provenance = IngredientProvenance {
        c: Provenance::Analytic,
        reg_g: Provenance::Analytic,
        norm_df: Provenance::Analytic,
        lip_df: lip.provenance,
        delta: lip.provenance,
        delta1: Provenance::Analytic,
        delta2: Provenance::Analytic,
        tau: Provenance::Configured,
        r: Provenance::Configured,
    };
    cert.notes.push("single-valued map: certified through the linearization at x0".into());
    Ok(cert)
}

/// Inputs of the full certification pipeline beyond the map itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    /// Radius of the ball `B(x₀, r)`; defaults to what the domain of `f` allows.
    pub r: Option<f64>,
    pub tau: Option<f64>,
    pub delta: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub safety: f64,
    /// Radii `(δ, ζ)` of the pointwise regularity estimates in the sampled path.
    pub probe_delta: Option<f64>,
    pub probe_zeta: Option<f64>,
    /// Ratio-pair budget for sampled regularity.
    pub reg_pairs: usize,
    pub sampler: SamplerSpec,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            r: None,
            tau: None,
            delta: None,
            delta1: None,
            delta2: None,
            safety: DEFAULT_SAFETY,
            probe_delta: None,
            probe_zeta: None,
            reg_pairs: 20_000,
            sampler: SamplerSpec::default(),
        }
    }
}

fn override_or(value: Option<f64>, computed: ExtReal, prov: Provenance) -> (ExtReal, Provenance) {
    match value {
        Some(v) => (ExtReal::Finite(v), Provenance::Configured),
        None => (computed, prov),
    }
}

/// Runs moduli, the perturbation bound and [`certified_radius`] for
/// `F = f + G` at `x0`.
///
/// Sublinear `G` takes the analytic route (inner norm, radii from the
/// perturbation gap). A zero process is handled by [`polyak_radius`].
/// Other polyhedral `G` with compact values are certified by sampling:
/// pointwise moduli on a cover of `G(x₀)`, the uniform uplift, a set-wise
/// check of `G` and then of `F`, and bisection for `δ₁`, `δ₂`.
pub fn certify(space: &SpaceSpec, fmap: &SumMap, x0: &DVector<f64>, opts: &CertifyOptions) -> Result<ConvexityCertificate> {
    let f = &fmap.f;
    let g = &fmap.g;
    if space.dim() != f.dim_in() {
        return Err(Error::Dimension(format!("space has dimension {} but f has {} inputs", space.dim(), f.dim_in())));
    }
    let r = match opts.r {
        Some(r) => {
            let room = available_radius(f, x0)?;
            if !(r > 0.0 && r <= room * (1.0 + 1e-12)) {
                return Err(Error::Domain(format!("r = {r} must lie in (0, {room}]")));
            }
            r
        }
        None => available_radius(f, x0)?,
    };
    if !g.in_domain(x0)? {
        return Err(Error::Domain("x0 is not in the domain of G".into()));
    }
    if g.is_zero_process()? {
        let mut cert = polyak_radius_within(f, x0, space, r, opts.tau, opts.safety)?;
        apply_overrides(&mut cert, opts)?;
        return Ok(cert);
    }

    let c = second_order_constant(space);
    let d0 = derivative(f, x0)?;
    let norm_df = operator_norm(&d0);
    let norm_prov = if f.has_analytic_jacobian() {
        Provenance::Analytic
    } else {
        Provenance::Estimated
    };
    let lip = lip_derivative(f)?;
    let mut notes = Vec::new();
    if !g.has_bounded_fibers() {
        notes.push("fibers are unbounded: closedness of the ball images is assumed, not constructed".into());
    }

    let (reg_g, reg_prov, delta, delta1, delta2, radii_prov, regularity) = if g.is_sublinear() {
        let reg_g = reg_for_set_sublinear(g, x0)?;
        if reg_g.is_pos_inf() {
            return Err(Error::NoCertificate("regG infinite: G is not onto".into()));
        }
        let gap = 1.0 / reg_g.to_f64() - norm_df;
        if !(gap > 0.0) {
            return Err(Error::NoCertificate(format!("regG = {reg_g} is not below 1/normDf")));
        }
        let delta = perturbation_radius(gap, lip.value);
        (
            reg_g,
            Provenance::Analytic,
            delta,
            ExtReal::PosInf,
            ExtReal::PosInf,
            [lip.provenance, Provenance::Analytic, Provenance::Analytic],
            None,
        )
    } else {
        let s = sampled_moduli(fmap, x0, r, norm_df, lip.value, lip.provenance, opts)?;
        (
            s.reg_g,
            Provenance::Sampled,
            s.delta,
            s.delta1,
            s.delta2,
            [Provenance::Sampled, s.delta1_prov, Provenance::Sampled],
            Some(s.regularity),
        )
    };

    let (tau, tau_prov) = override_or(opts.tau, ExtReal::Finite(r), Provenance::Configured);
    let ing = Ingredients {
        c,
        reg_g,
        norm_df,
        lip_df: lip.value,
        delta,
        delta1,
        delta2,
        tau,
        r: ExtReal::Finite(r),
    };
    let mut cert = certified_radius(&ing, opts.safety)?;
    cert.provenance = IngredientProvenance {
        c: Provenance::Analytic,
        reg_g: reg_prov,
        norm_df: norm_prov,
        lip_df: lip.provenance,
        delta: radii_prov[0],
        delta1: radii_prov[1],
        delta2: radii_prov[2],
        tau: tau_prov,
        r: Provenance::Configured,
    };
    cert.regularity = regularity;
    cert.notes = notes;
    apply_overrides(&mut cert, opts)?;
    Ok(cert)
}

fn apply_overrides(cert: &mut ConvexityCertificate, opts: &CertifyOptions) -> Result<()> {
    if opts.delta.is_none() && opts.delta1.is_none() && opts.delta2.is_none() {
        return Ok(());
    }
    let mut ing = cert.ingredients;
    let mut prov = cert.provenance;
    (ing.delta, prov.delta) = override_or(opts.delta, ing.delta, prov.delta);
    (ing.delta1, prov.delta1) = override_or(opts.delta1, ing.delta1, prov.delta1);
    (ing.delta2, prov.delta2) = override_or(opts.delta2, ing.delta2, prov.delta2);
    let mut updated = certified_radius(&ing, cert.safety)?;
    updated.provenance = prov;
    updated.regularity = cert.regularity.take();
    updated.notes = std::mem::take(&mut cert.notes);
    *cert = updated;
    Ok(())
}

struct SampledModuli {
    reg_g: ExtReal,
    delta: ExtReal,
    delta1: ExtReal,
    delta1_prov: Provenance,
    delta2: ExtReal,
    regularity: RegularityCertificate,
}

/// Grid points projected onto the fiber so that every fiber point lies
/// within `spacing·√m/2` of some center.
fn fiber_cover(fiber: &Polyhedron, vertices: &[DVector<f64>], spacing: f64) -> Result<Vec<DVector<f64>>> {
    let m = fiber.dim();
    let mut lo = vertices[0].clone();
    let mut hi = vertices[0].clone();
    for v in vertices {
        for i in 0..m {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    let counts: Vec<usize> = (0..m).map(|i| ((hi[i] - lo[i]) / spacing).ceil() as usize + 1).collect();
    let total: usize = counts.iter().product();
    if total > 20_000 {
        return Err(Error::Inconclusive(format!("fiber cover needs {total} centers; enlarge probe_zeta")));
    }
    let mut centers: Vec<DVector<f64>> = vertices.to_vec();
    for flat in 0..total {
        let mut rem = flat;
        let mut p = DVector::zeros(m);
        for i in 0..m {
            let k = rem % counts[i];
            rem /= counts[i];
            p[i] = (lo[i] + k as f64 * spacing).min(hi[i]);
        }
        if let Some(proj) = fiber.project(&p)? {
            let q = proj.point;
            if !centers.iter().any(|c| (c - &q).norm() < 0.25 * spacing) {
                centers.push(q);
            }
        }
    }
    Ok(centers)
}

fn sampled_moduli(
    fmap: &SumMap,
    x0: &DVector<f64>,
    r: f64,
    norm_df: f64,
    lip: f64,
    lip_prov: Provenance,
    opts: &CertifyOptions,
) -> Result<SampledModuli> {
    let g = &fmap.g;
    if !g.has_bounded_fibers() {
        return Err(Error::Precondition("sampled regularity needs compact fibers".into()));
    }
    let fiber = g.fiber(x0)?.set;
    let verts = fiber.vertices();
    if verts.is_empty() {
        return Err(Error::Precondition("G(x0) has no vertices".into()));
    }
    let probe_delta = opts.probe_delta.unwrap_or(r / 2.0);
    let probe_zeta = opts.probe_zeta.unwrap_or(0.3);
    let m = g.dim_y();
    let centers = fiber_cover(&fiber, &verts, probe_zeta / (2.0 * (m as f64).sqrt()))?;
    let per_center = (opts.reg_pairs / centers.len()).max(256);
    let grid = SamplerSpec {
        pair_budget: per_center,
        ..opts.sampler.clone()
    };
    // Centers deep inside the fiber may see only v ∈ G(x) (all ratios 0/0);
    // they constrain nothing and the set-wise check below still covers them.
    let mut pointwise = Vec::with_capacity(centers.len());
    for y in &centers {
        match estimate_regat(g, x0, y, probe_delta, probe_zeta, &grid) {
            Ok(c) => pointwise.push(c),
            Err(Error::Inconclusive(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if pointwise.is_empty() {
        return Err(Error::Inconclusive("no informative regularity ratio on the fiber cover".into()));
    }
    if let Some(bad) = pointwise.iter().find(|c| c.is_refuted()) {
        return Err(Error::NoCertificate(format!(
            "G is not metrically regular at x0 (ratio {} at a fiber point)",
            bad.kappa
        )));
    }
    let uniform = compact_values_uplift(&pointwise)?;
    let kappa_g = uniform.kappa.scale(SAMPLED_KAPPA_INFLATION);
    let check = SamplerSpec {
        pair_budget: opts.reg_pairs,
        ..opts.sampler.clone()
    };
    let g_check = verify_reg_for_set(g, x0, kappa_g.to_f64(), uniform.delta, uniform.zeta, &check, &[])?;
    if g_check.is_refuted() {
        return Err(Error::NoCertificate(format!(
            "set-wise regularity check of G failed (ratio {})",
            g_check.witness.as_ref().map_or(ExtReal::PosInf, |w| w.ratio)
        )));
    }
    let gap = kappa_g.recip().to_f64() - norm_df;
    if !(gap > 0.0) {
        return Err(Error::NoCertificate(format!("regG = {kappa_g} is not below 1/normDf")));
    }
    let delta_f = perturbation_radius(gap, lip).min(ExtReal::Finite(uniform.delta / 2.0)).to_f64();
    let zeta_f = uniform.zeta / 2.0;
    let kappa_f = perturbed_reg_bound(kappa_g, norm_df + lip * delta_f)?;
    let f_check_spec = SamplerSpec {
        pair_budget: (opts.reg_pairs / 4).max(256),
        ..opts.sampler.clone()
    };
    let f_check = verify_reg_for_set(fmap, x0, kappa_f.to_f64(), delta_f, zeta_f, &f_check_spec, &[])?;
    if f_check.is_refuted() {
        return Err(Error::NoCertificate(format!(
            "set-wise regularity check of f + G failed (ratio {})",
            f_check.witness.as_ref().map_or(ExtReal::PosInf, |w| w.ratio)
        )));
    }

    let target = zeta_f / 4.0;
    let (delta1, delta1_prov) = if lip_prov == Provenance::Analytic {
        // ‖f(x) − f(x₀)‖ ≤ ‖Df(x₀)‖t + Lip(Df)t²/2
        let t = if lip > 0.0 {
            (-norm_df + (norm_df * norm_df + 2.0 * lip * target).sqrt()) / lip
        } else if norm_df > 0.0 {
            target / norm_df
        } else {
            f64::INFINITY
        };
        (ExtReal::from_f64(t).unwrap_or(ExtReal::PosInf), Provenance::Analytic)
    } else {
        let t = bisect_radius(r, |t| continuity_modulus(&fmap.f, x0, t, &opts.sampler).map(|w| w <= target))?;
        (ExtReal::Finite(t), Provenance::Sampled)
    };
    let delta2 = bisect_radius(r, |t| usc_modulus(g, x0, t, &opts.sampler).map(|e| e <= target))?;

    Ok(SampledModuli {
        reg_g: kappa_g,
        delta: ExtReal::Finite(delta_f),
        delta1,
        delta1_prov,
        delta2: ExtReal::Finite(delta2),
        regularity: f_check,
    })
}

/// Largest `t ∈ (0, r]` accepted by `ok`, by bisection; `ok` is assumed
/// monotone (accepted radii are closed downward).
fn bisect_radius(r: f64, mut ok: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    if ok(r)? {
        return Ok(r);
    }
    let (mut lo, mut hi) = (0.0, r);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::NoCertificate("no positive radius passes the continuity check".into()));
    }
    Ok(lo)
}

fn radius_probes(x0: &DVector<f64>, t: f64, sampler: &SamplerSpec) -> Vec<DVector<f64>> {
    ball_points(x0, t, 64, 0.5, sampler.seed, stream::CONTINUITY)
}

/// Sampled `sup_{x ∈ B(x₀,t)} ‖f(x) − f(x₀)‖`, inflated.
fn continuity_modulus(f: &SmoothMap, x0: &DVector<f64>, t: f64, sampler: &SamplerSpec) -> Result<f64> {
    let f0 = f.eval(x0)?;
    let mut worst = 0.0f64;
    for x in radius_probes(x0, t, sampler) {
        worst = worst.max((f.eval(&x)? - &f0).norm());
    }
    Ok(worst * SAMPLED_KAPPA_INFLATION)
}

/// Sampled `sup_{x ∈ B(x₀,t)} e(G(x), G(x₀))`, inflated.
fn usc_modulus(g: &PolyhedralMultifunction, x0: &DVector<f64>, t: f64, sampler: &SamplerSpec) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in radius_probes(x0, t, sampler) {
        worst = worst.max(g.usc_excess(x0, &x)?.to_f64());
    }
    Ok(worst * SAMPLED_KAPPA_INFLATION)
}
