//! Acceptance run: one line per criterion with its timing. Exits nonzero if
//! any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ballconv_cli::{certify_cmd, repro, Scenario};
use ballconv_core::optimize::dominance_audit;
use ballconv_core::regularity::{estimate_regat, evaluate_ratio, product_level_witness};
use ballconv_core::sampling::index_rng;
use ballconv_core::{
    certified_radius, certify, convexity_defect, find_efficient_pair, lip_derivative, midpoint_ball_radius, midpoint_defect,
    modulus_of_convexity, polyak_radius, scalarize, second_order_constant, sum_image_of_ball, Ball, ExtReal, Ingredients, MapSpec,
    PolyhedralMultifunction, ProductLevelInverse, SamplerSpec, SpaceSpec, SumMap,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_vec(xs.to_vec())
}

fn unit(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let u = DVector::from_fn(dim, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let n = u.norm();
        if n > 1e-3 && n <= 1.0 {
            return u / n;
        }
    }
}

fn in_ball(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    unit(dim, rng) * rng.gen::<f64>().powf(1.0 / dim as f64)
}

// ---------------------------------------------------------------- 1

fn modulus_identities() -> Outcome {
    let n = 1000;
    let grid: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
    let hilbert = SpaceSpec::euclidean(3);
    let mut worst = 0.0f64;
    for &e in &grid {
        let exact = 1.0 - (1.0 - e * e / 4.0).sqrt();
        let got = modulus_of_convexity(&hilbert, e).map_err(err)?;
        worst = worst.max((got - exact).abs());
    }
    ensure(worst <= 1e-12, || format!("p = 2 deviates from the closed form by {worst:e}"))?;
    for p in [1.2, 1.5, 2.0] {
        let space = SpaceSpec::new(3, p, None).map_err(err)?;
        let c = second_order_constant(&space);
        for &e in &grid {
            let d = modulus_of_convexity(&space, e).map_err(err)?;
            ensure(d >= c * e * e, || format!("p = {p}, eps = {e}: delta {d:e} < c eps^2 = {:e}", c * e * e))?;
        }
    }
    Ok(format!("max |delta - closed form| = {worst:.1e} on {n} points; quadratic bound holds for p in {{1.2, 1.5, 2}}"))
}

// ---------------------------------------------------------------- 2

fn midpoint_ball() -> Outcome {
    let space_for = |dim| SpaceSpec::euclidean(dim);
    let mut rng = index_rng(2, 0, 0);
    let mut checked = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..10_000 {
        let dim = 2 + k % 4;
        let space = space_for(dim);
        let x0 = DVector::from_fn(dim, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
        let r = 0.05 + 3.0 * rng.gen::<f64>();
        // Every fourth pair sits on the sphere, where the bound is tight.
        let pick = |rng: &mut _| if k % 4 == 0 { unit(dim, rng) } else { in_ball(dim, rng) };
        let x1 = &x0 + pick(&mut rng) * r;
        let x2 = &x0 + pick(&mut rng) * r;
        let rho = midpoint_ball_radius(&space, &x1, &x2, r).map_err(err)?;
        let expected = (&x1 - &x2).norm_squared() / (8.0 * r);
        ensure((rho - expected).abs() <= 1e-14 * expected.max(1.0), || format!("rho = {rho}, expected {expected}"))?;
        let mid = (&x1 + &x2) / 2.0;
        for j in 0..8 {
            let offset = if j < 6 { unit(dim, &mut rng) } else { in_ball(dim, &mut rng) };
            let z = &mid + offset * rho;
            let excess = (&z - &x0).norm() - r;
            worst = worst.max(excess);
            ensure(excess <= 1e-10, || format!("instance {k}: point leaves B(x0, r) by {excess:e}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} points from 10^4 instances in dimensions 2-5; max excess {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn quadratic_defect_bound() -> Outcome {
    let mut rng = index_rng(3, 0, 0);
    let mut worst_slack = f64::INFINITY;
    for k in 0..1000 {
        let n = 1 + k % 4;
        let m = 1 + (k / 4) % 3;
        let forms: Vec<DMatrix<f64>> = (0..m).map(|_| DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)).collect();
        let spec = MapSpec::Quadratic {
            constant: Some((0..m).map(|_| rng.gen::<f64>()).collect()),
            linear: Some((0..m).map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect()),
            forms: forms.iter().map(|q| q.row_iter().map(|r| r.iter().copied().collect()).collect()).collect(),
        };
        let f = spec.build(Ball::new(DVector::zeros(n), 2.0)).map_err(err)?;
        let x1 = in_ball(n, &mut rng) * 2.0;
        let x2 = in_ball(n, &mut rng) * 2.0;
        let d = &x1 - &x2;
        // For a quadratic the defect is |(dᵀQᵢd)/4|.
        let exact = DVector::from_fn(m, |i, _| d.dot(&(&forms[i] * &d)) / 4.0).norm();
        let got = midpoint_defect(&f, &x1, &x2).map_err(err)?;
        ensure((got - exact).abs() <= 1e-12 * (1.0 + exact), || format!("case {k}: defect {got} vs closed form {exact}"))?;
        let lip = lip_derivative(&f).map_err(err)?.value;
        let bound = lip / 8.0 * d.norm_squared();
        ensure(got <= bound + 1e-10, || format!("case {k}: defect {got} above Lip/8 |x1-x2|^2 = {bound}"))?;
        worst_slack = worst_slack.min(bound - got);
    }
    let square = MapSpec::Quadratic {
        constant: None,
        linear: None,
        forms: vec![vec![vec![1.0]]],
    }
    .build(Ball::new(v(&[0.3]), 1.0))
    .map_err(err)?;
    let (x1, x2) = (v(&[-0.7]), v(&[1.3]));
    let tight = midpoint_defect(&square, &x1, &x2).map_err(err)?;
    let bound = lip_derivative(&square).map_err(err)?.value / 8.0 * 4.0;
    ensure((tight - bound).abs() <= 1e-12 && (tight - 1.0).abs() <= 1e-12, || {
        format!("tight case: defect {tight}, bound {bound}, expected 1")
    })?;
    Ok(format!("10^3 cases, min slack {worst_slack:.1e}; x^2 with x2 = x1 + 2 gives {tight} = bound"))
}

// ---------------------------------------------------------------- 4

/// `d(v, {y : y₁y₂ = x})` by a log-spaced scan of `y₁ = t` on both branches
/// and golden-section refinement of the best brackets.
fn hyperbola_distance(x: f64, v1: f64, v2: f64) -> f64 {
    let d2 = |t: f64| (t - v1).powi(2) + (x / t - v2).powi(2);
    let steps = 200_000;
    let ts: Vec<f64> = (0..steps)
        .map(|i| 10f64.powf(-8.0 + 12.0 * i as f64 / (steps - 1) as f64))
        .flat_map(|t| [t, -t])
        .collect();
    let mut pos: Vec<f64> = ts.iter().copied().filter(|t| *t > 0.0).collect();
    let mut neg: Vec<f64> = ts.iter().copied().filter(|t| *t < 0.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut best = f64::INFINITY;
    for branch in [pos, neg] {
        for i in 1..branch.len() - 1 {
            let (a, b, c) = (d2(branch[i - 1]), d2(branch[i]), d2(branch[i + 1]));
            if b <= a && b <= c {
                let (mut lo, mut hi) = (branch[i - 1], branch[i + 1]);
                let g = (5f64.sqrt() - 1.0) / 2.0;
                for _ in 0..200 {
                    let m1 = hi - g * (hi - lo);
                    let m2 = lo + g * (hi - lo);
                    if d2(m1) <= d2(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                best = best.min(d2((lo + hi) / 2.0));
            }
        }
    }
    best.sqrt()
}

fn product_level_refuted() -> Outcome {
    let sc = Scenario::load("counterexample-y1y2").map_err(err)?;
    let g = ProductLevelInverse::default();
    let margin = sc.regmod.witness_margin;
    let mut lines = 0;
    let mut min_excess = f64::INFINITY;
    for kappa in [0.5, 1.0, 2.0] {
        for delta in [0.1, 0.5] {
            for zeta in [0.1, 0.5] {
                let (x, vbar) = product_level_witness(kappa, delta, zeta, margin);
                let x_delta = (delta / 2.0).min(zeta * zeta / 2.0);
                let v_expected = [2.0 * (kappa * zeta + x_delta) / zeta + margin, zeta / 2.0];
                ensure(x[0] == x_delta && vbar.as_slice() == v_expected, || {
                    format!("witness ({x:?}, {vbar:?}) differs from the construction")
                })?;
                let num = (x_delta - vbar[0] * vbar[1]).abs();
                let den = hyperbola_distance(x_delta, vbar[0], vbar[1]);
                let ratio = num / den;
                ensure(ratio > kappa, || format!("(kappa, delta, zeta) = ({kappa}, {delta}, {zeta}): ratio {ratio}"))?;
                let lib = evaluate_ratio(&g, &x, &vbar).map_err(err)?;
                ensure(lib.is_some_and(|r| r > ExtReal::Finite(kappa)), || {
                    format!("library ratio {lib:?} not above kappa = {kappa}")
                })?;
                min_excess = min_excess.min(ratio - kappa);
                lines += 1;
            }
        }
    }
    Ok(format!("{lines} combinations refuted; smallest ratio - kappa = {min_excess:.3e}"))
}

// ---------------------------------------------------------------- 5

/// Upper bound of `max_{|u| = 1} ‖Df(u)‖` for `f(x) = (xᵀQᵢx)ᵢ` on ℝ²: an
/// angle grid plus the Lipschitz slack of `u ↦ Df(u)` between grid points.
fn unit_jacobian_bound(forms: &[DMatrix<f64>]) -> f64 {
    let sym: Vec<DMatrix<f64>> = forms.iter().map(|q| q + q.transpose()).collect();
    let jac = |u: &DVector<f64>| DMatrix::from_fn(sym.len(), 2, |i, k| (&sym[i] * u)[k]);
    let slack_const = sym.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
    let steps = 4096;
    let mut best = 0.0f64;
    for i in 0..steps {
        let th = 2.0 * PI * i as f64 / steps as f64;
        let u = v(&[th.cos(), th.sin()]);
        best = best.max(jac(&u).singular_values().max());
    }
    best + slack_const * (PI / steps as f64)
}

fn perturbation_soundness() -> Outcome {
    let mut rng = index_rng(5, 0, 0);
    let (delta, zeta) = (0.05, 0.05);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let a = loop {
            let a = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            if a.singular_values().min() >= 0.3 {
                break a;
            }
        };
        let sv = a.singular_values();
        let (sigma, norm_a) = (sv.min(), sv.max());
        let raw: Vec<DMatrix<f64>> = (0..2).map(|_| DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() * 2.0 - 1.0)).collect();
        // Preimages reached from B(0, δ) stay in B(0, radius).
        let radius = delta + 2.0 / sigma * (zeta + (norm_a + sigma) * delta);
        let scale = 0.5 * sigma / (unit_jacobian_bound(&raw) * radius);
        let forms: Vec<DMatrix<f64>> = raw.iter().map(|q| q * scale).collect();
        let lipf = unit_jacobian_bound(&forms) * radius;
        ensure(lipf < sigma, || format!("scenario {k}: lip f = {lipf} not below regG^-1 = {sigma}"))?;
        let f = MapSpec::Quadratic {
            constant: None,
            linear: None,
            forms: forms.iter().map(|q| q.row_iter().map(|r| r.iter().copied().collect()).collect()).collect(),
        }
        .build(Ball::new(DVector::zeros(2), 2.0 * radius))
        .map_err(err)?;
        let fmap = SumMap::new(f, PolyhedralMultifunction::linear(&a)).map_err(err)?;
        let grid = SamplerSpec {
            seed: 500 + k,
            pair_budget: 1500,
            ..SamplerSpec::default()
        };
        let cert = estimate_regat(&fmap, &DVector::zeros(2), &DVector::zeros(2), delta, zeta, &grid).map_err(err)?;
        let sampled = cert.kappa.finite().ok_or_else(|| format!("scenario {k}: sampled ratio {}", cert.kappa))?;
        let bound = 1.0 / (sigma - lipf);
        ensure(sampled <= 1.05 * bound, || format!("scenario {k}: sampled ratio {sampled} above 1.05 x {bound}"))?;
        worst = worst.max(sampled / bound);
    }
    Ok(format!("20 scenarios; largest sampled ratio / bound = {worst:.4}"))
}

// ---------------------------------------------------------------- 6

struct CloudOracle {
    resolution: f64,
    diameter: f64,
}

/// Median nearest-neighbour distance and diameter by brute force.
fn brute_cloud(points: &[DVector<f64>]) -> CloudOracle {
    let n = points.len();
    let flat: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut nn = vec![f64::INFINITY; n];
    let mut diam = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d = d2(flat[i], flat[j]);
            nn[i] = nn[i].min(d);
            nn[j] = nn[j].min(d);
            diam = diam.max(d);
        }
    }
    let mut nn: Vec<f64> = nn.into_iter().map(f64::sqrt).collect();
    nn.sort_by(f64::total_cmp);
    CloudOracle {
        resolution: if n < 2 { 0.0 } else { nn[n / 2] },
        diameter: diam.sqrt(),
    }
}

fn brute_nearest(points: &[DVector<f64>], q: &DVector<f64>) -> f64 {
    points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

/// Defect and the brute-force pass threshold at each radius.
fn defect_table(sc: &Scenario, radii: &[f64]) -> Result<Vec<(f64, f64, f64, usize)>, String> {
    let fmap = sc.sum_map().map_err(err)?;
    let x0 = sc.x0();
    let mut rows = Vec::new();
    for &eps in radii {
        let cloud = sum_image_of_ball(&fmap, &x0, eps, &sc.sampler).map_err(err)?;
        let rep = convexity_defect(&cloud, &sc.sampler);
        let oracle = brute_cloud(&cloud.points);
        let threshold = (2.0 * oracle.resolution).max(0.02 * oracle.diameter);
        if let Some(w) = &rep.witness_pair {
            let d = brute_nearest(&cloud.points, &v(&w.midpoint));
            ensure(d == rep.defect, || format!("{} eps {eps}: witness distance {d} vs defect {}", sc.name, rep.defect))?;
        }
        rows.push((eps, rep.defect, threshold, cloud.len()));
    }
    Ok(rows)
}

fn certificate_soundness() -> Outcome {
    let names = ["polyak-demo", "tilted-polyak", "box-quadratic", "linear-process", "identity-process"];
    let mut notes = Vec::new();
    for name in names {
        let sc = Scenario::load(name).map_err(err)?;
        let cert = certify(&sc.space, &sc.sum_map().map_err(err)?, &sc.x0(), &sc.certify_options()).map_err(err)?;
        if name == "polyak-demo" {
            let expected = 0.999 * 1f64.min(1.0 / 6.0);
            ensure((cert.eps0 - expected).abs() <= 1e-12, || format!("polyak-demo eps0 {} vs {expected}", cert.eps0))?;
        }
        let radii: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * cert.eps0).collect();
        let mut worst = 0.0f64;
        for (eps, defect, threshold, n) in defect_table(&sc, &radii)? {
            ensure(n >= 10_000, || format!("{name}: only {n} image points at eps {eps}"))?;
            ensure(defect <= threshold, || format!("{name}: defect {defect:e} above threshold {threshold:e} at eps {eps}"))?;
            worst = worst.max(defect / threshold);
        }
        notes.push(format!("{name} eps0 {:.4} ({:.2})", cert.eps0, worst));
    }
    Ok(format!("defect/threshold: {}", notes.join(", ")))
}

// ---------------------------------------------------------------- 7

fn parabola_regression() -> Outcome {
    let sc = Scenario::load("counterexample-parabola").map_err(err)?;
    let mut ratios = Vec::new();
    for (eps, defect, threshold, _) in defect_table(&sc, &[0.1, 0.5, 1.0])? {
        ensure(defect > threshold, || format!("eps {eps}: defect {defect:e} not above threshold {threshold:e}"))?;
        ratios.push(format!("{eps}: {:.1}x", defect / threshold));
    }
    let res = certify_cmd(&sc).map_err(err)?;
    ensure(res.exit_code == 2 && res.outcome == "no-certificate", || {
        format!("certify gave {} (exit {})", res.outcome, res.exit_code)
    })?;
    Ok(format!("defect over threshold at {}; certify exits 2", ratios.join(", ")))
}

// ---------------------------------------------------------------- 8

fn polyak_consistency() -> Outcome {
    // (linear part, diagonal forms, x0, domain radius, σ_min of Df(x0), Lip(Df))
    type Case = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, f64, f64, f64);
    let cases: Vec<Case> = vec![
        (vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![0.0, 0.0], 1.0, 1.0, 2.0),
        (vec![vec![2.0, 0.0], vec![0.0, 0.5]], vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0], 0.8, 0.5, 2.0),
        (vec![vec![3.0]], vec![vec![0.5]], vec![0.5], 2.0, 3.5, 1.0),
        (vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]], vec![vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 0.0]], vec![0.0; 3], 1.5, 1.0, 4.0),
        (vec![vec![0.25, 0.0], vec![0.0, 4.0]], vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0], 1.0, 0.25, 0.0),
    ];
    let safety = 0.999;
    let mut eps0s = Vec::new();
    for (k, (linear, diag, x0, radius, sigma, lip)) in cases.into_iter().enumerate() {
        let n = x0.len();
        let forms = diag
            .iter()
            .map(|d| (0..n).map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect())
            .collect();
        let x0 = DVector::from_vec(x0);
        let f = MapSpec::Quadratic {
            constant: None,
            linear: Some(linear),
            forms,
        }
        .build(Ball::new(DVector::zeros(n), radius))
        .map_err(err)?;
        let space = SpaceSpec::euclidean(n);
        let got = polyak_radius(&f, &x0, &space, safety).map_err(err)?;
        // Linearization at x0: G = Df(x0) with modulus 1/σ, h = f − G with
        // Dh(x0) = 0 and Lip(Dh) = Lip(Df).
        let reg_g = 1.0 / sigma;
        let gap = 1.0 / reg_g - 0.0;
        let r = radius - x0.norm();
        let ing = Ingredients {
            c: 0.125,
            reg_g: ExtReal::Finite(reg_g),
            norm_df: 0.0,
            lip_df: lip,
            delta: if lip == 0.0 { ExtReal::PosInf } else { ExtReal::Finite(gap / (2.0 * lip)) },
            delta1: ExtReal::PosInf,
            delta2: ExtReal::PosInf,
            tau: ExtReal::Finite(r),
            r: ExtReal::Finite(r),
        };
        let want = certified_radius(&ing, safety).map_err(err)?;
        ensure(got.eps0.to_bits() == want.eps0.to_bits() && got.binding_term == want.binding_term, || {
            format!("case {k}: polyak {} ({:?}) vs decomposed {} ({:?})", got.eps0, got.binding_term, want.eps0, want.binding_term)
        })?;
        ensure(got.ingredients == want.ingredients, || format!("case {k}: ingredients {:?} vs {:?}", got.ingredients, want.ingredients))?;
        eps0s.push(format!("{:.4}", got.eps0));
    }
    Ok(format!("5 scenarios bit-identical, eps0 = [{}]", eps0s.join(", ")))
}

// ---------------------------------------------------------------- 9

fn disk_efficiency() -> Outcome {
    let sc = Scenario::load("disk-demo").map_err(err)?;
    let fmap = sc.sum_map().map_err(err)?;
    let cone = sc.cone().map_err(err)?;
    let x0 = sc.x0();
    let eps = sc.optimize.eps.ok_or("disk-demo has no optimize radius")?;
    let search = find_efficient_pair(&fmap, &x0, eps, &cone, &sc.sampler).map_err(err)?;
    let pair = &search.pair;
    let y_eps = v(&pair.y_eps);
    let x_eps = v(&pair.x_eps);

    // Orthant order: y dominates y_eps when y ≤ y_eps coordinatewise.
    let tol = 1e-6;
    let dominators = search
        .cloud
        .points
        .iter()
        .filter(|y| {
            let diff = &y_eps - *y;
            diff.amax() > tol && diff.iter().all(|d| *d >= -tol)
        })
        .count();
    ensure(dominators == 0, || format!("{dominators} sampled points dominate y_eps"))?;
    let lib_dominators = dominance_audit(&y_eps, &search.cloud.points, &cone).map_err(err)?;
    ensure(lib_dominators.is_empty(), || format!("library audit found {} dominators", lib_dominators.len()))?;

    let rel = ((&x_eps - &x0).norm() - eps).abs() / eps;
    ensure(rel <= 1e-3, || format!("x_eps is off the sphere by {rel:e} (relative)"))?;

    let scal = scalarize(pair, &fmap, &x0, &cone, &search.cloud, 10_000, &sc.sampler).map_err(err)?;
    let ystar = v(&scal.ystar);
    let target = v(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
    let off = (&ystar - &target).norm();
    ensure(off <= 1e-2, || format!("y* = {:?} is {off:e} from (1, 1)/sqrt 2", scal.ystar))?;

    // L(x, y*) = ⟨y*, x⟩ for the identity plus the zero process; a polar
    // grid of 100 radii (outermost on the sphere) by 100 angles.
    let lag = |x: &DVector<f64>| ystar.dot(x);
    let mut values = Vec::with_capacity(10_000);
    for i in 0..100 {
        let rad = eps * ((i + 1) as f64 / 100.0).sqrt();
        for j in 0..100 {
            let th = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / 100.0;
            values.push(lag(&(&x0 + v(&[th.cos(), th.sin()]) * rad)));
        }
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let at_pair = lag(&x_eps);
    let slack = 1e-4 * (hi - lo);
    ensure(lo >= at_pair - slack, || format!("grid minimum {lo} below L(x_eps) = {at_pair} - {slack:e}"))?;
    ensure(scal.grid.passed && scal.grid.points >= 10_000, || format!("library grid audit {:?}", scal.grid))?;
    Ok(format!(
        "{} cloud points, 0 dominators; x_eps off sphere {rel:.1e}; y* off target {off:.1e}; L(x_eps) - grid min = {:.1e}",
        search.cloud.len(),
        at_pair - lo
    ))
}

// ---------------------------------------------------------------- 10

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| -> Result<_, String> {
            let dir = tempfile::tempdir().map_err(err)?;
            let report = repro(dir.path(), None, None).map_err(err)?;
            ensure(report.all_matched, || "repro reported mismatches".into())?;
            let mut files = BTreeMap::new();
            collect_files(dir.path(), dir.path(), &mut files).map_err(err)?;
            Ok(files)
        })
        .collect::<Result<_, _>>()?;
    ensure(runs[0].keys().eq(runs[1].keys()), || "the two runs wrote different file sets".into())?;
    for (name, bytes) in &runs[0] {
        ensure(&runs[1][name] == bytes, || format!("{name} differs between runs"))?;
    }
    let total: usize = runs[0].values().map(Vec::len).sum();
    Ok(format!("{} files ({total} bytes) byte-identical across two runs", runs[0].len()))
}

// ----------------------------------------------------------------

/// Name, time limit in seconds, check.
type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("modulus identities", Some(1), modulus_identities),
        ("midpoint ball stays in the ball", Some(10), midpoint_ball),
        ("quadratic midpoint defect bound", Some(5), quadratic_defect_bound),
        ("product-level regularity refuted", Some(5), product_level_refuted),
        ("perturbation bound soundness", Some(60), perturbation_soundness),
        ("certified radii give convex images", Some(120), certificate_soundness),
        ("parabola images are not convex", Some(10), parabola_regression),
        ("single-valued radius consistency", Some(5), polyak_consistency),
        ("disk efficient pair and scalarizer", Some(60), disk_efficiency),
        ("repro determinism", None, determinism),
    ];
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let late = limit.is_some_and(|s| took > Duration::from_secs(s));
        let limit_text = limit.map_or(String::new(), |s| format!(" / {s} s"));
        let (mark, detail) = match (&outcome, late) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("over time limit; {d}")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if mark == "FAIL" {
            failures += 1;
        }
        println!("[{:>2}] {mark} {name:<38} {:>7.2} s{limit_text:<7} {detail}", i + 1, took.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
