//! The five commands. Each returns a [`CommandResult`] and leaves writing to
//! the caller.

use ballconv_core::image::convexity_defect;
use ballconv_core::lp::LpOutcome;
use ballconv_core::multifunction::{sum_image_of_ball, PointCloud, PolyhedralMultifunction, SetValuedMap};
use ballconv_core::optimize::{dominance_audit, find_efficient_pair, scalarize, AUDIT_TOL, BOUNDARY_RTOL, GRID_RTOL};
use ballconv_core::regularity::{estimate_regat, evaluate_ratio, product_level_witness, reg_for_set_sublinear};
use ballconv_core::{certify, ConvexityCertificate, Error as CoreError, ExtReal};
use nalgebra::DVector;
use serde_json::json;

use crate::error::{is_config_error, CliError, CliResult};
use crate::report::{coord_header, csv_text, Artifact, CommandResult, Summary};
use crate::scenario::{BuiltMultifunction, Scenario};

/// Exit code of a positive result.
pub const EXIT_OK: i32 = 0;
/// Configuration or input error.
pub const EXIT_CONFIG: i32 = 1;
/// The analysis ran but produced no certificate (or refuted one).
pub const EXIT_NEGATIVE: i32 = 2;
/// A sampled image failed the convexity check.
pub const EXIT_VERIFY_FAILED: i32 = 3;

/// Fractions of the certified radius probed by `verify-image` by default.
pub const DEFAULT_EPS_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

fn effective(sc: &Scenario) -> serde_json::Value {
    json!({
        "sampler": sc.sampler,
        "radii": sc.radii,
        "overrides": sc.overrides,
        "tolerances": {
            "audit_tol": AUDIT_TOL,
            "boundary_rtol": BOUNDARY_RTOL,
            "grid_rtol": GRID_RTOL,
            "defect_threshold": "max(2*resolution, 0.02*diameter)",
        },
    })
}

/// Splits certification errors into configuration errors (returned as
/// `Err`) and analysis failures (returned as a reason).
fn try_certify(sc: &Scenario) -> CliResult<Result<ConvexityCertificate, String>> {
    let fmap = sc.sum_map()?;
    match certify(&sc.space, &fmap, &sc.x0(), &sc.certify_options()) {
        Ok(cert) => Ok(Ok(cert)),
        Err(e) if is_config_error(&e) => Err(e.into()),
        Err(CoreError::NoCertificate(reason)) => Ok(Err(reason)),
        Err(e) => Ok(Err(e.to_string())),
    }
}

pub fn certify_cmd(sc: &Scenario) -> CliResult<CommandResult> {
    let result = try_certify(sc)?;
    let (outcome, exit_code, summary, body) = match result {
        Ok(cert) => (
            "certificate",
            EXIT_OK,
            Summary {
                eps0: Some(cert.eps0),
                ..Summary::default()
            },
            json!({ "effective": effective(sc), "certificate": cert }),
        ),
        Err(reason) => (
            "no-certificate",
            EXIT_NEGATIVE,
            Summary {
                reason: Some(reason.clone()),
                ..Summary::default()
            },
            json!({ "effective": effective(sc), "certificate": null, "reason": reason }),
        ),
    };
    Ok(CommandResult {
        command: "certify",
        scenario: sc.name.clone(),
        outcome: outcome.into(),
        exit_code,
        body,
        summary,
        artifacts: Vec::new(),
    })
}

fn image_artifacts(cloud: &PointCloud, dim_x: usize) -> CliResult<Vec<Artifact>> {
    let dim_y = cloud.dim();
    let mut header = coord_header("x", dim_x);
    header.extend(coord_header("y", dim_y));
    let rows = cloud.points.iter().zip(&cloud.origins).map(|(y, x)| {
        let mut row = x.as_slice().to_vec();
        row.extend_from_slice(y.as_slice());
        row
    });
    let sidecar = json!({
        "schema": crate::report::SCHEMA_VERSION,
        "seed": cloud.meta.seed,
        "eps": cloud.meta.eps,
        "n_x": cloud.meta.n_x,
        "n_y": cloud.meta.n_y,
        "n_points": cloud.meta.n_points,
        "dim_x": dim_x,
        "dim_y": dim_y,
    });
    Ok(vec![
        Artifact {
            file: "image_points.csv".into(),
            contents: csv_text(&header, rows)?,
        },
        Artifact {
            file: "image_points.json".into(),
            contents: crate::report::to_pretty(&sidecar)?,
        },
    ])
}

/// Defect curve over `eps_list` (or the scenario's list, or fractions of
/// the certified radius). Radii up to the certified radius must pass; with
/// no certificate every radius must pass.
pub fn verify_cmd(sc: &Scenario, eps_list: Option<&[f64]>) -> CliResult<CommandResult> {
    let fmap = sc.sum_map()?;
    let x0 = sc.x0();
    let cert = try_certify(sc)?;
    let eps0 = cert.as_ref().ok().map(|c| c.eps0);
    let eps: Vec<f64> = match (eps_list, &sc.verify.eps, eps0) {
        (Some(list), _, _) => list.to_vec(),
        (None, Some(list), _) => list.clone(),
        (None, None, Some(e0)) => DEFAULT_EPS_FRACTIONS.iter().map(|f| f * e0).collect(),
        (None, None, None) => {
            return Err(CliError::Config(
                "no radii to verify: pass --eps or [verify] eps (the scenario has no certificate)".into(),
            ))
        }
    };
    let mut reports = Vec::with_capacity(eps.len());
    let mut judged = Vec::with_capacity(eps.len());
    let mut last_cloud = None;
    for &e in &eps {
        let cloud = sum_image_of_ball(&fmap, &x0, e, &sc.sampler)?;
        reports.push(convexity_defect(&cloud, &sc.sampler));
        judged.push(eps0.is_none_or(|e0| e <= e0 * (1.0 + 1e-12)));
        last_cloud = Some(cloud);
    }
    let failed: Vec<f64> = reports
        .iter()
        .zip(&judged)
        .filter(|(r, &j)| j && !r.passed)
        .map(|(r, _)| r.eps)
        .collect();
    let exit_code = if failed.is_empty() { EXIT_OK } else { EXIT_VERIFY_FAILED };
    let mut artifacts = vec![Artifact {
        file: "defect_curve.csv".into(),
        contents: csv_text(&["eps".into(), "defect".into()], reports.iter().map(|r| vec![r.eps, r.defect]))?,
    }];
    if let Some(cloud) = &last_cloud {
        artifacts.extend(image_artifacts(cloud, x0.len())?);
    }
    let body = json!({
        "effective": effective(sc),
        "certified_eps0": eps0,
        "certificate_reason": cert.as_ref().err(),
        "eps": eps,
        "judged": judged,
        "failed_eps": failed,
        "curve": reports,
    });
    Ok(CommandResult {
        command: "verify-image",
        scenario: sc.name.clone(),
        outcome: if exit_code == EXIT_OK { "pass" } else { "fail" }.into(),
        exit_code,
        body,
        summary: Summary {
            eps0,
            reason: (!failed.is_empty()).then(|| format!("defect above threshold at eps = {failed:?}")),
            ..Summary::default()
        },
        artifacts,
    })
}

fn default_ybar(g: &PolyhedralMultifunction, xbar: &DVector<f64>) -> CliResult<DVector<f64>> {
    let fiber = g.fiber(xbar)?;
    if fiber.empty {
        return Err(CliError::Config("G(xbar) is empty".into()));
    }
    let zero = DVector::zeros(g.dim_y());
    let bounds_free = fiber.set.minimize_linear(&zero)?;
    match bounds_free {
        LpOutcome::Optimal { point, .. } => Ok(point),
        _ => Err(CliError::Config("could not pick a point of G(xbar)".into())),
    }
}

/// Regularity modulus of `G` alone: analytic for convex processes, sampled
/// otherwise, plus the explicit witness table when configured.
pub fn regmod_cmd(sc: &Scenario) -> CliResult<CommandResult> {
    let rm = &sc.regmod;
    let xbar = DVector::from_vec(rm.xbar.clone().unwrap_or_else(|| sc.x0.clone()));
    if xbar.len() != sc.space.dim() {
        return Err(CliError::Config("regmod xbar has the wrong dimension".into()));
    }
    let g = sc.multifunction()?;
    let mut analytic = None;
    let (sampled, ybar) = match &g {
        BuiltMultifunction::Polyhedral(pg) => {
            let ybar = match &rm.ybar {
                Some(y) => DVector::from_vec(y.clone()),
                None => default_ybar(pg, &xbar)?,
            };
            if pg.is_sublinear() {
                analytic = Some(reg_for_set_sublinear(pg, &xbar)?);
            }
            (estimate_regat(pg, &xbar, &ybar, rm.delta, rm.zeta, &sc.sampler)?, ybar)
        }
        BuiltMultifunction::ProductLevel(pl) => {
            let ybar = DVector::from_vec(rm.ybar.clone().unwrap_or_else(|| vec![0.0, 0.0]));
            (estimate_regat(pl, &xbar, &ybar, rm.delta, rm.zeta, &sc.sampler)?, ybar)
        }
    };
    if ybar.len() != sampled_dim_y(&g) {
        return Err(CliError::Config("regmod ybar has the wrong dimension".into()));
    }

    let mut witnesses = Vec::new();
    for &kappa in &rm.witness_kappas {
        for &delta in &rm.witness_deltas {
            for &zeta in &rm.witness_zetas {
                let (x, v) = product_level_witness(kappa, delta, zeta, rm.witness_margin);
                let ratio = match &g {
                    BuiltMultifunction::Polyhedral(pg) => evaluate_ratio(pg, &x, &v)?,
                    BuiltMultifunction::ProductLevel(pl) => evaluate_ratio(pl, &x, &v)?,
                };
                let exceeds = ratio.is_some_and(|r| r > ExtReal::Finite(kappa));
                witnesses.push(json!({
                    "kappa": kappa, "delta": delta, "zeta": zeta,
                    "x": x.as_slice(), "v": v.as_slice(),
                    "ratio": ratio, "exceeds_kappa": exceeds,
                }));
            }
        }
    }
    let all_witnesses_exceed = !witnesses.is_empty() && witnesses.iter().all(|w| w["exceeds_kappa"] == true);
    let refuted = sampled.is_refuted() || all_witnesses_exceed || analytic == Some(ExtReal::PosInf);
    let kappa = match analytic {
        Some(ExtReal::Finite(k)) => Some(k),
        _ => sampled.kappa.finite().filter(|_| !refuted),
    };
    let body = json!({
        "effective": effective(sc),
        "xbar": xbar.as_slice(),
        "ybar": ybar.as_slice(),
        "analytic_kappa": analytic,
        "sampled": sampled,
        "witnesses": witnesses,
        "all_witnesses_exceed": all_witnesses_exceed,
    });
    Ok(CommandResult {
        command: "regmod",
        scenario: sc.name.clone(),
        outcome: if refuted { "refuted" } else { "certified" }.into(),
        exit_code: if refuted { EXIT_NEGATIVE } else { EXIT_OK },
        body,
        summary: Summary {
            kappa,
            reason: refuted.then(|| "regularity inequality violated by a sampled or constructed pair".to_string()),
            ..Summary::default()
        },
        artifacts: Vec::new(),
    })
}

fn sampled_dim_y(g: &BuiltMultifunction) -> usize {
    match g {
        BuiltMultifunction::Polyhedral(pg) => pg.dim_y(),
        BuiltMultifunction::ProductLevel(pl) => pl.dim_y(),
    }
}

/// Efficient pair, scalarizer and audits at radius `eps` (the first entry of
/// `eps_list`, else the scenario value, else the certified radius).
pub fn optimize_cmd(sc: &Scenario, eps_list: Option<&[f64]>) -> CliResult<CommandResult> {
    let cone = sc.cone()?;
    let fmap = sc.sum_map()?;
    let x0 = sc.x0();
    let cert = try_certify(sc)?;
    let eps0 = cert.as_ref().ok().map(|c| c.eps0);
    let eps = match (eps_list.and_then(|l| l.first().copied()), sc.optimize.eps, eps0) {
        (Some(e), _, _) | (None, Some(e), _) | (None, None, Some(e)) => e,
        (None, None, None) => {
            return Err(CliError::Config(
                "no radius: pass --eps or [optimize] eps (the scenario has no certificate)".into(),
            ))
        }
    };
    let mut warnings = Vec::new();
    match eps0 {
        Some(e0) if eps > e0 => warnings.push(format!("eps = {eps} exceeds the certified radius {e0}")),
        None => warnings.push("no convexity certificate for this scenario".to_string()),
        _ => {}
    }
    let fail = |outcome: &str, reason: String, x: Option<Vec<f64>>, warnings: Vec<String>| CommandResult {
        command: "optimize",
        scenario: sc.name.clone(),
        outcome: outcome.into(),
        exit_code: EXIT_NEGATIVE,
        body: json!({
            "effective": effective(sc),
            "eps_requested": eps,
            "certified_eps0": eps0,
            "warnings": warnings,
            "reason": reason,
            "violating_x": x,
        }),
        summary: Summary {
            eps0,
            reason: Some(reason),
            ..Summary::default()
        },
        artifacts: Vec::new(),
    };
    let search = match find_efficient_pair(&fmap, &x0, eps, &cone, &sc.sampler) {
        Ok(s) => s,
        Err(e) if is_config_error(&e) => return Err(e.into()),
        Err(e) => return Ok(fail("inconclusive", e.to_string(), None, warnings)),
    };
    if search.effective_eps < eps {
        warnings.push(format!("radius reduced to {} to stay in the domain", search.effective_eps));
    }
    let scal = match scalarize(&search.pair, &fmap, &x0, &cone, &search.cloud, sc.overrides.grid_points, &sc.sampler) {
        Ok(s) => s,
        Err(CoreError::ScalarizationFailure { x, reason }) => {
            return Ok(fail("scalarization-failure", reason, Some(x), warnings))
        }
        Err(e) if is_config_error(&e) => return Err(e.into()),
        Err(e) => return Ok(fail("scalarization-failure", e.to_string(), None, warnings)),
    };
    let mut pair = search.pair.clone();
    pair.scalarizer = Some(scal.ystar.clone());
    let y_eps = DVector::from_vec(pair.y_eps.clone());
    let dominators = dominance_audit(&y_eps, &search.cloud.points, &cone)?;
    let audit_ok = dominators.is_empty();
    warnings.extend(scal.warnings.iter().cloned());

    let m = cone.dim();
    let pareto = Artifact {
        file: "pareto_points.csv".into(),
        contents: csv_text(
            &coord_header("y", m),
            search.front.iter().map(|&i| search.cloud.points[i].as_slice().to_vec()),
        )?,
    };
    let body = json!({
        "effective": effective(sc),
        "eps_requested": eps,
        "effective_eps": search.effective_eps,
        "certified_eps0": eps0,
        "warnings": warnings,
        "cone": {
            "generators": cone.generators().iter().map(|g| g.as_slice().to_vec()).collect::<Vec<_>>(),
            "dual_generators": cone.dual_generators().iter().map(|g| g.as_slice().to_vec()).collect::<Vec<_>>(),
        },
        "pair": pair,
        "scalarization": scal,
        "dominance_audit": {
            "tolerance": AUDIT_TOL,
            "cloud_points": search.cloud.len(),
            "dominators": dominators.len(),
            "passed": audit_ok,
        },
        "front_size": search.front.len(),
        "local_bound": search.bound,
    });
    Ok(CommandResult {
        command: "optimize",
        scenario: sc.name.clone(),
        outcome: if audit_ok { "efficient-pair" } else { "audit-failed" }.into(),
        exit_code: if audit_ok { EXIT_OK } else { EXIT_NEGATIVE },
        body,
        summary: Summary {
            eps0,
            ystar: Some(scal.ystar),
            x_eps: Some(pair.x_eps),
            reason: (!audit_ok).then(|| format!("{} sampled dominators", dominators.len())),
            ..Summary::default()
        },
        artifacts: vec![pareto],
    })
}
