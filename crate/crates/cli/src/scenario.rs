//! Scenario files: one TOML document per problem instance.

use std::path::Path;

use ballconv_core::multifunction::{PolyhedralMultifunction, ProductLevelInverse, SumMap};
use ballconv_core::optimize::OrderingCone;
use ballconv_core::smooth::{matrix_from_rows, Ball, MapSpec, SmoothMap};
use ballconv_core::{CertifyOptions, SamplerSpec, SpaceSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::builtin;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub x0: Vec<f64>,
    pub space: SpaceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    pub multifunction: MultifunctionSpec,
    #[serde(default)]
    pub radii: Radii,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone: Option<ConeSpec>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub regmod: RegmodSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Defaults to `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
}

/// Graph `{(x, y) : A·x + B·y ≤ b}` or one of its named special cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MultifunctionSpec {
    Polyhedral {
        x_coef: Vec<Vec<f64>>,
        y_coef: Vec<Vec<f64>>,
        rhs: Vec<f64>,
    },
    /// `x ↦ {A·x}`.
    Linear { matrix: Vec<Vec<f64>> },
    /// `x ↦ {0}` with values in the target space of the map.
    Zero,
    /// `x ↦ x + [lo, hi]^n`.
    TranslatedBox { lo: f64, hi: f64 },
    /// `x ↦ [lo, hi]^m` with `m` the target dimension of the map.
    ConstantBox { lo: f64, hi: f64 },
    /// `x ↦ {y ∈ ℝ² : y₁y₂ = x}` (regularity analysis only).
    ProductLevel {
        #[serde(default = "default_half_width")]
        sample_half_width: f64,
    },
}

fn default_half_width() -> f64 {
    ProductLevelInverse::default().sample_half_width
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Radii {
    pub r: Option<f64>,
    pub tau: Option<f64>,
    pub delta: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSpec {
    pub generators: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_generators: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub safety: f64,
    pub reg_pairs: usize,
    /// Ball points of the Lagrangian minimality audit.
    pub grid_points: usize,
    pub probe_delta: Option<f64>,
    pub probe_zeta: Option<f64>,
}

impl Default for Overrides {
    fn default() -> Self {
        let opts = CertifyOptions::default();
        Self {
            safety: opts.safety,
            reg_pairs: opts.reg_pairs,
            grid_points: 10_000,
            probe_delta: None,
            probe_zeta: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Radii to probe; defaults to fractions of the certified radius.
    pub eps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    /// Defaults to the certified radius.
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegmodSection {
    /// Defaults to `x0`.
    pub xbar: Option<Vec<f64>>,
    /// Defaults to a point of `G(x̄)`.
    pub ybar: Option<Vec<f64>>,
    pub delta: f64,
    pub zeta: f64,
    pub witness_kappas: Vec<f64>,
    pub witness_deltas: Vec<f64>,
    pub witness_zetas: Vec<f64>,
    pub witness_margin: f64,
}

impl Default for RegmodSection {
    fn default() -> Self {
        Self {
            xbar: None,
            ybar: None,
            delta: 0.1,
            zeta: 0.1,
            witness_kappas: Vec::new(),
            witness_deltas: Vec::new(),
            witness_zetas: Vec::new(),
            witness_margin: 1e-3,
        }
    }
}

/// `G` as used by a command.
pub enum BuiltMultifunction {
    Polyhedral(PolyhedralMultifunction),
    ProductLevel(ProductLevelInverse),
}

impl Scenario {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Reads a scenario file, or a built-in scenario when `spec` names one
    /// and is not an existing path.
    pub fn load(spec: &str) -> CliResult<Self> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            return Self::from_toml(&text);
        }
        match builtin::scenario_text(spec) {
            Some(text) => Self::from_toml(text),
            None => Err(CliError::Config(format!(
                "no scenario file or built-in scenario named `{spec}` (built-ins: {})",
                builtin::names().join(", ")
            ))),
        }
    }

    fn validate(&self) -> CliResult<()> {
        let n = self.space.dim();
        if self.x0.len() != n {
            return Err(CliError::Config(format!("x0 has {} entries but the space has dimension {n}", self.x0.len())));
        }
        if let Some(map) = &self.map {
            let (dim_in, _) = map.dims()?;
            if dim_in != n {
                return Err(CliError::Config(format!("map has {dim_in} inputs but the space has dimension {n}")));
            }
        }
        if let Some(d) = &self.domain {
            if let Some(c) = &d.center {
                if c.len() != n {
                    return Err(CliError::Config("domain center has the wrong dimension".into()));
                }
            }
        }
        if !(self.overrides.safety > 0.0 && self.overrides.safety < 1.0) {
            return Err(CliError::Config(format!("safety {} outside (0, 1)", self.overrides.safety)));
        }
        Ok(())
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.sampler.seed = s;
        }
        self
    }

    pub fn smooth_map(&self) -> CliResult<SmoothMap> {
        let map = self
            .map
            .as_ref()
            .ok_or_else(|| CliError::Config("scenario has no [map] section".into()))?;
        let domain = self
            .domain
            .as_ref()
            .ok_or_else(|| CliError::Config("scenario has no [domain] section".into()))?;
        let center = DVector::from_vec(domain.center.clone().unwrap_or_else(|| self.x0.clone()));
        Ok(map.build(Ball::new(center, domain.radius))?)
    }

    fn target_dim(&self) -> CliResult<usize> {
        match &self.map {
            Some(m) => Ok(m.dims()?.1),
            None => Err(CliError::Config("the target dimension needs a [map] section".into())),
        }
    }

    pub fn multifunction(&self) -> CliResult<BuiltMultifunction> {
        let n = self.space.dim();
        Ok(BuiltMultifunction::Polyhedral(match &self.multifunction {
            MultifunctionSpec::Polyhedral { x_coef, y_coef, rhs } => {
                PolyhedralMultifunction::new(matrix_from_rows(x_coef, "x_coef")?, matrix_from_rows(y_coef, "y_coef")?, DVector::from_vec(rhs.clone()))?
            }
            MultifunctionSpec::Linear { matrix } => {
                let a: DMatrix<f64> = matrix_from_rows(matrix, "multifunction matrix")?;
                if a.ncols() != n {
                    return Err(CliError::Config(format!("multifunction matrix has {} columns for dimension {n}", a.ncols())));
                }
                PolyhedralMultifunction::linear(&a)
            }
            MultifunctionSpec::Zero => PolyhedralMultifunction::zero_process(n, self.target_dim()?),
            MultifunctionSpec::TranslatedBox { lo, hi } => PolyhedralMultifunction::translated_box(n, *lo, *hi),
            MultifunctionSpec::ConstantBox { lo, hi } => PolyhedralMultifunction::constant_box(n, self.target_dim()?, *lo, *hi),
            MultifunctionSpec::ProductLevel { sample_half_width } => {
                if n != 1 {
                    return Err(CliError::Config("the product-level map needs a one-dimensional space".into()));
                }
                return Ok(BuiltMultifunction::ProductLevel(ProductLevelInverse {
                    sample_half_width: *sample_half_width,
                }));
            }
        }))
    }

    pub fn sum_map(&self) -> CliResult<SumMap> {
        let f = self.smooth_map()?;
        match self.multifunction()? {
            BuiltMultifunction::Polyhedral(g) => Ok(SumMap::new(f, g)?),
            BuiltMultifunction::ProductLevel(_) => Err(CliError::Config(
                "the product-level map is not polyhedral; only `regmod` supports it".into(),
            )),
        }
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            r: self.radii.r,
            tau: self.radii.tau,
            delta: self.radii.delta,
            delta1: self.radii.delta1,
            delta2: self.radii.delta2,
            safety: self.overrides.safety,
            probe_delta: self.overrides.probe_delta,
            probe_zeta: self.overrides.probe_zeta,
            reg_pairs: self.overrides.reg_pairs,
            sampler: self.sampler.clone(),
        }
    }

    pub fn cone(&self) -> CliResult<OrderingCone> {
        let spec = self
            .cone
            .as_ref()
            .ok_or_else(|| CliError::Config("scenario has no [cone] section; `optimize` needs an ordering cone".into()))?;
        let cone = match &spec.dual_generators {
            Some(d) => OrderingCone::with_dual_generators(spec.generators.clone(), d.clone())?,
            None => OrderingCone::new(spec.generators.clone())?,
        };
        Ok(cone)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for name in builtin::names() {
            let sc = Scenario::load(name).unwrap();
            assert_eq!(&sc.name, name);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = builtin::scenario_text("polyak-demo").unwrap().replace("[domain]", "[domain]\nbogus = 1");
        assert!(matches!(Scenario::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = builtin::scenario_text("polyak-demo").unwrap().replace("x0 = [0.0, 0.0]", "x0 = [0.0]");
        assert!(matches!(Scenario::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn product_level_is_not_a_sum_map() {
        let sc = Scenario::load("counterexample-y1y2").unwrap();
        assert!(sc.sum_map().is_err());
        assert!(matches!(sc.multifunction().unwrap(), BuiltMultifunction::ProductLevel(_)));
    }
}
