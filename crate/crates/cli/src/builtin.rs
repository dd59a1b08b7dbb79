//! Scenarios and expected outcomes shipped with the binary.

use serde::Deserialize;

const SCENARIOS: &[(&str, &str)] = &[
    ("polyak-demo", include_str!("../scenarios/polyak-demo.toml")),
    ("tilted-polyak", include_str!("../scenarios/tilted-polyak.toml")),
    ("box-quadratic", include_str!("../scenarios/box-quadratic.toml")),
    ("linear-process", include_str!("../scenarios/linear-process.toml")),
    ("identity-process", include_str!("../scenarios/identity-process.toml")),
    ("counterexample-parabola", include_str!("../scenarios/counterexample-parabola.toml")),
    ("counterexample-y1y2", include_str!("../scenarios/counterexample-y1y2.toml")),
    ("disk-demo", include_str!("../scenarios/disk-demo.toml")),
    ("scalar-demo", include_str!("../scenarios/scalar-demo.toml")),
];

const EXPECTATIONS: &str = include_str!("../scenarios/expectations.toml");

pub fn names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(n, _)| *n).collect()
}

pub fn scenario_text(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// One row of the expectations table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub scenario: String,
    pub command: String,
    pub exit_code: i32,
    pub outcome: Option<String>,
    pub reason_contains: Option<String>,
    pub eps0: Option<f64>,
    pub kappa: Option<f64>,
    pub ystar: Option<Vec<f64>>,
    pub x_eps: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Deserialize)]
struct Table {
    expect: Vec<Expectation>,
}

pub fn expectations() -> Vec<Expectation> {
    toml::from_str::<Table>(EXPECTATIONS)
        .expect("shipped expectations table parses")
        .expect
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_refers_to_builtins() {
        for e in expectations() {
            assert!(scenario_text(&e.scenario).is_some(), "{}", e.scenario);
        }
    }
}
