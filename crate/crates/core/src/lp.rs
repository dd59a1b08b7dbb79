//! Thin wrapper over the `microlp` simplex solver for dense inequality LPs.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: DVector<f64> },
    Unbounded,
    Infeasible,
}

/// `min cᵀy` subject to `M·y ≤ d` and optional per-variable bounds
/// (free variables by default).
pub fn minimize(
    c: &DVector<f64>,
    m: &DMatrix<f64>,
    d: &DVector<f64>,
    bounds: Option<&[(f64, f64)]>,
) -> Result<LpOutcome> {
    solve(c, &[(m, d, ComparisonOp::Le)], bounds)
}

/// `min cᵀy` subject to `E·y = e`, `y ≥ 0`-style bounds supplied by caller.
pub fn minimize_eq(
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    rhs: &DVector<f64>,
    bounds: Option<&[(f64, f64)]>,
) -> Result<LpOutcome> {
    solve(c, &[(e, rhs, ComparisonOp::Eq)], bounds)
}

fn solve(
    c: &DVector<f64>,
    blocks: &[(&DMatrix<f64>, &DVector<f64>, ComparisonOp)],
    bounds: Option<&[(f64, f64)]>,
) -> Result<LpOutcome> {
    let n = c.len();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..n)
        .map(|j| {
            let b = bounds.map(|b| b[j]).unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            problem.add_var(c[j], b)
        })
        .collect();
    for (m, d, op) in blocks {
        if m.ncols() != n || m.nrows() != d.len() {
            return Err(Error::Dimension(format!(
                "lp: constraint block {}x{} with rhs {} for {} variables",
                m.nrows(),
                m.ncols(),
                d.len(),
                n
            )));
        }
        for i in 0..m.nrows() {
            let terms: Vec<_> = (0..n)
                .filter(|&j| m[(i, j)] != 0.0)
                .map(|j| (vars[j], m[(i, j)]))
                .collect();
            if terms.is_empty() {
                let ok = match op {
                    ComparisonOp::Le => 0.0 <= d[i] + 1e-12,
                    ComparisonOp::Ge => 0.0 >= d[i] - 1e-12,
                    ComparisonOp::Eq => d[i].abs() <= 1e-12,
                };
                if !ok {
                    return Ok(LpOutcome::Infeasible);
                }
                continue;
            }
            problem.add_constraint(terms.as_slice(), *op, d[i]);
        }
    }
    match problem.solve() {
        Ok(outcome) => {
            let sol = outcome
                .into_solution()
                .map_err(|_| Error::numerical("lp: solve interrupted", f64::NAN))?;
            let point = DVector::from_iterator(n, vars.iter().map(|&v| sol.var_value_raw(v)));
            Ok(LpOutcome::Optimal {
                value: sol.objective(),
                point,
            })
        }
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(Error::numerical(format!("lp: {e}"), f64::NAN)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]),
        )
    }

    #[test]
    fn box_minimum_at_corner() {
        let (m, d) = unit_box();
        match minimize(&DVector::from_vec(vec![1.0, 1.0]), &m, &d, None).unwrap() {
            LpOutcome::Optimal { value, point } => {
                assert!(value.abs() < 1e-12);
                assert!(point.norm() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded_and_infeasible() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let d = DVector::from_vec(vec![0.0]);
        assert_eq!(
            minimize(&DVector::from_vec(vec![1.0, 0.0]), &m, &d, None).unwrap(),
            LpOutcome::Unbounded
        );
        let m = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let d = DVector::from_vec(vec![0.0, -1.0]);
        assert_eq!(minimize(&DVector::from_vec(vec![0.0]), &m, &d, None).unwrap(), LpOutcome::Infeasible);
    }
}
