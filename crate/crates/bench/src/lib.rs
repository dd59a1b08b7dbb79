//! Fixtures shared by the benchmarks.

use ballconv_core::{Ball, MapSpec, PolyhedralMultifunction, SamplerSpec, SumMap};
use nalgebra::{DMatrix, DVector};

/// `x ↦ (x₁ + x₂², x₂)` with the zero process on the unit disk.
pub fn polyak_map() -> SumMap {
    let f = MapSpec::Quadratic {
        constant: None,
        linear: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        forms: vec![vec![vec![0.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
    }
    .build(Ball::new(DVector::zeros(2), 1.0))
    .expect("valid map");
    SumMap::new(f, PolyhedralMultifunction::zero_process(2, 2)).expect("matching dimensions")
}

/// Linear map `diag(0.5, 1)` plus the translated unit box.
pub fn box_map() -> SumMap {
    let f = MapSpec::Linear {
        matrix: vec![vec![0.5, 0.0], vec![0.0, 1.0]],
        offset: None,
    }
    .build(Ball::new(DVector::zeros(2), 1.0))
    .expect("valid map");
    SumMap::new(f, PolyhedralMultifunction::translated_box(2, 0.0, 1.0)).expect("matching dimensions")
}

pub fn identity_process() -> PolyhedralMultifunction {
    PolyhedralMultifunction::linear(&DMatrix::identity(2, 2))
}

pub fn sampler(n_x: usize, n_y: usize) -> SamplerSpec {
    SamplerSpec {
        n_x,
        n_y,
        ..SamplerSpec::default()
    }
}
