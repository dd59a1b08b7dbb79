//! Local convexity of images of balls under sums of smooth maps and
//! metrically regular multifunctions, with certification, sampled image
//! verification and set-valued optimization on top.

// `!(x > 0.0)` style guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::{Deserialize, Serialize};

pub mod certifier;
pub mod error;
pub mod ext;
pub mod image;
pub mod lp;
pub mod multifunction;
pub mod optimize;
pub mod polyhedron;
pub mod qp;
pub mod regularity;
pub mod sampling;
pub mod smooth;
pub mod space;

pub use certifier::{certified_radius, certify, polyak_radius, BindingTerm, CertifyOptions, ConvexityCertificate, Ingredients};
pub use error::{Error, Result};
pub use ext::ExtReal;
pub use image::{boundary_preimage_check, convexity_defect, defect_curve, DefectReport};
pub use multifunction::{sum_image_of_ball, PointCloud, PolyhedralMultifunction, ProductLevelInverse, SetValuedMap, SumMap};
pub use optimize::{find_efficient_pair, lagrangian, local_boundedness_check, scalarize, EfficientPair, OrderingCone};
pub use polyhedron::Polyhedron;
pub use regularity::{CertificateKind, RegularityCertificate, Witness};
pub use sampling::SamplerSpec;
pub use smooth::{derivative, lip_derivative, midpoint_defect, operator_norm, Ball, LipEstimate, MapSpec, SmoothMap};
pub use space::{midpoint_ball_radius, modulus_of_convexity, second_order_constant, SpaceSpec};

/// Where a constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Sampled,
    Estimated,
    Configured,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Analytic => "analytic",
            Provenance::Sampled => "sampled",
            Provenance::Estimated => "estimated",
            Provenance::Configured => "configured",
        })
    }
}
