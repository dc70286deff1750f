//! Dense correspondences and interpolation trajectories between triangle meshes.
//!
//! The crate combines a spectral objective (functional maps in a truncated
//! Laplace-Beltrami basis, coupled to soft point-wise maps) with a spatial one
//! (as-rigid-as-possible trajectories, symmetry and variance terms), followed by
//! a per-frame Chamfer refinement. Evaluation metrics and a point distribution
//! model for corresponded shape collections are included.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod correspondence;
pub mod descriptors;
pub mod eigen;
pub mod error;
pub mod fmap;
pub mod interpolation;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod operators;
pub mod optim;
pub mod shapes;
pub mod sparse;
pub mod spatial;
pub mod ssm;
pub mod tta;

pub use basis::{compute_eigenbasis, EigenBasis};
pub use correspondence::{
    harden, nearest_features, optimize_features, soft_correspondence, MapExport, MatchConfig,
    MatchResult, PointMap,
};
pub use descriptors::{row_normalize, standardize, wks, FeatureField};
pub use error::{Error, Result};
pub use fmap::{
    fmap_to_pointmap, pointmap_to_fmap, resolvent_mask, solve_fmap, spectral_loss, FunctionalMap,
    ResolventMask, SpectralLoss, SpectralWeights,
};
pub use interpolation::{
    arap_energy, optimize_trajectory, spatial_loss, ArapGraph, Interpolation, InterpolationConfig,
    SpatialLoss, SpatialProblem, SpatialWeights, Trajectory,
};
pub use io::{load_mesh, write_obj, MeshFormat};
pub use mesh::{normalize_mesh, Mesh, Normalization};
pub use metrics::{
    conformal_distortion, evaluate, geodesic_error, geodesics, pck_auc, EvalConfig, EvalReport,
    GeodesicTable,
};
pub use operators::{build_operators, Operators};
pub use ssm::{build_ssm, generality, specificity, SsModel};
pub use tta::{
    adapt, blend, chamfer, dirichlet, final_pointmap, Adaptation, FinalMapSource, ShapeField,
    TtaConfig,
};
