//! Identification-robust minimum-distance inference for structural models.
//!
//! A structural model links reduced-form parameters `theta` to nuisance
//! parameters `alpha` and parameters of interest `beta` through the fixed
//! point `theta = g(theta, alpha, beta)`. [`robust_test`] tests
//! `H0: beta = beta0` without assuming `alpha` is identified: the nuisance
//! is profiled out by a ridge-penalized minimum-distance fit, and the
//! degrees of freedom of the chi-squared reference law are estimated from
//! the data by eigenvalue hard thresholding.

pub mod dist;
pub mod entrygame;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod power;
pub mod rng;
pub mod serde_mat;
pub mod solver;

pub use entrygame::{GameConfig, GameDataset, GameModel, GameParams, Market};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentKind, ExperimentReport, ExperimentRows, McConfig};
pub use inference::{
    invert_ci, md_pipeline, oracle_test, robust_test, t_test, ConfidenceSet, LambdaRule, MdPipeline,
    ReducedFormEstimate, RobustTestResult, TTestResult, TestOptions,
};
pub use linalg::{estimate_rank, sym_eig, truncated_pinv, RankEstimate, SpectralDecomposition, TruncatedPinv};
pub use model::{ModelDims, ModelRef, ModelSpec, StructuralModel};
pub use power::{max_power_direction, power_report, profiled_noncentrality, MaxPowerDirection, PowerReport};
pub use solver::{minimize_ridge, select_lambda_gcv, RidgeProblem, RidgeSolution, SolverOptions};

pub use nalgebra::{DMatrix, DVector};
