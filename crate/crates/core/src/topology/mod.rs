//! Piecewise spring topology: Ward clustering of the mass points, per-cluster
//! KNN connection rules, and a CMA-ES search over those rules jointly with
//! homogeneous physical parameters.

mod cluster;
mod cmaes;
mod encoding;
mod knn;
mod stage_one;

pub use cluster::cluster_points;
pub use cmaes::{cmaes_minimize, CmaesResult, CmaesSettings, GenerationRecord, DIVERGENCE_PENALTY};
pub use encoding::{
    decision_dimension, decode, encode, Bounds, BoundsConfig, HomogeneousInit, CODE_LIMIT,
};
pub use knn::{
    build_piecewise_knn, connect_components, median_nn_spacing, ClusterTopologyConfig, KnnParams,
};
pub use stage_one::{
    solve_stage_one, Candidate, InitialGuess, SearchSettings, SimulationConfig, StageOneConfig,
    StageOneProblem, StageOneResult,
};
