//! System identification for deformable objects modeled as spring-mass systems.
//!
//! The pipeline fits a piecewise KNN spring topology together with homogeneous
//! physical parameters by CMA-ES, then refines per-spring stiffness and damping
//! with a tri-plane neural field queried at canonical spring midpoints and
//! trained by differentiating through simulated rollouts.

pub mod error;
pub mod field;
pub mod grad;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod sim;
pub mod spatial;
pub mod synth;
pub mod topology;
pub mod vec3;

pub use error::{Error, Result};
pub use sim::{
    ControlSchedule, GlobalPhysicalParams, MassSystem, MassSystemState, SpringParams,
    SpringTopology, Trajectory,
};
pub use vec3::Vec3;
