//! Spring-mass dynamics.
//!
//! Forces follow a Hookean spring plus a relative-velocity dashpot per edge,
//! integrated with drag-damped explicit Euler (velocity first, then position
//! with the updated velocity). Ground contact is an impulse on the velocity.
//! Each observation frame is split into `substeps_per_frame` equal steps and
//! prescribed control points are interpolated linearly across them.

mod force;
mod rollout;
mod skin;
mod step;
mod types;

pub use force::{
    accumulate_forces, dashpot_force, degenerate_spring_count, spring_force, DEGENERATE_EPS,
};
pub use rollout::{rollout, Simulator, DIVERGENCE_LIMIT};
pub use skin::skin_points;
pub use step::{collision_impulse, euler_step, CONTACT_EPS};
pub use types::{
    ControlSchedule, GlobalPhysicalParams, MassSystem, MassSystemState, SpringParams,
    SpringTopology, Trajectory,
};

pub(crate) use step::{friction_scale, StepRecord};
