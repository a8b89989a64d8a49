//! Fixtures shared by the benchmarks.

use springid::field::{init_field, FieldConfig, ParameterBounds, TriPlaneField};
use springid::grad::FieldProblem;
use springid::losses::LossWeights;
use springid::synth::{generate, Dataset, SceneSpec};
use springid::topology::HomogeneousInit;

pub fn rope() -> Dataset {
    generate(&SceneSpec::default_rope(), 0).expect("default rope generates")
}

pub fn cloth() -> Dataset {
    generate(&SceneSpec::default_cloth(), 0).expect("default cloth generates")
}

/// Homogeneous starting point matching the truth scale of the default scenes.
pub fn homogeneous(data: &Dataset) -> HomogeneousInit {
    HomogeneousInit {
        log_stiffness: 200f64.ln(),
        log_dashpot: 1f64.ln(),
        drag: data.scene.globals.drag,
        restitution: data.scene.globals.restitution,
        friction: data.scene.globals.friction,
    }
}

/// Field-training problem on the generating topology of `data`.
pub fn field_problem(data: &Dataset) -> FieldProblem<'_> {
    FieldProblem::new(
        &data.scene.system,
        &data.observations,
        &data.scene.topology,
        homogeneous(data),
        ParameterBounds {
            stiffness: (1.0, 1e5),
            dashpot: (1e-3, 100.0),
        },
        data.scene.globals.clone(),
        LossWeights::default(),
    )
    .expect("valid problem")
}

pub fn field(data: &Dataset) -> TriPlaneField {
    init_field(
        data.scene.topology.len(),
        data.scene.system.canonical_positions(),
        &FieldConfig::default(),
    )
    .expect("valid field")
}
