//! Stage sequencing shared by the command-line tool and tests: topology
//! search, field training, and evaluation of the resulting parameters.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{
    init_field, materialize_spring_params, FieldConfig, ParameterBounds, TriPlaneField,
};
use crate::grad::{
    train_field, EpochRecord, FieldProblem, TrainingConfig, TrainingResult, WindowLog,
};
use crate::losses::{bind_tracks, eval_metrics, MetricsReport, ObservationSequence};
use crate::sim::{MassSystem, MassSystemState, Simulator, SpringParams, Trajectory};
use crate::synth::{oracle_report, OracleReport, TruthFile};
use crate::topology::{solve_stage_one, StageOneConfig, StageOneResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stage_one: StageOneConfig,
    pub field: FieldConfig,
    pub training: TrainingConfig,
}

pub fn fit_topology(
    system: &MassSystem,
    observations: &ObservationSequence,
    config: &PipelineConfig,
) -> Result<StageOneResult> {
    solve_stage_one(system, observations, &config.stage_one)
}

/// Field-training problem on top of a stage-one result.
pub fn field_problem<'a>(
    system: &'a MassSystem,
    observations: &'a ObservationSequence,
    stage_one: &'a StageOneResult,
    config: &PipelineConfig,
) -> Result<FieldProblem<'a>> {
    FieldProblem::new(
        system,
        observations,
        &stage_one.topology,
        stage_one.init,
        ParameterBounds::from(&stage_one.bounds),
        stage_one.globals.clone(),
        config.stage_one.loss,
    )
}

pub fn initial_field(
    system: &MassSystem,
    stage_one: &StageOneResult,
    config: &PipelineConfig,
) -> Result<TriPlaneField> {
    let field_config = FieldConfig {
        seed: config.training.seed,
        ..config.field.clone()
    };
    init_field(
        stage_one.topology.len(),
        system.canonical_positions(),
        &field_config,
    )
}

pub fn fit_field<F>(
    system: &MassSystem,
    observations: &ObservationSequence,
    stage_one: &StageOneResult,
    config: &PipelineConfig,
    on_epoch: F,
) -> Result<TrainingResult>
where
    F: FnMut(&EpochRecord, &[WindowLog], &TriPlaneField) -> Result<()>,
{
    let problem = field_problem(system, observations, stage_one, config)?;
    let field = initial_field(system, stage_one, config)?;
    train_field(field, &problem, &config.training, on_epoch)
}

pub fn field_params(
    system: &MassSystem,
    stage_one: &StageOneResult,
    field: &TriPlaneField,
) -> Result<SpringParams> {
    materialize_spring_params(
        field,
        &stage_one.init,
        &ParameterBounds::from(&stage_one.bounds),
        &stage_one.topology,
        system.canonical_positions(),
    )
}

/// Full-length rollout from rest under the observed controls.
pub fn rollout_all(
    system: &MassSystem,
    observations: &ObservationSequence,
    stage_one: &StageOneResult,
    springs: &SpringParams,
) -> Result<Trajectory> {
    let sim = Simulator::new(system, &stage_one.topology, springs, &stage_one.globals)?;
    sim.rollout(
        &MassSystemState::at_rest(system),
        &observations.control_schedule(system)?,
        observations.len(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
}

/// Reconstruction and future metrics of `springs` on the stage-one topology.
pub fn evaluate(
    system: &MassSystem,
    observations: &ObservationSequence,
    stage_one: &StageOneResult,
    springs: &SpringParams,
) -> Result<MetricsReport> {
    let traj = rollout_all(system, observations, stage_one, springs)?;
    eval_metrics(
        &traj,
        observations,
        &bind_tracks(observations, system),
        observations.split_frame,
    )
}

/// Recovered stiffness on the generating topology against the true values.
/// Without a field the homogeneous stage-one parameters are scored.
pub fn truth_oracle(
    system: &MassSystem,
    stage_one: &StageOneResult,
    field: Option<&TriPlaneField>,
    truth: &TruthFile,
) -> Result<OracleReport> {
    let recovered = match field {
        Some(field) => materialize_spring_params(
            field,
            &stage_one.init,
            &ParameterBounds::from(&stage_one.bounds),
            &truth.topology,
            system.canonical_positions(),
        )?,
        None => SpringParams::homogeneous(
            truth.topology.len(),
            stage_one.init.stiffness(),
            stage_one.init.dashpot(),
        ),
    };
    oracle_report(&recovered, &truth.springs, &truth.edge_regions)
}
