//! Reverse-mode gradients of the rollout loss with respect to spring-field
//! parameters, and the windowed first-order training loop.
//!
//! The backward pass replays each frame from a stored checkpoint to recover
//! per-substep states, then walks the substeps in reverse. Contact branches
//! are frozen at their forward values.

mod adam;
mod adjoint;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    materialize_residuals, FieldQuery, ParameterBlock, ParameterBounds, TriPlaneField,
};
use crate::losses::{
    bind_tracks, frame_loss, frame_loss_grad, sequence_objective, LossWeights, ObservationSequence,
    TrackBinding,
};
use crate::sim::{
    ControlSchedule, GlobalPhysicalParams, MassSystem, MassSystemState, Simulator, SpringParams,
    SpringTopology, Trajectory,
};
use crate::topology::HomogeneousInit;
use crate::vec3::Vec3;

pub use adam::{global_norm, optimizer_step, AdamConfig, AdamState};
use adjoint::substep_adjoint;

/// Flattened field parameters with the block layout of [`TriPlaneField::blocks`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub blocks: Vec<ParameterBlock>,
}

impl ParameterVector {
    pub fn from_field(field: &TriPlaneField) -> Self {
        ParameterVector {
            values: field.flatten(),
            blocks: field.blocks(),
        }
    }

    pub fn zeros_like(field: &TriPlaneField) -> Self {
        ParameterVector {
            values: vec![0.0; field.parameter_count()],
            blocks: field.blocks(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.offset..b.offset + b.len])
    }

    /// Name of the first block holding a non-finite value.
    pub fn non_finite_block(&self) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| {
                self.values[b.offset..b.offset + b.len]
                    .iter()
                    .any(|v| !v.is_finite())
            })
            .map(|b| b.name.as_str())
    }

    pub fn apply_to(&self, field: &mut TriPlaneField) -> Result<()> {
        if self.blocks != field.blocks() {
            return Err(Error::shape("parameter layout does not match field"));
        }
        field.assign(&self.values)
    }
}

/// Spring parameters of a field together with what the backward pass needs.
pub struct Materialized {
    pub params: SpringParams,
    /// `d stiffness / d residual`, `d dashpot / d residual` per edge.
    pub jacobian: Vec<[f64; 2]>,
    pub queries: Vec<FieldQuery>,
}

/// Fixed inputs of field training: data, stage-one topology and parameters.
pub struct FieldProblem<'a> {
    pub system: &'a MassSystem,
    pub observations: &'a ObservationSequence,
    pub topology: &'a SpringTopology,
    pub s0: HomogeneousInit,
    pub bounds: ParameterBounds,
    pub globals: GlobalPhysicalParams,
    pub controls: ControlSchedule,
    pub binding: TrackBinding,
    pub weights: LossWeights,
}

#[derive(Debug, Clone)]
pub struct WindowResult {
    pub loss: f64,
    pub gradient: ParameterVector,
    pub end_state: MassSystemState,
}

impl<'a> FieldProblem<'a> {
    pub fn new(
        system: &'a MassSystem,
        observations: &'a ObservationSequence,
        topology: &'a SpringTopology,
        s0: HomogeneousInit,
        bounds: ParameterBounds,
        globals: GlobalPhysicalParams,
        weights: LossWeights,
    ) -> Result<Self> {
        observations.validate()?;
        topology.validate(system.len())?;
        globals.validate()?;
        if globals.point_collision_radius.is_some() {
            return Err(Error::config(
                "gradients are not available with point-point contacts enabled",
            ));
        }
        Ok(FieldProblem {
            system,
            observations,
            topology,
            s0,
            bounds,
            globals,
            controls: observations.control_schedule(system)?,
            binding: bind_tracks(observations, system),
            weights,
        })
    }

    pub fn initial_state(&self) -> MassSystemState {
        MassSystemState::at_rest(self.system)
    }

    pub fn materialize(&self, field: &TriPlaneField) -> Result<Materialized> {
        let queries = field.prepare(self.topology, self.system.canonical_positions());
        let residuals = field.eval_prepared(&queries)?;
        let (params, jacobian) = materialize_residuals(&residuals, &self.s0, &self.bounds);
        Ok(Materialized {
            params,
            jacobian,
            queries,
        })
    }

    pub fn spring_params(&self, field: &TriPlaneField) -> Result<SpringParams> {
        Ok(self.materialize(field)?.params)
    }

    pub fn rollout_params(&self, springs: &SpringParams, n_frames: usize) -> Result<Trajectory> {
        let sim = Simulator::new(self.system, self.topology, springs, &self.globals)?;
        sim.rollout(&self.initial_state(), &self.controls, n_frames)
    }

    pub fn rollout(&self, field: &TriPlaneField, n_frames: usize) -> Result<Trajectory> {
        self.rollout_params(&self.spring_params(field)?, n_frames)
    }

    /// Loss over `frames` of a rollout from the initial state.
    pub fn objective(&self, field: &TriPlaneField, frames: Range<usize>) -> Result<f64> {
        let traj = self.rollout(field, frames.end)?;
        Ok(sequence_objective(
            &traj,
            self.observations,
            &self.binding,
            frames,
            &self.weights,
        )?
        .total)
    }

    fn control_row(&self, f: usize) -> &[Vec3] {
        if self.system.control_indices().is_empty() {
            &[]
        } else {
            &self.controls.frames[f]
        }
    }

    /// Simulated state at `frame`, reached from rest without gradient tracking.
    pub fn state_at(&self, field: &TriPlaneField, frame: usize) -> Result<MassSystemState> {
        let mut state = self.initial_state();
        if frame == 0 {
            return Ok(state);
        }
        let params = self.spring_params(field)?;
        let sim = Simulator::new(self.system, self.topology, &params, &self.globals)?;
        for f in 0..frame {
            sim.advance_frame(
                &mut state.positions,
                &mut state.velocities,
                self.control_row(f),
                self.control_row(f + 1),
                f,
                None,
            )?;
        }
        state.frame_index = frame;
        Ok(state)
    }

    /// Loss of frames `start+1 ..= start+len` simulated from `start` (plus
    /// the start frame itself when `include_start`), and its gradient with
    /// respect to every field parameter. No gradient flows into `start`.
    pub fn backprop_window(
        &self,
        field: &TriPlaneField,
        start: &MassSystemState,
        len: usize,
        include_start: bool,
    ) -> Result<WindowResult> {
        if len == 0 {
            return Err(Error::config("window length must be at least 1"));
        }
        start.check(self.system)?;
        let a = start.frame_index;
        let b = a + len;
        if b >= self.observations.len() {
            return Err(Error::config(format!(
                "window {a}..={b} exceeds {} observed frames",
                self.observations.len()
            )));
        }
        if !self.system.control_indices().is_empty() && self.controls.len() <= b {
            return Err(Error::config("control schedule shorter than the window"));
        }
        let m = self.materialize(field)?;
        let sim = Simulator::new(self.system, self.topology, &m.params, &self.globals)?;
        let n = self.system.len();

        let mut loss = 0.0;
        if include_start {
            loss += frame_loss(
                &start.positions,
                &self.observations.frames[a],
                &self.binding,
                &self.weights,
            )?
            .total;
        }
        let mut checkpoints = Vec::with_capacity(len);
        let mut loss_grads = Vec::with_capacity(len);
        let (mut x, mut v) = (start.positions.clone(), start.velocities.clone());
        for f in a..b {
            checkpoints.push((x.clone(), v.clone()));
            sim.advance_frame(
                &mut x,
                &mut v,
                self.control_row(f),
                self.control_row(f + 1),
                f,
                None,
            )?;
            let mut g = vec![Vec3::ZERO; n];
            loss += frame_loss_grad(
                &x,
                &self.observations.frames[f + 1],
                &self.binding,
                &self.weights,
                &mut g,
            )?
            .total;
            loss_grads.push(g);
        }
        let end_state = MassSystemState {
            positions: x,
            velocities: v,
            frame_index: b,
        };

        let edges = self.topology.len();
        let (mut gk, mut gd) = (vec![0.0; edges], vec![0.0; edges]);
        let mut xbar = vec![Vec3::ZERO; n];
        let mut vbar = vec![Vec3::ZERO; n];
        let mut records = Vec::with_capacity(self.globals.substeps_per_frame);
        for f in (a..b).rev() {
            for (xb, g) in xbar.iter_mut().zip(&loss_grads[f - a]) {
                *xb += *g;
            }
            let (mut rx, mut rv) = checkpoints[f - a].clone();
            records.clear();
            sim.advance_frame(
                &mut rx,
                &mut rv,
                self.control_row(f),
                self.control_row(f + 1),
                f,
                Some(&mut records),
            )?;
            for (sx, sv, rec) in records.iter().rev() {
                substep_adjoint(
                    sx,
                    sv,
                    rec,
                    self.system,
                    self.topology,
                    &m.params,
                    &self.globals,
                    &mut xbar,
                    &mut vbar,
                    &mut gk,
                    &mut gd,
                );
            }
        }

        let grad_out: Vec<[f64; 2]> = (0..edges)
            .map(|e| [gk[e] * m.jacobian[e][0], gd[e] * m.jacobian[e][1]])
            .collect();
        let mut gradient = ParameterVector::zeros_like(field);
        field.backward_prepared(&m.queries, &grad_out, &mut gradient.values);
        if let Some(block) = gradient.non_finite_block() {
            return Err(Error::NonFinite(format!("gradient in block {block}")));
        }
        Ok(WindowResult {
            loss,
            gradient,
            end_state,
        })
    }

    /// Consecutive `(start, len)` windows covering transitions within `frames`.
    pub fn windows(frames: Range<usize>, window_length: usize) -> Vec<(usize, usize)> {
        let last = frames.end.saturating_sub(1);
        let w = if window_length == 0 {
            usize::MAX
        } else {
            window_length
        };
        let mut out = Vec::new();
        let mut a = frames.start;
        while a < last {
            let len = w.min(last - a);
            out.push((a, len));
            a += len;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Frames per truncated window; 0 unrolls the whole training range.
    pub window_length: usize,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Learning-rate halvings allowed per epoch after a diverged forward pass.
    pub max_retries: usize,
    /// Trained frames; defaults to the training range `[0, split)`.
    pub frames: Option<(usize, usize)>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingConfig {
            learning_rate: adam.learning_rate,
            epochs: 300,
            window_length: 10,
            grad_clip_norm: adam.grad_clip_norm,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
            max_retries: 3,
            frames: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::config("invalid moment decay rates or epsilon"));
        }
        Ok(())
    }

    pub fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            grad_clip_norm: self.grad_clip_norm,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub epoch: usize,
    pub window: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of window losses seen during the epoch.
    pub window_loss: f64,
    /// Training objective of the field at the end of the epoch.
    pub objective: f64,
    pub lr: f64,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub field: TriPlaneField,
    pub initial_objective: f64,
    pub best_objective: f64,
    /// 0 when no epoch improved on the initial field.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub log: Vec<WindowLog>,
}

fn run_epoch(
    problem: &FieldProblem,
    field: &mut TriPlaneField,
    adam: &mut AdamState,
    opt: &AdamConfig,
    windows: &[(usize, usize)],
    epoch: usize,
    log: &mut Vec<WindowLog>,
) -> Result<f64> {
    let mut state = problem.state_at(field, windows.first().map_or(0, |w| w.0))?;
    let mut total = 0.0;
    let mut params = field.flatten();
    for (w, &(a, len)) in windows.iter().enumerate() {
        debug_assert_eq!(state.frame_index, a);
        let r = problem.backprop_window(field, &state, len, w == 0)?;
        let grad_norm = optimizer_step(&mut params, &r.gradient.values, adam, opt)?;
        field.assign(&params)?;
        log.push(WindowLog {
            epoch,
            window: w,
            loss: r.loss,
            grad_norm,
            lr: opt.learning_rate,
        });
        total += r.loss;
        state = r.end_state;
    }
    Ok(total)
}

/// Trains `field` on the training frames of `problem`. `on_epoch` sees every
/// completed epoch with the field at its end. The returned field is the one
/// with the lowest training objective, the initial field included.
pub fn train_field<F>(
    mut field: TriPlaneField,
    problem: &FieldProblem,
    config: &TrainingConfig,
    mut on_epoch: F,
) -> Result<TrainingResult>
where
    F: FnMut(&EpochRecord, &[WindowLog], &TriPlaneField) -> Result<()>,
{
    config.validate()?;
    field.validate()?;
    let frames = match config.frames {
        Some((a, b)) => a..b,
        None => problem.observations.training_range(),
    };
    if frames.len() < 2 || frames.end > problem.observations.len() {
        return Err(Error::config(format!(
            "training frames {frames:?} invalid for {} observed frames",
            problem.observations.len()
        )));
    }
    let windows = FieldProblem::windows(frames.clone(), config.window_length);
    let initial_objective = problem.objective(&field, frames.clone())?;
    let mut best = (initial_objective, 0usize, field.clone());
    let mut adam = AdamState::new(field.parameter_count());
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);
    let mut log = Vec::new();

    for epoch in 1..=config.epochs {
        let mut retries = 0;
        let first_line = log.len();
        let (window_loss, objective) = loop {
            let mut trial = field.clone();
            let mut trial_adam = adam.clone();
            let mut trial_log = Vec::new();
            let outcome = run_epoch(
                problem,
                &mut trial,
                &mut trial_adam,
                &config.adam(lr),
                &windows,
                epoch,
                &mut trial_log,
            )
            .and_then(|loss| Ok((loss, problem.objective(&trial, frames.clone())?)));
            match outcome {
                Ok(done) => {
                    field = trial;
                    adam = trial_adam;
                    log.extend(trial_log);
                    break done;
                }
                Err(e) if e.is_numerical() && retries < config.max_retries => {
                    retries += 1;
                    lr *= 0.5;
                    log::warn!("epoch {epoch}: {e}; retrying with learning rate {lr:e}");
                }
                Err(e) => return Err(e),
            }
        };
        let record = EpochRecord {
            epoch,
            window_loss,
            objective,
            lr,
            retries,
        };
        log::debug!("epoch {epoch}: objective {objective:.6e}");
        if objective < best.0 {
            best = (objective, epoch, field.clone());
        }
        on_epoch(&record, &log[first_line..], &field)?;
        history.push(record);
    }

    Ok(TrainingResult {
        field: best.2,
        initial_objective,
        best_objective: best.0,
        best_epoch: best.1,
        history,
        log,
    })
}
