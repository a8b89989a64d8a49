use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    bind_tracks, sequence_objective, LossWeights, ObservationSequence, TrackBinding,
};
use crate::sim::{
    ControlSchedule, GlobalPhysicalParams, MassSystem, MassSystemState, Simulator, SpringParams,
    SpringTopology,
};
use crate::vec3::Vec3;

use super::cluster::cluster_points;
use super::cmaes::{cmaes_minimize, CmaesSettings, GenerationRecord, DIVERGENCE_PENALTY};
use super::encoding::{decision_dimension, decode, encode, Bounds, BoundsConfig, HomogeneousInit};
use super::knn::{
    build_piecewise_knn, connect_components, median_nn_spacing, ClusterTopologyConfig, KnnParams,
};

/// Fixed simulation settings that the topology search does not optimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub gravity: Vec3,
    pub ground_height: f64,
    pub substeps_per_frame: usize,
    #[serde(default)]
    pub point_collision_radius: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let g = GlobalPhysicalParams::default();
        SimulationConfig {
            gravity: g.gravity,
            ground_height: g.ground_height,
            substeps_per_frame: g.substeps_per_frame,
            point_collision_radius: None,
        }
    }
}

impl SimulationConfig {
    /// Globals for a sequence sampled every `dt_frame` seconds.
    pub fn globals(&self, dt_frame: f64, init: &HomogeneousInit) -> GlobalPhysicalParams {
        GlobalPhysicalParams {
            drag: init.drag,
            gravity: self.gravity,
            ground_height: self.ground_height,
            restitution: init.restitution,
            friction: init.friction,
            dt: dt_frame / self.substeps_per_frame as f64,
            substeps_per_frame: self.substeps_per_frame,
            point_collision_radius: self.point_collision_radius,
        }
    }
}

/// Starting point of the search, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialGuess {
    pub max_neighbors: usize,
    /// Multiple of the median nearest-neighbor spacing.
    pub radius_scale: f64,
    pub stiffness: f64,
    pub dashpot: f64,
    pub drag: f64,
    pub restitution: f64,
    pub friction: f64,
}

impl Default for InitialGuess {
    fn default() -> Self {
        InitialGuess {
            max_neighbors: 6,
            radius_scale: 2.0,
            stiffness: 300.0,
            dashpot: 1.0,
            drag: 0.995,
            restitution: 0.5,
            friction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    /// `None` picks `4 + floor(3 ln d)`.
    pub population: Option<usize>,
    pub sigma0: f64,
    pub max_evaluations: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            population: None,
            sigma0: 0.3,
            max_evaluations: 3000,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

impl SearchSettings {
    pub fn resolve(&self, dim: usize) -> CmaesSettings {
        CmaesSettings {
            population: self
                .population
                .unwrap_or_else(|| CmaesSettings::default_population(dim)),
            sigma0: self.sigma0,
            max_evaluations: self.max_evaluations,
            seed: self.seed,
            tolerance: self.tolerance,
            max_generations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOneConfig {
    pub cluster_count: usize,
    pub bounds: BoundsConfig,
    pub search: SearchSettings,
    pub initial: InitialGuess,
    pub loss: LossWeights,
    pub simulation: SimulationConfig,
    /// Objective frames; defaults to the training range `[0, split)`.
    #[serde(default)]
    pub frames: Option<(usize, usize)>,
}

impl Default for StageOneConfig {
    fn default() -> Self {
        StageOneConfig {
            cluster_count: 5,
            bounds: BoundsConfig::default(),
            search: SearchSettings::default(),
            initial: InitialGuess::default(),
            loss: LossWeights::default(),
            simulation: SimulationConfig::default(),
            frames: None,
        }
    }
}

/// A decoded decision vector, ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub knn: ClusterTopologyConfig,
    pub topology: SpringTopology,
    pub init: HomogeneousInit,
    pub globals: GlobalPhysicalParams,
}

impl Candidate {
    pub fn springs(&self) -> SpringParams {
        SpringParams::homogeneous(
            self.topology.len(),
            self.init.stiffness(),
            self.init.dashpot(),
        )
    }
}

/// Everything needed to score decision vectors against one observation sequence.
pub struct StageOneProblem<'a> {
    pub system: &'a MassSystem,
    pub observations: &'a ObservationSequence,
    pub controls: ControlSchedule,
    pub binding: TrackBinding,
    pub labels: Vec<usize>,
    pub bounds: Bounds,
    pub cluster_count: usize,
    pub frames: Range<usize>,
    pub weights: LossWeights,
    pub simulation: SimulationConfig,
}

impl<'a> StageOneProblem<'a> {
    pub fn new(
        system: &'a MassSystem,
        observations: &'a ObservationSequence,
        config: &StageOneConfig,
    ) -> Result<Self> {
        observations.validate()?;
        if observations.is_empty() {
            return Err(Error::config("observation sequence is empty"));
        }
        let frames = match config.frames {
            Some((a, b)) => a..b,
            None => observations.training_range(),
        };
        if frames.is_empty() || frames.end > observations.len() {
            return Err(Error::config(format!(
                "objective frames {frames:?} invalid for {} observed frames",
                observations.len()
            )));
        }
        let labels = cluster_points(system.canonical_positions(), config.cluster_count)?;
        let bounds = config
            .bounds
            .resolve(median_nn_spacing(system.canonical_positions()))?;
        Ok(StageOneProblem {
            system,
            observations,
            controls: observations.control_schedule(system)?,
            binding: bind_tracks(observations, system),
            labels,
            bounds,
            cluster_count: config.cluster_count,
            frames,
            weights: config.loss,
            simulation: config.simulation.clone(),
        })
    }

    pub fn dimension(&self) -> usize {
        decision_dimension(self.cluster_count)
    }

    pub fn initial_vector(&self, guess: &InitialGuess) -> Vec<f64> {
        let spacing = median_nn_spacing(self.system.canonical_positions());
        let knn = vec![
            KnnParams {
                max_neighbors: guess.max_neighbors,
                radius: guess.radius_scale * spacing,
            };
            self.cluster_count
        ];
        let init = HomogeneousInit {
            log_stiffness: guess.stiffness.ln(),
            log_dashpot: guess.dashpot.ln(),
            drag: guess.drag,
            restitution: guess.restitution,
            friction: guess.friction,
        };
        encode(&knn, &init, &self.bounds)
    }

    pub fn candidate(&self, x: &[f64]) -> Result<Candidate> {
        let (per_cluster, init) = decode(x, self.cluster_count, &self.bounds)?;
        let knn = ClusterTopologyConfig {
            labels: self.labels.clone(),
            per_cluster,
        };
        let points = self.system.canonical_positions();
        let topology = connect_components(points, &build_piecewise_knn(points, &knn)?);
        let globals = self.simulation.globals(self.observations.dt_frame, &init);
        Ok(Candidate {
            knn,
            topology,
            init,
            globals,
        })
    }

    /// Objective of a candidate; divergence surfaces as an error.
    pub fn score(&self, candidate: &Candidate) -> Result<f64> {
        let springs = candidate.springs();
        let sim = Simulator::new(
            self.system,
            &candidate.topology,
            &springs,
            &candidate.globals,
        )?;
        let traj = sim.rollout(
            &MassSystemState::at_rest(self.system),
            &self.controls,
            self.frames.end,
        )?;
        Ok(sequence_objective(
            &traj,
            self.observations,
            &self.binding,
            self.frames.clone(),
            &self.weights,
        )?
        .total)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.score(&self.candidate(x)?)
    }

    /// Objective with divergence mapped to [`DIVERGENCE_PENALTY`].
    pub fn objective(&self, x: &[f64]) -> f64 {
        match self.evaluate(x) {
            Ok(f) if f.is_finite() => f.min(DIVERGENCE_PENALTY),
            Ok(_) => DIVERGENCE_PENALTY,
            Err(e) => {
                if !e.is_numerical() {
                    log::debug!("candidate rejected: {e}");
                }
                DIVERGENCE_PENALTY
            }
        }
    }
}

/// Outcome of the topology and homogeneous-parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneResult {
    pub cluster_count: usize,
    pub labels: Vec<usize>,
    pub per_cluster: Vec<KnnParams>,
    pub topology: SpringTopology,
    pub init: HomogeneousInit,
    pub globals: GlobalPhysicalParams,
    pub bounds: Bounds,
    pub best_x: Vec<f64>,
    pub best_objective: f64,
    pub initial_objective: f64,
    pub evaluations: usize,
    pub seed: u64,
    pub frames: (usize, usize),
    pub history: Vec<GenerationRecord>,
}

impl StageOneResult {
    pub fn springs(&self) -> SpringParams {
        SpringParams::homogeneous(
            self.topology.len(),
            self.init.stiffness(),
            self.init.dashpot(),
        )
    }
}

/// Searches per-cluster KNN hyperparameters and homogeneous physical
/// parameters with CMA-ES.
pub fn solve_stage_one(
    system: &MassSystem,
    observations: &ObservationSequence,
    config: &StageOneConfig,
) -> Result<StageOneResult> {
    let problem = StageOneProblem::new(system, observations, config)?;
    let x0 = problem.initial_vector(&config.initial);
    let settings = config.search.resolve(problem.dimension());
    let initial_objective = problem.objective(&x0);
    let run = cmaes_minimize(|x| problem.objective(x), &x0, &settings)?;
    if run.best_f >= DIVERGENCE_PENALTY {
        return Err(Error::AllDiverged {
            evaluations: run.evaluations,
        });
    }
    let best = problem.candidate(&run.best_x)?;
    log::info!(
        "stage one: objective {:.6} -> {:.6} after {} evaluations ({} springs)",
        initial_objective,
        run.best_f,
        run.evaluations,
        best.topology.len()
    );
    Ok(StageOneResult {
        cluster_count: config.cluster_count,
        labels: problem.labels.clone(),
        per_cluster: best.knn.per_cluster,
        topology: best.topology,
        init: best.init,
        globals: best.globals,
        bounds: problem.bounds.clone(),
        best_x: run.best_x,
        best_objective: run.best_f,
        initial_objective,
        evaluations: run.evaluations,
        seed: settings.seed,
        frames: (problem.frames.start, problem.frames.end),
        history: run.history,
    })
}
