//! Subcommand implementations. Every command reads its inputs from the data
//! or output directory and writes JSON next to them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use springid::field::TriPlaneField;
use springid::grad::EpochRecord;
use springid::io::{read_json, to_json_bytes, write_json, write_ply, TrajectoryFile};
use springid::losses::ObservationSequence;
use springid::pipeline::{
    evaluate, field_params, fit_field, fit_topology, rollout_all, truth_oracle, Evaluation,
};
use springid::sim::skin_points;
use springid::synth::{
    generate, write_dataset, SceneFile, TruthFile, OBSERVATIONS_FILE, SCENE_FILE, TRUTH_FILE,
};
use springid::topology::StageOneResult;
use springid::{Error, MassSystem, Result, Vec3};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const STAGE_ONE_FILE: &str = "stage_one.json";
pub const FIELD_FILE: &str = "field.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAINING_LOG_FILE: &str = "training_log.jsonl";
pub const TRAINING_FILE: &str = "training.json";
pub const EVAL_FILE: &str = "eval.json";
pub const EXPORT_DIR: &str = "export";
pub const QUERY_NEIGHBORS: usize = 4;

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

struct Dataset {
    system: MassSystem,
    observations: ObservationSequence,
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let dir = config.data_dir();
    let scene: SceneFile = read_json(&dir.join(SCENE_FILE))?;
    let observations: ObservationSequence = read_json(&dir.join(OBSERVATIONS_FILE))?;
    observations.validate()?;
    Ok(Dataset {
        system: scene.system,
        observations,
    })
}

fn load_truth(config: &RunConfig) -> Result<Option<TruthFile>> {
    let path = config.data_dir().join(TRUTH_FILE);
    if path.exists() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn save_config(config: &RunConfig) -> Result<()> {
    create_dir(&config.out)?;
    write_json(&config.out_file(CONFIG_FILE), config)
}

pub fn synth(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = config.scene_spec();
    let data = generate(&spec, config.seed)?;
    let paths = write_dataset(&config.out, &spec, config.seed, &data)?;
    info!(
        "synthesized {} points, {} springs, {} frames (split at {}) into {}",
        data.scene.system.len(),
        data.scene.topology.len(),
        data.observations.len(),
        data.observations.split_frame,
        config.out.display()
    );
    Ok(paths)
}

pub fn fit_topology_cmd(config: &RunConfig) -> Result<StageOneResult> {
    let data = load_dataset(config)?;
    save_config(config)?;
    let result = fit_topology(&data.system, &data.observations, &config.pipeline)?;
    write_json(&config.out_file(STAGE_ONE_FILE), &result)?;
    info!(
        "stage one: objective {:.6e} -> {:.6e} after {} evaluations, {} springs, stiffness {:.4e}, dashpot {:.4e}",
        result.initial_objective,
        result.best_objective,
        result.evaluations,
        result.topology.len(),
        result.init.stiffness(),
        result.init.dashpot()
    );
    Ok(result)
}

/// Summary written after training; the per-window lines go to the JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub initial_objective: f64,
    pub best_objective: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn load_stage_one(config: &RunConfig) -> Result<StageOneResult> {
    let path = config.out_file(STAGE_ONE_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run fit-topology first",
            path.display()
        )));
    }
    read_json(&path)
}

fn load_field(config: &RunConfig) -> Result<TriPlaneField> {
    let path = config.out_file(FIELD_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run fit-field first",
            path.display()
        )));
    }
    TriPlaneField::load(&path)
}

pub fn fit_field_cmd(config: &RunConfig) -> Result<TrainingSummary> {
    let data = load_dataset(config)?;
    let stage_one = load_stage_one(config)?;
    save_config(config)?;
    let log_path = config.out_file(TRAINING_LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_error(&log_path, e))?);
    let checkpoint = config.out_file(CHECKPOINT_FILE);
    let result = fit_field(
        &data.system,
        &data.observations,
        &stage_one,
        &config.pipeline,
        |record, lines, field| {
            for line in lines {
                let bytes = to_json_bytes(line).map_err(|e| Error::Json {
                    path: log_path.clone(),
                    source: e,
                })?;
                log.write_all(&bytes).map_err(|e| io_error(&log_path, e))?;
            }
            log.flush().map_err(|e| io_error(&log_path, e))?;
            field.save(&checkpoint)?;
            info!(
                "epoch {}: objective {:.6e}, window loss {:.6e}, lr {:.3e}",
                record.epoch, record.objective, record.window_loss, record.lr
            );
            Ok(())
        },
    )?;
    drop(log);
    result.field.save(&config.out_file(FIELD_FILE))?;
    let summary = TrainingSummary {
        initial_objective: result.initial_objective,
        best_objective: result.best_objective,
        best_epoch: result.best_epoch,
        history: result.history,
    };
    write_json(&config.out_file(TRAINING_FILE), &summary)?;
    info!(
        "field: objective {:.6e} -> {:.6e} (best epoch {})",
        summary.initial_objective, summary.best_objective, summary.best_epoch
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub field: Evaluation,
    /// Homogeneous stage-one parameters on the same topology.
    pub baseline: Evaluation,
    /// Field over baseline future Chamfer distance.
    pub future_cd_ratio: Option<f64>,
}

pub fn eval_cmd(config: &RunConfig) -> Result<EvalReport> {
    let data = load_dataset(config)?;
    let stage_one = load_stage_one(config)?;
    let field = load_field(config)?;
    let truth = load_truth(config)?;
    let springs = field_params(&data.system, &stage_one, &field)?;
    let run = |field: Option<&TriPlaneField>, springs| -> Result<Evaluation> {
        Ok(Evaluation {
            metrics: evaluate(&data.system, &data.observations, &stage_one, springs)?,
            oracle: match &truth {
                Some(t) => Some(truth_oracle(&data.system, &stage_one, field, t)?),
                None => None,
            },
        })
    };
    let field_eval = run(Some(&field), &springs)?;
    let baseline = run(None, &stage_one.springs())?;
    let future_cd_ratio = match (field_eval.metrics.cd_future, baseline.metrics.cd_future) {
        (Some(f), Some(b)) if b > 0.0 => Some(f / b),
        _ => None,
    };
    let report = EvalReport {
        field: field_eval,
        baseline,
        future_cd_ratio,
    };
    write_json(&config.out_file(EVAL_FILE), &report)?;
    let m = &report.field.metrics;
    info!(
        "eval: CD recon {:?}, TE recon {:?}, CD future {:?}, TE future {:?}, future CD ratio {:?}",
        m.cd_recon, m.te_recon, m.cd_future, m.te_future, report.future_cd_ratio
    );
    if let Some(o) = &report.field.oracle {
        info!("oracle: {:?}, spearman {:.4}", o.regions, o.spearman);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub frames: usize,
    pub files: Vec<PathBuf>,
}

pub fn export_cmd(config: &RunConfig) -> Result<ExportSummary> {
    let data = load_dataset(config)?;
    let stage_one = load_stage_one(config)?;
    let field = load_field(config)?;
    let springs = field_params(&data.system, &stage_one, &field)?;
    let traj = rollout_all(&data.system, &data.observations, &stage_one, &springs)?;
    let dir = config.out_file(EXPORT_DIR);
    create_dir(&dir)?;
    let mut files = Vec::new();
    let path = dir.join("trajectory.json");
    write_json(
        &path,
        &TrajectoryFile::from_trajectory(&traj, data.observations.dt_frame),
    )?;
    files.push(path);
    if config.ply {
        for state in &traj.states {
            let path = dir.join(format!("frame_{:04}.ply", state.frame_index));
            write_ply(&path, &state.positions)?;
            files.push(path);
        }
    }
    if let Some(query) = &config.query {
        let points: Vec<Vec3> = read_json(query)?;
        let moved = skin_points(
            &points,
            &data.system,
            &traj,
            QUERY_NEIGHBORS.min(data.system.len()),
        )?;
        let path = dir.join("query_trajectory.json");
        let frames: Vec<_> = traj
            .states
            .iter()
            .zip(moved)
            .map(|(s, positions)| springid::io::TrajectoryFrame {
                t: s.frame_index,
                positions,
            })
            .collect();
        write_json(
            &path,
            &TrajectoryFile {
                frames,
                dt_frame: data.observations.dt_frame,
            },
        )?;
        files.push(path);
    }
    info!("exported {} frames to {}", traj.len(), dir.display());
    Ok(ExportSummary {
        frames: traj.len(),
        files,
    })
}

pub fn run_all(config: &RunConfig) -> Result<EvalReport> {
    if config.data.is_none() {
        synth(config)?;
    }
    fit_topology_cmd(config)?;
    fit_field_cmd(config)?;
    eval_cmd(config)
}

/// JSON text of a report, for standard output.
pub fn report_text<T: Serialize>(value: &T) -> Result<String> {
    let bytes = to_json_bytes(value).map_err(|e| Error::Json {
        path: PathBuf::from("<stdout>"),
        source: e,
    })?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}
