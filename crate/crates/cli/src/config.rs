//! Run configuration: defaults, then an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use springid::io::read_json;
use springid::pipeline::PipelineConfig;
use springid::synth::SceneSpec;
use springid::{Error, Result};

/// Built-in synthetic scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Rope,
    Cloth,
    DensityCloth,
}

impl Preset {
    pub fn spec(self) -> SceneSpec {
        match self {
            Preset::Rope => SceneSpec::default_rope(),
            Preset::Cloth => SceneSpec::default_cloth(),
            Preset::DensityCloth => SceneSpec::density_cloth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding observations, scene and truth files; defaults to `out`.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Seed for data emission, topology search and field initialization.
    pub seed: u64,
    pub preset: Preset,
    /// Explicit scene; overrides `preset`.
    pub scene: Option<SceneSpec>,
    /// JSON list of canonical points to carry along on export.
    pub query: Option<PathBuf>,
    /// Also write one PLY file per exported frame.
    pub ply: bool,
    pub pipeline: PipelineConfig,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset directory when it differs from `--out`.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Fitted frame range, end exclusive.
    #[arg(long, global = true, value_name = "A..B", value_parser = parse_frames)]
    pub frames: Option<(usize, usize)>,
    #[arg(long, global = true, value_name = "INT")]
    pub cluster_count: Option<usize>,
    #[arg(long, global = true, value_name = "INT")]
    pub epochs: Option<usize>,
    /// Frames per training window; 0 unrolls the whole range.
    #[arg(long, global = true, value_name = "INT")]
    pub window: Option<usize>,
    /// Simulation substeps per frame.
    #[arg(long, global = true, value_name = "INT")]
    pub substeps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, global = true, value_name = "PATH")]
    pub query: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ply: bool,
}

pub fn parse_frames(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: usize = a
        .trim()
        .parse()
        .map_err(|e| format!("bad range start {a:?}: {e}"))?;
    let b: usize = b
        .trim()
        .parse()
        .map_err(|e| format!("bad range end {b:?}: {e}"))?;
    if a + 2 > b {
        return Err(format!("range {a}..{b} must span at least two frames"));
    }
    Ok((a, b))
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut config = match &args.config {
            Some(path) => read_json::<RunConfig>(path)?,
            None => RunConfig {
                out: PathBuf::from("."),
                ..RunConfig::default()
            },
        };
        if config.out.as_os_str().is_empty() {
            config.out = PathBuf::from(".");
        }
        config.apply(args);
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(out) = &args.out {
            self.out = out.clone();
        }
        if let Some(data) = &args.data {
            self.data = Some(data.clone());
        }
        if let Some(preset) = args.preset {
            self.preset = preset;
            self.scene = None;
        }
        if let Some(query) = &args.query {
            self.query = Some(query.clone());
        }
        self.ply |= args.ply;
        let p = &mut self.pipeline;
        if let Some(frames) = args.frames {
            p.stage_one.frames = Some(frames);
            p.training.frames = Some(frames);
        }
        if let Some(c) = args.cluster_count {
            p.stage_one.cluster_count = c;
        }
        if let Some(e) = args.epochs {
            p.training.epochs = e;
        }
        if let Some(w) = args.window {
            p.training.window_length = w;
        }
        if let Some(s) = args.substeps {
            p.stage_one.simulation.substeps_per_frame = s;
        }
        p.stage_one.search.seed = self.seed;
        p.training.seed = self.seed;
    }

    fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        if p.stage_one.cluster_count == 0 {
            return Err(Error::Config("cluster count must be at least 1".into()));
        }
        if p.stage_one.simulation.substeps_per_frame == 0 {
            return Err(Error::Config(
                "substeps per frame must be at least 1".into(),
            ));
        }
        p.training.validate()
    }

    pub fn scene_spec(&self) -> SceneSpec {
        self.scene.clone().unwrap_or_else(|| self.preset.spec())
    }

    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().unwrap_or(&self.out)
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}
