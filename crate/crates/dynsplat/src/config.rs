//! Run configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use dynsplat_core::camera::SamplerConfig;
use dynsplat_core::enhance::EnhancerConfig;
use dynsplat_core::eval::FrameWeighting;
use dynsplat_core::losses::LossWeights;
use dynsplat_core::optimize::Schedule;
use dynsplat_core::render::RenderSettings;
use dynsplat_core::scene::SeedConfig;
use dynsplat_core::synthgen::{CovisConfig, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};
use crate::protocol::DEFAULT_TIMEOUT_S;

/// How seeding splits pixels into static and dynamic Gaussians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SeedMasks {
    /// Use the dataset's dynamic masks.
    #[default]
    Informed,
    /// Random partition with the same per-frame dynamic pixel count.
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackInit {
    /// Tracks follow the dynamic-mask centroid lifted at median depth.
    #[default]
    MaskCentroid,
    /// Zero tracks (Gaussians start static).
    Constant,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub seed_masks: SeedMasks,
    pub track_init: TrackInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    /// Program and leading arguments; the request directory is appended.
    pub command: Vec<String>,
    pub timeout_s: f64,
    /// Request directory, relative to the run directory.
    pub request_dir: PathBuf,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self { command: Vec::new(), timeout_s: DEFAULT_TIMEOUT_S as f64, request_dir: PathBuf::from("pseudo/request") }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub weighting: FrameWeighting,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Checkpoint period in iterations (0 = only the final checkpoint).
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { checkpoint_every: 1000, log_every: 250 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the camera sampler and of random seed masks.
    pub seed: u64,
    /// Dataset directory, relative to the run directory.
    pub dataset: PathBuf,
    pub synth: SynthSpec,
    pub covis: CovisConfig,
    pub render: RenderSettings,
    pub seeding: SeedConfig,
    pub init: InitConfig,
    pub loss: LossWeights,
    pub schedule: Schedule,
    pub sampler: SamplerConfig,
    pub enhancer: EnhancerConfig,
    pub external: ExternalConfig,
    pub eval: EvalConfig,
    pub run: RunOptions,
}

impl Default for RunConfig {
    /// The reference desk-scale fixture.
    fn default() -> Self {
        let mut schedule = Schedule { phase1_iters: 8000, phase2_iters: 2000, ..Default::default() };
        schedule.refine_lr.sampled_poses = 1e-2;
        Self {
            seed: 0,
            dataset: PathBuf::from("dataset"),
            synth: SynthSpec::default(),
            covis: CovisConfig::default(),
            render: RenderSettings::default(),
            seeding: SeedConfig { n_static: 3000, n_dynamic: 600, knot_count: 12, seed: 1, ..Default::default() },
            init: InitConfig::default(),
            loss: LossWeights::default(),
            schedule,
            sampler: SamplerConfig::default(),
            enhancer: EnhancerConfig::default(),
            external: ExternalConfig::default(),
            eval: EvalConfig::default(),
            run: RunOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = |e: dynsplat_core::Error| RunError::Config(e.to_string());
        self.synth.validate().map_err(c)?;
        self.render.validate().map_err(c)?;
        self.loss.validate().map_err(c)?;
        self.schedule.validate().map_err(c)?;
        self.enhancer.validate().map_err(c)?;
        if self.sampler.ramp_samples < 2 || !(self.sampler.weight_min <= self.sampler.weight_max) {
            return Err(RunError::Config("sampler: ramp_samples >= 2 and weight_min <= weight_max required".into()));
        }
        if !(self.covis.gamma >= 0.0 && self.covis.gamma <= 1.0 && self.covis.epsilon > 0.0) {
            return Err(RunError::Config("covis: gamma in [0, 1] and epsilon > 0 required".into()));
        }
        if !(self.external.timeout_s.is_finite() && self.external.timeout_s > 0.0) {
            return Err(RunError::Config("external.timeout_s must be positive".into()));
        }
        if self.seeding.knot_count < 2 {
            return Err(RunError::Config("seeding.knot_count must be at least 2".into()));
        }
        Ok(())
    }
}
