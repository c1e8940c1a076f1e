//! Pipeline stages over a run directory.
//!
//! Layout (all relative to the run directory): the dataset (`dataset/` by default),
//! `checkpoints/`, `sampled_cameras.json`, `pseudo/`, `eval/<model>/` and one
//! `manifest.json` that every invocation appends its stage record to.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dynsplat_core::camera::{sample_training_cameras, SampledCameras, Trajectory};
use dynsplat_core::enhance::{
    assemble_records, pseudo_requests, EnhanceItem, Enhancer, EnhancerMode, PseudoViewRecord, SceneGroundTruth, Simulator,
    ViewKey,
};
use dynsplat_core::eval::{benchmark_report, EvalFrame, MetricsReport};
use dynsplat_core::image::Image;
use dynsplat_core::optimize::{OptimState, RefineFlags, Trainer};
use dynsplat_core::render::{render_scene, RenderSettings};
use dynsplat_core::scene::{init_tracks_from_masks, random_partition_masks, seed_from_depth, Scene, SceneSubset};
use dynsplat_core::synthgen::{generate_scene, render_dataset};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SeedMasks, TrackInit};
use crate::dataset::{self, test_name, Dataset};
use crate::error::{Result, RunError};
use crate::formats::{read_json, write_json, SCHEMA_VERSION};
use crate::io;
use crate::protocol::{view_file, ExternalEnhancer};

pub const BASELINE: &str = "baseline";

/// Model name of a refinement variant.
pub fn variant_name(flags: RefineFlags) -> &'static str {
    match (flags.use_dr, flags.use_so) {
        (true, true) => "full",
        (true, false) => "no-so",
        (false, true) => "no-dr",
        (false, false) => "naive",
    }
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, cfg: &RunConfig) -> PathBuf {
        self.root.join(&cfg.dataset)
    }

    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{model}.json"))
    }

    pub fn periodic_checkpoint(&self, model: &str, iter: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("{model}_{iter:06}.json"))
    }

    pub fn sampled(&self) -> PathBuf {
        self.root.join("sampled_cameras.json")
    }

    pub fn pseudo(&self) -> PathBuf {
        self.root.join("pseudo")
    }

    pub fn eval(&self, model: &str) -> PathBuf {
        self.root.join("eval").join(model)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// Everything needed to resume optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: String,
    /// Iterations completed in this stage.
    pub iteration: usize,
    pub total_iterations: usize,
    pub flags: Option<RefineFlags>,
    pub scene: Scene,
    pub input: Trajectory,
    pub sampled: Option<Trajectory>,
    pub state: OptimState,
}

impl Checkpoint {
    fn of(model: &str, iteration: usize, total: usize, flags: Option<RefineFlags>, tr: &Trainer) -> Self {
        Self {
            model: model.to_string(),
            iteration,
            total_iterations: total,
            flags,
            scene: tr.scene.clone(),
            input: tr.input.clone(),
            sampled: tr.sampled.clone(),
            state: tr.state.clone(),
        }
    }

    pub fn into_trainer(self, cfg: &RunConfig) -> Result<Trainer> {
        let mut tr = Trainer::new(self.scene, self.input, cfg.schedule.clone(), cfg.loss, cfg.render)?;
        if let Some(s) = self.sampled {
            tr.attach_sampled(s)?;
        }
        tr.state = self.state;
        tr.state.check_shapes(&tr.scene, tr.input.len(), tr.sampled.as_ref().map_or(0, |s| s.len()))?;
        Ok(tr)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(RunError::Data(format!("checkpoint {} not found", path.display())));
    }
    read_json(path, "checkpoint")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineInfo {
    pub name: String,
    pub version: String,
    pub git: Option<String>,
}

impl EngineInfo {
    pub fn current() -> Self {
        let git = std::process::Command::new("git")
            .args(["-C", env!("CARGO_MANIFEST_DIR"), "describe", "--always", "--dirty", "--tags"])
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
        Self { name: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into(), git }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: String,
    pub flags: serde_json::Value,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine: EngineInfo,
    pub stages: Vec<StageRecord>,
}

/// Appends a stage record to the run's single manifest.
pub fn record_stage(run: &RunDir, record: StageRecord) -> Result<()> {
    let path = run.manifest();
    let mut m = if path.is_file() {
        read_json::<Manifest>(&path, "manifest")?
    } else {
        Manifest { engine: EngineInfo::current(), stages: Vec::new() }
    };
    m.engine = EngineInfo::current();
    m.stages.push(record);
    write_json(&path, "manifest", &m)
}

/// `synth`: generates and writes the synthetic dataset.
pub fn synth(run: &RunDir, cfg: &RunConfig) -> Result<PathBuf> {
    let t0 = Instant::now();
    let scene = generate_scene(&cfg.synth)?;
    let data = render_dataset(&scene, &cfg.render, &cfg.covis)?;
    let dir = run.dataset(cfg);
    dataset::write_synthetic(&dir, &cfg.synth, &cfg.covis, &cfg.render, &scene, &data)?;
    log::info!("synth: {} frames, {} test views in {:.1}s", data.frames.len(), data.test_images.len(), t0.elapsed().as_secs_f64());
    Ok(dir)
}

pub fn load_dataset(run: &RunDir, cfg: &RunConfig) -> Result<Dataset> {
    dataset::read(&run.dataset(cfg))
}

/// Seeds the phase-1 scene from the dataset.
pub fn initial_scene(cfg: &RunConfig, data: &Dataset, seed_masks: SeedMasks) -> Result<Scene> {
    let masks = match seed_masks {
        SeedMasks::Informed => data.dyn_masks.clone(),
        SeedMasks::Random => random_partition_masks(&data.dyn_masks, &data.depths, cfg.seed)?,
    };
    let train = &data.cameras.train;
    let (mut scene, report) = seed_from_depth(&data.frames, &data.depths, &masks, train, &cfg.seeding)?;
    for w in &report.warnings {
        log::warn!("seeding: {w:?}");
    }
    if cfg.init.track_init == TrackInit::MaskCentroid
        && !init_tracks_from_masks(&mut scene, &report.dynamic_lift_frames, &data.depths, &masks, train)?
    {
        log::warn!("seeding: no usable dynamic mask, tracks left constant");
    }
    Ok(scene)
}

fn maybe_checkpoint(run: &RunDir, cfg: &RunConfig, ck: impl FnOnce() -> Checkpoint, iter: usize, total: usize) -> Result<()> {
    let every = cfg.run.checkpoint_every;
    if every > 0 && iter % every == 0 && iter < total {
        let c = ck();
        write_json(&run.periodic_checkpoint(&c.model, iter), "checkpoint", &c)?;
    }
    Ok(())
}

/// Latest checkpoint of `model` (final or periodic), if any.
pub fn latest_checkpoint(run: &RunDir, model: &str) -> Result<Option<Checkpoint>> {
    let fin = run.checkpoint(model);
    if fin.is_file() {
        return load_checkpoint(&fin).map(Some);
    }
    let dir = run.root.join("checkpoints");
    let Ok(entries) = std::fs::read_dir(&dir) else { return Ok(None) };
    let prefix = format!("{model}_");
    let mut best: Option<PathBuf> = None;
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().to_string();
        if name.starts_with(&prefix) && name.ends_with(".json") && best.as_ref().is_none_or(|b| e.path() > *b) {
            best = Some(e.path());
        }
    }
    best.map(|p| load_checkpoint(&p)).transpose()
}

/// `train`: phase-1 baseline. Resumes from the latest baseline checkpoint when asked.
pub fn train(run: &RunDir, cfg: &RunConfig, seed_masks: SeedMasks, resume: bool) -> Result<Checkpoint> {
    let data = load_dataset(run, cfg)?;
    let total = cfg.schedule.phase1_iters;
    let (mut tr, start) = match resume.then(|| latest_checkpoint(run, BASELINE)).transpose()?.flatten() {
        Some(c) => {
            let it = c.iteration;
            log::info!("train: resuming at iteration {it}");
            (c.into_trainer(cfg)?, it)
        }
        None => {
            let scene = initial_scene(cfg, &data, seed_masks)?;
            (Trainer::new(scene, data.cameras.train.clone(), cfg.schedule.clone(), cfg.loss, cfg.render)?, 0)
        }
    };
    let t0 = Instant::now();
    for i in start..total {
        let log = tr.baseline_step(&data.frames, i)?;
        if cfg.run.log_every > 0 && (i + 1) % cfg.run.log_every == 0 {
            log::info!("train {}/{total}: frame {} loss {:.5} ({:.1}s)", i + 1, log.frame, log.loss, t0.elapsed().as_secs_f64());
        }
        maybe_checkpoint(run, cfg, || Checkpoint::of(BASELINE, i + 1, total, None, &tr), i + 1, total)?;
    }
    let ck = Checkpoint::of(BASELINE, total, total, None, &tr);
    write_json(&run.checkpoint(BASELINE), "checkpoint", &ck)?;
    Ok(ck)
}

/// `sample-cams`: sampled training cameras around the (refined) input trajectory.
pub fn sample_cams(run: &RunDir, cfg: &RunConfig) -> Result<SampledCameras> {
    let base = load_checkpoint(&run.checkpoint(BASELINE))?;
    let sc = sample_training_cameras(&base.input, &cfg.sampler, cfg.seed)?;
    if sc.extremes.degenerate {
        log::warn!("sample-cams: extreme views are degenerate");
    }
    write_json(&run.sampled(), "sampled_cameras", &sc)?;
    Ok(sc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    pub camera: usize,
    pub frame: usize,
    pub pose_index: usize,
    pub pose: dynsplat_core::camera::PoseSE3,
    pub file: String,
    pub mask_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoIndexFile {
    pub mode: EnhancerMode,
    pub strength_k: u32,
    pub entries: Vec<PseudoEntry>,
}

/// Replays already enhanced images through the record assembly.
struct Precomputed(Vec<Image>);

impl Enhancer for Precomputed {
    fn enhance_batch(&mut self, items: &[EnhanceItem]) -> dynsplat_core::Result<Vec<Image>> {
        if items.len() != self.0.len() {
            return Err(dynsplat_core::Error::Enhancer(format!("{} outputs for {} requests", self.0.len(), items.len())));
        }
        Ok(std::mem::take(&mut self.0))
    }
}

/// Builds pseudo views in one batch with the configured enhancer.
pub fn make_pseudo_records(
    cfg: &RunConfig,
    scene: &Scene,
    sampled: &Trajectory,
    gt_scene: Option<&Scene>,
    external: Option<(&[String], PathBuf)>,
) -> Result<Vec<PseudoViewRecord>> {
    let mode = if external.is_some() { EnhancerMode::External } else { cfg.enhancer.mode };
    let gt = gt_scene.map(|s| SceneGroundTruth { scene: s, settings: cfg.render });
    let gt_ref = match mode {
        EnhancerMode::SimulateFromGt => Some(gt.as_ref().ok_or_else(|| {
            RunError::Data("simulate_from_gt needs a dataset with gt_scene.json".into())
        })? as &dyn dynsplat_core::enhance::GroundTruthProvider),
        _ => None,
    };
    let (items, extra) = pseudo_requests(scene, sampled, &cfg.render, gt_ref)?;
    let enhanced = match mode {
        EnhancerMode::External => {
            let (cmd, dir) = external
                .map(|(c, d)| (c.to_vec(), d))
                .ok_or_else(|| RunError::Config("enhancer.mode = external needs a command".into()))?;
            let mut ext = ExternalEnhancer::new(cmd, dir, sampled.intrinsics, cfg.enhancer.strength_k);
            ext.timeout = std::time::Duration::from_secs_f64(cfg.external.timeout_s);
            ext.run(&items)?
        }
        _ => Simulator { cfg: cfg.enhancer.clone() }.enhance_batch(&items)?,
    };
    Ok(assemble_records(items, extra, &mut Precomputed(enhanced))?)
}

/// `build-pseudo`: renders, masks and enhances every sampled view, persisted under `pseudo/`.
pub fn build_pseudo(run: &RunDir, cfg: &RunConfig, external_cmd: Option<Vec<String>>) -> Result<usize> {
    let t0 = Instant::now();
    let base = load_checkpoint(&run.checkpoint(BASELINE))?;
    let sc: SampledCameras = read_json(&run.sampled(), "sampled_cameras")?;
    let cmd = external_cmd.or_else(|| (cfg.enhancer.mode == EnhancerMode::External).then(|| cfg.external.command.clone()));
    if let Some(c) = &cmd {
        if c.is_empty() {
            return Err(RunError::Config("external enhancer command is empty".into()));
        }
    }
    let gt = match cfg.enhancer.mode {
        EnhancerMode::SimulateFromGt if cmd.is_none() => load_dataset(run, cfg)?.gt_scene,
        _ => None,
    };
    let request_dir = run.root.join(&cfg.external.request_dir);
    let ext = cmd.as_deref().map(|c| (c, request_dir));
    let records = make_pseudo_records(cfg, &base.scene, &sc.trajectory, gt.as_ref(), ext)?;
    let dir = run.pseudo();
    let mut entries = Vec::with_capacity(records.len());
    for r in &records {
        let file = view_file(r.key.camera, r.key.frame);
        io::write_rgb(&dir.join("renders").join(&file), &r.render)?;
        io::write_rgb(&dir.join("enhanced").join(&file), &r.enhanced)?;
        io::write_mask(&dir.join("masks").join(&file), &r.dyn_mask)?;
        entries.push(PseudoEntry {
            camera: r.key.camera,
            frame: r.key.frame,
            pose_index: r.pose_index,
            pose: r.pose,
            file,
            mask_empty: r.mask_empty(),
        });
    }
    let empty = entries.iter().filter(|e| e.mask_empty).count();
    if empty > 0 {
        log::warn!("build-pseudo: {empty} of {} views have an empty dynamic mask", entries.len());
    }
    let mode = if cmd.is_some() { EnhancerMode::External } else { cfg.enhancer.mode };
    let index = PseudoIndexFile { mode, strength_k: cfg.enhancer.strength_k, entries };
    write_json(&dir.join("records.json"), "pseudo_records", &index)?;
    log::info!("build-pseudo: {} views in {:.1}s", records.len(), t0.elapsed().as_secs_f64());
    Ok(records.len())
}

pub fn load_pseudo(run: &RunDir) -> Result<Vec<PseudoViewRecord>> {
    let dir = run.pseudo();
    let index: PseudoIndexFile = read_json(&dir.join("records.json"), "pseudo_records")?;
    let mut out = Vec::with_capacity(index.entries.len());
    for e in index.entries {
        out.push(PseudoViewRecord {
            key: ViewKey { camera: e.camera, frame: e.frame },
            pose_index: e.pose_index,
            pose: e.pose,
            render: io::read_rgb(&dir.join("renders").join(&e.file))?,
            enhanced: io::read_rgb(&dir.join("enhanced").join(&e.file))?,
            dyn_mask: io::read_mask(&dir.join("masks").join(&e.file))?,
        });
    }
    Ok(out)
}

/// `refine`: phase-2 refinement from the baseline checkpoint; the model is named by its flags.
pub fn refine(run: &RunDir, cfg: &RunConfig, flags: RefineFlags, resume: bool) -> Result<Checkpoint> {
    let data = load_dataset(run, cfg)?;
    let records = load_pseudo(run)?;
    let sc: SampledCameras = read_json(&run.sampled(), "sampled_cameras")?;
    let model = variant_name(flags);
    let total = cfg.schedule.phase2_iters;
    let resumed = if resume { latest_checkpoint(run, model)? } else { None };
    let (mut tr, start) = match resumed {
        Some(c) => {
            if c.flags != Some(flags) {
                return Err(RunError::Data(format!("checkpoint for {model} has flags {:?}", c.flags)));
            }
            let it = c.iteration;
            log::info!("refine {model}: resuming at iteration {it}");
            (c.into_trainer(cfg)?, it)
        }
        None => {
            let mut tr = load_checkpoint(&run.checkpoint(BASELINE))?.into_trainer(cfg)?;
            tr.attach_sampled(sc.trajectory.clone())?;
            (tr, 0)
        }
    };
    let index = dynsplat_core::optimize::PseudoIndex::new(&records, &sc.trajectory, tr.input.len())?;
    let t0 = Instant::now();
    for i in start..total {
        let log = tr.refine_step(&data.frames, &index, flags, i)?;
        if log.isolation_violations() > 0 {
            return Err(RunError::Numeric(format!("update isolation violated at iteration {i}: {log:?}")));
        }
        if cfg.run.log_every > 0 && (i + 1) % cfg.run.log_every == 0 {
            log::info!(
                "refine {model} {}/{total}: pseudo {:.5} input {:.5} camera {:?} ({:.1}s)",
                i + 1,
                log.pseudo_loss,
                log.input_loss,
                log.camera_loss,
                t0.elapsed().as_secs_f64()
            );
        }
        maybe_checkpoint(run, cfg, || Checkpoint::of(model, i + 1, total, Some(flags), &tr), i + 1, total)?;
    }
    let ck = Checkpoint::of(model, total, total, Some(flags), &tr);
    write_json(&run.checkpoint(model), "checkpoint", &ck)?;
    Ok(ck)
}

/// Renders the held-out views of a scene.
pub fn render_test_views(scene: &Scene, test: &Trajectory, settings: &RenderSettings) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(test.len());
    for (pose, &t) in test.poses.iter().zip(&test.timesteps) {
        out.push(render_scene(scene, t as f64, pose, &test.intrinsics, settings, SceneSubset::All)?.output.color);
    }
    Ok(out)
}

/// Scores the predictions in `pred_dir` (`v{i:03}.png`) against the dataset.
pub fn report_from_dir(pred_dir: &Path, data: &Dataset, cfg: &RunConfig) -> Result<MetricsReport> {
    let n = data.test_images.len();
    let missing: Vec<String> = (0..n).map(test_name).filter(|f| !pred_dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Err(RunError::Data(format!("{}: missing predictions {}", pred_dir.display(), missing.join(", "))));
    }
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let p = pred_dir.join(test_name(i));
        let pred = io::read_rgb(&p)?;
        if !pred.same_shape(&data.test_images[i]) {
            return Err(RunError::Data(format!("{}: size differs from the ground truth", p.display())));
        }
        frames.push(EvalFrame {
            name: test_name(i),
            pred,
            gt: data.test_images[i].clone(),
            covis: data.covis_masks[i].clone(),
            dynamic: data.test_dyn_masks[i].clone(),
        });
    }
    Ok(benchmark_report(&frames, cfg.eval.weighting)?)
}

fn fmt_metric(a: &dynsplat_core::eval::Aggregate, digits: usize) -> String {
    match a.mean {
        Some(v) => format!("{v:.digits$}"),
        None => "n/a".into(),
    }
}

/// Plain-text table of a report.
pub fn report_table(model: &str, r: &MetricsReport) -> String {
    let mut s = format!("model {model} (schema {SCHEMA_VERSION}, {:?} frame weighting)\n", r.weighting);
    s.push_str(&format!(
        "{:<10} {:>8} {:>8} {:>8} {:>8}\n",
        "frame", "PSNR-m", "SSIM-m", "PSNR-D", "SSIM-D"
    ));
    let cell = |m: &dynsplat_core::eval::MaskedMetric, d: usize| {
        if m.is_empty() {
            "empty".to_string()
        } else if m.capped {
            format!("{:.d$}*", m.value)
        } else {
            format!("{:.d$}", m.value)
        }
    };
    for f in &r.frames {
        s.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8}\n",
            f.name,
            cell(&f.psnr_m, 2),
            cell(&f.ssim_m, 4),
            cell(&f.psnr_d, 2),
            cell(&f.ssim_d, 4)
        ));
    }
    s.push_str(&format!(
        "{:<10} {:>8} {:>8} {:>8} {:>8}\n",
        "mean",
        fmt_metric(&r.psnr_m, 2),
        fmt_metric(&r.ssim_m, 4),
        fmt_metric(&r.psnr_d, 2),
        fmt_metric(&r.ssim_d, 4)
    ));
    s.push_str(&format!(
        "covis/dynamic intersection: {:.2}% ({} of {} covisible pixels)\n",
        r.intersection.pct, r.intersection.intersection_pixels, r.intersection.covis_pixels
    ));
    s
}

/// `eval`: renders the held-out views of `model`, writes them and the reports.
pub fn eval(run: &RunDir, cfg: &RunConfig, model: &str) -> Result<MetricsReport> {
    let data = load_dataset(run, cfg)?;
    let ck = load_checkpoint(&run.checkpoint(model))?;
    let out = run.eval(model);
    let renders = render_test_views(&ck.scene, &data.cameras.test, &cfg.render)?;
    for (i, img) in renders.iter().enumerate() {
        io::write_rgb(&out.join("renders").join(test_name(i)), img)?;
    }
    let report = report_from_dir(&out.join("renders"), &data, cfg)?;
    write_json(&out.join("report.json"), "metrics_report", &report)?;
    std::fs::write(out.join("report.txt"), report_table(model, &report)).map_err(|e| RunError::io(&out, e))?;
    Ok(report)
}

/// `full-run`: every stage in order, refinement with `flags`.
pub fn full_run(run: &RunDir, cfg: &RunConfig, flags: RefineFlags, seed_masks: SeedMasks) -> Result<(MetricsReport, MetricsReport)> {
    synth(run, cfg)?;
    train(run, cfg, seed_masks, false)?;
    sample_cams(run, cfg)?;
    build_pseudo(run, cfg, None)?;
    refine(run, cfg, flags, false)?;
    let base = eval(run, cfg, BASELINE)?;
    let refined = eval(run, cfg, variant_name(flags))?;
    Ok((base, refined))
}
