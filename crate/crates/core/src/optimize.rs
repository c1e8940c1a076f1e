//! Adam, baseline training on the input video and two-pass refinement on pseudo views.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{se3_update, PoseSE3, Trajectory};
use crate::enhance::PseudoViewRecord;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{camera_loss_grad, dynamic_loss_grad, input_view_loss_grad, LossWeights};
use crate::render::{render_scene, scene_backward, GradientSet, RenderSettings};
use crate::scene::{Gaussian3D, Scene, SceneSubset, GAUSSIAN_PARAMS};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One Adam step; `lr(i)` gives the learning rate of element `i`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            params[i] -= lr(i) * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }

    /// Adam step on a pose: the update is computed in the tangent space and applied with `se3_update`.
    pub fn update_pose(&mut self, pose: &PoseSE3, grad: &[f64; 6], lr: f64) -> PoseSE3 {
        let mut delta = [0.0; 6];
        self.update(&mut delta, grad, |_| lr);
        se3_update(pose, &delta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub means: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub tracks: f64,
    pub input_poses: f64,
    pub sampled_poses: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-3,
            rotation: 5e-3,
            scale: 5e-3,
            opacity: 5e-3,
            color: 2.5e-3,
            tracks: 1.6e-3,
            input_poses: 1e-4,
            sampled_poses: 1e-4,
        }
    }
}

impl LearningRates {
    /// Learning rate of Gaussian parameter `p` in [`Gaussian3D::to_params`] order.
    pub fn gaussian(&self, p: usize) -> f64 {
        match p {
            0..=2 => self.means,
            3..=6 => self.rotation,
            7..=9 => self.scale,
            10 => self.opacity,
            _ => self.color,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            means: self.means * s,
            rotation: self.rotation * s,
            scale: self.scale * s,
            opacity: self.opacity * s,
            color: self.color * s,
            tracks: self.tracks * s,
            input_poses: self.input_poses * s,
            sampled_poses: self.sampled_poses * s,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.means,
            self.rotation,
            self.scale,
            self.opacity,
            self.color,
            self.tracks,
            self.input_poses,
            self.sampled_poses,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput("learning rates must be finite and non-negative".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub seed: u64,
    pub lr: LearningRates,
    pub refine_lr: LearningRates,
    /// Weight of the input-view loss relative to the pseudo-view loss in pass 2.
    pub baseline_weight: f64,
    /// Sampled views drawn per refinement iteration.
    pub views_per_iter: usize,
    /// Upper bound on Gaussian scales (scene units).
    pub max_extent: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            phase1_iters: 8000,
            phase2_iters: 40000,
            seed: 0,
            lr: LearningRates::default(),
            refine_lr: LearningRates::default(),
            baseline_weight: 1.0,
            views_per_iter: 2,
            max_extent: 1.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.phase1_iters == 0 || self.phase2_iters == 0 {
            return Err(Error::InvalidInput("iteration counts must be positive".into()));
        }
        if self.views_per_iter == 0 {
            return Err(Error::InvalidInput("views_per_iter must be positive".into()));
        }
        if !(self.max_extent.is_finite() && self.max_extent > 0.0) {
            return Err(Error::InvalidInput("max_extent must be positive".into()));
        }
        if !(self.baseline_weight.is_finite() && self.baseline_weight >= 0.0) {
            return Err(Error::InvalidInput("baseline_weight must be non-negative".into()));
        }
        self.lr.validate()?;
        self.refine_lr.validate()
    }
}

/// Optimizer state for every parameter group. Pose groups keep one Adam per pose so that
/// poses that were not drawn in an iteration are left untouched, moments included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub static_gaussians: Adam,
    pub dynamic_gaussians: Adam,
    pub tracks: Adam,
    pub input_poses: Vec<Adam>,
    pub sampled_poses: Vec<Adam>,
}

impl OptimState {
    pub fn new(scene: &Scene, input_poses: usize, sampled_poses: usize) -> Self {
        Self {
            static_gaussians: Adam::new(scene.static_set.len() * GAUSSIAN_PARAMS),
            dynamic_gaussians: Adam::new(scene.dynamic_set.len() * GAUSSIAN_PARAMS),
            tracks: Adam::new(scene.tracks.iter().map(|t| 3 * t.knots.len()).sum()),
            input_poses: vec![Adam::new(6); input_poses],
            sampled_poses: vec![Adam::new(6); sampled_poses],
        }
    }

    pub fn check_shapes(&self, scene: &Scene, input: usize, sampled: usize) -> Result<()> {
        let ok = self.static_gaussians.m.len() == scene.static_set.len() * GAUSSIAN_PARAMS
            && self.dynamic_gaussians.m.len() == scene.dynamic_set.len() * GAUSSIAN_PARAMS
            && self.tracks.m.len() == scene.tracks.iter().map(|t| 3 * t.knots.len()).sum::<usize>()
            && self.input_poses.len() == input
            && self.sampled_poses.len() == sampled;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("optimizer state does not match the scene and trajectories".into()))
        }
    }
}

fn step_gaussians(set: &mut [Gaussian3D], grads: &[[f64; GAUSSIAN_PARAMS]], adam: &mut Adam, lr: &LearningRates, max_extent: f64) {
    if set.is_empty() {
        return;
    }
    let mut params: Vec<f64> = set.iter().flat_map(|g| g.to_params()).collect();
    let flat: Vec<f64> = grads.iter().flatten().copied().collect();
    adam.update(&mut params, &flat, |i| lr.gaussian(i % GAUSSIAN_PARAMS));
    for (g, p) in set.iter_mut().zip(params.chunks_exact(GAUSSIAN_PARAMS)) {
        *g = Gaussian3D::from_params(p);
        g.project_to_valid(max_extent);
    }
}

fn step_tracks(scene: &mut Scene, knots: &[Vec<crate::math::Vec3>], adam: &mut Adam, lr: f64) {
    if adam.m.is_empty() {
        return;
    }
    let mut params: Vec<f64> = scene.tracks.iter().flat_map(|t| t.knots.iter().flat_map(|k| k.to_array())).collect();
    let flat: Vec<f64> = knots.iter().flat_map(|t| t.iter().flat_map(|k| k.to_array())).collect();
    adam.update(&mut params, &flat, |_| lr);
    let mut it = params.chunks_exact(3);
    for t in scene.tracks.iter_mut() {
        for k in t.knots.iter_mut() {
            let c = it.next().expect("track layout");
            *k = crate::math::Vec3::new(c[0], c[1], c[2]);
        }
    }
}

const POSE_PARAMS: [&str; 6] = ["omega_x", "omega_y", "omega_z", "v_x", "v_y", "v_z"];

/// Errors on the first non-finite gradient entry, naming its group and parameter.
pub fn check_gradients(g: &GradientSet, pose_group: &'static str, pose_index: usize) -> Result<()> {
    for (group, set) in [("static_gaussians", &g.static_grads), ("dynamic_gaussians", &g.dynamic_grads)] {
        for (index, row) in set.iter().enumerate() {
            if let Some(p) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { group, index, param: Gaussian3D::param_name(p) });
            }
        }
    }
    for (index, t) in g.knots.iter().enumerate() {
        if t.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFiniteGradient { group: "tracks", index, param: "knot" });
        }
    }
    check_pose_gradient(&g.pose, pose_group, pose_index)
}

pub fn check_pose_gradient(g: &[f64; 6], group: &'static str, index: usize) -> Result<()> {
    match g.iter().position(|v| !v.is_finite()) {
        Some(p) => Err(Error::NonFiniteGradient { group, index, param: POSE_PARAMS[p] }),
        None => Ok(()),
    }
}

fn fnv(h: &mut u64, v: f64) {
    for b in v.to_bits().to_le_bytes() {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
}

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;

/// Bit-level checksums of each parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupChecksums {
    pub gaussians: u64,
    pub tracks: u64,
    pub input_poses: u64,
    pub sampled_poses: u64,
}

fn pose_checksum(poses: &[PoseSE3]) -> u64 {
    let mut h = FNV_OFFSET;
    for p in poses {
        p.rotation.to_array().iter().chain(p.center.to_array().iter()).for_each(|v| fnv(&mut h, *v));
    }
    h
}

impl GroupChecksums {
    pub fn of(scene: &Scene, input: &Trajectory, sampled: Option<&Trajectory>) -> Self {
        let mut g = FNV_OFFSET;
        for x in scene.static_set.iter().chain(&scene.dynamic_set) {
            x.to_params().iter().for_each(|v| fnv(&mut g, *v));
        }
        let mut t = FNV_OFFSET;
        for tr in &scene.tracks {
            tr.knots.iter().flat_map(|k| k.to_array()).for_each(|v| fnv(&mut t, v));
        }
        Self {
            gaussians: g,
            tracks: t,
            input_poses: pose_checksum(&input.poses),
            sampled_poses: sampled.map_or(FNV_OFFSET, |s| pose_checksum(&s.poses)),
        }
    }

    /// Which groups differ: `[gaussians, tracks, input_poses, sampled_poses]`.
    pub fn changed(&self, after: &GroupChecksums) -> [bool; 4] {
        [
            self.gaussians != after.gaussians,
            self.tracks != after.tracks,
            self.input_poses != after.input_poses,
            self.sampled_poses != after.sampled_poses,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineFlags {
    /// Supervise pseudo views only inside their dynamic masks.
    pub use_dr: bool,
    /// Run pass 1, the sampled-pose update.
    pub use_so: bool,
}

impl Default for RefineFlags {
    fn default() -> Self {
        Self { use_dr: true, use_so: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineLog {
    pub iter: usize,
    pub frame: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineLog {
    pub iter: usize,
    pub frame: usize,
    pub views: Vec<usize>,
    pub camera_loss: Option<f64>,
    pub pseudo_loss: f64,
    pub input_loss: f64,
    pub pass1_changed: [bool; 4],
    pub pass2_changed: [bool; 4],
}

impl RefineLog {
    /// Groups changed outside each pass's allowed set.
    pub fn isolation_violations(&self) -> usize {
        let p1 = self.pass1_changed[..3].iter().filter(|c| **c).count();
        let p2 = usize::from(self.pass2_changed[3]);
        p1 + p2
    }
}

/// Lookup of pseudo records by (frame, slot), validated against the sampled trajectory.
pub struct PseudoIndex<'a> {
    records: &'a [PseudoViewRecord],
    table: Vec<Vec<usize>>,
}

impl<'a> PseudoIndex<'a> {
    pub fn new(records: &'a [PseudoViewRecord], sampled: &Trajectory, n_frames: usize) -> Result<Self> {
        let mut table = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let slots = sampled.indices_at(t);
            let mut row = Vec::with_capacity(slots.len());
            for (slot, idx) in slots.iter().enumerate() {
                let r = records
                    .iter()
                    .position(|r| r.key.frame == t && r.key.camera == slot && r.pose_index == *idx)
                    .ok_or(Error::MissingPseudoView { camera: slot, frame: t })?;
                row.push(r);
            }
            table.push(row);
        }
        Ok(Self { records, table })
    }

    pub fn get(&self, frame: usize, slot: usize) -> &'a PseudoViewRecord {
        &self.records[self.table[frame][slot]]
    }

    pub fn slots(&self, frame: usize) -> usize {
        self.table[frame].len()
    }
}

fn iteration_rng(seed: u64, phase: u64, iter: usize) -> ChaCha8Rng {
    let key = crate::enhance::ViewKey { camera: phase as usize, frame: iter };
    ChaCha8Rng::seed_from_u64(crate::enhance::view_seed(seed, key))
}

/// Everything that is optimized, plus the optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub scene: Scene,
    pub input: Trajectory,
    pub sampled: Option<Trajectory>,
    pub state: OptimState,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub settings: RenderSettings,
}

impl Trainer {
    pub fn new(scene: Scene, input: Trajectory, schedule: Schedule, weights: LossWeights, settings: RenderSettings) -> Result<Self> {
        scene.validate()?;
        input.validate()?;
        schedule.validate()?;
        weights.validate()?;
        settings.validate()?;
        if input.len() != scene.n_frames {
            return Err(Error::InvalidInput(format!(
                "input trajectory has {} poses for {} frames",
                input.len(),
                scene.n_frames
            )));
        }
        let state = OptimState::new(&scene, input.len(), 0);
        Ok(Self { scene, input, sampled: None, state, schedule, weights, settings })
    }

    pub fn attach_sampled(&mut self, sampled: Trajectory) -> Result<()> {
        sampled.validate()?;
        self.state.sampled_poses = vec![Adam::new(6); sampled.len()];
        self.sampled = Some(sampled);
        Ok(())
    }

    pub fn checksums(&self) -> GroupChecksums {
        GroupChecksums::of(&self.scene, &self.input, self.sampled.as_ref())
    }

    fn check_frames(&self, frames: &[Image]) -> Result<()> {
        if frames.len() != self.input.len() {
            return Err(Error::InvalidInput(format!("{} frames for {} input poses", frames.len(), self.input.len())));
        }
        for f in frames {
            if f.width != self.input.intrinsics.width || f.height != self.input.intrinsics.height || f.channels != 3 {
                return Err(Error::ShapeMismatch {
                    left: (f.width, f.height, f.channels),
                    right: (self.input.intrinsics.width, self.input.intrinsics.height, 3),
                });
            }
        }
        Ok(())
    }

    /// Input-view loss on frame `t`; accumulates scene gradients into `acc` and returns
    /// the loss and the input-pose gradient.
    fn input_view(&self, frames: &[Image], t: usize, weight: f64, acc: &mut GradientSet) -> Result<(f64, [f64; 6])> {
        let intr = &self.input.intrinsics;
        let r = render_scene(&self.scene, t as f64, &self.input.poses[t], intr, &self.settings, SceneSubset::All)?;
        let (loss, mut g) = input_view_loss_grad(&frames[t], &r.output.color, &self.weights)?;
        g.data.iter_mut().for_each(|v| *v *= weight);
        let grads = scene_backward(&self.scene, &r, &g)?;
        acc.add_scaled(&grads, 1.0);
        Ok((loss, grads.pose))
    }

    fn apply_scene_step(&mut self, grads: &GradientSet, lr: &LearningRates) {
        let max_extent = self.schedule.max_extent;
        step_gaussians(&mut self.scene.static_set, &grads.static_grads, &mut self.state.static_gaussians, lr, max_extent);
        step_gaussians(&mut self.scene.dynamic_set, &grads.dynamic_grads, &mut self.state.dynamic_gaussians, lr, max_extent);
        step_tracks(&mut self.scene, &grads.knots, &mut self.state.tracks, lr.tracks);
    }

    /// One baseline iteration: random input frame, reconstruction loss, update of
    /// Gaussians, tracks and that frame's input pose.
    pub fn baseline_step(&mut self, frames: &[Image], iter: usize) -> Result<BaselineLog> {
        self.check_frames(frames)?;
        let mut rng = iteration_rng(self.schedule.seed, 1, iter);
        let t = rng.random_range(0..self.input.len());
        let mut acc = GradientSet::zeros(&self.scene);
        let (loss, pose_grad) = self.input_view(frames, t, 1.0, &mut acc)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, detail: format!("input-view loss on frame {t}") });
        }
        acc.pose = pose_grad;
        check_gradients(&acc, "input_poses", t)?;
        let lr = self.schedule.lr;
        self.apply_scene_step(&acc, &lr);
        self.input.poses[t] = self.state.input_poses[t].update_pose(&self.input.poses[t], &pose_grad, lr.input_poses);
        Ok(BaselineLog { iter, frame: t, loss })
    }

    fn draw_views(&self, pseudo: &PseudoIndex, iter: usize) -> (usize, Vec<usize>) {
        let mut rng = iteration_rng(self.schedule.seed, 2, iter);
        let t = rng.random_range(0..self.input.len());
        let n = pseudo.slots(t);
        let k = self.schedule.views_per_iter.min(n);
        let mut picks: Vec<usize> = sample(&mut rng, n, k).into_iter().collect();
        picks.sort_unstable();
        (t, picks)
    }

    fn sampled_view(
        &self,
        rec: &PseudoViewRecord,
        t: usize,
        masked: bool,
        weight: f64,
    ) -> Result<(f64, GradientSet)> {
        let sampled = self.sampled.as_ref().ok_or_else(|| Error::InvalidInput("no sampled trajectory".into()))?;
        let pose = &sampled.poses[rec.pose_index];
        let r = render_scene(&self.scene, t as f64, pose, &sampled.intrinsics, &self.settings, SceneSubset::All)?;
        let (report, mut g) = if masked {
            dynamic_loss_grad(&rec.enhanced, &r.output.color, &rec.dyn_mask, &self.weights)?
        } else {
            camera_loss_grad(&rec.enhanced, &r.output.color, &self.weights)?
        };
        g.data.iter_mut().for_each(|v| *v *= weight);
        Ok((report.total, scene_backward(&self.scene, &r, &g)?))
    }

    /// Pass 1: full-image loss on the drawn views, updating only their sampled poses.
    pub fn sampled_pose_pass(&mut self, pseudo: &PseudoIndex, t: usize, picks: &[usize], iter: usize) -> Result<f64> {
        let w = 1.0 / picks.len() as f64;
        let mut loss = 0.0;
        let mut updates = Vec::with_capacity(picks.len());
        for &slot in picks {
            let rec = pseudo.get(t, slot);
            let (l, g) = self.sampled_view(rec, t, false, w)?;
            loss += w * l;
            check_pose_gradient(&g.pose, "sampled_poses", rec.pose_index)?;
            updates.push((rec.pose_index, g.pose));
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, detail: format!("camera loss at frame {t}") });
        }
        let lr = self.schedule.refine_lr.sampled_poses;
        let sampled = self.sampled.as_mut().expect("checked in sampled_view");
        for (idx, g) in updates {
            sampled.poses[idx] = self.state.sampled_poses[idx].update_pose(&sampled.poses[idx], &g, lr);
        }
        Ok(loss)
    }

    /// One refinement iteration (pass 1 if enabled, then pass 2) with isolation checksums.
    pub fn refine_step(&mut self, frames: &[Image], pseudo: &PseudoIndex, flags: RefineFlags, iter: usize) -> Result<RefineLog> {
        self.check_frames(frames)?;
        let (t, picks) = self.draw_views(pseudo, iter);
        let before = self.checksums();
        let camera_loss = if flags.use_so { Some(self.sampled_pose_pass(pseudo, t, &picks, iter)?) } else { None };
        let mid = self.checksums();

        // pass 2: fresh renders with the updated sampled poses
        let mut acc = GradientSet::zeros(&self.scene);
        let w = 1.0 / picks.len() as f64;
        let mut pseudo_loss = 0.0;
        for &slot in &picks {
            let rec = pseudo.get(t, slot);
            let (l, g) = self.sampled_view(rec, t, flags.use_dr, w)?;
            pseudo_loss += w * l;
            acc.add_scaled(&g, 1.0);
        }
        let (input_loss, pose_grad) = self.input_view(frames, t, self.schedule.baseline_weight, &mut acc)?;
        if !(pseudo_loss.is_finite() && input_loss.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: format!("pseudo {pseudo_loss}, input {input_loss} at frame {t}"),
            });
        }
        acc.pose = pose_grad;
        check_gradients(&acc, "input_poses", t)?;
        let lr = self.schedule.refine_lr;
        self.apply_scene_step(&acc, &lr);
        self.input.poses[t] = self.state.input_poses[t].update_pose(&self.input.poses[t], &pose_grad, lr.input_poses);
        let after = self.checksums();
        Ok(RefineLog {
            iter,
            frame: t,
            views: picks,
            camera_loss,
            pseudo_loss,
            input_loss,
            pass1_changed: before.changed(&mid),
            pass2_changed: mid.changed(&after),
        })
    }

    /// Pass 1 alone for one iteration (same view draw as [`Trainer::refine_step`]).
    pub fn pose_only_step(&mut self, pseudo: &PseudoIndex, iter: usize) -> Result<f64> {
        let (t, picks) = self.draw_views(pseudo, iter);
        self.sampled_pose_pass(pseudo, t, &picks, iter)
    }
}

/// Runs baseline iterations `iters`, calling `log` after each.
pub fn train_baseline(
    trainer: &mut Trainer,
    frames: &[Image],
    iters: core::ops::Range<usize>,
    log: &mut dyn FnMut(&BaselineLog),
) -> Result<()> {
    for i in iters {
        let l = trainer.baseline_step(frames, i)?;
        log(&l);
    }
    Ok(())
}

/// Runs refinement iterations `iters`, calling `log` after each.
pub fn refine_diffusion_aware(
    trainer: &mut Trainer,
    frames: &[Image],
    records: &[PseudoViewRecord],
    flags: RefineFlags,
    iters: core::ops::Range<usize>,
    log: &mut dyn FnMut(&RefineLog),
) -> Result<()> {
    let sampled = trainer.sampled.as_ref().ok_or_else(|| Error::InvalidInput("no sampled trajectory attached".into()))?;
    let index = PseudoIndex::new(records, sampled, trainer.input.len())?;
    for i in iters {
        let l = trainer.refine_step(frames, &index, flags, i)?;
        log(&l);
    }
    Ok(())
}
