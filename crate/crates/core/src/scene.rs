//! Static/dynamic Gaussian scene with per-Gaussian translation tracks.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{unproject_pixel, Trajectory};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::{logit, sigmoid, Quat, Vec3};

/// Number of scalar parameters of one Gaussian when flattened.
pub const GAUSSIAN_PARAMS: usize = 14;

/// One anisotropic Gaussian. Opacity and color are stored pre-activation
/// (sigmoid), scales in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mean: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color_logit: Vec3,
}

impl Gaussian3D {
    /// Isotropic Gaussian from activated values.
    pub fn isotropic(mean: Vec3, scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            mean,
            rotation: Quat::IDENTITY,
            log_scale: Vec3::splat(scale.ln()),
            opacity_logit: logit(opacity),
            color_logit: Vec3::from(color.map(|c| logit(c.clamp(1e-4, 1.0 - 1e-4)))),
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vec3 {
        Vec3::new(self.log_scale.x.exp(), self.log_scale.y.exp(), self.log_scale.z.exp())
    }

    pub fn color(&self) -> [f64; 3] {
        [sigmoid(self.color_logit.x), sigmoid(self.color_logit.y), sigmoid(self.color_logit.z)]
    }

    /// Layout: mean(3), rotation wxyz(4), log_scale(3), opacity_logit(1), color_logit(3).
    pub fn to_params(&self) -> [f64; GAUSSIAN_PARAMS] {
        let q = self.rotation;
        [
            self.mean.x,
            self.mean.y,
            self.mean.z,
            q.w,
            q.x,
            q.y,
            q.z,
            self.log_scale.x,
            self.log_scale.y,
            self.log_scale.z,
            self.opacity_logit,
            self.color_logit.x,
            self.color_logit.y,
            self.color_logit.z,
        ]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            mean: Vec3::new(p[0], p[1], p[2]),
            rotation: Quat::new(p[3], p[4], p[5], p[6]),
            log_scale: Vec3::new(p[7], p[8], p[9]),
            opacity_logit: p[10],
            color_logit: Vec3::new(p[11], p[12], p[13]),
        }
    }

    pub fn param_name(i: usize) -> &'static str {
        match i {
            0..=2 => "mean",
            3..=6 => "rotation",
            7..=9 => "log_scale",
            10 => "opacity_logit",
            _ => "color_logit",
        }
    }

    /// Renormalizes the quaternion and caps the scales at `max_extent`.
    pub fn project_to_valid(&mut self, max_extent: f64) {
        self.rotation = self.rotation.normalized();
        let cap = max_extent.ln();
        self.log_scale = Vec3::new(self.log_scale.x.min(cap), self.log_scale.y.min(cap), self.log_scale.z.min(cap));
    }
}

/// Piecewise-linear translation track over `[0, n_frames - 1]` with uniformly spaced knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionTrack {
    pub knots: Vec<Vec3>,
    pub n_frames: usize,
}

impl MotionTrack {
    pub fn constant(knot_count: usize, n_frames: usize, offset: Vec3) -> Self {
        Self { knots: alloc::vec![offset; knot_count.max(2)], n_frames }
    }

    pub fn t_max(&self) -> f64 {
        self.n_frames.saturating_sub(1) as f64
    }

    /// Segment index and the weight of the right knot at time `t`.
    pub fn segment(&self, t: f64) -> Result<(usize, f64)> {
        let t_max = self.t_max();
        if !(0.0..=t_max).contains(&t) {
            return Err(Error::TimeOutOfDomain { t, max: t_max });
        }
        let segs = (self.knots.len() - 1) as f64;
        if t_max == 0.0 {
            return Ok((0, 0.0));
        }
        let mut s = t / t_max * segs;
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            // snap so knot times return knots exactly
            s = r;
        }
        let i = (s.floor() as usize).min(self.knots.len() - 2);
        Ok((i, s - i as f64))
    }

    pub fn eval(&self, t: f64) -> Result<Vec3> {
        let (i, w) = self.segment(t)?;
        Ok(if w == 0.0 {
            self.knots[i]
        } else if w == 1.0 {
            self.knots[i + 1]
        } else {
            self.knots[i] * (1.0 - w) + self.knots[i + 1] * w
        })
    }

    /// Knot time of knot `k`.
    pub fn knot_time(&self, k: usize) -> f64 {
        self.t_max() * k as f64 / (self.knots.len() - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub static_set: Vec<Gaussian3D>,
    pub dynamic_set: Vec<Gaussian3D>,
    /// One track per dynamic Gaussian.
    pub tracks: Vec<MotionTrack>,
    pub n_frames: usize,
    pub background: [f64; 3],
}

/// Which part of the scene to pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSubset {
    All,
    DynamicOnly,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.static_set.len() + self.dynamic_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dynamic_set.len() != self.tracks.len() {
            return Err(Error::InvalidInput(format!(
                "{} dynamic Gaussians but {} tracks",
                self.dynamic_set.len(),
                self.tracks.len()
            )));
        }
        if let Some(k) = self.tracks.iter().position(|tr| tr.knots.len() < 2 || tr.n_frames != self.n_frames) {
            return Err(Error::InvalidInput(format!("track {k} needs >= 2 knots over {} frames", self.n_frames)));
        }
        Ok(())
    }
}

/// Poses every Gaussian at time `t`: static Gaussians unchanged (first), dynamic
/// Gaussians translated by their tracks (after).
pub fn deform_at_time(scene: &Scene, t: f64) -> Result<Vec<Gaussian3D>> {
    deform_subset(scene, t, SceneSubset::All)
}

pub fn deform_subset(scene: &Scene, t: f64, subset: SceneSubset) -> Result<Vec<Gaussian3D>> {
    let t_max = scene.n_frames.saturating_sub(1) as f64;
    if !(0.0..=t_max).contains(&t) {
        return Err(Error::TimeOutOfDomain { t, max: t_max });
    }
    let mut out = Vec::with_capacity(scene.len());
    if subset == SceneSubset::All {
        out.extend_from_slice(&scene.static_set);
    }
    for (g, track) in scene.dynamic_set.iter().zip(&scene.tracks) {
        let mut posed = *g;
        posed.mean += track.eval(t)?;
        out.push(posed);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub n_static: usize,
    pub n_dynamic: usize,
    pub knot_count: usize,
    pub initial_opacity: f64,
    /// Multiplier on the one-pixel footprint `depth / fx`.
    pub footprint_scale: f64,
    pub seed: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { n_static: 20_000, n_dynamic: 5_000, knot_count: 8, initial_opacity: 0.5, footprint_scale: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedWarning {
    NoStaticPixels,
    NoDynamicPixels,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub warnings: Vec<SeedWarning>,
    pub static_candidates: usize,
    pub dynamic_candidates: usize,
    /// Frame each dynamic Gaussian was lifted from.
    pub dynamic_lift_frames: Vec<usize>,
}

/// Lifts randomly chosen valid pixels into Gaussians: mask 0 pixels seed the static
/// set, mask 1 pixels the dynamic set. Every dynamic Gaussian starts with a zero
/// (constant) track at its lift position.
pub fn seed_from_depth(
    frames: &[Image],
    depths: &[Vec<f64>],
    dyn_masks: &[Mask],
    trajectory: &Trajectory,
    cfg: &SeedConfig,
) -> Result<(Scene, SeedReport)> {
    let n = frames.len();
    if depths.len() != n || dyn_masks.len() != n || trajectory.len() != n {
        return Err(Error::InvalidInput(format!(
            "sequence lengths differ: {n} frames, {} depths, {} masks, {} poses",
            depths.len(),
            dyn_masks.len(),
            trajectory.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let intr = &trajectory.intrinsics;
    for t in 0..n {
        let np = frames[t].pixel_count();
        if frames[t].channels != 3 || frames[t].width != intr.width || frames[t].height != intr.height {
            return Err(Error::InvalidInput(format!("frame {t} does not match the intrinsics image size")));
        }
        if depths[t].len() != np || dyn_masks[t].data.len() != np {
            return Err(Error::InvalidInput(format!("frame {t}: depth/mask size mismatch")));
        }
    }

    // (frame, pixel) candidates per class
    let mut static_px = Vec::new();
    let mut dynamic_px = Vec::new();
    for t in 0..n {
        for p in 0..frames[t].pixel_count() {
            let d = depths[t][p];
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            if dyn_masks[t].data[p] {
                dynamic_px.push((t, p));
            } else {
                static_px.push((t, p));
            }
        }
    }
    let mut report = SeedReport {
        warnings: Vec::new(),
        static_candidates: static_px.len(),
        dynamic_candidates: dynamic_px.len(),
        dynamic_lift_frames: Vec::new(),
    };
    if static_px.is_empty() && cfg.n_static > 0 {
        report.warnings.push(SeedWarning::NoStaticPixels);
    }
    if dynamic_px.is_empty() && cfg.n_dynamic > 0 {
        report.warnings.push(SeedWarning::NoDynamicPixels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opacity = cfg.initial_opacity.clamp(1e-4, 1.0 - 1e-4);
    let lift = |(t, p): (usize, usize)| -> Gaussian3D {
        let (x, y) = (p % intr.width, p / intr.width);
        let d = depths[t][p];
        let mean = unproject_pixel(intr, &trajectory.poses[t], x as f64, y as f64, d);
        let c = [frames[t].get(x, y, 0), frames[t].get(x, y, 1), frames[t].get(x, y, 2)];
        Gaussian3D::isotropic(mean, cfg.footprint_scale * d / intr.fx, opacity, c)
    };

    let mut static_set = Vec::with_capacity(cfg.n_static);
    if !static_px.is_empty() {
        for _ in 0..cfg.n_static {
            let c = static_px[rng.random_range(0..static_px.len())];
            static_set.push(lift(c));
        }
    }
    let mut dynamic_set = Vec::with_capacity(cfg.n_dynamic);
    if !dynamic_px.is_empty() {
        for _ in 0..cfg.n_dynamic {
            let c = dynamic_px[rng.random_range(0..dynamic_px.len())];
            report.dynamic_lift_frames.push(c.0);
            dynamic_set.push(lift(c));
        }
    }
    let tracks = (0..dynamic_set.len()).map(|_| MotionTrack::constant(cfg.knot_count, n, Vec3::ZERO)).collect();
    let scene = Scene { static_set, dynamic_set, tracks, n_frames: n, background: [0.0; 3] };
    Ok((scene, report))
}

/// Masks for the uninformed-seeding ablation: per frame, the same number of dynamic
/// pixels as `masks`, drawn uniformly among pixels with valid depth.
pub fn random_partition_masks(masks: &[Mask], depths: &[Vec<f64>], seed: u64) -> Result<Vec<Mask>> {
    if masks.len() != depths.len() {
        return Err(Error::Shape { expected: masks.len(), found: depths.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(masks.len());
    for (m, d) in masks.iter().zip(depths) {
        if d.len() != m.data.len() {
            return Err(Error::Shape { expected: m.data.len(), found: d.len() });
        }
        let valid: Vec<usize> = (0..d.len()).filter(|&p| d[p] > 0.0 && d[p].is_finite()).collect();
        let k = m.data.iter().zip(d).filter(|(on, z)| **on && **z > 0.0 && z.is_finite()).count();
        let mut r = Mask::empty(m.width, m.height);
        for i in rand::seq::index::sample(&mut rng, valid.len(), k) {
            r.data[valid[i]] = true;
        }
        out.push(r);
    }
    Ok(out)
}

/// Replaces the tracks of a freshly seeded scene with a rigid-motion guess taken
/// from the dynamic masks: per frame, the mask centroid lifted at the median dynamic
/// depth. A Gaussian lifted at frame `f` follows `c(t) - c(f)`, so it stays at its
/// lift position at `f`. Frames with empty masks hold the nearest known centroid.
/// Returns false (tracks untouched) when no frame has a usable mask.
pub fn init_tracks_from_masks(
    scene: &mut Scene,
    lift_frames: &[usize],
    depths: &[Vec<f64>],
    dyn_masks: &[Mask],
    trajectory: &Trajectory,
) -> Result<bool> {
    let n = scene.n_frames;
    if lift_frames.len() != scene.dynamic_set.len() {
        return Err(Error::Shape { expected: scene.dynamic_set.len(), found: lift_frames.len() });
    }
    if depths.len() != n || dyn_masks.len() != n || trajectory.len() != n {
        return Err(Error::InvalidInput(format!("expected {n} depths, masks and poses")));
    }
    if let Some(i) = lift_frames.iter().position(|&f| f >= n) {
        return Err(Error::InvalidInput(format!("dynamic Gaussian {i} lifted from frame {} of {n}", lift_frames[i])));
    }
    let intr = &trajectory.intrinsics;
    let mut centers: Vec<Option<Vec3>> = Vec::with_capacity(n);
    for t in 0..n {
        let m = &dyn_masks[t];
        let (mut su, mut sv, mut zs) = (0.0, 0.0, Vec::new());
        for (p, inside) in m.data.iter().enumerate() {
            let d = depths[t].get(p).copied().unwrap_or(0.0);
            if *inside && d > 0.0 && d.is_finite() {
                su += (p % m.width) as f64;
                sv += (p / m.width) as f64;
                zs.push(d);
            }
        }
        if zs.is_empty() {
            centers.push(None);
            continue;
        }
        let k = zs.len() as f64;
        zs.sort_by(f64::total_cmp);
        let z = zs[zs.len() / 2];
        centers.push(Some(unproject_pixel(intr, &trajectory.poses[t], su / k, sv / k, z)));
    }
    let known: Vec<usize> = (0..n).filter(|&t| centers[t].is_some()).collect();
    if known.is_empty() {
        return Ok(false);
    }
    let filled: Vec<Vec3> = (0..n)
        .map(|t| {
            let nearest = known.iter().min_by_key(|&&k| (k as i64 - t as i64).unsigned_abs()).copied().unwrap_or(t);
            centers[t].or(centers[nearest]).unwrap_or(Vec3::ZERO)
        })
        .collect();
    let knot_count = scene.tracks.first().map_or(2, |tr| tr.knots.len());
    let mut path = MotionTrack::constant(knot_count, n, Vec3::ZERO);
    for k in 0..path.knots.len() {
        let tau = path.knot_time(k);
        let i = (tau.floor() as usize).min(n - 1);
        let j = (i + 1).min(n - 1);
        path.knots[k] = filled[i].lerp(filled[j], tau - i as f64);
    }
    for (track, &f) in scene.tracks.iter_mut().zip(lift_frames) {
        let at_lift = path.eval(f as f64)?;
        track.knots = path.knots.iter().map(|c| *c - at_lift).collect();
    }
    Ok(true)
}
