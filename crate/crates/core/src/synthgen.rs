//! Fully ground-truthed synthetic dynamic scenes: a textured backdrop, a moving
//! object, a monocular orbit for training and held-out test views.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, unproject_pixel, Intrinsics, PoseSE3, Trajectory, TrajectoryTag};
use crate::enhance::DYNAMIC_MASK_THRESHOLD;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::{Quat, Vec3};
use crate::render::{render_scene, RenderSettings};
use crate::scene::{Gaussian3D, MotionTrack, Scene, SceneSubset};

/// Pixels with less accumulated alpha carry no depth (written as 0).
pub const DEPTH_ALPHA_MIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    TexturedBlob,
    TwoObjectOrbit,
    ArticulatedBar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub preset: Preset,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub fov_x: f64,
    pub orbit_radius: f64,
    /// Azimuth swept by the training camera, radians.
    pub arc: f64,
    /// Training camera elevation, radians.
    pub elevation: f64,
    /// Extra elevation of the test cameras, radians.
    pub test_elevation: f64,
    pub motion_amp: f64,
    pub n_test: usize,
    /// Mean spacing of the backdrop Gaussians (world units).
    pub backdrop_spacing: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            preset: Preset::TexturedBlob,
            n_frames: 60,
            width: 64,
            height: 64,
            fov_x: 50f64.to_radians(),
            orbit_radius: 3.0,
            arc: 1.0,
            elevation: 12f64.to_radians(),
            test_elevation: 6f64.to_radians(),
            motion_amp: 0.3,
            n_test: 8,
            backdrop_spacing: 0.12,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synth spec: {m}")));
        if self.n_frames < 8 {
            return bad("n_frames must be at least 8");
        }
        if !(0.0..=2.0 * PI).contains(&self.arc) {
            return bad("arc must lie in [0, 2pi]");
        }
        if self.width < 11 || self.height < 11 {
            return bad("images must be at least 11x11");
        }
        if !(self.fov_x > 0.0 && self.fov_x < PI) {
            return bad("fov_x must lie in (0, pi)");
        }
        if !(self.orbit_radius > 1.0) {
            return bad("orbit_radius must exceed 1");
        }
        if self.orbit_radius >= BACKDROP_RADIUS - 0.3 {
            return bad("orbit_radius must stay inside the backdrop");
        }
        if !(self.elevation.abs() < 1.2 && (self.elevation + self.test_elevation).abs() < 1.2) {
            return bad("elevations must stay below 1.2 rad");
        }
        if !(self.motion_amp >= 0.0 && self.motion_amp <= 1.0) {
            return bad("motion_amp must lie in [0, 1]");
        }
        if self.n_test == 0 {
            return bad("n_test must be positive");
        }
        if !(self.backdrop_spacing >= 0.03) {
            return bad("backdrop_spacing must be at least 0.03");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.fov_x)
    }
}

const BACKDROP_RADIUS: f64 = 4.0;
const FLOOR_Y: f64 = -0.8;
const CEILING_Y: f64 = 2.6;
const TARGET: Vec3 = Vec3::new(0.0, 0.1, 0.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub gt: Scene,
    pub train: Trajectory,
    /// Tagged `Test`; `timesteps` holds the frame each test view shows.
    pub test: Trajectory,
    /// Arc of zero: every training camera is the same.
    pub degenerate: bool,
}

fn orbit_pose(spec: &SynthSpec, azimuth: f64, elevation: f64) -> PoseSE3 {
    let r = spec.orbit_radius;
    let dir = Vec3::new(azimuth.sin() * elevation.cos(), elevation.sin(), -azimuth.cos() * elevation.cos());
    PoseSE3::look_at(TARGET + dir * r, TARGET, Vec3::new(0.0, 1.0, 0.0))
}

/// Azimuth of the training camera at frame `t`.
pub fn train_azimuth(spec: &SynthSpec, t: usize) -> f64 {
    -0.5 * spec.arc + spec.arc * t as f64 / (spec.n_frames - 1) as f64
}

/// Frames shown by the test views, spread over the sequence.
pub fn test_frames(spec: &SynthSpec) -> Vec<usize> {
    let n = spec.n_test;
    (0..n).map(|i| ((2 * i + 1) * spec.n_frames / (2 * n)).min(spec.n_frames - 1)).collect()
}

fn smooth_texture(u: f64, v: f64, phase: &[f64; 6]) -> [f64; 3] {
    let a = (2.3 * u + phase[0]).sin() * (1.7 * v + phase[1]).cos();
    let b = (5.1 * u - 3.3 * v + phase[2]).sin();
    let c = (9.0 * u + phase[3]).sin() * (8.0 * v + phase[4]).sin();
    let stripe = if ((u * 3.0 + v * 1.5 + phase[5]).rem_euclid(1.0)) < 0.5 { 0.12 } else { -0.12 };
    [
        (0.5 + 0.2 * a + 0.1 * c + stripe).clamp(0.03, 0.97),
        (0.45 + 0.15 * b - 0.1 * c + 0.5 * stripe).clamp(0.03, 0.97),
        (0.4 - 0.15 * a + 0.12 * b - stripe).clamp(0.03, 0.97),
    ]
}

/// Flat Gaussian in the plane spanned by `t1`, `t2`.
fn surfel(mean: Vec3, t1: Vec3, t2: Vec3, sigma: f64, opacity: f64, color: [f64; 3]) -> Gaussian3D {
    let n = t1.cross(t2).normalized();
    let m = crate::math::Mat3::from_cols(t1.normalized(), t2.normalized(), n);
    let mut g = Gaussian3D::isotropic(mean, sigma, opacity, color);
    g.rotation = Quat::from_matrix(&m);
    g.log_scale.z = (0.15 * sigma).ln();
    g
}

fn backdrop(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Gaussian3D> {
    let s = spec.backdrop_spacing;
    let sigma = 0.6 * s;
    let mut phase = [0.0; 6];
    for p in phase.iter_mut() {
        *p = rng.random_range(0.0..2.0 * PI);
    }
    let mut out = Vec::new();
    // wall: cylinder behind the target, facing the orbit
    let half = 80f64.to_radians();
    let cols = (2.0 * half * BACKDROP_RADIUS / s).ceil() as usize;
    let rows = ((CEILING_Y - FLOOR_Y) / s).ceil() as usize;
    for i in 0..=cols {
        let phi = -half + 2.0 * half * i as f64 / cols as f64;
        for j in 0..=rows {
            let y = FLOOR_Y + (CEILING_Y - FLOOR_Y) * j as f64 / rows as f64;
            let p = Vec3::new(BACKDROP_RADIUS * phi.sin(), y, BACKDROP_RADIUS * phi.cos());
            let tangent = Vec3::new(phi.cos(), 0.0, -phi.sin());
            let c = smooth_texture(phi * BACKDROP_RADIUS, y, &phase);
            out.push(surfel(p, tangent, Vec3::new(0.0, 1.0, 0.0), sigma, 0.97, c));
        }
    }
    // floor, coarser
    let fs = 1.4 * s;
    let n = (2.0 * BACKDROP_RADIUS / fs).ceil() as i64;
    for i in -n..=n {
        for k in -n..=n {
            let (x, z) = (i as f64 * fs, k as f64 * fs);
            // nothing behind the orbit is ever seen
            if x * x + z * z > (BACKDROP_RADIUS - 0.5 * fs).powi(2) || z < -2.2 {
                continue;
            }
            let check = if (i + k).rem_euclid(2) == 0 { 0.1 } else { -0.1 };
            let c = smooth_texture(x + 7.0, z, &phase).map(|v| (v + check).clamp(0.03, 0.97));
            out.push(surfel(Vec3::new(x, FLOOR_Y, z), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), 0.6 * fs, 0.97, c));
        }
    }
    out
}

/// Points on a sphere (Fibonacci lattice) with their surface color.
fn textured_sphere(radius: f64, spacing: f64, hue: [f64; 3]) -> Vec<(Vec3, [f64; 3])> {
    let n = ((4.0 * PI * radius * radius) / (spacing * spacing)).ceil() as usize;
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let p = Vec3::new(r * th.cos(), y, r * th.sin());
            let lon = p.z.atan2(p.x);
            // longitude stripes broken by latitude bands
            let band = ((lon * 4.0 / PI).floor() as i64 + (y * 3.0).floor() as i64).rem_euclid(2) == 0;
            let k = if band { 1.0 } else { 0.3 };
            (p * radius, hue.map(|h| (h * k + 0.05).clamp(0.03, 0.97)))
        })
        .collect()
}

/// Base points of the moving parts and their world position at time `t` (frames).
struct Object {
    points: Vec<(Vec3, [f64; 3])>,
    sigma: f64,
    /// Rigid part of each point.
    part: Vec<usize>,
}

fn make_object(spec: &SynthSpec) -> Object {
    match spec.preset {
        Preset::TexturedBlob => {
            let points = textured_sphere(0.35, 0.045, [0.95, 0.35, 0.15]);
            let part = alloc::vec![0; points.len()];
            Object { points, sigma: 0.03, part }
        }
        Preset::TwoObjectOrbit => {
            let mut points = textured_sphere(0.2, 0.04, [0.9, 0.8, 0.1]);
            let mut part = alloc::vec![0; points.len()];
            let second = textured_sphere(0.2, 0.04, [0.15, 0.5, 0.95]);
            part.extend(core::iter::repeat_n(1, second.len()));
            points.extend(second);
            Object { points, sigma: 0.027, part }
        }
        Preset::ArticulatedBar => {
            // bar hanging from its top end along -y, radius 0.07, length 0.9
            let mut points = Vec::new();
            let rings = 30;
            let around = 10;
            for i in 0..rings {
                let y = -0.9 * (i as f64 + 0.5) / rings as f64;
                for j in 0..around {
                    let a = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / around as f64;
                    let p = Vec3::new(0.07 * a.cos(), y, 0.07 * a.sin());
                    let c = if (i / 3) % 2 == 0 { [0.2, 0.85, 0.3] } else { [0.9, 0.9, 0.85] };
                    points.push((p, c));
                }
            }
            let part = alloc::vec![0; points.len()];
            Object { points, sigma: 0.03, part }
        }
    }
}

/// World position of base point `p` of `part` at time `t`.
fn object_position(spec: &SynthSpec, part: usize, p: Vec3, t: f64) -> Vec3 {
    let w = 2.0 * PI * t / (spec.n_frames - 1) as f64;
    let a = spec.motion_amp;
    match spec.preset {
        Preset::TexturedBlob => p + TARGET + Vec3::new(a * w.sin(), 0.3 * a * (2.0 * w).sin(), 0.25 * a * w.cos()),
        Preset::TwoObjectOrbit => {
            let ang = w + PI * part as f64;
            let r = 0.15 + a;
            p + TARGET + Vec3::new(r * ang.cos(), 0.0, r * ang.sin())
        }
        Preset::ArticulatedBar => {
            let th = (0.4 + a) * w.sin();
            let (s, c) = th.sin_cos();
            // swing in the x-y plane about the pivot
            let q = Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
            q + TARGET + Vec3::new(0.0, 0.5, 0.0)
        }
    }
}

/// Builds the ground-truth scene, the training orbit (one camera per frame) and the
/// held-out test views. Every test view is offset from the training camera of its
/// frame by half the arc in azimuth (toward the inside of the arc) and lifted in
/// elevation.
pub fn generate_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let static_set = backdrop(spec, &mut rng);
    let obj = make_object(spec);
    let n = spec.n_frames;
    let mut dynamic_set = Vec::with_capacity(obj.points.len());
    let mut tracks = Vec::with_capacity(obj.points.len());
    for (&(p, c), &part) in obj.points.iter().zip(&obj.part) {
        let base = object_position(spec, part, p, 0.0);
        let knots = (0..n).map(|t| object_position(spec, part, p, t as f64) - base).collect();
        dynamic_set.push(Gaussian3D::isotropic(base, obj.sigma, 0.97, c));
        tracks.push(MotionTrack { knots, n_frames: n });
    }
    let gt = Scene { static_set, dynamic_set, tracks, n_frames: n, background: [0.0; 3] };

    let intr = spec.intrinsics();
    let poses = (0..n).map(|t| orbit_pose(spec, train_azimuth(spec, t), spec.elevation)).collect();
    let train = Trajectory::input(poses, intr);
    let frames = test_frames(spec);
    let test_poses = frames
        .iter()
        .map(|&t| {
            let az = train_azimuth(spec, t);
            let shift = if az > 0.0 { -0.5 * spec.arc } else { 0.5 * spec.arc };
            orbit_pose(spec, az + shift, spec.elevation + spec.test_elevation)
        })
        .collect();
    let test = Trajectory { poses: test_poses, timesteps: frames, intrinsics: intr, tag: TrajectoryTag::Test };
    Ok(SynthScene { gt, train, test, degenerate: spec.arc == 0.0 })
}

/// Color, depth (0 where alpha < [`DEPTH_ALPHA_MIN`]) and dynamic mask of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRender {
    pub color: Image,
    pub depth: Vec<f64>,
    pub dyn_mask: Mask,
}

pub fn render_view(gt: &Scene, pose: &PoseSE3, intr: &Intrinsics, settings: &RenderSettings, t: usize) -> Result<ViewRender> {
    let full = render_scene(gt, t as f64, pose, intr, settings, SceneSubset::All)?;
    let dynamic = render_scene(gt, t as f64, pose, intr, settings, SceneSubset::DynamicOnly)?;
    let alpha = &full.output.alpha.data;
    let depth = full.output.depth.data.iter().zip(alpha).map(|(d, a)| if *a >= DEPTH_ALPHA_MIN { *d } else { 0.0 }).collect();
    let dyn_mask = Mask::from_threshold(&dynamic.output.alpha, 0, DYNAMIC_MASK_THRESHOLD);
    Ok(ViewRender { color: full.output.color, depth, dyn_mask })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovisConfig {
    /// Fraction of training frames that must see a point.
    pub gamma: f64,
    /// Depth-test tolerance relative to depth.
    pub epsilon: f64,
}

impl Default for CovisConfig {
    fn default() -> Self {
        Self { gamma: 0.05, epsilon: 0.01 }
    }
}

/// Marks test pixels whose back-projected surface point projects inside at least
/// `gamma` of the training frames with a passing depth test (nearest pixel,
/// `|z - D| <= epsilon * D`). Pixels without depth are never co-visible.
pub fn compute_covisibility(
    test_pose: &PoseSE3,
    test_depth: &[f64],
    train: &Trajectory,
    train_depths: &[Vec<f64>],
    cfg: &CovisConfig,
) -> Result<Mask> {
    let intr = &train.intrinsics;
    let (w, h) = (intr.width, intr.height);
    if test_depth.len() != w * h {
        return Err(Error::Shape { expected: w * h, found: test_depth.len() });
    }
    if train_depths.len() != train.len() {
        return Err(Error::Shape { expected: train.len(), found: train_depths.len() });
    }
    if let Some(d) = train_depths.iter().find(|d| d.len() != w * h) {
        return Err(Error::Shape { expected: w * h, found: d.len() });
    }
    let needed = cfg.gamma * train.len() as f64;
    let mut mask = Mask::empty(w, h);
    for p in 0..w * h {
        let d = test_depth[p];
        if !(d > 0.0) {
            continue;
        }
        let x = unproject_pixel(intr, test_pose, (p % w) as f64, (p / w) as f64, d);
        let mut hits = 0usize;
        for (pose, depth) in train.poses.iter().zip(train_depths) {
            let Ok(([u, v], z)) = project_point(intr, pose, x, 1e-6) else { continue };
            let (ui, vi) = (u.round(), v.round());
            if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
                continue;
            }
            let dd = depth[vi as usize * w + ui as usize];
            if dd > 0.0 && (z - dd).abs() <= cfg.epsilon * dd {
                hits += 1;
            }
        }
        mask.data[p] = hits > 0 && hits as f64 >= needed;
    }
    Ok(mask)
}

/// Everything rendered from a [`SynthScene`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub frames: Vec<Image>,
    pub depths: Vec<Vec<f64>>,
    pub dyn_masks: Vec<Mask>,
    pub test_images: Vec<Image>,
    pub test_depths: Vec<Vec<f64>>,
    pub test_dyn_masks: Vec<Mask>,
    pub covis_masks: Vec<Mask>,
}

pub fn render_dataset(scene: &SynthScene, settings: &RenderSettings, covis: &CovisConfig) -> Result<SynthDataset> {
    scene.gt.validate()?;
    scene.train.validate()?;
    scene.test.validate()?;
    let intr = &scene.train.intrinsics;
    let mut ds = SynthDataset {
        frames: Vec::new(),
        depths: Vec::new(),
        dyn_masks: Vec::new(),
        test_images: Vec::new(),
        test_depths: Vec::new(),
        test_dyn_masks: Vec::new(),
        covis_masks: Vec::new(),
    };
    for (pose, &t) in scene.train.poses.iter().zip(&scene.train.timesteps) {
        let v = render_view(&scene.gt, pose, intr, settings, t)?;
        ds.frames.push(v.color);
        ds.depths.push(v.depth);
        ds.dyn_masks.push(v.dyn_mask);
    }
    for (pose, &t) in scene.test.poses.iter().zip(&scene.test.timesteps) {
        let v = render_view(&scene.gt, pose, &scene.test.intrinsics, settings, t)?;
        ds.covis_masks.push(compute_covisibility(pose, &v.depth, &scene.train, &ds.depths, covis)?);
        ds.test_images.push(v.color);
        ds.test_depths.push(v.depth);
        ds.test_dyn_masks.push(v.dyn_mask);
    }
    Ok(ds)
}
