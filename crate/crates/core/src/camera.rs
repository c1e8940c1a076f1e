//! Pinhole cameras on SE(3) and training-camera sampling around an input trajectory.
//!
//! Camera frame convention is x right, y down, z forward. A [`PoseSE3`] stores the
//! camera-to-world rotation and the camera center; the world-to-camera transform is
//! always derived on demand.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitBall, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{so3_left_jacobian, so3_left_jacobian_inv, symmetric_eigen, solve_linear, Mat3, Quat, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, horizontal field of view in radians.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self { fx, fy: fx, cx: 0.5 * width as f64, cy: 0.5 * height as f64, width, height }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    /// Camera-to-world rotation.
    pub rotation: Quat,
    /// Camera center in world coordinates.
    pub center: Vec3,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PoseSE3 {
    pub const IDENTITY: PoseSE3 = PoseSE3 { rotation: Quat::IDENTITY, center: Vec3::ZERO };

    pub fn new(rotation: Quat, center: Vec3) -> Self {
        Self { rotation: rotation.normalized(), center }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalized();
        let right = (-up).cross(forward);
        let right = if right.norm() < 1e-12 {
            // looking straight along the up axis
            Vec3::new(1.0, 0.0, 0.0).cross(forward).cross(forward).normalized()
        } else {
            right.normalized()
        };
        let down = forward.cross(right);
        Self::new(Quat::from_matrix(&Mat3::from_cols(right, down, forward)), eye)
    }

    /// Camera-to-world rotation matrix.
    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_matrix()
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation_matrix().transpose().mul_vec(p - self.center)
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        self.rotation_matrix().mul_vec(p) + self.center
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation_matrix().col(2)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.center.is_finite()
    }

    pub fn inverse_compose(&self, other: &PoseSE3) -> (Mat3, Vec3) {
        // self^-1 * other
        let rt = self.rotation_matrix().transpose();
        (rt.matmul(&other.rotation_matrix()), rt.mul_vec(other.center - self.center))
    }
}

/// Logarithm of `a^-1 b` as a 6-vector `(omega, v)`.
pub fn pose_log(a: &PoseSE3, b: &PoseSE3) -> [f64; 6] {
    let (r, t) = a.inverse_compose(b);
    let omega = Quat::from_matrix(&r).to_rotation_vector();
    let v = so3_left_jacobian_inv(omega).mul_vec(t);
    [omega.x, omega.y, omega.z, v.x, v.y, v.z]
}

/// `|| log(a^-1 b) ||`.
pub fn pose_error(a: &PoseSE3, b: &PoseSE3) -> f64 {
    pose_log(a, b).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Right-composition of `pose` with the exact SE(3) exponential of `tangent`
/// (`[0..3]` rotation, `[3..6]` translation).
pub fn se3_update(pose: &PoseSE3, tangent: &[f64; 6]) -> PoseSE3 {
    if tangent.iter().all(|v| *v == 0.0) {
        return *pose;
    }
    let omega = Vec3::new(tangent[0], tangent[1], tangent[2]);
    let v = Vec3::new(tangent[3], tangent[4], tangent[5]);
    let dq = Quat::from_rotation_vector(omega);
    let dt = so3_left_jacobian(omega).mul_vec(v);
    PoseSE3 {
        rotation: pose.rotation.mul(dq).normalized(),
        center: pose.center + pose.rotation.rotate(dt),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryTag {
    Input,
    Sampled,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<PoseSE3>,
    /// Frame index each pose belongs to.
    pub timesteps: Vec<usize>,
    pub intrinsics: Intrinsics,
    pub tag: TrajectoryTag,
}

impl Trajectory {
    /// One pose per frame, frame `i` at index `i`.
    pub fn input(poses: Vec<PoseSE3>, intrinsics: Intrinsics) -> Self {
        let timesteps = (0..poses.len()).collect();
        Self { poses, timesteps, intrinsics, tag: TrajectoryTag::Input }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(Error::InvalidInput("empty trajectory".into()));
        }
        if self.timesteps.len() != self.poses.len() {
            return Err(Error::Shape { expected: self.poses.len(), found: self.timesteps.len() });
        }
        if let Some(i) = self.poses.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("pose {i} is not finite")));
        }
        self.intrinsics.validate()
    }

    /// Indices of the poses belonging to frame `t`.
    pub fn indices_at(&self, t: usize) -> Vec<usize> {
        self.timesteps.iter().enumerate().filter(|(_, &s)| s == t).map(|(i, _)| i).collect()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.center).collect()
    }
}

/// Pinhole projection of a world point. Returns the pixel and the camera-frame depth.
pub fn project_point(intr: &Intrinsics, pose: &PoseSE3, x_world: Vec3, near: f64) -> Result<([f64; 2], f64)> {
    let pc = pose.world_to_camera(x_world);
    if pc.z <= near {
        return Err(Error::BehindCamera { z: pc.z, near });
    }
    let u = intr.fx * pc.x / pc.z + intr.cx;
    let v = intr.fy * pc.y / pc.z + intr.cy;
    Ok(([u, v], pc.z))
}

/// World point at camera-frame depth `depth` along the ray through pixel `(u, v)`.
pub fn unproject_pixel(intr: &Intrinsics, pose: &PoseSE3, u: f64, v: f64, depth: f64) -> Vec3 {
    let pc = Vec3::new((u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth);
    pose.camera_to_world(pc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereFit {
    pub center: Vec3,
    pub radius: f64,
    /// RMS of `|c - center| - radius` over the camera centers.
    pub rms_residual: f64,
    /// Set when the centers were too close to coplanar for a least-squares fit.
    pub fallback: bool,
}

/// Relative eigenvalue below which camera centers count as coplanar.
const COPLANAR_RATIO: f64 = 1e-4;

/// Least-squares sphere through the camera centers of `traj`.
///
/// Near-coplanar centers (including every planar orbit) fall back to a sphere around
/// the point closest to all optical axes, with the mean center distance as radius.
pub fn fit_reference_sphere(traj: &Trajectory) -> Result<SphereFit> {
    traj.validate()?;
    let centers = traj.centers();
    let n = centers.len() as f64;
    let mean = centers.iter().fold(Vec3::ZERO, |a, c| a + *c) * (1.0 / n);
    let (evals, _) = symmetric_eigen(&covariance(&centers, mean));
    let planar = centers.len() < 4 || evals[0] <= COPLANAR_RATIO * evals[2].max(1e-300);

    let fit = if planar {
        None
    } else {
        // |y|^2 = 2 q.y + d with y = c - mean
        let mut ata = [[0.0; 4]; 4];
        let mut atb = [0.0; 4];
        for c in &centers {
            let y = *c - mean;
            let row = [2.0 * y.x, 2.0 * y.y, 2.0 * y.z, 1.0];
            let rhs = y.norm_sq();
            for i in 0..4 {
                for j in 0..4 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * rhs;
            }
        }
        solve_linear(ata, atb, 1e-12).and_then(|x| {
            let q = Vec3::new(x[0], x[1], x[2]);
            let r2 = x[3] + q.norm_sq();
            (r2 > 0.0).then(|| (q + mean, r2.sqrt()))
        })
    };

    let (center, radius, fallback) = match fit {
        Some((c, r)) => (c, r, false),
        None => {
            let c = look_at_centroid(traj).unwrap_or(mean);
            let r = centers.iter().map(|p| (*p - c).norm()).sum::<f64>() / n;
            (c, r, true)
        }
    };
    let rms_residual = (centers.iter().map(|p| ((*p - center).norm() - radius).powi(2)).sum::<f64>() / n).sqrt();
    Ok(SphereFit { center, radius, rms_residual, fallback })
}

fn covariance(points: &[Vec3], mean: Vec3) -> Mat3 {
    let mut cov = Mat3::ZERO;
    for p in points {
        let d = *p - mean;
        for i in 0..3 {
            for j in 0..3 {
                cov.0[i][j] += d[i] * d[j];
            }
        }
    }
    cov.scale(1.0 / points.len() as f64)
}

/// Least-squares intersection point of all optical axes.
pub fn look_at_centroid(traj: &Trajectory) -> Option<Vec3> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for pose in &traj.poses {
        let d = pose.forward();
        // (I - d d^T) x = (I - d d^T) c
        let mut p = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = if i == j { 1.0 } else { 0.0 } - d[i] * d[j];
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += p[i][j];
                b[i] += p[i][j] * pose.center[j];
            }
        }
    }
    solve_linear(a, b, 1e-9).map(Vec3::from)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremePair {
    pub a: usize,
    pub b: usize,
    /// All longitudes coincide; `(a, b)` is `(first, last)`.
    pub degenerate: bool,
}

/// Rotation axis used for longitudes: the normal of the best-fit plane of the centers.
pub fn trajectory_up_axis(traj: &Trajectory) -> Vec3 {
    let centers = traj.centers();
    let mean = centers.iter().fold(Vec3::ZERO, |a, c| a + *c) * (1.0 / centers.len() as f64);
    let (_, vecs) = symmetric_eigen(&covariance(&centers, mean));
    vecs[0]
}

/// Longitude of every camera center about `up`, after radial projection onto the sphere.
pub fn camera_longitudes(traj: &Trajectory, sphere: &SphereFit, up: Vec3) -> Vec<f64> {
    let seed = if up.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let e1 = (seed - up * seed.dot(up)).normalized();
    let e2 = up.cross(e1);
    traj.poses
        .iter()
        .map(|p| {
            let d = p.center - sphere.center;
            let on_sphere = if d.norm() > 0.0 { d * (sphere.radius / d.norm()) } else { d };
            on_sphere.dot(e2).atan2(on_sphere.dot(e1))
        })
        .collect()
}

/// Absolute longitude difference wrapped to `[0, pi]`.
pub fn wrapped_angle_diff(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let d = (a - b).abs() % two_pi;
    if d > core::f64::consts::PI {
        two_pi - d
    } else {
        d
    }
}

/// Pair of cameras with the largest longitudinal displacement on the reference sphere.
pub fn find_extreme_views(traj: &Trajectory, sphere: &SphereFit) -> Result<ExtremePair> {
    traj.validate()?;
    let lon = camera_longitudes(traj, sphere, trajectory_up_axis(traj));
    Ok(extreme_pair_from_longitudes(&lon))
}

/// Extreme pair over raw longitudes. Ties resolve to the lexicographically smallest `(a, b)`.
///
/// Runs in `O(n log n)`: for each camera the farthest partner is a circular
/// neighbor of its antipode in sorted order.
pub fn extreme_pair_from_longitudes(lon: &[f64]) -> ExtremePair {
    let n = lon.len();
    if n < 2 {
        return ExtremePair { a: 0, b: 0, degenerate: true };
    }
    let pi = core::f64::consts::PI;
    let norm = |a: f64| {
        let r = a % (2.0 * pi);
        let r = if r < 0.0 { r + 2.0 * pi } else { r };
        if r >= 2.0 * pi {
            0.0
        } else {
            r
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norm(lon[i]).total_cmp(&norm(lon[j])).then(i.cmp(&j)));
    let sorted: Vec<f64> = order.iter().map(|&i| norm(lon[i])).collect();

    let mut best: Option<(f64, usize, usize)> = None;
    let consider = |i: usize, j: usize, best: &mut Option<(f64, usize, usize)>| {
        if i == j {
            return;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let d = wrapped_angle_diff(lon[a], lon[b]);
        let better = match *best {
            None => true,
            Some((bd, ba, bb)) => d > bd || (d == bd && (a, b) < (ba, bb)),
        };
        if better {
            *best = Some((d, a, b));
        }
    };
    for &i in &order {
        let target = norm(norm(lon[i]) + pi);
        let pos = sorted.partition_point(|&v| v < target);
        let hi = pos % n;
        let lo = (pos + n - 1) % n;
        // walk the tie runs on both sides of the antipode
        let mut k = hi;
        loop {
            consider(i, order[k], &mut best);
            k = (k + 1) % n;
            if k == hi || sorted[k] != sorted[hi] {
                break;
            }
        }
        let mut k = lo;
        loop {
            consider(i, order[k], &mut best);
            k = (k + n - 1) % n;
            if k == lo || sorted[k] != sorted[lo] {
                break;
            }
        }
    }
    let (d, a, b) = best.unwrap_or((0.0, 0, n - 1));
    if d <= 1e-12 {
        ExtremePair { a: 0, b: n - 1, degenerate: true }
    } else {
        ExtremePair { a, b, degenerate: false }
    }
}

/// Knobs of [`sample_training_cameras`]. Amplitudes are relative to the sphere radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub random_pairs: usize,
    pub ramp_samples: usize,
    pub weight_min: f64,
    pub weight_max: f64,
    pub translation_noise_min: f64,
    pub translation_noise_max: f64,
    /// Degrees.
    pub rotation_noise_min_deg: f64,
    pub rotation_noise_max_deg: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            random_pairs: 4,
            ramp_samples: 6,
            weight_min: 0.3,
            weight_max: 0.9,
            translation_noise_min: 0.01,
            translation_noise_max: 0.05,
            rotation_noise_min_deg: 0.5,
            rotation_noise_max_deg: 2.5,
        }
    }
}

impl SamplerConfig {
    pub fn cameras_per_timestep(&self) -> usize {
        self.random_pairs + 2 * self.ramp_samples + 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledCameras {
    pub trajectory: Trajectory,
    pub sphere: SphereFit,
    pub extremes: ExtremePair,
    pub per_timestep: usize,
}

/// Center lerp plus rotation slerp; `w` is the weight of `b`.
pub fn blend_poses(a: &PoseSE3, b: &PoseSE3, w: f64) -> PoseSE3 {
    if a == b {
        return *a;
    }
    PoseSE3 { rotation: a.rotation.slerp(b.rotation, w), center: a.center.lerp(b.center, w) }
}

/// Uniform-ball center offset of radius `amp_t`, then a random-axis rotation of
/// magnitude at most `amp_r` composed on the right.
pub fn perturb_pose<R: Rng + ?Sized>(pose: &PoseSE3, amp_t: f64, amp_r: f64, rng: &mut R) -> PoseSE3 {
    let ball: [f64; 3] = UnitBall.sample(rng);
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = amp_r * rng.random::<f64>();
    let offset = Vec3::from(ball) * amp_t;
    let omega = Vec3::from(axis) * angle;
    if amp_t == 0.0 && amp_r == 0.0 {
        return *pose;
    }
    PoseSE3 {
        rotation: pose.rotation.mul(Quat::from_rotation_vector(omega)).normalized(),
        center: pose.center + offset,
    }
}

/// New training cameras for every input timestep: blends of random input pairs,
/// ramps toward each extreme view, and the two extreme views themselves (last).
pub fn sample_training_cameras(traj: &Trajectory, cfg: &SamplerConfig, seed: u64) -> Result<SampledCameras> {
    traj.validate()?;
    if traj.len() < 2 {
        return Err(Error::InvalidInput("camera sampling needs at least two input poses".into()));
    }
    if cfg.ramp_samples < 2 {
        return Err(Error::InvalidInput("ramp_samples must be at least 2".into()));
    }
    let sphere = fit_reference_sphere(traj)?;
    let extremes = find_extreme_views(traj, &sphere)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = traj.len();
    let deg = core::f64::consts::PI / 180.0;
    let (t_min, t_max) = (cfg.translation_noise_min * sphere.radius, cfg.translation_noise_max * sphere.radius);
    let (r_min, r_max) = (cfg.rotation_noise_min_deg * deg, cfg.rotation_noise_max_deg * deg);

    let mut frames: Vec<usize> = traj.timesteps.clone();
    frames.sort_unstable();
    frames.dedup();

    let per_timestep = cfg.cameras_per_timestep();
    let mut poses = Vec::with_capacity(frames.len() * per_timestep);
    let mut timesteps = Vec::with_capacity(frames.len() * per_timestep);
    for &t in &frames {
        for _ in 0..cfg.random_pairs {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let mean = blend_poses(&traj.poses[i], &traj.poses[j], 0.5);
            poses.push(perturb_pose(&mean, t_min, r_min, &mut rng));
        }
        for extreme in [extremes.a, extremes.b] {
            for s in 0..cfg.ramp_samples {
                let f = s as f64 / (cfg.ramp_samples - 1) as f64;
                let w = cfg.weight_min + (cfg.weight_max - cfg.weight_min) * f;
                let amp_t = t_min + (t_max - t_min) * f;
                let amp_r = r_min + (r_max - r_min) * f;
                let other = rng.random_range(0..n);
                let blended = blend_poses(&traj.poses[other], &traj.poses[extreme], w);
                poses.push(perturb_pose(&blended, amp_t, amp_r, &mut rng));
            }
        }
        poses.push(traj.poses[extremes.a]);
        poses.push(traj.poses[extremes.b]);
        timesteps.extend(core::iter::repeat_n(t, per_timestep));
    }
    Ok(SampledCameras {
        trajectory: Trajectory { poses, timesteps, intrinsics: traj.intrinsics, tag: TrajectoryTag::Sampled },
        sphere,
        extremes,
        per_timestep,
    })
}
