//! Exact front-to-back Gaussian splatting and its reverse-mode gradients.
//!
//! Pixel `(x, y)` has its center at integer coordinates, so a point projecting to
//! `(cx, cy)` lands on pixel `(cx, cy)`. Visible splats are sorted globally by
//! camera depth (ties by index) and binned into tiles; each pixel composites the
//! splats of its tile in that order. Only contributions with
//! `alpha >= alpha_cutoff` are composited and alpha is clamped to `alpha_max`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{Mat3, Vec3};
use crate::scene::{deform_subset, Gaussian3D, Scene, SceneSubset, GAUSSIAN_PARAMS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub near: f64,
    /// Added to the diagonal of every projected covariance (pixels^2).
    pub dilation: f64,
    pub alpha_cutoff: f64,
    pub alpha_max: f64,
    pub tile_size: usize,
    /// Gaussians whose center falls outside the view frustum widened by this
    /// factor are dropped; near the camera plane their footprints blow up.
    pub frustum_guard: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { near: 0.01, dilation: 0.3, alpha_cutoff: 1.0 / 255.0, alpha_max: 0.99, tile_size: 4, frustum_guard: 1.3 }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.near > 0.0
            && self.dilation >= 0.0
            && self.alpha_cutoff > 0.0
            && self.alpha_cutoff < 1.0
            && self.alpha_max > 0.0
            && self.alpha_max < 1.0
            && self.tile_size > 0
            && self.frustum_guard >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid render settings {self:?}")))
        }
    }
}

/// 2x2 symmetric matrix stored as `[xx, xy, yy]`.
pub type Sym2 = [f64; 3];

/// Projection of one Gaussian into the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub index: usize,
    pub depth: f64,
    pub center: [f64; 2],
    pub cov2d: Sym2,
    pub conic: Sym2,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel bounds `[x0, x1, y0, y1]`.
    pub bbox: [usize; 4],
    pub p_cam: Vec3,
}

/// Camera-frame covariance pieces shared by the forward and backward passes.
struct CovarianceParts {
    rot: Mat3,
    scale: Vec3,
    m: Mat3,
    sigma3: Mat3,
    w: Mat3,
    sigma_cam: Mat3,
    j: [[f64; 3]; 2],
}

fn covariance_parts(g: &Gaussian3D, pose: &PoseSE3, intr: &Intrinsics, p_cam: Vec3) -> CovarianceParts {
    let rot = g.rotation.normalized().to_matrix();
    let scale = g.scale();
    let m = rot.matmul(&Mat3::diag(scale));
    let sigma3 = m.matmul(&m.transpose());
    let w = pose.rotation_matrix().transpose();
    let sigma_cam = w.matmul(&sigma3).matmul(&w.transpose());
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let j = [[intr.fx / z, 0.0, -intr.fx * x / (z * z)], [0.0, intr.fy / z, -intr.fy * y / (z * z)]];
    CovarianceParts { rot, scale, m, sigma3, w, sigma_cam, j }
}

fn project_sigma(j: &[[f64; 3]; 2], s: &Mat3, dilation: f64) -> Sym2 {
    let mut js = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = j[r][0] * s.0[0][c] + j[r][1] * s.0[1][c] + j[r][2] * s.0[2][c];
        }
    }
    let e = |r: usize, c: usize| js[r][0] * j[c][0] + js[r][1] * j[c][1] + js[r][2] * j[c][2];
    [e(0, 0) + dilation, e(0, 1), e(1, 1) + dilation]
}

/// Screen-space covariance `J W Sigma W^T J^T + dilation I` of a Gaussian.
pub fn project_covariance(g: &Gaussian3D, pose: &PoseSE3, intr: &Intrinsics, settings: &RenderSettings) -> Result<Sym2> {
    let p_cam = pose.world_to_camera(g.mean);
    if p_cam.z <= settings.near {
        return Err(Error::BehindCamera { z: p_cam.z, near: settings.near });
    }
    let parts = covariance_parts(g, pose, intr, p_cam);
    Ok(project_sigma(&parts.j, &parts.sigma_cam, settings.dilation))
}

fn invert_sym2(s: &Sym2) -> Option<Sym2> {
    let det = s[0] * s[2] - s[1] * s[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some([s[2] / det, -s[1] / det, s[0] / det])
}

/// Whether a camera-frame point lies inside the frustum widened by `guard`.
pub fn in_frustum(p_cam: Vec3, intr: &Intrinsics, guard: f64) -> bool {
    let (w, h) = (intr.width as f64, intr.height as f64);
    let lim_x = guard * intr.cx.max(w - intr.cx) / intr.fx;
    let lim_y = guard * intr.cy.max(h - intr.cy) / intr.fy;
    (p_cam.x / p_cam.z).abs() <= lim_x && (p_cam.y / p_cam.z).abs() <= lim_y
}

fn project_splat(
    index: usize,
    g: &Gaussian3D,
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
) -> Option<Splat> {
    let p_cam = pose.world_to_camera(g.mean);
    if !(p_cam.z > settings.near) {
        return None;
    }
    if !in_frustum(p_cam, intr, settings.frustum_guard) {
        return None;
    }
    let opacity = g.opacity();
    if opacity < settings.alpha_cutoff {
        return None;
    }
    let parts = covariance_parts(g, pose, intr, p_cam);
    let cov2d = project_sigma(&parts.j, &parts.sigma_cam, settings.dilation);
    let conic = invert_sym2(&cov2d)?;
    let u = intr.fx * p_cam.x / p_cam.z + intr.cx;
    let v = intr.fy * p_cam.y / p_cam.z + intr.cy;
    // alpha >= cutoff  <=>  q <= 2 ln(opacity / cutoff)
    let q_max = 2.0 * (opacity / settings.alpha_cutoff).ln();
    let rx = (q_max * cov2d[0]).sqrt() + 1.0;
    let ry = (q_max * cov2d[2]).sqrt() + 1.0;
    let (w, h) = (intr.width as f64, intr.height as f64);
    if !(u + rx >= 0.0 && u - rx <= w - 1.0 && v + ry >= 0.0 && v - ry <= h - 1.0) {
        return None;
    }
    let bbox = [
        (u - rx).ceil().max(0.0) as usize,
        (u + rx).floor().min(w - 1.0) as usize,
        (v - ry).ceil().max(0.0) as usize,
        (v + ry).floor().min(h - 1.0) as usize,
    ];
    Some(Splat { index, depth: p_cam.z, center: [u, v], cov2d, conic, opacity, color: g.color(), bbox, p_cam })
}

/// Everything the backward pass needs to replay a forward render.
#[derive(Clone, Debug)]
pub struct RenderContext {
    pub gaussians: Vec<Gaussian3D>,
    pub pose: PoseSE3,
    pub intrinsics: Intrinsics,
    pub settings: RenderSettings,
    pub background: [f64; 3],
    /// Visible splats in compositing order.
    pub splats: Vec<Splat>,
    /// Hot per-splat data for the pixel loop: center, conic, opacity and the
    /// largest `q` that can still pass the alpha cutoff.
    packed: Vec<[f64; 7]>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    pub alpha: Image,
    /// Alpha-normalized expected depth, 0 where nothing was composited.
    pub depth: Image,
    pub ctx: RenderContext,
}

/// Per-Gaussian parameter gradients (see [`Gaussian3D::to_params`]) plus the
/// 6-vector pose tangent gradient (right perturbation, rotation first).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub gaussians: Vec<[f64; GAUSSIAN_PARAMS]>,
    pub pose: [f64; 6],
}

impl RenderContext {
    fn tile_of(&self, x: usize, y: usize) -> &[u32] {
        let ts = self.settings.tile_size;
        &self.tiles[(y / ts) * self.tiles_x + x / ts]
    }

    /// Contributors of pixel `(x, y)` in compositing order: `(splat, alpha, gaussian value, clamped)`.
    fn pixel_contributors(&self, x: usize, y: usize, out: &mut Vec<(u32, f64, f64, bool)>) {
        out.clear();
        let (px, py) = (x as f64, y as f64);
        for &s in self.tile_of(x, y) {
            let [cx, cy, a, b, c, o, q_max] = self.packed[s as usize];
            let dx = px - cx;
            let dy = py - cy;
            let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
            if q > q_max {
                continue;
            }
            let gv = (-0.5 * q).exp();
            let raw = o * gv;
            if raw < self.settings.alpha_cutoff {
                continue;
            }
            let clamped = raw > self.settings.alpha_max;
            let alpha = if clamped { self.settings.alpha_max } else { raw };
            out.push((s, alpha, gv, clamped));
        }
    }
}

/// Renders posed Gaussians from `pose`.
pub fn render(
    gaussians: &[Gaussian3D],
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
    background: [f64; 3],
) -> Result<RenderOutput> {
    settings.validate()?;
    intr.validate()?;
    let (w, h) = (intr.width, intr.height);
    let mut splats: Vec<Splat> =
        gaussians.iter().enumerate().filter_map(|(i, g)| project_splat(i, g, pose, intr, settings)).collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let ts = settings.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (s, sp) in splats.iter().enumerate() {
        for ty in sp.bbox[2] / ts..=sp.bbox[3] / ts {
            for tx in sp.bbox[0] / ts..=sp.bbox[1] / ts {
                tiles[ty * tiles_x + tx].push(s as u32);
            }
        }
    }
    let packed = splats
        .iter()
        .map(|sp| {
            // small slack so only pixels that certainly fail the cutoff skip the exact test
            let q_max = 2.0 * (sp.opacity / settings.alpha_cutoff).ln() * (1.0 + 1e-9) + 1e-9;
            [sp.center[0], sp.center[1], sp.conic[0], sp.conic[1], sp.conic[2], sp.opacity, q_max]
        })
        .collect();
    let ctx = RenderContext {
        gaussians: gaussians.to_vec(),
        pose: *pose,
        intrinsics: *intr,
        settings: *settings,
        background,
        splats,
        packed,
        tiles,
        tiles_x,
    };

    let mut color = Image::new(w, h, 3);
    let mut alpha_img = Image::new(w, h, 1);
    let mut depth_img = Image::new(w, h, 1);
    let mut contrib = Vec::new();
    for y in 0..h {
        for x in 0..w {
            ctx.pixel_contributors(x, y, &mut contrib);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut d = 0.0;
            for &(s, a, _, _) in &contrib {
                let sp = &ctx.splats[s as usize];
                let wgt = a * t;
                for k in 0..3 {
                    c[k] += sp.color[k] * wgt;
                }
                d += sp.depth * wgt;
                t *= 1.0 - a;
            }
            let p = y * w + x;
            for k in 0..3 {
                color.data[p * 3 + k] = c[k] + background[k] * t;
            }
            let acc = 1.0 - t;
            alpha_img.data[p] = acc;
            depth_img.data[p] = if acc > 0.0 { d / acc } else { 0.0 };
        }
    }
    Ok(RenderOutput { color, alpha: alpha_img, depth: depth_img, ctx })
}

/// Reverse-mode gradients of `sum(dl_dcolor * color)` for a previous [`render`].
pub fn render_backward(ctx: &RenderContext, dl_dcolor: &Image) -> Result<RenderGradients> {
    let (w, h) = (ctx.intrinsics.width, ctx.intrinsics.height);
    if dl_dcolor.width != w || dl_dcolor.height != h || dl_dcolor.channels != 3 {
        return Err(Error::ContextMismatch(format!(
            "render was {w}x{h}x3, upstream gradient is {}x{}x{}",
            dl_dcolor.width, dl_dcolor.height, dl_dcolor.channels
        )));
    }
    let n_splats = ctx.splats.len();
    // per splat: d/du, d/dv, d/d(conic a, b, c), d/dopacity, d/dcolor(3)
    let mut g2d = vec![[0.0f64; 9]; n_splats];
    let mut contrib = Vec::new();
    let bg = ctx.background;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let dl = [dl_dcolor.data[p * 3], dl_dcolor.data[p * 3 + 1], dl_dcolor.data[p * 3 + 2]];
            if dl == [0.0; 3] {
                continue;
            }
            ctx.pixel_contributors(x, y, &mut contrib);
            if contrib.is_empty() {
                continue;
            }
            // transmittance before each contributor
            let mut t_before = Vec::with_capacity(contrib.len());
            let mut t = 1.0;
            for &(_, a, _, _) in &contrib {
                t_before.push(t);
                t *= 1.0 - a;
            }
            let mut acc = [bg[0] * t, bg[1] * t, bg[2] * t];
            for (i, &(s, a, gv, clamped)) in contrib.iter().enumerate().rev() {
                let sp = &ctx.splats[s as usize];
                let ti = t_before[i];
                let gs = &mut g2d[s as usize];
                let mut dl_da = 0.0;
                for k in 0..3 {
                    gs[6 + k] += a * ti * dl[k];
                    dl_da += dl[k] * (ti * sp.color[k] - acc[k] / (1.0 - a));
                    acc[k] += sp.color[k] * a * ti;
                }
                if clamped {
                    continue;
                }
                gs[5] += dl_da * gv;
                let dl_dq = -0.5 * gv * sp.opacity * dl_da;
                let dx = x as f64 - sp.center[0];
                let dy = y as f64 - sp.center[1];
                let (ca, cb, cc) = (sp.conic[0], sp.conic[1], sp.conic[2]);
                gs[0] += -dl_dq * (2.0 * ca * dx + 2.0 * cb * dy);
                gs[1] += -dl_dq * (2.0 * cb * dx + 2.0 * cc * dy);
                gs[2] += dl_dq * dx * dx;
                gs[3] += dl_dq * 2.0 * dx * dy;
                gs[4] += dl_dq * dy * dy;
            }
        }
    }

    let mut grads = vec![[0.0; GAUSSIAN_PARAMS]; ctx.gaussians.len()];
    let mut pose_grad = [0.0; 6];
    for (sp, gs) in ctx.splats.iter().zip(&g2d) {
        let g = &ctx.gaussians[sp.index];
        let out = &mut grads[sp.index];
        splat_backward(ctx, g, sp, gs, out, &mut pose_grad);
    }
    Ok(RenderGradients { gaussians: grads, pose: pose_grad })
}

fn splat_backward(
    ctx: &RenderContext,
    g: &Gaussian3D,
    sp: &Splat,
    gs: &[f64; 9],
    out: &mut [f64; GAUSSIAN_PARAMS],
    pose_grad: &mut [f64; 6],
) {
    let intr = &ctx.intrinsics;
    let parts = covariance_parts(g, &ctx.pose, intr, sp.p_cam);

    // color and opacity through the sigmoid
    for k in 0..3 {
        let c = sp.color[k];
        out[11 + k] += gs[6 + k] * c * (1.0 - c);
    }
    out[10] += gs[5] * sp.opacity * (1.0 - sp.opacity);

    // conic -> 2D covariance: dSigma = -K dK K with dK as a full symmetric matrix
    let k2 = [[sp.conic[0], sp.conic[1]], [sp.conic[1], sp.conic[2]]];
    let gk = [[gs[2], 0.5 * gs[3]], [0.5 * gs[3], gs[4]]];
    let mut tmp = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            tmp[r][c] = k2[r][0] * gk[0][c] + k2[r][1] * gk[1][c];
        }
    }
    let mut g_sig2 = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            g_sig2[r][c] = -(tmp[r][0] * k2[0][c] + tmp[r][1] * k2[1][c]);
        }
    }

    // Sigma2 = J Sc J^T: dSc = J^T G J, dJ = 2 G J Sc
    let j = &parts.j;
    let mut g_sc = Mat3::ZERO;
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    s += j[r][a] * g_sig2[r][c] * j[c][b];
                }
            }
            g_sc.0[a][b] = s;
        }
    }
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..3 {
                    s += g_sig2[r][k] * j[k][l] * parts.sigma_cam.0[l][c];
                }
            }
            g_j[r][c] = 2.0 * s;
        }
    }

    // Sc = W S3 W^T
    let w = &parts.w;
    let g_s3 = w.transpose().matmul(&g_sc).matmul(w);
    let g_w = g_sc.matmul(w).matmul(&parts.sigma3).scale(2.0);

    // S3 = M M^T, M = R diag(s)
    let g_m = g_s3.matmul(&parts.m).scale(2.0);
    let mut g_r = Mat3::ZERO;
    for i in 0..3 {
        for jj in 0..3 {
            g_r.0[i][jj] = g_m.0[i][jj] * parts.scale[jj];
        }
    }
    for jj in 0..3 {
        let gsj: f64 = (0..3).map(|i| g_m.0[i][jj] * parts.rot.0[i][jj]).sum();
        out[7 + jj] += gsj * parts.scale[jj];
    }
    let qn = g.rotation.norm();
    let qhat = g.rotation.normalized();
    let gq_hat = qhat.matrix_vjp(&g_r);
    let qa = qhat.to_array();
    let proj: f64 = (0..4).map(|k| qa[k] * gq_hat[k]).sum();
    for k in 0..4 {
        out[3 + k] += (gq_hat[k] - qa[k] * proj) / qn;
    }

    // camera-space point: through J and the projected center
    let (x, y, z) = (sp.p_cam.x, sp.p_cam.y, sp.p_cam.z);
    let (fx, fy) = (intr.fx, intr.fy);
    let (gu, gv) = (gs[0], gs[1]);
    let z2 = z * z;
    let z3 = z2 * z;
    let gp = Vec3::new(
        g_j[0][2] * (-fx / z2) + gu * fx / z,
        g_j[1][2] * (-fy / z2) + gv * fy / z,
        g_j[0][0] * (-fx / z2) + g_j[0][2] * (2.0 * fx * x / z3) + g_j[1][1] * (-fy / z2)
            + g_j[1][2] * (2.0 * fy * y / z3)
            + gu * (-fx * x / z2)
            + gv * (-fy * y / z2),
    );
    let g_mean = w.transpose().mul_vec(gp);
    out[0] += g_mean.x;
    out[1] += g_mean.y;
    out[2] += g_mean.z;

    // pose tangent: p_cam' = p_cam + p_cam x dw - dv,  W' = (I - [dw]x) W
    let g_omega = gp.cross(sp.p_cam);
    let pm = g_w.matmul(&w.transpose());
    let g_omega_w = Vec3::new(-(pm.0[2][1] - pm.0[1][2]), -(pm.0[0][2] - pm.0[2][0]), -(pm.0[1][0] - pm.0[0][1]));
    pose_grad[0] += g_omega.x + g_omega_w.x;
    pose_grad[1] += g_omega.y + g_omega_w.y;
    pose_grad[2] += g_omega.z + g_omega_w.z;
    pose_grad[3] -= gp.x;
    pose_grad[4] -= gp.y;
    pose_grad[5] -= gp.z;
}

/// Gradients mapped back onto a [`Scene`]: Gaussian parameters per set, track knots,
/// and the pose tangent.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub static_grads: Vec<[f64; GAUSSIAN_PARAMS]>,
    pub dynamic_grads: Vec<[f64; GAUSSIAN_PARAMS]>,
    pub knots: Vec<Vec<Vec3>>,
    pub pose: [f64; 6],
}

impl GradientSet {
    pub fn zeros(scene: &Scene) -> Self {
        Self {
            static_grads: vec![[0.0; GAUSSIAN_PARAMS]; scene.static_set.len()],
            dynamic_grads: vec![[0.0; GAUSSIAN_PARAMS]; scene.dynamic_set.len()],
            knots: scene.tracks.iter().map(|t| vec![Vec3::ZERO; t.knots.len()]).collect(),
            pose: [0.0; 6],
        }
    }

    /// `self += s * o`.
    pub fn add_scaled(&mut self, o: &GradientSet, s: f64) {
        for (a, b) in self.static_grads.iter_mut().zip(&o.static_grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        for (a, b) in self.dynamic_grads.iter_mut().zip(&o.dynamic_grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        for (a, b) in self.knots.iter_mut().zip(&o.knots) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y * s);
        }
        self.pose.iter_mut().zip(&o.pose).for_each(|(x, y)| *x += s * y);
    }

    pub fn is_finite(&self) -> bool {
        self.static_grads.iter().flatten().all(|v| v.is_finite())
            && self.dynamic_grads.iter().flatten().all(|v| v.is_finite())
            && self.knots.iter().flatten().all(|v| v.is_finite())
            && self.pose.iter().all(|v| v.is_finite())
    }
}

/// A render of a scene at a time, remembering how posed Gaussians map back to it.
#[derive(Clone, Debug)]
pub struct SceneRender {
    pub output: RenderOutput,
    pub t: f64,
    pub subset: SceneSubset,
}

/// Deforms `scene` to time `t` and renders it. `DynamicOnly` renders the dynamic set
/// over a black background (used for dynamic masks).
pub fn render_scene(
    scene: &Scene,
    t: f64,
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
    subset: SceneSubset,
) -> Result<SceneRender> {
    scene.validate()?;
    let posed = deform_subset(scene, t, subset)?;
    let bg = match subset {
        SceneSubset::All => scene.background,
        SceneSubset::DynamicOnly => [0.0; 3],
    };
    Ok(SceneRender { output: render(&posed, pose, intr, settings, bg)?, t, subset })
}

/// Backward pass of [`render_scene`], with track-knot gradients from the chain rule
/// through the piecewise-linear interpolation.
pub fn scene_backward(scene: &Scene, r: &SceneRender, dl_dcolor: &Image) -> Result<GradientSet> {
    let rg = render_backward(&r.output.ctx, dl_dcolor)?;
    let mut out = GradientSet::zeros(scene);
    let n_static = match r.subset {
        SceneSubset::All => scene.static_set.len(),
        SceneSubset::DynamicOnly => 0,
    };
    if rg.gaussians.len() != n_static + scene.dynamic_set.len() {
        return Err(Error::ContextMismatch("render does not belong to this scene".into()));
    }
    out.static_grads[..n_static].copy_from_slice(&rg.gaussians[..n_static]);
    for (k, g) in rg.gaussians[n_static..].iter().enumerate() {
        out.dynamic_grads[k] = *g;
        let (i, wgt) = scene.tracks[k].segment(r.t)?;
        let gm = Vec3::new(g[0], g[1], g[2]);
        out.knots[k][i] += gm * (1.0 - wgt);
        out.knots[k][i + 1] += gm * wgt;
    }
    out.pose = rg.pose;
    Ok(out)
}
