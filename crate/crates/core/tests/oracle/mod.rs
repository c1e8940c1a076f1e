//! Independent reference implementations used by the tests.
//!
//! Nothing here calls into the renderer's projection or compositing code: the
//! reference evaluator builds homogeneous 4x4 matrices, inverts the 2x2 covariance
//! directly and walks every Gaussian for every pixel after one global sort.
#![allow(dead_code)]

use dynsplat_core::camera::{se3_update, Intrinsics, PoseSE3};
use dynsplat_core::image::{Image, Mask};
use dynsplat_core::math::{Quat, Vec3};
use dynsplat_core::render::{render_scene, scene_backward, RenderSettings};
use dynsplat_core::scene::{deform_at_time, Gaussian3D, MotionTrack, Scene, SceneSubset, GAUSSIAN_PARAMS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M4 = [[f64; 4]; 4];

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut r = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                r[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    r
}

fn quat_rows(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

/// World-to-camera homogeneous matrix of a camera-to-world pose.
pub fn view_matrix(pose: &PoseSE3) -> M4 {
    let r = quat_rows(pose.rotation.to_array());
    let c = pose.center.to_array();
    // [R^T | -R^T c]
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[j][i];
        }
        m[i][3] = -(0..3).map(|k| r[k][i] * c[k]).sum::<f64>();
    }
    m[3][3] = 1.0;
    m
}

pub fn intrinsic_matrix(intr: &Intrinsics) -> M4 {
    [[intr.fx, 0.0, intr.cx, 0.0], [0.0, intr.fy, intr.cy, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// Projection by homogeneous matrix composition: `(u, v, depth)`.
pub fn project_homogeneous(intr: &Intrinsics, pose: &PoseSE3, x: Vec3) -> (f64, f64, f64) {
    let p = m4_mul(&intrinsic_matrix(intr), &view_matrix(pose));
    let h = [x.x, x.y, x.z, 1.0];
    let mut o = [0.0; 4];
    for i in 0..4 {
        o[i] = (0..4).map(|k| p[i][k] * h[k]).sum();
    }
    (o[0] / o[2], o[1] / o[2], o[2])
}

fn sigm(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Screen covariance from finite-difference Jacobian of the homogeneous projection.
pub fn reference_cov2d(g: &Gaussian3D, pose: &PoseSE3, intr: &Intrinsics, dilation: f64) -> [[f64; 2]; 2] {
    let view = view_matrix(pose);
    let xc = {
        let h = [g.mean.x, g.mean.y, g.mean.z, 1.0];
        let mut o = [0.0; 3];
        for i in 0..3 {
            o[i] = (0..4).map(|k| view[i][k] * h[k]).sum();
        }
        o
    };
    let (x, y, z) = (xc[0], xc[1], xc[2]);
    let j = [[intr.fx / z, 0.0, -intr.fx * x / (z * z)], [0.0, intr.fy / z, -intr.fy * y / (z * z)]];
    let r = quat_rows(g.rotation.to_array());
    let s = [g.log_scale.x.exp(), g.log_scale.y.exp(), g.log_scale.z.exp()];
    // sigma_world = sum_k s_k^2 r_k r_k^T over rotation columns
    let mut sw = [[0.0; 3]; 3];
    for k in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                sw[a][b] += s[k] * s[k] * r[a][k] * r[b][k];
            }
        }
    }
    let mut sc = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for p in 0..3 {
                for q in 0..3 {
                    sc[a][b] += view[a][p] * sw[p][q] * view[b][q];
                }
            }
        }
    }
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for p in 0..3 {
                for q in 0..3 {
                    out[a][b] += j[a][p] * sc[p][q] * j[b][q];
                }
            }
        }
    }
    out[0][0] += dilation;
    out[1][1] += dilation;
    out
}

/// Naive compositor: one global depth sort, then every Gaussian tested at every pixel.
pub fn reference_render(
    gaussians: &[Gaussian3D],
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
    bg: [f64; 3],
) -> Image {
    reference_pass(gaussians, pose, intr, settings, bg).0
}

/// Ordered contributor indices per pixel, as selected by the naive compositor.
pub fn reference_contributors(
    gaussians: &[Gaussian3D],
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
) -> Vec<Vec<usize>> {
    reference_pass(gaussians, pose, intr, settings, [0.0; 3]).1
}

fn reference_pass(
    gaussians: &[Gaussian3D],
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
    bg: [f64; 3],
) -> (Image, Vec<Vec<usize>>) {
    struct P {
        depth: f64,
        idx: usize,
        u: f64,
        v: f64,
        inv: [[f64; 2]; 2],
        o: f64,
        c: [f64; 3],
    }
    let mut ps = Vec::new();
    for (idx, g) in gaussians.iter().enumerate() {
        let (u, v, depth) = project_homogeneous(intr, pose, g.mean);
        if !(depth > settings.near) {
            continue;
        }
        // widened frustum, in pixels from the principal point
        let (w, h) = (intr.width as f64, intr.height as f64);
        if (u - intr.cx).abs() > settings.frustum_guard * intr.cx.max(w - intr.cx)
            || (v - intr.cy).abs() > settings.frustum_guard * intr.cy.max(h - intr.cy)
        {
            continue;
        }
        let s = reference_cov2d(g, pose, intr, settings.dilation);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let c = [sigm(g.color_logit.x), sigm(g.color_logit.y), sigm(g.color_logit.z)];
        ps.push(P { depth, idx, u, v, inv, o: sigm(g.opacity_logit), c });
    }
    ps.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.idx.cmp(&b.idx)));
    let mut img = Image::new(intr.width, intr.height, 3);
    let mut lists = Vec::with_capacity(intr.width * intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            let mut list = Vec::new();
            let mut t = 1.0;
            let mut col = [0.0; 3];
            for p in &ps {
                let d = [x as f64 - p.u, y as f64 - p.v];
                let mut q = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        q += d[a] * p.inv[a][b] * d[b];
                    }
                }
                let alpha = (p.o * (-0.5 * q).exp()).min(settings.alpha_max);
                if alpha < settings.alpha_cutoff {
                    continue;
                }
                list.push(p.idx);
                for k in 0..3 {
                    col[k] += p.c[k] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            for k in 0..3 {
                img.set(x, y, k, col[k] + bg[k] * t);
            }
            lists.push(list);
        }
    }
    (img, lists)
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    Quat::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalized()
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, center: Vec3, spread: f64, scale: (f64, f64)) -> Gaussian3D {
    let off = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * spread;
    Gaussian3D {
        mean: center + off,
        rotation: random_quat(rng),
        log_scale: Vec3::new(
            rng.random_range(scale.0..scale.1),
            rng.random_range(scale.0..scale.1),
            rng.random_range(scale.0..scale.1),
        ),
        opacity_logit: rng.random_range(-1.5..1.5),
        color_logit: Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
    }
}

/// Small random scene in front of a random camera looking at the origin.
pub struct RandomCase {
    pub scene: Scene,
    pub t: f64,
    pub pose: PoseSE3,
    pub intr: Intrinsics,
    pub settings: RenderSettings,
    pub weights: Image,
}

pub fn random_case(seed: u64, n_static: usize, n_dynamic: usize, size: usize) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_frames = 5;
    let static_set = (0..n_static).map(|_| random_gaussian(&mut rng, Vec3::ZERO, 0.25, (-2.6, -1.8))).collect();
    let dynamic_set: Vec<Gaussian3D> =
        (0..n_dynamic).map(|_| random_gaussian(&mut rng, Vec3::ZERO, 0.2, (-2.6, -1.8))).collect();
    let tracks = dynamic_set
        .iter()
        .map(|_| MotionTrack {
            knots: (0..3)
                .map(|_| {
                    Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))
                })
                .collect(),
            n_frames,
        })
        .collect();
    let scene = Scene {
        static_set,
        dynamic_set,
        tracks,
        n_frames,
        background: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
    };
    let az: f64 = rng.random_range(-0.6..0.6);
    let el: f64 = rng.random_range(-0.3..0.3);
    let eye = Vec3::new(2.0 * az.sin() * el.cos(), 2.0 * el.sin(), -2.0 * az.cos() * el.cos());
    let pose = PoseSE3::look_at(eye, Vec3::new(0.02, -0.01, 0.0), Vec3::new(0.0, -1.0, 0.0));
    let f = size as f64 * 1.2;
    let intr =
        Intrinsics { fx: f, fy: f * 1.05, cx: size as f64 / 2.0 - 0.3, cy: size as f64 / 2.0 + 0.2, width: size, height: size };
    let mut weights = Image::new(size, size, 3);
    for v in weights.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    RandomCase { scene, t: rng.random_range(0.0..4.0), pose, intr, settings: RenderSettings::default(), weights }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Mean,
    Rotation,
    Scale,
    Opacity,
    Color,
    Pose,
    Knot,
}

pub fn class_of(i: usize) -> ParamClass {
    match i {
        0..=2 => ParamClass::Mean,
        3..=6 => ParamClass::Rotation,
        7..=9 => ParamClass::Scale,
        10 => ParamClass::Opacity,
        _ => ParamClass::Color,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradSample {
    pub class: ParamClass,
    pub analytic: f64,
    pub numeric: f64,
    /// The +h and -h evaluations select different per-pixel contributor lists, so the
    /// central difference spans a discontinuity of the image.
    pub straddles: bool,
}

impl GradSample {
    pub fn rel_error(&self) -> f64 {
        let d = (self.analytic - self.numeric).abs();
        if d == 0.0 {
            return 0.0;
        }
        d / self.analytic.abs().max(self.numeric.abs()).max(1e-9)
    }
}

fn eval_loss(
    case: &RandomCase,
    scene: &Scene,
    pose: &PoseSE3,
    loss: &dyn Fn(&Image) -> f64,
) -> (f64, Vec<Vec<usize>>) {
    let r = render_scene(scene, case.t, pose, &case.intr, &case.settings, SceneSubset::All).unwrap();
    let loss = loss(&r.output.color);
    let posed = deform_at_time(scene, case.t).unwrap();
    (loss, reference_contributors(&posed, pose, &case.intr, &case.settings))
}

fn central(plus: (f64, Vec<Vec<usize>>), minus: (f64, Vec<Vec<usize>>), h: f64) -> (f64, bool) {
    ((plus.0 - minus.0) / (2.0 * h), plus.1 != minus.1)
}

/// Analytic vs central-difference gradients of `sum(weights * render)` for every
/// parameter of the case.
pub fn gradient_check(case: &RandomCase, h: f64) -> Vec<GradSample> {
    let weighted = |img: &Image| img.data.iter().zip(&case.weights.data).map(|(a, b)| a * b).sum();
    gradient_check_with(case, h, &weighted, &|_| case.weights.clone())
}

/// Same as [`gradient_check`] for an arbitrary image loss; `upstream` maps the rendered
/// image to the loss gradient with respect to it.
pub fn gradient_check_with(
    case: &RandomCase,
    h: f64,
    loss: &dyn Fn(&Image) -> f64,
    upstream: &dyn Fn(&Image) -> Image,
) -> Vec<GradSample> {
    let r = render_scene(&case.scene, case.t, &case.pose, &case.intr, &case.settings, SceneSubset::All).unwrap();
    let grads = scene_backward(&case.scene, &r, &upstream(&r.output.color)).unwrap();
    let mut out = Vec::new();
    let fd = |scene: &Scene, pose: &PoseSE3| eval_loss(case, scene, pose, loss);

    for (set, is_dynamic) in [(&case.scene.static_set, false), (&case.scene.dynamic_set, true)] {
        for gi in 0..set.len() {
            for p in 0..GAUSSIAN_PARAMS {
                let mut plus = case.scene.clone();
                let mut minus = case.scene.clone();
                let edit = |s: &mut Scene, delta: f64| {
                    let target = if is_dynamic { &mut s.dynamic_set[gi] } else { &mut s.static_set[gi] };
                    let mut v = target.to_params();
                    v[p] += delta;
                    *target = Gaussian3D::from_params(&v);
                };
                edit(&mut plus, h);
                edit(&mut minus, -h);
                let (numeric, straddles) = central(fd(&plus, &case.pose), fd(&minus, &case.pose), h);
                let analytic = if is_dynamic { grads.dynamic_grads[gi][p] } else { grads.static_grads[gi][p] };
                out.push(GradSample { class: class_of(p), analytic, numeric, straddles });
            }
        }
    }
    for k in 0..6 {
        let mut xi = [0.0; 6];
        xi[k] = h;
        let plus = se3_update(&case.pose, &xi);
        xi[k] = -h;
        let minus = se3_update(&case.pose, &xi);
        let (numeric, straddles) = central(fd(&case.scene, &plus), fd(&case.scene, &minus), h);
        out.push(GradSample { class: ParamClass::Pose, analytic: grads.pose[k], numeric, straddles });
    }
    for gi in 0..case.scene.tracks.len() {
        for kn in 0..case.scene.tracks[gi].knots.len() {
            for c in 0..3 {
                let mut plus = case.scene.clone();
                let mut minus = case.scene.clone();
                plus.tracks[gi].knots[kn][c] += h;
                minus.tracks[gi].knots[kn][c] -= h;
                let (numeric, straddles) = central(fd(&plus, &case.pose), fd(&minus, &case.pose), h);
                let analytic = grads.knots[gi][kn][c];
                out.push(GradSample { class: ParamClass::Knot, analytic, numeric, straddles });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// metrics and sampler

pub fn psnr_oracle(a: &Image, b: &Image, m: &Mask) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in 0..a.height {
        for x in 0..a.width {
            if m.get(x, y) {
                for c in 0..3 {
                    se += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
                    n += 1.0;
                }
            }
        }
    }
    10.0 * (n / se).log10()
}

/// Direct 2D windowed SSIM: 11x11 Gaussian (sigma 1.5) restricted to in-bounds pixels
/// and renormalized, evaluated separately at every pixel.
pub fn ssim_oracle(a: &Image, b: &Image, m: &Mask) -> f64 {
    let (w, h) = (a.width as i64, a.height as i64);
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !m.get(x as usize, y as usize) {
                continue;
            }
            let mut s = 0.0;
            for c in 0..3 {
                let (mut ws, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (u, v) = (x + dx, y + dy);
                        if u < 0 || v < 0 || u >= w || v >= h {
                            continue;
                        }
                        let k = (-((dx * dx + dy * dy) as f64) / 4.5).exp();
                        let p = a.get(u as usize, v as usize, c);
                        let q = b.get(u as usize, v as usize, c);
                        ws += k;
                        ma += k * p;
                        mb += k * q;
                        aa += k * p * p;
                        bb += k * q * q;
                        ab += k * p * q;
                    }
                }
                let (ma, mb) = (ma / ws, mb / ws);
                let (va, vb, cov) = (aa / ws - ma * ma, bb / ws - mb * mb, ab / ws - ma * mb);
                s += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            sum += s / 3.0;
            count += 1.0;
        }
    }
    sum / count
}


/// O(n^2) search, ties to the lexicographically smallest pair.
pub fn brute_pair(lon: &[f64]) -> (usize, usize, f64) {
    let mut best = (0, lon.len() - 1, -1.0);
    for a in 0..lon.len() {
        for b in a + 1..lon.len() {
            let mut d = (lon[a] - lon[b]).abs() % (2.0 * std::f64::consts::PI);
            if d > std::f64::consts::PI {
                d = 2.0 * std::f64::consts::PI - d;
            }
            if d > best.2 {
                best = (a, b, d);
            }
        }
    }
    best
}

