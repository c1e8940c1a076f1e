//! Pseudo-ground-truth enhancement.
//!
//! The simulator reproduces what matters about a generative enhancer for
//! refinement: outputs are sharp and keep coarse structure, but each view gets
//! its own random misalignment and photometric jitter. External enhancers plug
//! in through [`Enhancer`]; the file protocol lives in the `dynsplat` crate.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, PoseSE3, Trajectory};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::render::{render_scene, RenderSettings};
use crate::scene::{Scene, SceneSubset};

/// Strength at which the configured amplitudes apply unscaled.
pub const REFERENCE_STRENGTH: f64 = 10.0;
/// Standard deviation of the low-pass filter used to measure coarse structure.
pub const STRUCTURE_SIGMA: f64 = 8.0;
/// Alpha threshold of the dynamic-only render that defines the dynamic mask.
pub const DYNAMIC_MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancerMode {
    #[default]
    SimulateFromGt,
    Blind,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerConfig {
    pub mode: EnhancerMode,
    pub strength_k: u32,
    /// Maximum displacement in pixels at the reference strength.
    pub warp_amp: f64,
    /// Share of `warp_amp` spent on a global shift; the rest is a smooth local field.
    pub shift_fraction: f64,
    /// Shortest wavelength of the local field, in image extents (longest is twice that).
    pub wavelength: f64,
    pub gain_jitter: f64,
    pub bias_jitter: f64,
    pub noise_sigma: f64,
    /// Unsharp-mask amount used in blind mode.
    pub sharpen_amount: f64,
    pub seed: u64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            mode: EnhancerMode::SimulateFromGt,
            strength_k: 10,
            warp_amp: 3.0,
            shift_fraction: 0.7,
            wavelength: 1.0,
            gain_jitter: 0.05,
            bias_jitter: 0.02,
            noise_sigma: 0.01,
            sharpen_amount: 0.6,
            seed: 0,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("warp_amp", self.warp_amp),
            ("gain_jitter", self.gain_jitter),
            ("bias_jitter", self.bias_jitter),
            ("noise_sigma", self.noise_sigma),
            ("sharpen_amount", self.sharpen_amount),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(alloc::format!("enhancer {name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.shift_fraction) {
            return Err(Error::InvalidInput(alloc::format!("enhancer shift_fraction must be in [0, 1], got {}", self.shift_fraction)));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::InvalidInput(alloc::format!("enhancer wavelength must be positive, got {}", self.wavelength)));
        }
        Ok(())
    }

    /// Linear amplitude scale implied by `strength_k`.
    pub fn strength_scale(&self) -> f64 {
        self.strength_k as f64 / REFERENCE_STRENGTH
    }

    /// Upper bound on the mean absolute low-pass residual between the output and its source.
    ///
    /// A displacement of `d` pixels moves a [0,1] image smoothed at sigma `s` by at most
    /// `d * sqrt(2) / (s * sqrt(2 pi))` per pixel; gain, bias and noise add at most their
    /// amplitudes. The warp term is doubled to cover non-uniform fields.
    pub fn structure_bound(&self) -> f64 {
        let s = self.strength_scale();
        let warp = 2.0 * self.warp_amp * core::f64::consts::SQRT_2 / (STRUCTURE_SIGMA * (2.0 * core::f64::consts::PI).sqrt());
        let sharpen = if self.mode == EnhancerMode::Blind { 0.5 * self.sharpen_amount / STRUCTURE_SIGMA } else { 0.0 };
        s * (warp + self.gain_jitter + self.bias_jitter + self.noise_sigma) + sharpen
    }
}

/// Identifies one pseudo view: sampled-camera slot `camera` at frame `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewKey {
    pub camera: usize,
    pub frame: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one view, independent of the order in which views are processed.
pub fn view_seed(seed: u64, key: ViewKey) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ key.camera as u64) ^ (key.frame as u64).wrapping_mul(0x2545_F491_4F6C_DD1D))
}

/// Per-pixel displacement in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl WarpField {
    pub fn max_magnitude(&self) -> f64 {
        self.dx.iter().zip(&self.dy).map(|(x, y)| (x * x + y * y).sqrt()).fold(0.0, f64::max)
    }
}

/// Per-view random draws, all derived from [`view_seed`].
#[derive(Clone, Debug, PartialEq)]
pub struct ViewJitter {
    pub field: WarpField,
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    noise_seed: u64,
}

/// Smooth displacement: a global shift (up to `shift_fraction * amp`) plus a sinusoidal
/// field (up to the rest), so the magnitude never exceeds `amp`. `wavelength` is the
/// shortest wave in image extents.
pub fn warp_field(amp: f64, shift_fraction: f64, wavelength: f64, width: usize, height: usize, rng: &mut ChaCha8Rng) -> WarpField {
    let shift_r = shift_fraction * amp * rng.random::<f64>().sqrt();
    let shift_a = rng.random_range(0.0..core::f64::consts::TAU);
    let (sx, sy) = (shift_r * shift_a.cos(), shift_r * shift_a.sin());
    let wave_amp = (1.0 - shift_fraction) * amp / core::f64::consts::SQRT_2;
    let scale = width.max(height).max(1) as f64;
    let mut waves = [[0.0f64; 4]; 2];
    for w in waves.iter_mut() {
        let wavelength = scale * wavelength * rng.random_range(1.0..2.0);
        let dir = rng.random_range(0.0..core::f64::consts::TAU);
        *w = [
            core::f64::consts::TAU / wavelength * dir.cos(),
            core::f64::consts::TAU / wavelength * dir.sin(),
            rng.random_range(0.0..core::f64::consts::TAU),
            rng.random_range(-1.0..1.0),
        ];
    }
    let mut dx = vec![0.0; width * height];
    let mut dy = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let wave = |w: &[f64; 4]| w[3] * (w[0] * x as f64 + w[1] * y as f64 + w[2]).sin();
            dx[p] = sx + wave_amp * wave(&waves[0]);
            dy[p] = sy + wave_amp * wave(&waves[1]);
        }
    }
    WarpField { width, height, dx, dy }
}

pub fn view_jitter(cfg: &EnhancerConfig, key: ViewKey, width: usize, height: usize) -> ViewJitter {
    let s = cfg.strength_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(view_seed(cfg.seed, key));
    let field = warp_field(s * cfg.warp_amp, cfg.shift_fraction, cfg.wavelength, width, height, &mut rng);
    let mut gain = [1.0; 3];
    let mut bias = [0.0; 3];
    for k in 0..3 {
        gain[k] = 1.0 + s * cfg.gain_jitter * rng.random_range(-1.0..1.0);
        bias[k] = s * cfg.bias_jitter * rng.random_range(-1.0..1.0);
    }
    ViewJitter { field, gain, bias, noise_seed: rng.random() }
}

/// Bilinear resampling at `x + field(x)`, clamped to the border.
pub fn warp_image(img: &Image, field: &WarpField) -> Image {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut out = Image::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sx = (x as f64 + field.dx[p]).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + field.dy[p]).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for k in 0..c {
                let top = img.get(x0, y0, k) * (1.0 - fx) + img.get(x1, y0, k) * fx;
                let bot = img.get(x0, y1, k) * (1.0 - fx) + img.get(x1, y1, k) * fx;
                out.set(x, y, k, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Separable Gaussian blur with truncated, renormalized taps (radius 3 sigma).
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let (w, h, c) = (img.width, img.height, img.channels);
    let pass = |src: &Image, horizontal: bool| {
        let mut out = Image::new(w, h, c);
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(len - 1);
                for k in 0..c {
                    let (mut s, mut n) = (0.0, 0.0);
                    for q in lo..=hi {
                        let t = taps[q + r - pos];
                        let v = if horizontal { src.get(q, y, k) } else { src.get(x, q, k) };
                        s += t * v;
                        n += t;
                    }
                    out.set(x, y, k, s / n);
                }
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Mean absolute difference of the two images after low-pass filtering.
pub fn low_pass_residual(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (la, lb) = (gaussian_blur(a, STRUCTURE_SIGMA), gaussian_blur(b, STRUCTURE_SIGMA));
    Ok(la.data.iter().zip(&lb.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64)
}

/// Mean absolute difference of the high-pass parts (`img - low_pass(img)`).
pub fn high_pass_residual(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (la, lb) = (gaussian_blur(a, STRUCTURE_SIGMA), gaussian_blur(b, STRUCTURE_SIGMA));
    let mut s = 0.0;
    for i in 0..a.data.len() {
        s += ((a.data[i] - la.data[i]) - (b.data[i] - lb.data[i])).abs();
    }
    Ok(s / a.data.len() as f64)
}

fn apply_jitter(src: &Image, j: &ViewJitter, noise_sigma: f64) -> Image {
    let mut out = warp_image(src, &j.field);
    let mut rng = ChaCha8Rng::seed_from_u64(j.noise_seed);
    let c = out.channels;
    for (i, v) in out.data.iter_mut().enumerate() {
        let k = i % c;
        let n: f64 = rng.sample(StandardNormal);
        *v = (*v * j.gain[k % 3] + j.bias[k % 3] + noise_sigma * n).clamp(0.0, 1.0);
    }
    out
}

/// Deterministic enhancer simulator for one view.
pub fn simulate_enhance(render: &Image, gt: Option<&Image>, cfg: &EnhancerConfig, key: ViewKey) -> Result<Image> {
    cfg.validate()?;
    let s = cfg.strength_scale();
    match cfg.mode {
        EnhancerMode::External => {
            Err(Error::InvalidInput("external mode is served by the exchange protocol, not the simulator".into()))
        }
        EnhancerMode::SimulateFromGt => {
            let gt = gt.ok_or(Error::MissingGroundTruth { camera: key.camera, frame: key.frame })?;
            render.check_same_shape(gt)?;
            let j = view_jitter(cfg, key, gt.width, gt.height);
            Ok(apply_jitter(gt, &j, s * cfg.noise_sigma))
        }
        EnhancerMode::Blind => {
            let blur = gaussian_blur(render, 1.0);
            let amount = s * cfg.sharpen_amount;
            let mut sharp = render.clone();
            for (i, v) in sharp.data.iter_mut().enumerate() {
                *v += amount * (*v - blur.data[i]);
            }
            let j = view_jitter(cfg, key, render.width, render.height);
            Ok(apply_jitter(&sharp, &j, s * cfg.noise_sigma))
        }
    }
}

/// One enhancement request.
#[derive(Clone, Debug)]
pub struct EnhanceItem {
    pub key: ViewKey,
    pub pose: PoseSE3,
    pub render: Image,
    pub gt: Option<Image>,
}

/// Batch enhancer: the simulator in-process, or an external program over the exchange protocol.
pub trait Enhancer {
    fn enhance_batch(&mut self, items: &[EnhanceItem]) -> Result<Vec<Image>>;

    /// Whether the enhancer needs ground-truth images in the request items.
    fn needs_ground_truth(&self) -> bool {
        false
    }
}

pub struct Simulator {
    pub cfg: EnhancerConfig,
}

impl Enhancer for Simulator {
    fn enhance_batch(&mut self, items: &[EnhanceItem]) -> Result<Vec<Image>> {
        items.iter().map(|it| simulate_enhance(&it.render, it.gt.as_ref(), &self.cfg, it.key)).collect()
    }

    fn needs_ground_truth(&self) -> bool {
        self.cfg.mode == EnhancerMode::SimulateFromGt
    }
}

/// Source of clean images for arbitrary views (only available for synthetic data).
pub trait GroundTruthProvider {
    fn ground_truth(&self, pose: &PoseSE3, intr: &Intrinsics, frame: usize) -> Result<Image>;
}

/// Ground truth rendered from a known scene.
pub struct SceneGroundTruth<'a> {
    pub scene: &'a Scene,
    pub settings: RenderSettings,
}

impl GroundTruthProvider for SceneGroundTruth<'_> {
    fn ground_truth(&self, pose: &PoseSE3, intr: &Intrinsics, frame: usize) -> Result<Image> {
        Ok(render_scene(self.scene, frame as f64, pose, intr, &self.settings, SceneSubset::All)?.output.color)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoViewRecord {
    pub key: ViewKey,
    /// Index into the sampled trajectory.
    pub pose_index: usize,
    pub pose: PoseSE3,
    pub render: Image,
    pub enhanced: Image,
    pub dyn_mask: Mask,
}

impl PseudoViewRecord {
    pub fn mask_empty(&self) -> bool {
        self.dyn_mask.is_empty()
    }
}

/// Render of one sampled view plus its dynamic mask.
pub fn render_pseudo_view(
    scene: &Scene,
    pose: &PoseSE3,
    intr: &Intrinsics,
    settings: &RenderSettings,
    frame: usize,
) -> Result<(Image, Mask)> {
    let t = frame as f64;
    let full = render_scene(scene, t, pose, intr, settings, SceneSubset::All)?;
    let dynamic = render_scene(scene, t, pose, intr, settings, SceneSubset::DynamicOnly)?;
    let mask = Mask::from_threshold(&dynamic.output.alpha, 0, DYNAMIC_MASK_THRESHOLD);
    Ok((full.output.color, mask))
}

/// Request items for every sampled view, ordered by (frame, slot).
pub fn pseudo_requests(
    scene: &Scene,
    sampled: &Trajectory,
    settings: &RenderSettings,
    gt: Option<&dyn GroundTruthProvider>,
) -> Result<(Vec<EnhanceItem>, Vec<(usize, Mask)>)> {
    sampled.validate()?;
    let mut items = Vec::with_capacity(sampled.len());
    let mut extra = Vec::with_capacity(sampled.len());
    let frames = sampled.timesteps.iter().copied().max().map_or(0, |m| m + 1);
    for t in 0..frames {
        for (slot, idx) in sampled.indices_at(t).into_iter().enumerate() {
            let pose = sampled.poses[idx];
            let (render, mask) = render_pseudo_view(scene, &pose, &sampled.intrinsics, settings, t)?;
            let gt_img = match gt {
                Some(p) => Some(p.ground_truth(&pose, &sampled.intrinsics, t)?),
                None => None,
            };
            items.push(EnhanceItem { key: ViewKey { camera: slot, frame: t }, pose, render, gt: gt_img });
            extra.push((idx, mask));
        }
    }
    Ok((items, extra))
}

/// Builds the whole pseudo multi-view dataset in one batch.
pub fn build_pseudo_dataset(
    scene: &Scene,
    sampled: &Trajectory,
    settings: &RenderSettings,
    enhancer: &mut dyn Enhancer,
    gt: Option<&dyn GroundTruthProvider>,
) -> Result<Vec<PseudoViewRecord>> {
    let gt = if enhancer.needs_ground_truth() { gt } else { None };
    let (items, extra) = pseudo_requests(scene, sampled, settings, gt)?;
    assemble_records(items, extra, enhancer)
}

pub fn assemble_records(
    items: Vec<EnhanceItem>,
    extra: Vec<(usize, Mask)>,
    enhancer: &mut dyn Enhancer,
) -> Result<Vec<PseudoViewRecord>> {
    let enhanced = enhancer.enhance_batch(&items)?;
    if enhanced.len() != items.len() {
        return Err(Error::Enhancer(alloc::format!("expected {} outputs, got {}", items.len(), enhanced.len())));
    }
    let mut out = Vec::with_capacity(items.len());
    for ((item, (pose_index, dyn_mask)), e) in items.into_iter().zip(extra).zip(enhanced) {
        if !e.same_shape(&item.render) {
            return Err(Error::ShapeMismatch {
                left: (item.render.width, item.render.height, item.render.channels),
                right: (e.width, e.height, e.channels),
            });
        }
        out.push(PseudoViewRecord { key: item.key, pose_index, pose: item.pose, render: item.render, enhanced: e, dyn_mask });
    }
    Ok(out)
}
