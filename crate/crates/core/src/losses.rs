//! Photometric loss atoms and the two composite losses.
//!
//! Every atom has a matching `*_grad` returning the gradient with respect to the
//! second argument (the rendered image), which is what feeds `scene_backward`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// How the SSIM atom enters the composite loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimForm {
    /// `1 - mean SSIM`
    #[default]
    OneMinus,
    /// `(1 - mean SSIM) / 2`
    Dssim,
}

impl SsimForm {
    fn scale(self) -> f64 {
        match self {
            SsimForm::OneMinus => 1.0,
            SsimForm::Dssim => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub ssim_form: SsimForm,
    /// Number of dyadic scales in the perceptual proxy.
    pub perceptual_scales: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_p: 0.1, lambda_s: 0.1, ssim_form: SsimForm::OneMinus, perceptual_scales: 3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_p) || !ok(self.lambda_s) {
            return Err(Error::InvalidInput("loss weights must be finite and non-negative".into()));
        }
        if self.perceptual_scales == 0 {
            return Err(Error::InvalidInput("perceptual_scales must be at least 1".into()));
        }
        Ok(())
    }
}

/// A mean over the pixels selected by a mask. `count == 0` flags an empty mask; the value is 0 then.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedMean {
    pub value: f64,
    pub count: usize,
}

impl MaskedMean {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l1: f64,
    pub perceptual: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub components: LossComponents,
    pub masked_pixel_count: usize,
    pub empty_mask: bool,
}

impl LossReport {
    fn empty() -> Self {
        Self { total: 0.0, components: LossComponents::default(), masked_pixel_count: 0, empty_mask: true }
    }
}

fn check_inputs(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<()> {
    a.check_same_shape(b)?;
    if let Some(m) = mask {
        m.matches(a)?;
    }
    Ok(())
}

fn in_mask(mask: Option<&Mask>, p: usize) -> bool {
    mask.is_none_or(|m| m.data[p])
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// L1

pub fn l1(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<MaskedMean> {
    check_inputs(a, b, mask)?;
    let c = a.channels;
    let mut sum = 0.0;
    let mut count = 0;
    for p in 0..a.pixel_count() {
        if in_mask(mask, p) {
            count += 1;
            for k in 0..c {
                sum += (a.data[p * c + k] - b.data[p * c + k]).abs();
            }
        }
    }
    let value = if count == 0 { 0.0 } else { sum / (count * c) as f64 };
    Ok(MaskedMean { value, count })
}

/// Gradient of [`l1`] with respect to `b`.
pub fn l1_grad(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<Image> {
    check_inputs(a, b, mask)?;
    let c = a.channels;
    let count = mask.map_or(a.pixel_count(), Mask::count);
    let mut g = Image::new(a.width, a.height, c);
    if count == 0 {
        return Ok(g);
    }
    let n = (count * c) as f64;
    for p in 0..a.pixel_count() {
        if in_mask(mask, p) {
            for k in 0..c {
                let i = p * c + k;
                g.data[i] = sign(b.data[i] - a.data[i]) / n;
            }
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// SSIM

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable window sum with taps truncated at the image border (no padding).
fn window_sum(x: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for (src, dst) in x.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
        for (xo, d) in dst.iter_mut().enumerate() {
            let lo = xo.saturating_sub(r);
            let hi = (xo + r).min(w - 1);
            *d = src[lo..=hi].iter().zip(&taps[lo + r - xo..]).map(|(v, t)| v * t).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for yo in 0..h {
        let lo = yo.saturating_sub(r);
        let hi = (yo + r).min(h - 1);
        let row = &mut out[yo * w..(yo + 1) * w];
        for yi in lo..=hi {
            let t = taps[yi + r - yo];
            for (o, v) in row.iter_mut().zip(&tmp[yi * w..(yi + 1) * w]) {
                *o += t * v;
            }
        }
    }
    out
}

struct SsimChannel {
    map: Vec<f64>,
    // partial derivatives of the per-pixel SSIM w.r.t. mu_b, E[ab] and E[b^2]
    d_mu_b: Vec<f64>,
    d_e_ab: Vec<f64>,
    d_e_bb: Vec<f64>,
}

struct SsimPass {
    w: usize,
    h: usize,
    taps: [f64; SSIM_WINDOW],
    norm: Vec<f64>,
    channels: Vec<SsimChannel>,
}

fn ssim_pass(a: &Image, b: &Image, need_grad: bool) -> Result<SsimPass> {
    a.check_same_shape(b)?;
    let (w, h, c) = (a.width, a.height, a.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    let taps = gaussian_taps();
    let norm = window_sum(&vec![1.0; w * h], w, h, &taps);
    let filt = |v: &[f64]| -> Vec<f64> {
        let mut s = window_sum(v, w, h, &taps);
        s.iter_mut().zip(&norm).for_each(|(s, n)| *s /= n);
        s
    };
    let mut channels = Vec::with_capacity(c);
    for k in 0..c {
        let ca: Vec<f64> = (0..w * h).map(|p| a.data[p * c + k]).collect();
        let cb: Vec<f64> = (0..w * h).map(|p| b.data[p * c + k]).collect();
        let mu_a = filt(&ca);
        let mu_b = filt(&cb);
        let e_aa = filt(&ca.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_bb = filt(&cb.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_ab = filt(&ca.iter().zip(&cb).map(|(x, y)| x * y).collect::<Vec<_>>());
        let n = w * h;
        let mut ch = SsimChannel {
            map: vec![0.0; n],
            d_mu_b: if need_grad { vec![0.0; n] } else { Vec::new() },
            d_e_ab: if need_grad { vec![0.0; n] } else { Vec::new() },
            d_e_bb: if need_grad { vec![0.0; n] } else { Vec::new() },
        };
        for p in 0..n {
            let (ma, mb) = (mu_a[p], mu_b[p]);
            let va = e_aa[p] - ma * ma;
            let vb = e_bb[p] - mb * mb;
            let cov = e_ab[p] - ma * mb;
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = va + vb + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            ch.map[p] = s;
            if need_grad {
                ch.d_mu_b[p] = s * (2.0 * ma / a1 - 2.0 * mb / b1 - 2.0 * ma / a2 + 2.0 * mb / b2);
                ch.d_e_ab[p] = s * 2.0 / a2;
                ch.d_e_bb[p] = -s / b2;
            }
        }
        channels.push(ch);
    }
    Ok(SsimPass { w, h, taps, norm, channels })
}

/// Per-pixel SSIM averaged over channels, as a one-channel image.
///
/// Windows are truncated at the border and renormalized, so constant images give
/// a constant map.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Image> {
    let pass = ssim_pass(a, b, false)?;
    let c = pass.channels.len() as f64;
    let data = (0..pass.w * pass.h).map(|p| pass.channels.iter().map(|ch| ch.map[p]).sum::<f64>() / c).collect();
    Image::from_data(pass.w, pass.h, 1, data)
}

/// Mean of the SSIM map over the mask (or the whole image).
pub fn masked_ssim(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<MaskedMean> {
    check_inputs(a, b, mask)?;
    let map = ssim_map(a, b)?;
    let mut sum = 0.0;
    let mut count = 0;
    for (p, v) in map.data.iter().enumerate() {
        if in_mask(mask, p) {
            sum += v;
            count += 1;
        }
    }
    Ok(MaskedMean { value: if count == 0 { 0.0 } else { sum / count as f64 }, count })
}

/// Gradient of [`masked_ssim`] with respect to `b`.
pub fn masked_ssim_grad(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<Image> {
    check_inputs(a, b, mask)?;
    let pass = ssim_pass(a, b, true)?;
    let (w, h, c) = (pass.w, pass.h, a.channels);
    let count = mask.map_or(w * h, Mask::count);
    let mut g = Image::new(w, h, c);
    if count == 0 {
        return Ok(g);
    }
    let up = 1.0 / (count as f64 * c as f64);
    for (k, ch) in pass.channels.iter().enumerate() {
        // adjoint of the normalized window: divide by the norm, then sum with the symmetric taps
        let adj = |d: &[f64]| -> Vec<f64> {
            let v: Vec<f64> =
                (0..w * h).map(|p| if in_mask(mask, p) { up * d[p] / pass.norm[p] } else { 0.0 }).collect();
            window_sum(&v, w, h, &pass.taps)
        };
        let g_mu = adj(&ch.d_mu_b);
        let g_ab = adj(&ch.d_e_ab);
        let g_bb = adj(&ch.d_e_bb);
        for p in 0..w * h {
            let i = p * c + k;
            g.data[i] = g_mu[p] + g_ab[p] * a.data[i] + 2.0 * g_bb[p] * b.data[i];
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Perceptual proxy: L1 between finite-difference maps at dyadic scales

struct Level {
    img: Image,
    mask: Option<Mask>,
}

fn downsample(level: &Level) -> Option<Level> {
    let (w, h, c) = (level.img.width / 2, level.img.height / 2, level.img.channels);
    if w < 2 && h < 2 {
        return None;
    }
    let mut img = Image::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let s = level.img.get(2 * x, 2 * y, k)
                    + level.img.get(2 * x + 1, 2 * y, k)
                    + level.img.get(2 * x, 2 * y + 1, k)
                    + level.img.get(2 * x + 1, 2 * y + 1, k);
                img.set(x, y, k, 0.25 * s);
            }
        }
    }
    let mask = level.mask.as_ref().map(|m| {
        let mut out = Mask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] =
                    m.get(2 * x, 2 * y) || m.get(2 * x + 1, 2 * y) || m.get(2 * x, 2 * y + 1) || m.get(2 * x + 1, 2 * y + 1);
            }
        }
        out
    });
    Some(Level { img, mask })
}

fn pyramid(img: &Image, mask: Option<&Mask>, scales: usize) -> Vec<Level> {
    let mut levels = vec![Level { img: img.clone(), mask: mask.cloned() }];
    while levels.len() < scales {
        match downsample(levels.last().expect("non-empty")) {
            Some(l) => levels.push(l),
            None => break,
        }
    }
    levels
}

/// Finite-difference pairs (p, q) at one level whose difference `img[q] - img[p]` is compared.
/// A pair counts when either endpoint is inside the mask.
fn difference_pairs(w: usize, h: usize, mask: Option<&Mask>) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let ok = |p: usize, q: usize| mask.is_none_or(|m| m.data[p] || m.data[q]);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w && ok(p, p + 1) {
                pairs.push((p, p + 1));
            }
            if y + 1 < h && ok(p, p + w) {
                pairs.push((p, p + w));
            }
        }
    }
    pairs
}

fn level_distance(a: &Image, b: &Image, pairs: &[(usize, usize)]) -> f64 {
    let c = a.channels;
    let mut sum = 0.0;
    for &(p, q) in pairs {
        for k in 0..c {
            let da = a.data[q * c + k] - a.data[p * c + k];
            let db = b.data[q * c + k] - b.data[p * c + k];
            sum += (da - db).abs();
        }
    }
    sum / (pairs.len() * c) as f64
}

/// Multi-scale edge-feature distance. Averages over the scales that have at least one
/// difference pair; `count` is the number of masked pixels at full resolution.
pub fn perceptual_proxy(a: &Image, b: &Image, mask: Option<&Mask>, scales: usize) -> Result<MaskedMean> {
    check_inputs(a, b, mask)?;
    let count = mask.map_or(a.pixel_count(), Mask::count);
    if count == 0 {
        return Ok(MaskedMean { value: 0.0, count });
    }
    let pa = pyramid(a, mask, scales.max(1));
    let pb = pyramid(b, None, pa.len());
    let mut total = 0.0;
    let mut used = 0;
    for (la, lb) in pa.iter().zip(&pb) {
        let pairs = difference_pairs(la.img.width, la.img.height, la.mask.as_ref());
        if pairs.is_empty() {
            continue;
        }
        total += level_distance(&la.img, &lb.img, &pairs);
        used += 1;
    }
    Ok(MaskedMean { value: if used == 0 { 0.0 } else { total / used as f64 }, count })
}

/// Gradient of [`perceptual_proxy`] with respect to `b`.
pub fn perceptual_proxy_grad(a: &Image, b: &Image, mask: Option<&Mask>, scales: usize) -> Result<Image> {
    check_inputs(a, b, mask)?;
    let c = a.channels;
    let count = mask.map_or(a.pixel_count(), Mask::count);
    if count == 0 {
        return Ok(Image::new(a.width, a.height, c));
    }
    let pa = pyramid(a, mask, scales.max(1));
    let pb = pyramid(b, None, pa.len());
    let used = pa.iter().filter(|l| !difference_pairs(l.img.width, l.img.height, l.mask.as_ref()).is_empty()).count();
    // gradient at each level, then pulled back through the average pooling
    let mut level_grads: Vec<Image> = Vec::with_capacity(pa.len());
    for (la, lb) in pa.iter().zip(&pb) {
        let mut g = Image::new(la.img.width, la.img.height, c);
        let pairs = difference_pairs(la.img.width, la.img.height, la.mask.as_ref());
        if !pairs.is_empty() {
            let s = 1.0 / (used as f64 * (pairs.len() * c) as f64);
            for &(p, q) in &pairs {
                for k in 0..c {
                    let da = la.img.data[q * c + k] - la.img.data[p * c + k];
                    let db = lb.img.data[q * c + k] - lb.img.data[p * c + k];
                    let d = s * sign(db - da);
                    g.data[q * c + k] += d;
                    g.data[p * c + k] -= d;
                }
            }
        }
        level_grads.push(g);
    }
    for l in (1..level_grads.len()).rev() {
        let (coarse, fine) = level_grads.split_at_mut(l);
        let (fine, coarse) = (&mut coarse[l - 1], &fine[0]);
        for y in 0..coarse.height {
            for x in 0..coarse.width {
                for k in 0..c {
                    let v = 0.25 * coarse.get(x, y, k);
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let i = fine.idx(2 * x + dx, 2 * y + dy, k);
                        fine.data[i] += v;
                    }
                }
            }
        }
    }
    Ok(level_grads.swap_remove(0))
}

// ---------------------------------------------------------------------------
// Composite losses

/// Dynamic-region loss: both images are multiplied by `d`, then each atom is averaged inside `d`.
pub fn dynamic_loss(e: &Image, i_hat: &Image, d: &Mask, w: &LossWeights) -> Result<LossReport> {
    Ok(composite(e, i_hat, d, w, false)?.0)
}

/// [`dynamic_loss`] and its gradient with respect to `i_hat`.
pub fn dynamic_loss_grad(e: &Image, i_hat: &Image, d: &Mask, w: &LossWeights) -> Result<(LossReport, Image)> {
    let (r, g) = composite(e, i_hat, d, w, true)?;
    Ok((r, g.expect("gradient requested")))
}

/// Full-image loss used for the sampled-camera pose update.
pub fn camera_loss(e: &Image, i_hat: &Image, w: &LossWeights) -> Result<LossReport> {
    dynamic_loss(e, i_hat, &Mask::full(e.width, e.height), w)
}

pub fn camera_loss_grad(e: &Image, i_hat: &Image, w: &LossWeights) -> Result<(LossReport, Image)> {
    dynamic_loss_grad(e, i_hat, &Mask::full(e.width, e.height), w)
}

/// Input-view reconstruction loss `l1 + lambda_s * ssim_term` over the full image, with its
/// gradient with respect to `i_hat`.
pub fn input_view_loss_grad(frame: &Image, i_hat: &Image, w: &LossWeights) -> Result<(f64, Image)> {
    w.validate()?;
    let l = l1(frame, i_hat, None)?.value;
    let s = masked_ssim(frame, i_hat, None)?.value;
    let total = l + w.lambda_s * w.ssim_form.scale() * (1.0 - s);
    let mut g = l1_grad(frame, i_hat, None)?;
    let gs = masked_ssim_grad(frame, i_hat, None)?;
    let k = -w.lambda_s * w.ssim_form.scale();
    g.data.iter_mut().zip(&gs.data).for_each(|(a, b)| *a += k * b);
    Ok((total, g))
}

fn composite(e: &Image, i_hat: &Image, d: &Mask, w: &LossWeights, grad: bool) -> Result<(LossReport, Option<Image>)> {
    w.validate()?;
    check_inputs(e, i_hat, Some(d))?;
    let count = d.count();
    if count == 0 {
        return Ok((LossReport::empty(), grad.then(|| Image::new(e.width, e.height, e.channels))));
    }
    let em = e.masked(d);
    let im = i_hat.masked(d);
    let l1v = l1(&em, &im, Some(d))?.value;
    let pv = perceptual_proxy(&em, &im, Some(d), w.perceptual_scales)?.value;
    let sv = masked_ssim(&em, &im, Some(d))?.value;
    let ssim_term = w.ssim_form.scale() * (1.0 - sv);
    let report = LossReport {
        total: l1v + w.lambda_p * pv + w.lambda_s * ssim_term,
        components: LossComponents { l1: l1v, perceptual: pv, ssim: ssim_term },
        masked_pixel_count: count,
        empty_mask: false,
    };
    if !grad {
        return Ok((report, None));
    }
    let mut g = l1_grad(&em, &im, Some(d))?;
    let gp = perceptual_proxy_grad(&em, &im, Some(d), w.perceptual_scales)?;
    let gs = masked_ssim_grad(&em, &im, Some(d))?;
    let ks = -w.lambda_s * w.ssim_form.scale();
    for (i, v) in g.data.iter_mut().enumerate() {
        *v += w.lambda_p * gp.data[i] + ks * gs.data[i];
    }
    // chain through the element-wise mask on i_hat
    let c = g.channels;
    for (p, inside) in d.data.iter().enumerate() {
        if !inside {
            g.data[p * c..(p + 1) * c].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((report, Some(g)))
}
