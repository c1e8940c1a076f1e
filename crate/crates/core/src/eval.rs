//! Masked image-quality metrics and the benchmark report.
//!
//! `-m` metrics use co-visibility masks, `-D` metrics use dynamic-region masks.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::losses::masked_ssim;

/// Reported PSNR for exact matches.
pub const PSNR_CAP: f64 = 99.0;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A metric over a mask. `count == 0` marks an empty mask; such values are excluded from means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedMetric {
    pub value: f64,
    pub count: usize,
    /// PSNR hit the cap (zero error).
    pub capped: bool,
}

impl MaskedMetric {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// `10 log10(1 / MSE)` over masked pixels and all channels, capped at [`PSNR_CAP`].
pub fn psnr_masked(pred: &Image, gt: &Image, mask: &Mask) -> Result<MaskedMetric> {
    pred.check_same_shape(gt)?;
    mask.matches(pred)?;
    let c = pred.channels;
    let mut se = 0.0;
    let mut count = 0;
    for (p, inside) in mask.data.iter().enumerate() {
        if *inside {
            count += 1;
            for k in 0..c {
                let d = pred.data[p * c + k] - gt.data[p * c + k];
                se += d * d;
            }
        }
    }
    if count == 0 {
        return Ok(MaskedMetric { value: 0.0, count, capped: false });
    }
    let mse = se / (count * c) as f64;
    let psnr = -10.0 * mse.log10();
    if !(psnr < PSNR_CAP) {
        return Ok(MaskedMetric { value: PSNR_CAP, count, capped: true });
    }
    Ok(MaskedMetric { value: psnr, count, capped: false })
}

/// Full SSIM map averaged inside the mask.
pub fn ssim_masked(pred: &Image, gt: &Image, mask: &Mask) -> Result<MaskedMetric> {
    let m = masked_ssim(pred, gt, Some(mask))?;
    Ok(MaskedMetric { value: m.value, count: m.count, capped: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionStats {
    /// `100 * |covis & dynamic| / |covis|` over all frames; 0 when `covis_pixels == 0`.
    pub pct: f64,
    pub covis_pixels: usize,
    pub intersection_pixels: usize,
}

impl IntersectionStats {
    pub fn is_empty(&self) -> bool {
        self.covis_pixels == 0
    }
}

pub fn intersection_stats(covis: &[Mask], dynamic: &[Mask]) -> Result<IntersectionStats> {
    if covis.len() != dynamic.len() {
        return Err(Error::Shape { expected: covis.len(), found: dynamic.len() });
    }
    let mut c = 0;
    let mut i = 0;
    for (a, b) in covis.iter().zip(dynamic) {
        if (a.width, a.height) != (b.width, b.height) {
            return Err(Error::ShapeMismatch { left: (a.width, a.height, 1), right: (b.width, b.height, 1) });
        }
        for (x, y) in a.data.iter().zip(&b.data) {
            c += usize::from(*x);
            i += usize::from(*x && *y);
        }
    }
    let pct = if c == 0 { 0.0 } else { 100.0 * i as f64 / c as f64 };
    Ok(IntersectionStats { pct, covis_pixels: c, intersection_pixels: i })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameWeighting {
    /// Every frame with a non-empty mask counts once.
    #[default]
    Equal,
    /// Frames weighted by their mask pixel count.
    Pixel,
}

/// One held-out view to score.
#[derive(Clone, Debug)]
pub struct EvalFrame {
    pub name: String,
    pub pred: Image,
    pub gt: Image,
    pub covis: Mask,
    pub dynamic: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub name: String,
    pub psnr_m: MaskedMetric,
    pub ssim_m: MaskedMetric,
    pub psnr_d: MaskedMetric,
    pub ssim_d: MaskedMetric,
}

/// Aggregate of one metric; `None` when every frame's mask was empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub frames_used: usize,
    pub frames_empty: usize,
    pub frames_capped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub weighting: FrameWeighting,
    pub psnr_m: Aggregate,
    pub ssim_m: Aggregate,
    pub psnr_d: Aggregate,
    pub ssim_d: Aggregate,
    pub intersection: IntersectionStats,
    pub frames: Vec<FrameMetrics>,
}

fn aggregate(values: &[MaskedMetric], weighting: FrameWeighting) -> Aggregate {
    let mut sum = 0.0;
    let mut wsum = 0.0;
    let mut used = 0;
    for v in values.iter().filter(|v| !v.is_empty()) {
        let w = match weighting {
            FrameWeighting::Equal => 1.0,
            FrameWeighting::Pixel => v.count as f64,
        };
        sum += w * v.value;
        wsum += w;
        used += 1;
    }
    Aggregate {
        mean: (used > 0).then(|| sum / wsum),
        frames_used: used,
        frames_empty: values.len() - used,
        frames_capped: values.iter().filter(|v| v.capped).count(),
    }
}

/// Scores every frame (sorted by name, so input order does not matter).
pub fn benchmark_report(frames: &[EvalFrame], weighting: FrameWeighting) -> Result<MetricsReport> {
    let mut order: Vec<&EvalFrame> = frames.iter().collect();
    order.sort_by(|a, b| a.name.cmp(&b.name));
    let mut per = Vec::with_capacity(order.len());
    for f in &order {
        per.push(FrameMetrics {
            name: f.name.clone(),
            psnr_m: psnr_masked(&f.pred, &f.gt, &f.covis)?,
            ssim_m: ssim_masked(&f.pred, &f.gt, &f.covis)?,
            psnr_d: psnr_masked(&f.pred, &f.gt, &f.dynamic)?,
            ssim_d: ssim_masked(&f.pred, &f.gt, &f.dynamic)?,
        });
    }
    let covis: Vec<Mask> = order.iter().map(|f| f.covis.clone()).collect();
    let dynamic: Vec<Mask> = order.iter().map(|f| f.dynamic.clone()).collect();
    let pick = |g: fn(&FrameMetrics) -> MaskedMetric| per.iter().map(g).collect::<Vec<_>>();
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        weighting,
        psnr_m: aggregate(&pick(|f| f.psnr_m), weighting),
        ssim_m: aggregate(&pick(|f| f.ssim_m), weighting),
        psnr_d: aggregate(&pick(|f| f.psnr_d), weighting),
        ssim_d: aggregate(&pick(|f| f.ssim_d), weighting),
        intersection: intersection_stats(&covis, &dynamic)?,
        frames: per,
    })
}
