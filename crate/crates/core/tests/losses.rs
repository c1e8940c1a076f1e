mod oracle;

use dynsplat_core::image::{Image, Mask};
use dynsplat_core::losses::*;
use oracle::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    Image::from_data(w, h, 3, data).unwrap()
}

fn smooth(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    let (fx, fy, ph): (f64, f64, f64) = (rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random());
    let mut img = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                let v = 0.5 + 0.3 * (fx * x as f64 + ph * 6.0 + k as f64).sin() * (fy * y as f64 - k as f64).cos();
                img.set(x, y, k, v + rng.random_range(-0.05..0.05));
            }
        }
    }
    img
}

fn random_mask(w: usize, h: usize, p: f64, rng: &mut ChaCha8Rng) -> Mask {
    Mask { width: w, height: h, data: (0..w * h).map(|_| rng.random_bool(p)).collect() }
}

fn half_mask(w: usize, h: usize) -> Mask {
    Mask { width: w, height: h, data: (0..w * h).map(|p| p % w < w / 2).collect() }
}

// --- independent references -------------------------------------------------

/// Direct 2D windowed SSIM, averaged over channels then over the mask.
fn reference_ssim(a: &Image, b: &Image, mask: Option<&Mask>) -> f64 {
    let (w, h, c) = (a.width as i64, a.height as i64, a.channels);
    let (c1, c2) = (0.0001, 0.0009);
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as usize;
            if mask.is_some_and(|m| !m.data[p]) {
                continue;
            }
            let mut s_pix = 0.0;
            for k in 0..c {
                let (mut ws, mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w || yy >= h {
                            continue;
                        }
                        let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        let va = a.get(xx as usize, yy as usize, k);
                        let vb = b.get(xx as usize, yy as usize, k);
                        ws += g;
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let (ma, mb) = (ma / ws, mb / ws);
                let va = saa / ws - ma * ma;
                let vb = sbb / ws - mb * mb;
                let cov = sab / ws - ma * mb;
                s_pix += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            total += s_pix / c as f64;
            n += 1;
        }
    }
    total / n as f64
}

/// Direct pyramid of 2x2 means with "any" pooled masks.
fn reference_proxy(a: &Image, b: &Image, mask: Option<&Mask>, scales: usize) -> f64 {
    let mut a = a.clone();
    let mut b = b.clone();
    let mut m = mask.cloned().unwrap_or_else(|| Mask::full(a.width, a.height));
    let mut per_scale = Vec::new();
    for s in 0..scales {
        if s > 0 {
            let (w, h) = (a.width / 2, a.height / 2);
            if w < 2 && h < 2 {
                break;
            }
            let pool = |img: &Image| {
                let mut o = Image::new(w, h, 3);
                for y in 0..h {
                    for x in 0..w {
                        for k in 0..3 {
                            let mut v = 0.0;
                            for (dx, dy) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                v += img.get(2 * x + dx, 2 * y + dy, k);
                            }
                            o.set(x, y, k, v / 4.0);
                        }
                    }
                }
                o
            };
            a = pool(&a);
            b = pool(&b);
            let mut mm = Mask::empty(w, h);
            for y in 0..h {
                for x in 0..w {
                    mm.data[y * w + x] = [(0, 0), (0, 1), (1, 0), (1, 1)].iter().any(|(dx, dy)| m.get(2 * x + dx, 2 * y + dy));
                }
            }
            m = mm;
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 0..a.height {
            for x in 0..a.width {
                let nbrs = [(x + 1, y), (x, y + 1)];
                for (qx, qy) in nbrs {
                    if qx >= a.width || qy >= a.height || !(m.get(x, y) || m.get(qx, qy)) {
                        continue;
                    }
                    for k in 0..3 {
                        let ga = a.get(qx, qy, k) - a.get(x, y, k);
                        let gb = b.get(qx, qy, k) - b.get(x, y, k);
                        sum += (ga - gb).abs();
                        n += 1;
                    }
                }
            }
        }
        if n > 0 {
            per_scale.push(sum / n as f64);
        }
    }
    per_scale.iter().sum::<f64>() / per_scale.len() as f64
}

// --- atoms --------------------------------------------------------------------

#[test]
fn l1_half_mask_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (noise(9, 7, &mut rng), noise(9, 7, &mut rng));
    let m = half_mask(9, 7);
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..7 {
        for x in 0..4 {
            for k in 0..3 {
                sum += (a.get(x, y, k) - b.get(x, y, k)).abs();
                n += 1.0;
            }
        }
    }
    assert!((l1(&a, &b, Some(&m)).unwrap().value - sum / n).abs() < 1e-14);
}

#[test]
fn ssim_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (w, h) in [(11, 11), (16, 13), (23, 19)] {
        let (a, b) = (smooth(w, h, &mut rng), noise(w, h, &mut rng));
        let got = masked_ssim(&a, &b, None).unwrap().value;
        assert!((got - reference_ssim(&a, &b, None)).abs() < 1e-6);
        let m = random_mask(w, h, 0.4, &mut rng);
        let got = masked_ssim(&a, &b, Some(&m)).unwrap().value;
        assert!((got - reference_ssim(&a, &b, Some(&m))).abs() < 1e-6);
    }
}

#[test]
fn perceptual_proxy_matches_direct_pyramid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (w, h) in [(16, 16), (17, 11), (9, 30)] {
        let (a, b) = (noise(w, h, &mut rng), smooth(w, h, &mut rng));
        let got = perceptual_proxy(&a, &b, None, 3).unwrap().value;
        assert!((got - reference_proxy(&a, &b, None, 3)).abs() < 1e-12);
        let m = random_mask(w, h, 0.3, &mut rng);
        let got = perceptual_proxy(&a, &b, Some(&m), 3).unwrap().value;
        assert!((got - reference_proxy(&a, &b, Some(&m), 3)).abs() < 1e-12);
    }
}

#[test]
fn perceptual_proxy_sees_translation_more_than_low_pass() {
    // vertical stripes shifted by one pixel
    let mut a = Image::new(24, 24, 3);
    let mut b = Image::new(24, 24, 3);
    for y in 0..24 {
        for x in 0..24 {
            for k in 0..3 {
                a.set(x, y, k, if (x / 3) % 2 == 0 { 0.8 } else { 0.2 });
                b.set(x, y, k, if ((x + 1) / 3) % 2 == 0 { 0.8 } else { 0.2 });
            }
        }
    }
    let p = perceptual_proxy(&a, &b, None, 3).unwrap().value;
    // low-pass residual: l1 between 4x4 box-blurred images
    let blur = |img: &Image| {
        let mut o = Image::new(6, 6, 3);
        for y in 0..6 {
            for x in 0..6 {
                for k in 0..3 {
                    let mut s = 0.0;
                    for dy in 0..4 {
                        for dx in 0..4 {
                            s += img.get(4 * x + dx, 4 * y + dy, k);
                        }
                    }
                    o.set(x, y, k, s / 16.0);
                }
            }
        }
        o
    };
    let low = l1(&blur(&a), &blur(&b), None).unwrap().value;
    assert!(p > 0.0 && p > low, "proxy {p} low-pass {low}");
}

// --- composites ---------------------------------------------------------------

#[test]
fn dynamic_loss_is_weighted_sum_of_atoms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (e, i) = (smooth(16, 16, &mut rng), noise(16, 16, &mut rng));
    let d = half_mask(16, 16);
    let r = dynamic_loss(&e, &i, &d, &LossWeights::default()).unwrap();
    let (em, im) = (e.masked(&d), i.masked(&d));
    let l1v = l1(&em, &im, Some(&d)).unwrap().value;
    let expect = l1v + 0.1 * reference_proxy(&em, &im, Some(&d), 3) + 0.1 * (1.0 - reference_ssim(&em, &im, Some(&d)));
    assert!((r.total - expect).abs() < 1e-6, "{} vs {}", r.total, expect);
    let sum = r.components.l1 + 0.1 * r.components.perceptual + 0.1 * r.components.ssim;
    assert!((r.total - sum).abs() < 1e-9);
    assert_eq!(r.masked_pixel_count, 16 * 8);
}

#[test]
fn camera_loss_is_dynamic_loss_with_full_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (e, i) = (smooth(14, 12, &mut rng), noise(14, 12, &mut rng));
    let w = LossWeights::default();
    let a = camera_loss(&e, &i, &w).unwrap();
    let b = dynamic_loss(&e, &i, &Mask::full(14, 12), &w).unwrap();
    assert!((a.total - b.total).abs() < 1e-12);
    let expect = l1(&e, &i, None).unwrap().value
        + 0.1 * reference_proxy(&e, &i, None, 3)
        + 0.1 * (1.0 - reference_ssim(&e, &i, None));
    assert!((a.total - expect).abs() < 1e-6);
}

#[test]
fn dynamic_loss_decreases_along_convex_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let (e, i) = (smooth(16, 16, &mut rng), noise(16, 16, &mut rng));
        let d = random_mask(16, 16, 0.5, &mut rng);
        let mut prev = f64::INFINITY;
        for s in 0..=10 {
            let lam = s as f64 / 10.0;
            let data = e.data.iter().zip(&i.data).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let il = Image::from_data(16, 16, 3, data).unwrap();
            let t = dynamic_loss(&e, &il, &d, &LossWeights::default()).unwrap().total;
            assert!(t < prev || (s == 10 && t.abs() < 1e-12), "lambda {lam}: {t} !< {prev}");
            prev = t;
        }
        assert!(prev.abs() < 1e-12);
    }
}

// --- gradients ----------------------------------------------------------------

fn image_fd_check(
    f: &dyn Fn(&Image) -> f64,
    g: &dyn Fn(&Image) -> Image,
    base: &Image,
    rng: &mut ChaCha8Rng,
) -> (usize, usize, f64) {
    let grad = g(base);
    let h = 1e-6;
    let (mut bad, mut n, mut worst) = (0, 0, 0.0f64);
    for _ in 0..150 {
        let i = rng.random_range(0..base.data.len());
        let mut p = base.clone();
        let mut m = base.clone();
        p.data[i] += h;
        m.data[i] -= h;
        let numeric = (f(&p) - f(&m)) / (2.0 * h);
        let s = GradSample { class: ParamClass::Color, analytic: grad.data[i], numeric, straddles: false };
        let e = if grad.data[i].abs() < 1e-12 && numeric.abs() < 1e-9 { 0.0 } else { s.rel_error() };
        worst = worst.max(e);
        bad += usize::from(e >= 1e-3);
        n += 1;
    }
    (bad, n, worst)
}

#[test]
fn atom_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a, b) = (smooth(16, 14, &mut rng), noise(16, 14, &mut rng));
    let m = random_mask(16, 14, 0.5, &mut rng);
    let checks: Vec<(&str, Box<dyn Fn(&Image) -> f64>, Box<dyn Fn(&Image) -> Image>)> = vec![
        ("l1", Box::new(|x| l1(&a, x, Some(&m)).unwrap().value), Box::new(|x| l1_grad(&a, x, Some(&m)).unwrap())),
        (
            "ssim",
            Box::new(|x| masked_ssim(&a, x, Some(&m)).unwrap().value),
            Box::new(|x| masked_ssim_grad(&a, x, Some(&m)).unwrap()),
        ),
        (
            "proxy",
            Box::new(|x| perceptual_proxy(&a, x, Some(&m), 3).unwrap().value),
            Box::new(|x| perceptual_proxy_grad(&a, x, Some(&m), 3).unwrap()),
        ),
        (
            "dynamic",
            Box::new(|x| dynamic_loss(&a, x, &m, &LossWeights::default()).unwrap().total),
            Box::new(|x| dynamic_loss_grad(&a, x, &m, &LossWeights::default()).unwrap().1),
        ),
        (
            "camera",
            Box::new(|x| camera_loss(&a, x, &LossWeights::default()).unwrap().total),
            Box::new(|x| camera_loss_grad(&a, x, &LossWeights::default()).unwrap().1),
        ),
    ];
    for (name, f, g) in &checks {
        let (bad, n, worst) = image_fd_check(f.as_ref(), g.as_ref(), &b, &mut rng);
        assert!(bad == 0, "{name}: {bad}/{n} above 1e-3, worst {worst}");
    }
}

#[test]
fn composite_loss_gradients_through_renderer() {
    for (seed, dynamic) in [(200u64, true), (201, false), (202, true), (203, false)] {
        let mut case = random_case(seed, 6, 4, 16);
        case.settings.alpha_cutoff = 1e-12;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = smooth(16, 16, &mut rng);
        let d = if dynamic { random_mask(16, 16, 0.6, &mut rng) } else { Mask::full(16, 16) };
        let w = LossWeights::default();
        let samples = gradient_check_with(
            &case,
            1e-4,
            &|img| dynamic_loss(&e, img, &d, &w).unwrap().total,
            &|img| dynamic_loss_grad(&e, img, &d, &w).unwrap().1,
        );
        let above = samples.iter().filter(|s| s.rel_error() >= 1e-3).count();
        let worst = samples.iter().map(GradSample::rel_error).fold(0.0, f64::max);
        assert!(above * 100 <= samples.len() && worst < 1e-2, "seed {seed}: {above}/{} above 1e-3, worst {worst}", samples.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn atoms_are_symmetric(seed in any::<u64>(), w in 11usize..18, h in 11usize..18) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (noise(w, h, &mut rng), smooth(w, h, &mut rng));
        let m = random_mask(w, h, 0.5, &mut rng);
        prop_assert!((l1(&a, &b, Some(&m)).unwrap().value - l1(&b, &a, Some(&m)).unwrap().value).abs() < 1e-12);
        let (sa, sb) = (ssim_map(&a, &b).unwrap(), ssim_map(&b, &a).unwrap());
        prop_assert!(sa.max_abs_diff(&sb) < 1e-12);
        let pa = perceptual_proxy(&a, &b, Some(&m), 3).unwrap().value;
        let pb = perceptual_proxy(&b, &a, Some(&m), 3).unwrap().value;
        prop_assert!((pa - pb).abs() < 1e-12);
    }

    #[test]
    fn loss_report_total_is_component_sum(seed in any::<u64>(), lp in 0.0f64..2.0, ls in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, i) = (noise(12, 12, &mut rng), noise(12, 12, &mut rng));
        let d = random_mask(12, 12, 0.5, &mut rng);
        let w = LossWeights { lambda_p: lp, lambda_s: ls, ..LossWeights::default() };
        let r = dynamic_loss(&e, &i, &d, &w).unwrap();
        let sum = r.components.l1 + lp * r.components.perceptual + ls * r.components.ssim;
        prop_assert!((r.total - sum).abs() < 1e-9);
    }
}
