mod oracle;

use dynsplat_core::camera::{project_point, PoseSE3};
use dynsplat_core::math::Vec3;
use dynsplat_core::render::{project_covariance, render, render_scene, scene_backward, RenderSettings};
use dynsplat_core::scene::{deform_at_time, Gaussian3D, SceneSubset};
use oracle::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn compositing_matches_naive_reference() {
    for seed in 0..10 {
        let case = random_case(seed, 3, 2, 32);
        let posed = deform_at_time(&case.scene, case.t).unwrap();
        let fast = render(&posed, &case.pose, &case.intr, &case.settings, case.scene.background).unwrap();
        let slow = reference_render(&posed, &case.pose, &case.intr, &case.settings, case.scene.background);
        let diff = fast.color.max_abs_diff(&slow);
        assert!(diff < 1e-6, "seed {seed}: max diff {diff}");
    }
}

#[test]
fn projection_matches_homogeneous_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let case = random_case(rng.random(), 1, 0, 16);
        let x = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let ([u, v], z) = project_point(&case.intr, &case.pose, x, 0.01).unwrap();
        let (ur, vr, zr) = project_homogeneous(&case.intr, &case.pose, x);
        assert!((u - ur).abs() < 1e-9 && (v - vr).abs() < 1e-9 && (z - zr).abs() < 1e-9);
    }
}

#[test]
fn projection_jacobian_matches_finite_differences() {
    // J Sigma J^T with Sigma = e_k e_k^T isolates column k of J; compare to central differences
    // of project_point in camera coordinates.
    let case = random_case(3, 1, 0, 16);
    let intr = case.intr;
    let pose = PoseSE3::IDENTITY;
    let p = Vec3::new(0.13, -0.07, 1.7);
    let h = 1e-6;
    for k in 0..3 {
        let mut dp = Vec3::ZERO;
        dp[k] = h;
        let ([u1, v1], _) = project_point(&intr, &pose, p + dp, 0.01).unwrap();
        let ([u0, v0], _) = project_point(&intr, &pose, p - dp, 0.01).unwrap();
        let fd = [(u1 - u0) / (2.0 * h), (v1 - v0) / (2.0 * h)];
        // unit-length axis aligned Gaussian: covariance ~ e_k e_k^T in camera frame
        let mut g = Gaussian3D::isotropic(p, 1e-9, 0.5, [0.5; 3]);
        g.log_scale[k] = 0.0;
        let settings = RenderSettings { dilation: 0.0, ..RenderSettings::default() };
        let cov = project_covariance(&g, &pose, &intr, &settings).unwrap();
        let jk = [cov[0].sqrt(), cov[2].sqrt()];
        for r in 0..2 {
            let rel = (jk[r] - fd[r].abs()).abs() / fd[r].abs().max(1e-12);
            assert!(fd[r].abs() < 1e-9 && jk[r] < 1e-6 || rel < 1e-5, "k={k} r={r} {} vs {}", jk[r], fd[r]);
        }
    }
}

#[test]
fn projected_covariance_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let g = random_gaussian(&mut rng, Vec3::new(0.0, 0.0, 2.0), 0.5, (-6.0, 0.0));
        let case = random_case(rng.random(), 1, 0, 16);
        let cov = project_covariance(&g, &PoseSE3::IDENTITY, &case.intr, &RenderSettings::default()).unwrap();
        assert!(cov[0] * cov[2] - cov[1] * cov[1] > 0.0);
    }
}

fn assert_gradient_tolerances(samples: &[GradSample]) {
    let above = samples.iter().filter(|s| s.rel_error() >= 1e-3).count();
    let worst = samples.iter().map(GradSample::rel_error).fold(0.0, f64::max);
    assert!(above * 100 <= samples.len(), "{above}/{} coordinates above 1e-3", samples.len());
    assert!(worst < 1e-2, "worst relative error {worst}");
}

#[test]
fn gradients_match_finite_differences_without_cutoff() {
    let mut samples = Vec::new();
    for seed in 0..20 {
        let mut case = random_case(seed, 6, 4, 16);
        case.settings.alpha_cutoff = 1e-12;
        samples.extend(gradient_check(&case, 1e-4));
    }
    assert_gradient_tolerances(&samples);
}

#[test]
fn gradient_mismatches_under_default_cutoff_are_discontinuities() {
    let mut smooth = Vec::new();
    for seed in 0..20 {
        let case = random_case(seed, 6, 4, 16);
        smooth.extend(gradient_check(&case, 1e-4).into_iter().filter(|s| !s.straddles));
    }
    assert_gradient_tolerances(&smooth);
}

#[test]
fn mean_gradient_sign_follows_brighter_side() {
    // target brighter on the left of a white splat: L1 descent should move it left
    let intr = dynsplat_core::camera::Intrinsics { fx: 20.0, fy: 20.0, cx: 8.0, cy: 8.0, width: 16, height: 16 };
    let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.15, 0.8, [0.9, 0.9, 0.9]);
    let scene = dynsplat_core::scene::Scene {
        static_set: vec![g],
        dynamic_set: vec![],
        tracks: vec![],
        n_frames: 1,
        background: [0.0; 3],
    };
    let r = render_scene(&scene, 0.0, &PoseSE3::IDENTITY, &intr, &RenderSettings::default(), SceneSubset::All).unwrap();
    let mut target = dynsplat_core::image::Image::new(16, 16, 3);
    for y in 0..16 {
        for x in 0..8 {
            for c in 0..3 {
                target.set(x, y, c, 1.0);
            }
        }
    }
    let n = (16 * 16 * 3) as f64;
    let grad = r.output.color.data.iter().zip(&target.data).map(|(a, b)| (a - b).signum() / n).collect();
    let grad = dynsplat_core::image::Image::from_data(16, 16, 3, grad).unwrap();
    let gs = scene_backward(&scene, &r, &grad).unwrap();
    // gradient descent step -lr * g must decrease mean x
    assert!(gs.static_grads[0][0] > 0.0);
}
