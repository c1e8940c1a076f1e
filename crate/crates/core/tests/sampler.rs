mod oracle;

use dynsplat_core::camera::*;
use dynsplat_core::math::{Quat, Vec3};
use oracle::brute_pair;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn orbit(n: usize, arc: f64, wobble: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let poses = (0..n)
        .map(|i| {
            let a = arc * (i as f64 / (n - 1).max(1) as f64 - 0.5) + rng.random_range(-0.05..0.05);
            let eye = Vec3::new(3.0 * a.sin(), 0.5 + wobble * rng.random_range(-1.0..1.0), 3.0 * a.cos());
            PoseSE3::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0))
        })
        .collect();
    Trajectory::input(poses, Intrinsics::from_fov(64, 64, 1.0))
}

#[test]
fn extreme_pair_matches_brute_force_on_random_longitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let n = rng.random_range(2..120);
        // every fifth case draws from a coarse grid so that ties are common
        let lon: Vec<f64> = (0..n)
            .map(|_| {
                if case % 5 == 0 {
                    rng.random_range(-8..8) as f64 * std::f64::consts::PI / 8.0
                } else {
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
                }
            })
            .collect();
        let got = extreme_pair_from_longitudes(&lon);
        let (a, b, d) = brute_pair(&lon);
        assert!(!got.degenerate);
        assert_eq!((got.a, got.b), (a, b), "case {case}: {lon:?}");
        assert_eq!(wrapped_angle_diff(lon[got.a], lon[got.b]), d);
    }
}

#[test]
fn extreme_views_match_brute_force_on_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..50 {
        let traj = orbit(rng.random_range(2..40), rng.random_range(0.3..5.5), 0.2, &mut rng);
        let sphere = fit_reference_sphere(&traj).unwrap();
        let got = find_extreme_views(&traj, &sphere).unwrap();
        // longitudes from scratch: angle of each radial direction projected on the orbit plane
        let up = trajectory_up_axis(&traj);
        let flat: Vec<Vec3> = traj
            .poses
            .iter()
            .map(|p| {
                let d = p.center - sphere.center;
                d - up * d.dot(up)
            })
            .collect();
        let mut best = -1.0;
        for a in 0..flat.len() {
            for b in a + 1..flat.len() {
                let ang = flat[a].cross(flat[b]).norm().atan2(flat[a].dot(flat[b]));
                best = f64::max(best, ang);
            }
        }
        let ga = flat[got.a].cross(flat[got.b]).norm().atan2(flat[got.a].dot(flat[got.b]));
        assert!((ga - best).abs() < 1e-9, "case {case}: {ga} vs {best}");
    }
}

#[test]
fn two_cameras_are_their_own_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let traj = orbit(2, 1.0, 0.0, &mut rng);
    let sphere = fit_reference_sphere(&traj).unwrap();
    let p = find_extreme_views(&traj, &sphere).unwrap();
    assert_eq!((p.a, p.b), (0, 1));
}

#[test]
fn equal_longitudes_are_degenerate() {
    let p = extreme_pair_from_longitudes(&[0.4; 5]);
    assert!(p.degenerate);
    assert_eq!((p.a, p.b), (0, 4));
}

#[test]
fn noisy_sphere_fit_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let q = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let r = rng.random_range(0.5..5.0);
        let poses = (0..20)
            .map(|_| {
                let d: [f64; 3] = rand_distr::Distribution::sample(&rand_distr::UnitSphere, &mut rng);
                let n: [f64; 3] = std::array::from_fn(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
                PoseSE3::new(Quat::IDENTITY, q + Vec3::from(d) * r + Vec3::from(n) * (0.01 * r))
            })
            .collect();
        let fit = fit_reference_sphere(&Trajectory::input(poses, Intrinsics::from_fov(8, 8, 1.0))).unwrap();
        assert!(!fit.fallback);
        worst = worst.max((fit.center - q).norm() / r);
    }
    assert!(worst < 0.05, "worst center error {worst} r");
}

/// Asymptotic Kolmogorov-Smirnov critical value at the 1% level.
const KS_01: f64 = 1.6276;

#[test]
fn perturbation_offsets_are_uniform_in_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 10_000;
    let amp_t = 0.1;
    let amp_r = 0.05;
    let base = PoseSE3::look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
    let mut radii = Vec::with_capacity(n);
    let mut mean = Vec3::ZERO;
    for _ in 0..n {
        let p = perturb_pose(&base, amp_t, amp_r, &mut rng);
        let d = p.center - base.center;
        assert!(d.norm() <= amp_t * (1.0 + 1e-12));
        let angle = base.rotation.conjugate().mul(p.rotation).to_rotation_vector().norm();
        assert!(angle <= amp_r + 1e-12);
        assert!((p.rotation.norm() - 1.0).abs() < 1e-12);
        radii.push(d.norm() / amp_t);
        mean = mean + d * (1.0 / n as f64);
    }
    // |x| for x uniform in the unit ball has CDF r^3
    radii.sort_by(f64::total_cmp);
    let d = radii
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let f = r.powi(3);
            f64::max(f - i as f64 / n as f64, (i + 1) as f64 / n as f64 - f)
        })
        .fold(0.0, f64::max);
    assert!(d < KS_01 / (n as f64).sqrt(), "KS statistic {d}");
    // and isotropic: the mean offset is near zero
    assert!(mean.norm() < 0.01 * amp_t * 5.0, "mean offset {mean:?}");
}

#[test]
fn zero_amplitude_perturbation_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base = PoseSE3::look_at(Vec3::new(1.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
    assert_eq!(perturb_pose(&base, 0.0, 0.0, &mut rng), base);
}

#[test]
fn different_seeds_change_the_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let traj = orbit(12, 1.0, 0.1, &mut rng);
    let cfg = SamplerConfig::default();
    let a = sample_training_cameras(&traj, &cfg, 1).unwrap();
    let b = sample_training_cameras(&traj, &cfg, 2).unwrap();
    for t in 0..12 {
        let ia = a.trajectory.indices_at(t);
        assert!((0..4).all(|k| a.trajectory.poses[ia[k]] != b.trajectory.poses[ia[k]]));
        assert_eq!(a.trajectory.poses[ia[17]], b.trajectory.poses[ia[17]]);
    }
}

#[test]
fn se3_translation_and_inverse() {
    let pose = PoseSE3::look_at(Vec3::new(0.3, 1.0, 2.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
    let moved = se3_update(&pose, &[0.0, 0.0, 0.0, 0.1, -0.2, 0.3]);
    let expect = pose.center + pose.rotation.rotate(Vec3::new(0.1, -0.2, 0.3));
    assert!((moved.center - expect).norm() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let xi: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let back = se3_update(&se3_update(&pose, &xi), &xi.map(|v| -v));
        assert!((back.center - pose.center).norm() < 1e-10);
        assert!(pose_error(&back, &pose) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampler_contract(n in 2usize..24, arc in 0.2f64..6.0, wobble in 0.0f64..0.5, traj_seed: u64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(traj_seed);
        let traj = orbit(n, arc, wobble, &mut rng);
        let cfg = SamplerConfig::default();
        let s = sample_training_cameras(&traj, &cfg, seed).unwrap();
        prop_assert_eq!(s.per_timestep, 18);
        prop_assert_eq!(s.trajectory.len(), 18 * n);
        prop_assert_eq!(s.trajectory.tag, TrajectoryTag::Sampled);
        let lon = camera_longitudes(&traj, &s.sphere, trajectory_up_axis(&traj));
        let (a, b, _) = brute_pair(&lon);
        prop_assert_eq!((s.extremes.a, s.extremes.b), (a, b));
        for t in 0..n {
            let idx = s.trajectory.indices_at(t);
            prop_assert_eq!(idx.len(), 18);
            prop_assert_eq!(s.trajectory.poses[idx[16]], traj.poses[a]);
            prop_assert_eq!(s.trajectory.poses[idx[17]], traj.poses[b]);
        }
        for p in &s.trajectory.poses {
            prop_assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
            prop_assert!(p.is_finite());
        }
        let again = sample_training_cameras(&traj, &cfg, seed).unwrap();
        prop_assert_eq!(&again, &s);
    }

    #[test]
    fn small_tangent_round_trip(xi in proptest::array::uniform6(-1e-2f64..1e-2)) {
        let pose = PoseSE3::look_at(Vec3::new(-1.0, 0.5, 2.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
        let back = se3_update(&se3_update(&pose, &xi), &xi.map(|v| -v));
        prop_assert!((back.center - pose.center).norm() < 1e-9);
        prop_assert!(back.rotation.dot(pose.rotation).abs() > 1.0 - 1e-12);
    }
}
