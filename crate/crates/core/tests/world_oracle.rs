use nalgebra::Vector3;
use proptest::prelude::*;
use sensorflow::diffops::warp_bilinear;
use sensorflow::world::*;
use sensorflow::io::DatasetManifest;
use sensorflow::{ExecMode, Frame};

fn wall_scene(depth: f64, ground: bool) -> SceneSpec {
    SceneSpec {
        ground_height: ground.then_some(0.0),
        billboards: vec![Billboard {
            center: [depth, 0.0, 1.5],
            width: 4000.0,
            height: 4000.0,
            texture_seed: 7,
            facing: Facing::Forward,
            color: [0.8, 0.6, 0.4],
        }],
        ..SceneSpec::default()
    }
}

fn advanced(p: &Pose, v: [f64; 3], w: [f64; 3], dt: f64) -> Pose {
    integrate_twist(p, &Twist::new(v, w), dt)
}

#[test]
fn frontal_plane_forward_translation_matches_closed_form() {
    let cam = CameraIntrinsics::default();
    let (z, d) = (12.0, 1.0);
    let scene = wall_scene(z, false);
    let a = Pose::level_camera(1.5);
    let b = advanced(&a, [10.0, 0.0, 0.0], [0.0; 3], 0.1);
    let mut worst = 0.0f64;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let s = flow_at(&scene, &a, &b, &cam, x as f64, y as f64);
            let (u, v) = s.flow.expect("wall fills the view");
            let eu = (x as f64 - cam.cx) * d / (z - d);
            let ev = (y as f64 - cam.cy) * d / (z - d);
            worst = worst.max((u - eu).abs()).max((v - ev).abs());
        }
    }
    assert!(worst < 1e-4, "max deviation {worst}");
    // at the principal point the flow vanishes
    let c = flow_at(&scene, &a, &b, &cam, cam.cx, cam.cy).flow.unwrap();
    assert!(c.0.abs() < 1e-9 && c.1.abs() < 1e-9);
}

#[test]
fn rotation_flow_is_depth_independent() {
    let cam = CameraIntrinsics::default();
    let a = Pose::level_camera(1.5);
    let b = advanced(&a, [0.0; 3], [0.1, 0.2, 0.5], 0.1);
    let near = wall_scene(6.0, true);
    let far = wall_scene(40.0, false);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = flow_at(&near, &a, &b, &cam, x as f64, y as f64).flow;
            let q = flow_at(&far, &a, &b, &cam, x as f64, y as f64).flow;
            if let (Some(p), Some(q)) = (p, q) {
                worst = worst.max((p.0 - q.0).abs()).max((p.1 - q.1).abs());
                compared += 1;
            }
        }
    }
    assert_eq!(compared, cam.width * cam.height);
    assert!(worst < 1e-4, "max deviation {worst}");
}

#[test]
fn identity_pose_pair_is_zero_flow_and_valid_on_hits() {
    let cam = CameraIntrinsics::default();
    let seq = sample_sequence(&WorldConfig::default(), 3, ExecMode::default()).unwrap();
    let (flow, mask) = gt_flow(&seq.scene, &seq.poses[0], &seq.poses[0], &cam);
    assert!(flow.data().iter().all(|&v| v == 0.0));
    for y in 0..cam.height {
        for x in 0..cam.width {
            let hit = flow_at(&seq.scene, &seq.poses[0], &seq.poses[0], &cam, x as f64, y as f64).depth.is_some();
            assert_eq!(mask.get(x, y), hit);
        }
    }
}

#[test]
fn oracle_is_forward_backward_consistent() {
    let seq = sample_sequence(&WorldConfig::default(), 11, ExecMode::default()).unwrap();
    let cam = seq.camera;
    let (a, b) = (&seq.poses[4], &seq.poses[5]);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let f = flow_at(&seq.scene, a, b, &cam, x as f64, y as f64);
            let Some((u, v)) = f.flow.filter(|_| f.valid) else { continue };
            let g = flow_at(&seq.scene, b, a, &cam, x as f64 + u, y as f64 + v);
            let Some((gu, gv)) = g.flow.filter(|_| g.valid) else { continue };
            worst = worst.max(((u + gu).powi(2) + (v + gv).powi(2)).sqrt());
            checked += 1;
        }
    }
    assert!(checked > cam.width * cam.height / 4);
    assert!(worst < 1e-3, "max |F_ab + F_ba| = {worst}");
}

#[test]
fn warping_by_gt_flow_reproduces_frame() {
    let seq = sample_sequence(&WorldConfig::default(), 5, ExecMode::default()).unwrap();
    let (flow, mask) = seq.gt_flow(2, 3);
    let recon: Frame = warp_bilinear(&seq.frames[3], &flow).unwrap();
    let target = &seq.frames[2];
    let (mut sum, mut n) = (0.0f64, 0usize);
    for y in 0..target.height() {
        for x in 0..target.width() {
            if mask.get(x, y) {
                let (p, q) = (recon.pixel(x, y), target.pixel(x, y));
                sum += p.iter().zip(q).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / 3.0;
                n += 1;
            }
        }
    }
    let err = sum / n as f64;
    assert!(err < 0.02, "mean L1 on valid pixels {err}");
}

fn constant_trajectory(n: usize, v: [f64; 3], w: [f64; 3], dt: f64) -> Vec<SensorRecord> {
    (0..n)
        .map(|i| SensorRecord {
            twist: Twist::new(v, w),
            dt,
            timestamp: i as f64 * dt,
        })
        .collect()
}

#[test]
fn two_step_flow_matches_doubled_displacement() {
    let cam = CameraIntrinsics::default();
    let z = 15.0;
    let traj = constant_trajectory(3, [8.0, 0.0, 0.0], [0.0; 3], 0.1);
    let seq = Sequence::render(wall_scene(z, false), cam, &Pose::level_camera(1.5), traj.clone(), traj, ExecMode::default())
        .unwrap();
    let d = 2.0 * 8.0 * 0.1;
    let (flow, _) = seq.gt_flow(0, 2);
    let mut worst = 0.0f64;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let [u, v] = flow.pixel(x, y);
            let eu = (x as f64 - cam.cx) * d / (z - d);
            let ev = (y as f64 - cam.cy) * d / (z - d);
            if eu.hypot(ev) < 10.0 {
                worst = worst.max((u as f64 - eu).abs()).max((v as f64 - ev).abs());
            }
        }
    }
    assert!(worst < 0.1, "max deviation {worst}");
}

#[test]
fn generated_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cam = CameraIntrinsics::centered(48, 16, 25.0);
    let scene = wall_scene(10.0, true);
    let traj = constant_trajectory(3, [10.0, 0.0, 0.0], [0.0; 3], 0.1);
    let m = generate_sequence(&scene, &cam, &Pose::level_camera(1.5), &traj, [0.0; 6], 1, dir.path()).unwrap();
    assert_eq!(m.triplets.len(), 1);
    assert_eq!(m.triplets[0].frames.len(), 3);
    let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded.triplets.len(), 1);
    let t = &loaded.triplets[0];
    let s = window_mean_displacement(&traj, 1).unwrap();
    assert_eq!(t.sensor, s);
    assert!((t.sensor[0] - 1.0).abs() < 1e-12);
    let gt = sensorflow::io::read_flo(&DatasetManifest::resolve(&dir.path().join("manifest.json"), t.gt_flow_f.as_ref().unwrap())).unwrap();
    assert_eq!(gt.dims(), (16, 48));
}

#[test]
fn zero_twist_gives_zero_flow_files() {
    let dir = tempfile::tempdir().unwrap();
    let cam = CameraIntrinsics::centered(32, 12, 20.0);
    let traj = constant_trajectory(4, [0.0; 3], [0.0; 3], 0.1);
    let m = generate_sequence(&wall_scene(8.0, true), &cam, &Pose::level_camera(1.5), &traj, [0.0; 6], 2, dir.path())
        .unwrap();
    assert_eq!(m.triplets.len(), 2);
    for t in &m.triplets {
        for p in [&t.gt_flow_f, &t.gt_flow_b] {
            let f = sensorflow::io::read_flo(&dir.path().join(p.as_ref().unwrap())).unwrap();
            assert!(f.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn short_trajectory_rejected_and_unwritable_target_reported() {
    let cam = CameraIntrinsics::centered(16, 8, 10.0);
    let traj = constant_trajectory(2, [1.0, 0.0, 0.0], [0.0; 3], 0.1);
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_sequence(&wall_scene(8.0, true), &cam, &Pose::level_camera(1.5), &traj, [0.0; 6], 0, dir.path()).is_err());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let traj = constant_trajectory(3, [1.0, 0.0, 0.0], [0.0; 3], 0.1);
    let err = generate_sequence(&wall_scene(8.0, true), &cam, &Pose::level_camera(1.5), &traj, [0.0; 6], 0, &blocker.join("sub"))
        .unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

#[test]
fn mirrored_world_gives_mirrored_flow() {
    // Mirror y -> -y: negate lateral placement and the v_y, w_x, w_z motion units.
    let cam = CameraIntrinsics::default();
    let mut scene = wall_scene(25.0, true);
    scene.billboards.push(Billboard {
        center: [12.0, 4.0, 1.5],
        width: 3.0,
        height: 2.0,
        texture_seed: 3,
        facing: Facing::Forward,
        color: [0.5; 3],
    });
    let mut mirrored = scene.clone();
    mirrored.billboards[1].center[1] = -4.0;
    let a = Pose::level_camera(1.5);
    let b = advanced(&a, [9.0, 0.4, 0.1], [0.02, 0.01, 0.3], 0.1);
    let bm = advanced(&a, [9.0, -0.4, 0.1], [-0.02, 0.01, -0.3], 0.1);
    let (f, _) = gt_flow(&scene, &a, &b, &cam);
    let (fm, _) = gt_flow(&mirrored, &a, &bm, &cam);
    let flipped = f.flip_horizontal_flow();
    let worst = flipped.data().iter().zip(fm.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-3, "{worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reverse_twist_returns_to_start(
        v in prop::array::uniform3(-15.0f64..15.0),
        w in prop::array::uniform3(-0.45f64..0.45),
        x in -5.0f64..5.0,
    ) {
        let dt = 0.1;
        let start = Pose::level_camera(1.5).compose(&exp_se3(&Vector3::new(x, 0.3, 0.0), &Vector3::new(0.0, 0.1, 0.2)));
        let tw = Twist::new(v, w);
        let there = integrate_twist(&start, &tw, dt);
        let back = integrate_twist(&there, &-tw, dt);
        prop_assert!(back.distance(&start) < 1e-6);
        prop_assert!(there.orthonormality_error() < 1e-6);
    }

    #[test]
    fn rendering_is_pure(seed in 0u64..1000) {
        let cam = CameraIntrinsics::centered(24, 8, 12.0);
        let scene = SceneSpec { ground_seed: seed, ..wall_scene(9.0, true) };
        let p = Pose::level_camera(1.5);
        let a = render_frame(&scene, &p, &cam);
        let b = render_frame(&scene, &p, &cam);
        prop_assert_eq!(a.data(), b.data());
    }
}

