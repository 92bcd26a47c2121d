//! Trajectories, rendered sequences and their on-disk dataset layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::geometry::{integrate_twist, Pose, Twist};
use super::oracle::gt_flow;
use super::scene::{render_frame, Billboard, Facing, SceneSpec};
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, ValidMask};
use crate::io::{self, DatasetManifest, SequenceEntry, TripletEntry};
use crate::parallel::{self, ExecMode};

/// One sensor reading. `twist` is held for `dt` seconds from frame `i` to frame `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorRecord {
    pub twist: Twist,
    pub dt: f64,
    pub timestamp: f64,
}

impl SensorRecord {
    /// Displacement twist `twist * dt`.
    pub fn displacement(&self) -> [f64; 6] {
        self.twist.scaled(self.dt).to_array()
    }
}

#[derive(Serialize, Deserialize)]
struct SensorLine {
    t: f64,
    dt: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
}

pub fn write_sensor_records(records: &[SensorRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let [vx, vy, vz] = r.twist.v;
        let [wx, wy, wz] = r.twist.w;
        let line = SensorLine {
            t: r.timestamp,
            dt: r.dt,
            vx,
            vy,
            vz,
            wx,
            wy,
            wz,
        };
        out.push_str(&serde_json::to_string(&line).expect("sensor line serializes"));
        out.push('\n');
    }
    io::write_atomic(path, out.as_bytes())
}

pub fn read_sensor_records(path: &Path) -> Result<Vec<SensorRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let s: SensorLine = serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: path.into(),
                message: format!("line {}: {e}", i + 1),
            })?;
            if s.dt <= 0.0 {
                return Err(Error::Manifest {
                    path: path.into(),
                    message: format!("line {}: dt must be positive", i + 1),
                });
            }
            Ok(SensorRecord {
                twist: Twist::new([s.vx, s.vy, s.vz], [s.wx, s.wy, s.wz]),
                dt: s.dt,
                timestamp: s.t,
            })
        })
        .collect()
}

/// Camera pose of every frame: frame `i + 1` is frame `i` advanced by record `i`.
pub fn poses_from_records(start: &Pose, records: &[SensorRecord]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(records.len());
    let mut p = *start;
    for (i, r) in records.iter().enumerate() {
        poses.push(p);
        if i + 1 < records.len() {
            p = integrate_twist(&p, &r.twist, r.dt);
        }
    }
    poses
}

/// Mean displacement twist over readings `t - 1, t, t + 1`, or `None` at the boundary.
pub fn window_mean_displacement(records: &[SensorRecord], t: usize) -> Option<[f64; 6]> {
    if t == 0 || t + 1 >= records.len() {
        return None;
    }
    let mut acc = [0.0; 6];
    for r in &records[t - 1..=t + 1] {
        for (a, d) in acc.iter_mut().zip(r.displacement()) {
            *a += d;
        }
    }
    Some(acc.map(|a| a / 3.0))
}

/// A rendered sequence held in memory.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub camera: CameraIntrinsics,
    pub scene: SceneSpec,
    /// True motion used for rendering.
    pub motion: Vec<SensorRecord>,
    /// Readings as a sensor would report them (motion plus noise).
    pub records: Vec<SensorRecord>,
    pub poses: Vec<Pose>,
    /// Frames quantized to 8 bits, identical to their PNG round trip.
    pub frames: Vec<Frame<f32>>,
}

impl Sequence {
    pub fn render(
        scene: SceneSpec,
        camera: CameraIntrinsics,
        start: &Pose,
        motion: Vec<SensorRecord>,
        records: Vec<SensorRecord>,
        mode: ExecMode,
    ) -> Result<Self> {
        scene.validate()?;
        camera.validate()?;
        if motion.len() != records.len() {
            return Err(Error::shape("Sequence::render", motion.len(), records.len()));
        }
        if let Some(r) = motion.iter().find(|r| r.dt <= 0.0 || !r.twist.is_finite()) {
            return Err(Error::InvalidInput(format!("bad trajectory record {r:?}")));
        }
        let poses = poses_from_records(start, &motion);
        let frames = parallel::map(mode, &poses, |p| render_frame(&scene, p, &camera).quantize8());
        Ok(Sequence {
            camera,
            scene,
            motion,
            records,
            poses,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ground-truth flow on frame `grid` toward frame `src`.
    pub fn gt_flow(&self, grid: usize, src: usize) -> (FlowField<f32>, ValidMask) {
        gt_flow(&self.scene, &self.poses[grid], &self.poses[src], &self.camera)
    }

    /// Centers with a full `t - 1, t, t + 1` window.
    pub fn triplet_centers(&self) -> std::ops::Range<usize> {
        1..self.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub frames: usize,
    pub dt: f64,
    /// Forward speed range (m/s).
    pub speed: [f64; 2],
    /// Peak yaw rate (rad/s); each sequence draws its amplitude from `[-max, max]`.
    pub yaw_rate_max: f64,
    /// Peak pitch and roll oscillation rates (rad/s).
    pub pitch_rate_amp: f64,
    pub roll_rate_amp: f64,
    /// Lateral and vertical speed jitter (m/s).
    pub lateral_speed_std: f64,
    /// Per-unit reading noise on `[v_x, v_y, v_z, w_x, w_y, w_z]`.
    pub sensor_noise_std: [f64; 6],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            frames: 12,
            dt: 0.1,
            speed: [9.0, 15.0],
            yaw_rate_max: 0.35,
            pitch_rate_amp: 0.03,
            roll_rate_amp: 0.02,
            lateral_speed_std: 0.1,
            sensor_noise_std: [0.2, 0.05, 0.05, 0.005, 0.005, 0.01],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Ground, sky, texture and any fixed billboards shared by every sequence.
    pub base: SceneSpec,
    pub random_billboards: usize,
    /// Distance ahead of the start position (m).
    pub depth_range: [f64; 2],
    pub lateral_range: [f64; 2],
    pub width_range: [f64; 2],
    pub height_range: [f64; 2],
    /// Fraction of billboards placed as walls parallel to the road.
    pub lateral_fraction: f64,
    /// Half-width of the corridor kept free along the path (m).
    pub corridor: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            base: SceneSpec::default(),
            random_billboards: 10,
            depth_range: [5.0, 30.0],
            lateral_range: [-9.0, 9.0],
            width_range: [1.5, 5.0],
            height_range: [1.5, 4.0],
            lateral_fraction: 0.25,
            corridor: 3.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub camera: CameraIntrinsics,
    pub camera_height: f64,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            camera: CameraIntrinsics::default(),
            camera_height: 1.5,
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn sample_scene(cfg: &SceneConfig, travel: f64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let mut scene = cfg.base.clone();
    scene.ground_seed = rng.random();
    let ground = scene.ground_height.unwrap_or(0.0);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < cfg.random_billboards && attempts < cfg.random_billboards * 50 {
        attempts += 1;
        let width = uniform(rng, cfg.width_range);
        let height = uniform(rng, cfg.height_range);
        let x = uniform(rng, cfg.depth_range);
        let y = uniform(rng, cfg.lateral_range);
        let lateral = rng.random_bool(cfg.lateral_fraction.clamp(0.0, 1.0));
        let facing = if lateral { Facing::Lateral } else { Facing::Forward };
        // Keep the driving corridor clear of anything the path could reach.
        let clear = match facing {
            Facing::Forward => x > travel + 4.0 || y.abs() - width / 2.0 > cfg.corridor,
            Facing::Lateral => y.abs() > cfg.corridor,
        };
        if !clear {
            continue;
        }
        let x = match facing {
            Facing::Forward => x,
            Facing::Lateral => x + width / 2.0,
        };
        let lift = rng.random_range(0.0..0.8);
        let color = [0; 3].map(|_| rng.random_range(0.35..1.0));
        scene.billboards.push(Billboard {
            center: [x, y, ground + height / 2.0 + lift],
            width,
            height,
            texture_seed: rng.random(),
            facing,
            color,
        });
        placed += 1;
    }
    scene
}

fn sample_motion(cfg: &TrajectoryConfig, rng: &mut ChaCha8Rng) -> (Vec<SensorRecord>, Vec<SensorRecord>) {
    let speed = uniform(rng, cfg.speed);
    let yaw_amp = uniform(rng, [-cfg.yaw_rate_max, cfg.yaw_rate_max]);
    let yaw_bias = 0.3 * uniform(rng, [-cfg.yaw_rate_max, cfg.yaw_rate_max]);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let period = rng.random_range(1.5..4.0);
    let lat = Normal::new(0.0, cfg.lateral_speed_std.max(0.0)).expect("valid std");
    let mut motion = Vec::with_capacity(cfg.frames);
    let mut measured = Vec::with_capacity(cfg.frames);
    let noise: Vec<Normal<f64>> = cfg
        .sensor_noise_std
        .iter()
        .map(|&s| Normal::new(0.0, s.max(0.0)).expect("valid std"))
        .collect();
    for i in 0..cfg.frames {
        let t = i as f64 * cfg.dt;
        let arg = std::f64::consts::TAU * t / period + phase;
        let twist = Twist::new(
            [speed * (1.0 + 0.03 * arg.sin()), lat.sample(rng), 0.5 * lat.sample(rng)],
            [
                cfg.roll_rate_amp * (2.0 * arg).sin(),
                cfg.pitch_rate_amp * (1.5 * arg).cos(),
                yaw_bias + yaw_amp * arg.sin(),
            ],
        );
        let mut reading = twist.to_array();
        for (r, n) in reading.iter_mut().zip(&noise) {
            *r += n.sample(rng);
        }
        motion.push(SensorRecord {
            twist,
            dt: cfg.dt,
            timestamp: t,
        });
        measured.push(SensorRecord {
            twist: Twist::from_array(reading),
            dt: cfg.dt,
            timestamp: t,
        });
    }
    (motion, measured)
}

/// Draws a random scene and trajectory from `cfg` and renders it.
pub fn sample_sequence(cfg: &WorldConfig, seed: u64, mode: ExecMode) -> Result<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (motion, measured) = sample_motion(&cfg.trajectory, &mut rng);
    let travel = cfg.trajectory.speed[1].max(cfg.trajectory.speed[0]) * cfg.trajectory.dt * cfg.trajectory.frames as f64;
    let scene = sample_scene(&cfg.scene, travel, &mut rng);
    let start = Pose::level_camera(cfg.scene.base.ground_height.unwrap_or(0.0) + cfg.camera_height);
    Sequence::render(scene, cfg.camera, &start, motion, measured, mode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        // 40 x 10 = 400 training triplets, 5 x 10 = 50 held out.
        DatasetConfig {
            train_sequences: 40,
            test_sequences: 5,
            seed: 2024,
        }
    }
}

/// Train and held-out sequences drawn from disjoint seed streams.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

pub fn generate_benchmark(world: &WorldConfig, data: &DatasetConfig, mode: ExecMode) -> Result<Benchmark> {
    let seeds = |base: u64, n: usize| -> Vec<u64> { (0..n as u64).map(|i| base.wrapping_mul(1_000_003).wrapping_add(i)).collect() };
    let train_seeds = seeds(data.seed.wrapping_mul(2), data.train_sequences);
    let test_seeds = seeds(data.seed.wrapping_mul(2).wrapping_add(1), data.test_sequences);
    // Sequences are rendered one after another; rendering itself fans out per frame.
    let train = train_seeds
        .iter()
        .map(|&s| sample_sequence(world, s, mode))
        .collect::<Result<Vec<_>>>()?;
    let test = test_seeds
        .iter()
        .map(|&s| sample_sequence(world, s, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark { train, test })
}

fn write_into(seq: &Sequence, out_dir: &Path, name: &str, split: &str) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let frame_name = |i: usize| format!("frames/frame_{i:05}.png");
    let flow_name = |g: usize, s: usize| format!("flow/flow_{g:05}_to_{s:05}.flo");
    let mask_name = |g: usize, s: usize| format!("flow/mask_{g:05}_to_{s:05}.png");
    for (i, f) in seq.frames.iter().enumerate() {
        io::write_frame_png(f, &out_dir.join(frame_name(i)))?;
    }
    write_sensor_records(&seq.records, &out_dir.join("sensors.jsonl"))?;
    for i in 0..seq.len().saturating_sub(1) {
        for (g, s) in [(i, i + 1), (i + 1, i)] {
            let (flow, mask) = seq.gt_flow(g, s);
            io::write_flo(&flow, &out_dir.join(flow_name(g, s)))?;
            io::write_mask_png(&mask, &out_dir.join(mask_name(g, s)))?;
        }
    }
    let mut m = DatasetManifest::new(seq.camera);
    m.sequences.push(SequenceEntry {
        name: name.to_string(),
        frames: (0..seq.len()).map(frame_name).collect(),
        sensors: "sensors.jsonl".into(),
        split: split.to_string(),
    });
    for t in seq.triplet_centers() {
        let sensor = window_mean_displacement(&seq.records, t).expect("interior center");
        m.triplets.push(TripletEntry {
            sequence: 0,
            center: t,
            frames: [frame_name(t - 1), frame_name(t), frame_name(t + 1)],
            sensor,
            dt: seq.records[t].dt,
            gt_flow_f: Some(flow_name(t, t - 1)),
            gt_flow_b: Some(flow_name(t, t + 1)),
            mask_f: Some(mask_name(t, t - 1)),
            mask_b: Some(mask_name(t, t + 1)),
        });
    }
    m.save(&out_dir.join("manifest.json"))?;
    Ok(m)
}

/// Writes an already-rendered sequence (frames, readings, ground truth, manifest) under `out_dir`.
pub fn write_sequence(seq: &Sequence, out_dir: &Path, name: &str, split: &str) -> Result<DatasetManifest> {
    write_into(seq, out_dir, name, split)
}

/// Renders `trajectory` through `scene` and writes the dataset layout under `out_dir`.
///
/// `trajectory` is the true motion; recorded readings get Gaussian noise
/// with per-unit `noise_std`, drawn from `seed`.
pub fn generate_sequence(
    scene: &SceneSpec,
    camera: &CameraIntrinsics,
    start: &Pose,
    trajectory: &[SensorRecord],
    noise_std: [f64; 6],
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if trajectory.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "trajectory needs at least 3 records, got {}",
            trajectory.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Normal<f64>> = noise_std
        .iter()
        .map(|&s| Normal::new(0.0, s.max(0.0)).expect("valid std"))
        .collect();
    let measured = trajectory
        .iter()
        .map(|r| {
            let mut a = r.twist.to_array();
            for (v, n) in a.iter_mut().zip(&noise) {
                *v += n.sample(&mut rng);
            }
            SensorRecord {
                twist: Twist::from_array(a),
                ..*r
            }
        })
        .collect();
    let seq = Sequence::render(scene.clone(), *camera, start, trajectory.to_vec(), measured, ExecMode::default())?;
    write_into(&seq, out_dir, "sequence", "train")
}
