//! Synthetic driving world with analytic ground-truth flow.

mod camera;
mod geometry;
mod oracle;
mod scene;
mod sequence;

pub use camera::CameraIntrinsics;
pub use geometry::{camera_from_vehicle, exp_se3, integrate_twist, rodrigues, Pose, Twist};
pub use oracle::{flow_at, gt_flow, FlowSample, OCCLUSION_TOLERANCE_M};
pub use scene::{render_frame, Billboard, Facing, Hit, SceneSpec, Surface, TextureParams};
pub use sequence::{
    generate_benchmark, generate_sequence, poses_from_records, read_sensor_records, sample_sequence,
    window_mean_displacement, write_sensor_records, write_sequence, Benchmark, DatasetConfig, SceneConfig, SensorRecord,
    Sequence, TrajectoryConfig, WorldConfig,
};
