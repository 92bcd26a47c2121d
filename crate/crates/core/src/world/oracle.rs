//! Exact optical flow between two views of a static scene.

use nalgebra::Vector3;

use super::camera::CameraIntrinsics;
use super::geometry::Pose;
use super::scene::{pixel_ray, SceneSpec};
use crate::field::{FlowField, ValidMask};

/// Surface points closer than this are treated as the same point.
pub const OCCLUSION_TOLERANCE_M: f64 = 1e-3;

/// Ground-truth flow at one (possibly sub-pixel) location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    /// Displacement to the reprojection in the source view (pixels), when the
    /// ray hits the scene and the point lies in front of the source camera.
    pub flow: Option<(f64, f64)>,
    /// Point is visible from the source view and projects inside its image.
    pub valid: bool,
    /// Depth of the hit along the grid camera's optical axis.
    pub depth: Option<f64>,
}

/// Evaluates the flow oracle at the continuous pixel location `(x, y)` of the grid view.
pub fn flow_at(
    scene: &SceneSpec,
    pose_grid: &Pose,
    pose_src: &Pose,
    cam: &CameraIntrinsics,
    x: f64,
    y: f64,
) -> FlowSample {
    let miss = FlowSample {
        flow: None,
        valid: false,
        depth: None,
    };
    let (o, d) = pixel_ray(pose_grid, cam, x, y);
    let Some(hit) = scene.raycast(&o, &d) else {
        return miss;
    };
    if pose_grid == pose_src {
        return FlowSample {
            flow: Some((0.0, 0.0)),
            valid: cam.contains(x, y),
            depth: Some(hit.t),
        };
    }
    let pc = pose_src.to_camera(&hit.point);
    let Some((u, v)) = cam.project([pc.x, pc.y, pc.z]) else {
        return FlowSample {
            depth: Some(hit.t),
            ..miss
        };
    };
    let flow = Some((u - x, v - y));
    let mut valid = cam.contains(u, v);
    if valid {
        let back = pose_src.translation;
        let dir: Vector3<f64> = hit.point - back;
        valid = match scene.raycast(&back, &dir) {
            Some(h2) => (h2.point - hit.point).norm() <= OCCLUSION_TOLERANCE_M,
            None => false,
        };
    }
    FlowSample {
        flow,
        valid,
        depth: Some(hit.t),
    }
}

/// Dense ground-truth flow on the `pose_grid` image toward the `pose_src` image.
///
/// Pixels with no scene hit, behind the source camera, projecting outside
/// the image, or occluded in the source view are invalid. Flow values are
/// still reported for scene hits that project in front of the source camera.
pub fn gt_flow(
    scene: &SceneSpec,
    pose_grid: &Pose,
    pose_src: &Pose,
    cam: &CameraIntrinsics,
) -> (FlowField<f32>, ValidMask) {
    let mut flow = FlowField::zeros(cam.height, cam.width);
    let mut mask = ValidMask::zeros(cam.height, cam.width);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let s = flow_at(scene, pose_grid, pose_src, cam, x as f64, y as f64);
            if let Some((u, v)) = s.flow {
                flow.at_mut(x, y).copy_from_slice(&[u as f32, v as f32]);
            }
            mask.set(x, y, s.valid);
        }
    }
    (flow, mask)
}
