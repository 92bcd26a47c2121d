//! Rigid-body motion: twists, poses and the SE(3) exponential.
//!
//! Vehicle axes are x forward, y left, z up. Camera axes are x right,
//! y down, z forward. The world frame coincides with the vehicle frame at
//! the start of a sequence.

use std::ops::Neg;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Linear (m/s) and angular (rad/s) velocity in vehicle axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub v: [f64; 3],
    pub w: [f64; 3],
}

impl Twist {
    pub const ZERO: Twist = Twist {
        v: [0.0; 3],
        w: [0.0; 3],
    };

    pub fn new(v: [f64; 3], w: [f64; 3]) -> Self {
        Twist { v, w }
    }

    /// `[v_x, v_y, v_z, w_x, w_y, w_z]`.
    pub fn to_array(self) -> [f64; 6] {
        [self.v[0], self.v[1], self.v[2], self.w[0], self.w[1], self.w[2]]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            v: [a[0], a[1], a[2]],
            w: [a[3], a[4], a[5]],
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        Twist::from_array(self.to_array().map(|x| x * k))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

impl Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        Twist::from_array(self.to_array().map(|x| -x))
    }
}

/// Rotation taking vehicle-axis vectors to camera-axis vectors.
pub fn camera_from_vehicle() -> Matrix3<f64> {
    // cam_x = -veh_y, cam_y = -veh_z, cam_z = veh_x
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// World-from-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera mounted level at `height` above the world origin, looking along world +x.
    pub fn level_camera(height: f64) -> Self {
        Pose {
            rotation: camera_from_vehicle().transpose(),
            translation: Vector3::new(0.0, 0.0, height),
        }
    }

    /// `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Camera coordinates of a world point.
    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }

    /// World coordinates of a camera-frame point.
    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    /// Max deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Max absolute difference of rotation and translation entries.
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula for the rotation `exp([phi]x)`.
pub fn rodrigues(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// SE(3) exponential of the body-frame increment `(rho, phi)`.
pub fn exp_se3(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Pose {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (b, c) = if theta < 1e-4 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(phi);
    let v = Matrix3::identity() + k * b + k * k * c;
    Pose {
        rotation: rodrigues(phi),
        translation: v * rho,
    }
}

/// Advances `pose` by a vehicle-axis twist held constant for `dt` seconds.
pub fn integrate_twist(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    debug_assert!(dt > 0.0, "dt must be positive");
    let c = camera_from_vehicle();
    let rho = c * Vector3::from(twist.v) * dt;
    let phi = c * Vector3::from(twist.w) * dt;
    pose.compose(&exp_se3(&rho, &phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use std::f64::consts::PI;

    #[test]
    fn zero_twist_leaves_pose_unchanged() {
        let p = Pose::level_camera(1.5);
        let q = integrate_twist(&p, &Twist::ZERO, 0.3);
        assert_eq!(p, q);
    }

    #[test]
    fn pure_translation_advances_forward() {
        let p = Pose::level_camera(1.5);
        let q = integrate_twist(&p, &Twist::new([10.0, 0.0, 0.0], [0.0; 3]), 0.1);
        assert!((q.translation - Vector3::new(1.0, 0.0, 1.5)).norm() < 1e-12);
        assert_eq!(q.rotation, p.rotation);
    }

    #[test]
    fn quarter_yaw_matches_axis_angle() {
        let p = Pose::level_camera(1.5);
        let q = integrate_twist(&p, &Twist::new([0.0; 3], [0.0, 0.0, PI]), 0.5);
        // Independent evaluation: a +90 degree turn about world z (up).
        let yaw = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::z()), PI / 2.0);
        let want = yaw.matrix() * p.rotation;
        assert!((q.rotation - want).abs().max() < 1e-12);
        // Optical axis now points along world +y (left).
        let fwd = q.rotation * Vector3::z();
        assert!((fwd - Vector3::y()).norm() < 1e-12);
        assert!(q.orthonormality_error() < 1e-12);
    }

    #[test]
    fn rodrigues_matches_nalgebra_on_random_axes() {
        for i in 0..20 {
            let phi = Vector3::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), 0.3 * i as f64 - 2.0);
            let r = rodrigues(&phi);
            let want = Rotation3::from_scaled_axis(phi);
            assert!((r - want.matrix()).abs().max() < 1e-12);
        }
        let tiny = Vector3::new(1e-6, -2e-6, 3e-7);
        let want = Rotation3::from_scaled_axis(tiny);
        assert!((rodrigues(&tiny) - want.matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let p = Pose::level_camera(1.5);
        let s = Twist::new([12.0, 0.4, -0.1], [0.02, -0.05, 0.3]);
        let q = integrate_twist(&integrate_twist(&p, &s, 0.1), &-s, 0.1);
        assert!(p.distance(&q) < 1e-12);
    }

    #[test]
    fn camera_mapping_is_a_rotation() {
        let c = camera_from_vehicle();
        assert!((c.determinant() - 1.0).abs() < 1e-15);
        assert_eq!(c * Vector3::x(), Vector3::z());
        assert_eq!(c * Vector3::y(), -Vector3::x());
        assert_eq!(c * Vector3::z(), -Vector3::y());
    }
}
