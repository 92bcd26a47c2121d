use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics::centered(192, 64, 100.0)
    }
}

impl CameraIntrinsics {
    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Unnormalized camera-frame ray with unit z.
    pub fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0]
    }

    /// Pixel of a camera-frame point in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 1e-9 {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }

    /// True when `(x, y)` lies in the bilinear sampling domain `[0, W-1] x [0, H-1]`,
    /// up to a 1e-9 px rounding slack.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        const SLACK: f64 = 1e-9;
        x >= -SLACK && y >= -SLACK && x <= (self.width - 1) as f64 + SLACK && y <= (self.height - 1) as f64 + SLACK
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_camera_is_valid_and_centered() {
        let c = CameraIntrinsics::default();
        c.validate().unwrap();
        assert_eq!((c.cx, c.cy), (95.5, 31.5));
        let bad = CameraIntrinsics { cx: 192.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn project_inverts_ray() {
        let c = CameraIntrinsics::default();
        let r = c.ray(13.25, 40.5);
        let (x, y) = c.project([r[0] * 7.0, r[1] * 7.0, 7.0]).unwrap();
        assert!((x - 13.25).abs() < 1e-12 && (y - 40.5).abs() < 1e-12);
    }
}
