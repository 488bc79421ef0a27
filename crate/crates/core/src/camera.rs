//! Rectified pinhole stereo rig.
//!
//! Camera frame: x right, y down, z forward (meters). Image coordinates are
//! pixel indices `(u, v)` and disparity `d = f b / z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub baseline: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn new(focal: f64, baseline: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal > 0.0 && baseline > 0.0 && cx.is_finite() && cy.is_finite()) || !focal.is_finite() || !baseline.is_finite() {
            return Err(Error::Invalid(format!("camera needs f > 0 and b > 0, got f={focal}, b={baseline}")));
        }
        Ok(Camera { focal, baseline, cx, cy })
    }

    /// Principal point at the image center.
    pub fn centered(focal: f64, baseline: f64, width: usize, height: usize) -> Result<Self> {
        Camera::new(focal, baseline, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    pub fn fb(&self) -> f64 {
        self.focal * self.baseline
    }

    /// `(u, v, d)` of a point in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = p;
        [self.focal * x / z + self.cx, self.focal * y / z + self.cy, self.fb() / z]
    }

    /// Inverse of [`Camera::project`] for `d > 0`.
    pub fn unproject(&self, q: [f64; 3]) -> [f64; 3] {
        let [u, v, d] = q;
        let z = self.fb() / d;
        [(u - self.cx) * z / self.focal, (v - self.cy) * z / self.focal, z]
    }

    /// The same rig seen through a crop whose top-left pixel is `(u0, v0)`.
    pub fn cropped(&self, u0: usize, v0: usize) -> Camera {
        Camera { cx: self.cx - u0 as f64, cy: self.cy - v0 as f64, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_roundtrip() {
        let cam = Camera::centered(200.0, 0.5, 256, 128).unwrap();
        let p = [1.3, -0.4, 12.5];
        let q = cam.project(p);
        assert!((q[2] - 8.0).abs() < 1e-12);
        let back = cam.unproject(q);
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_shifts_pixels() {
        let cam = Camera::centered(200.0, 0.5, 256, 128).unwrap();
        let c = cam.cropped(10, 4);
        let (a, b) = (cam.project([1.0, 0.5, 9.0]), c.project([1.0, 0.5, 9.0]));
        assert!((a[0] - 10.0 - b[0]).abs() < 1e-12 && (a[1] - 4.0 - b[1]).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rig() {
        assert!(Camera::new(0.0, 0.5, 0.0, 0.0).is_err());
        assert!(Camera::new(200.0, -0.5, 0.0, 0.0).is_err());
    }
}
