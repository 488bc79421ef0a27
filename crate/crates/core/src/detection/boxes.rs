//! Oriented 3D boxes and ground-truth label sets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::roi::Roi3D;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A vehicle: geometric center in camera coordinates, size `(w, h, l)` in
/// meters and rotation `yaw` about the camera's y axis. The heading
/// direction is `(cos yaw, 0, -sin yaw)`; `l` runs along it, `w` across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub confidence: f64,
}

impl ObjectBox {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, confidence: f64) -> Result<Self> {
        let b = ObjectBox { center, size, yaw: normalize_yaw(yaw), confidence };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.center.iter().chain(&self.size).all(|v| v.is_finite()) && self.yaw.is_finite();
        if !finite || self.size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Invalid(format!("invalid box {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Invalid(format!("confidence {} outside [0,1]", self.confidence)));
        }
        Ok(())
    }

    pub fn heading(&self) -> [f64; 3] {
        [self.yaw.cos(), 0.0, -self.yaw.sin()]
    }

    /// Object-frame offset `(along heading, vertical, across)` to camera frame.
    fn to_camera(&self, along: f64, vertical: f64, across: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [self.center[0] + c * along + s * across, self.center[1] + vertical, self.center[2] - s * along + c * across]
    }

    /// Ground footprint as `(x, z)` corners, counter-clockwise in the x-z plane.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.size[2], 0.5 * self.size[0]);
        let mut out = [[0.0; 2]; 4];
        for (k, (a, c)) in [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].into_iter().enumerate() {
            let p = self.to_camera(a, 0.0, c);
            out[k] = [p[0], p[2]];
        }
        out
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (hl, hh, hw) = (0.5 * self.size[2], 0.5 * self.size[1], 0.5 * self.size[0]);
        let mut out = [[0.0; 3]; 8];
        let mut k = 0;
        for a in [-hl, hl] {
            for b in [-hh, hh] {
                for c in [-hw, hw] {
                    out[k] = self.to_camera(a, b, c);
                    k += 1;
                }
            }
        }
        out
    }

    /// Vertical extent `(y_top, y_bottom)`.
    pub fn y_range(&self) -> (f64, f64) {
        (self.center[1] - 0.5 * self.size[1], self.center[1] + 0.5 * self.size[1])
    }

    /// Projected center `(u, v, d)`.
    pub fn uvd(&self, cam: &Camera) -> [f64; 3] {
        cam.project(self.center)
    }

    /// Axis-aligned hull of the projected corners in `(u, v, d)`.
    pub fn roi(&self, cam: &Camera) -> Result<Roi3D> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.corners() {
            if p[2] <= 1e-6 {
                return Err(Error::Invalid("box extends behind the camera".into()));
            }
            let q = cam.project(p);
            for a in 0..3 {
                lo[a] = lo[a].min(q[a]);
                hi[a] = hi[a].max(q[a]);
            }
        }
        Roi3D::new(lo, hi)
    }

    /// 2D image box `[u_min, v_min, u_max, v_max]`.
    pub fn bbox2d(&self, cam: &Camera) -> Result<[f64; 4]> {
        let r = self.roi(cam)?;
        Ok([r.p_min[0], r.p_min[1], r.p_max[0], r.p_max[1]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Result<Self> {
        Difficulty::ALL
            .get(level as usize)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("difficulty level {level} not in 0..=2")))
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown difficulty `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub object: ObjectBox,
    pub difficulty: Difficulty,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionLabelSet {
    pub boxes: Vec<LabeledBox>,
}

impl DetectionLabelSet {
    pub fn new(boxes: Vec<LabeledBox>) -> Result<Self> {
        for b in &boxes {
            b.object.validate()?;
        }
        Ok(DetectionLabelSet { boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectBox> {
        self.boxes.iter().map(|b| &b.object)
    }
}
