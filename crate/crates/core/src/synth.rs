//! Ray-cast synthetic stereo scenes: a textured street (ground plane and a
//! far wall) with box-shaped vehicles, rendered from both cameras of a
//! rectified rig together with dense disparity, occlusion and labels.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::detection::iou::bev_intersection;
use crate::detection::{DetectionLabelSet, Difficulty, LabeledBox, ObjectBox};
use crate::disparity::{DisparityMap, Image};
use crate::error::{Error, Result};

pub const MIN_VISIBLE_PIXELS: usize = 50;
const MAX_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub focal: f64,
    pub baseline: f64,
    pub camera_height: f64,
    pub wall_depth: f64,
    pub min_boxes: usize,
    pub max_boxes: usize,
    /// Relative frequency of near, middle and far placements.
    pub mix: [f64; 3],
    /// Sub-samples per pixel along each image axis.
    pub supersample: usize,
    /// Multiplies every surface's texture frequency.
    pub texture_density: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 128,
            d_max: 48,
            focal: 200.0,
            baseline: 0.5,
            camera_height: 1.65,
            wall_depth: 30.0,
            min_boxes: 2,
            max_boxes: 4,
            mix: [0.5, 0.3, 0.2],
            supersample: 3,
            texture_density: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn camera(&self) -> Result<Camera> {
        Camera::centered(self.focal, self.baseline, self.width, self.height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPlacement {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl BoxPlacement {
    fn object(&self) -> Result<ObjectBox> {
        ObjectBox::new(self.center, self.size, self.yaw, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Backdrop {
    /// Ground plane at the camera height plus a fronto-parallel wall.
    Street { wall_depth: f64 },
    /// Only the ground plane; rays above the horizon hit nothing.
    Ground,
    /// A single fronto-parallel plane at depth `z`.
    Wall { z: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub camera_height: f64,
    pub backdrop: Backdrop,
    pub boxes: Vec<BoxPlacement>,
    pub supersample: usize,
    pub texture_density: f64,
}

impl SceneSpec {
    /// An empty street scene for `cfg`.
    pub fn empty(cfg: &SynthConfig, seed: u64) -> Result<Self> {
        Ok(SceneSpec {
            seed,
            camera: cfg.camera()?,
            width: cfg.width,
            height: cfg.height,
            d_max: cfg.d_max,
            camera_height: cfg.camera_height,
            backdrop: Backdrop::Street { wall_depth: cfg.wall_depth },
            boxes: Vec::new(),
            supersample: cfg.supersample,
            texture_density: cfg.texture_density,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.supersample == 0 || self.d_max < 2 {
            return Err(Error::Invalid("scene needs a non-empty image, d_max >= 2 and supersampling >= 1".into()));
        }
        if !(self.texture_density > 0.0 && self.texture_density.is_finite()) {
            return Err(Error::Invalid(format!("texture density {} must be positive", self.texture_density)));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let obj = b.object()?;
            let roi = obj.roi(&self.camera).map_err(|_| Error::Invalid(format!("box {i} is not in front of the camera")))?;
            if roi.p_min[2] < 1.0 || roi.p_max[2] > (self.d_max - 1) as f64 {
                return Err(Error::Invalid(format!("box {i} spans disparities {:.2}..{:.2} outside [1, {}]", roi.p_min[2], roi.p_max[2], self.d_max - 1)));
            }
        }
        let z_min = match self.backdrop {
            Backdrop::Street { wall_depth } => wall_depth,
            Backdrop::Wall { z } => z,
            Backdrop::Ground => f64::INFINITY,
        };
        if !(z_min > 0.0) || self.camera.fb() / z_min > (self.d_max - 1) as f64 {
            return Err(Error::Invalid(format!("backdrop at depth {z_min} is outside the disparity range")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub camera: Camera,
    pub left: Image,
    pub right: Image,
    /// Left-frame disparity; invalid where the ray hits nothing.
    pub disparity: DisparityMap,
    /// True where a left pixel is hidden from or outside the right view.
    pub occlusion: Vec<bool>,
    pub labels: DetectionLabelSet,
}

/// Band-limited value noise with a smooth lattice interpolant.
fn lattice(ix: i64, iy: i64, iz: i64, salt: u64) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
        ^ salt.wrapping_mul(0x27D4_EB2F_1656_67C5);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: [f64; 3], salt: u64) -> f64 {
    let fl = p.map(f64::floor);
    let fr: [f64; 3] = std::array::from_fn(|a| p[a] - fl[a]);
    let s = fr.map(|t| t * t * (3.0 - 2.0 * t));
    let (x0, y0, z0) = (fl[0] as i64, fl[1] as i64, fl[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { s[0] } else { 1.0 - s[0] }) * (if dy == 1 { s[1] } else { 1.0 - s[1] }) * (if dz == 1 { s[2] } else { 1.0 - s[2] });
                acc += w * lattice(x0 + dx, y0 + dy, z0 + dz, salt);
            }
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    Ground,
    Wall,
    Vehicle(usize),
}

struct Scene<'a> {
    spec: &'a SceneSpec,
    objects: Vec<ObjectBox>,
    salt: u64,
}

impl Scene<'_> {
    /// Nearest hit along `origin + t * dir` with `dir.z = 1`, so `t` is depth.
    fn cast(&self, origin: [f64; 3], dir: [f64; 3], only: Option<usize>) -> Option<(f64, Surface)> {
        let mut best: Option<(f64, Surface)> = None;
        let mut consider = |t: f64, s: Surface| {
            if t > 1e-6 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, s));
            }
        };
        if only.is_none() {
            match self.spec.backdrop {
                Backdrop::Street { wall_depth } => {
                    if dir[1] > 0.0 {
                        consider(self.spec.camera_height / dir[1], Surface::Ground);
                    }
                    consider(wall_depth, Surface::Wall);
                }
                Backdrop::Ground => {
                    if dir[1] > 0.0 {
                        consider(self.spec.camera_height / dir[1], Surface::Ground);
                    }
                }
                Backdrop::Wall { z } => consider(z, Surface::Wall),
            }
        }
        for (i, b) in self.objects.iter().enumerate() {
            if only.is_some_and(|k| k != i) {
                continue;
            }
            if let Some(t) = ray_box(b, origin, dir) {
                consider(t, Surface::Vehicle(i));
            }
        }
        best
    }

    fn shade(&self, p: [f64; 3], s: Surface) -> f64 {
        let (base, freq, salt) = match s {
            Surface::Ground => (0.35, 10.0, 1),
            Surface::Wall => (0.55, 2.0, 2),
            Surface::Vehicle(i) => (0.3 + 0.08 * (i % 5) as f64, 5.0, 3 + i as u64),
        };
        let salt = self.salt ^ salt.wrapping_mul(0x5851_F42D_4C95_7F2D);
        let freq = freq * self.spec.texture_density;
        let q = |k: f64| p.map(|c| c * freq * k);
        let n = 0.65 * value_noise(q(1.0), salt) + 0.35 * value_noise(q(2.0), salt ^ 0xABCD);
        (base + 0.6 * (n - 0.5)).clamp(0.0, 1.0)
    }

    fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let c = &self.spec.camera;
        [(u - c.cx) / c.focal, (v - c.cy) / c.focal, 1.0]
    }

    fn pixel(&self, u: usize, v: usize, origin_x: f64) -> f64 {
        let n = self.spec.supersample;
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let du = (i as f64 + 0.5) / n as f64 - 0.5;
                let dv = (j as f64 + 0.5) / n as f64 - 0.5;
                let dir = self.ray(u as f64 + du, v as f64 + dv);
                let o = [origin_x, 0.0, 0.0];
                acc += match self.cast(o, dir, None) {
                    Some((t, s)) => self.shade([o[0] + t * dir[0], t * dir[1], t * dir[2]], s),
                    None => 0.0,
                };
            }
        }
        acc / (n * n) as f64
    }
}

/// Entry depth of a ray into an oriented box, by slabs in the box frame.
fn ray_box(b: &ObjectBox, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let axes = [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]];
    let half = [0.5 * b.size[2], 0.5 * b.size[1], 0.5 * b.size[0]];
    let rel: [f64; 3] = std::array::from_fn(|a| origin[a] - b.center[a]);
    let dot = |x: &[f64; 3], y: &[f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        let (o, d) = (dot(&rel, &axes[k]), dot(&dir, &axes[k]));
        if d.abs() < 1e-12 {
            if o.abs() > half[k] {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-half[k] - o) / d, (half[k] - o) / d);
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
    }
    (t0 <= t1 && t0 > 1e-6).then_some(t0)
}

/// Difficulty from visibility and range.
pub fn difficulty_of(occluded_fraction: f64, depth: f64) -> Difficulty {
    if occluded_fraction < 0.1 && depth <= 16.0 {
        Difficulty::Easy
    } else if occluded_fraction < 0.4 && depth <= 24.0 {
        Difficulty::Moderate
    } else {
        Difficulty::Hard
    }
}

pub fn render(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let objects = spec.boxes.iter().map(BoxPlacement::object).collect::<Result<Vec<_>>>()?;
    let scene = Scene { spec, objects, salt: spec.seed };
    let (w, h) = (spec.width, spec.height);
    let cam = spec.camera;
    let b = cam.baseline;

    let mut left = vec![0.0; w * h];
    let mut right = vec![0.0; w * h];
    let mut disp = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut occ = vec![false; w * h];
    let mut visible = vec![0usize; scene.objects.len()];
    let mut footprint = vec![0usize; scene.objects.len()];
    for v in 0..h {
        for u in 0..w {
            let k = v * w + u;
            left[k] = scene.pixel(u, v, 0.0);
            right[k] = scene.pixel(u, v, b);
            let dir = scene.ray(u as f64, v as f64);
            for (i, n) in footprint.iter_mut().enumerate() {
                if scene.cast([0.0; 3], dir, Some(i)).is_some() {
                    *n += 1;
                }
            }
            let Some((z, surf)) = scene.cast([0.0; 3], dir, None) else {
                occ[k] = true;
                continue;
            };
            if let Surface::Vehicle(i) = surf {
                visible[i] += 1;
            }
            let d = cam.fb() / z;
            disp[k] = d;
            valid[k] = true;
            let ur = u as f64 - d;
            let p = [z * dir[0], z * dir[1], z];
            let seen = ur >= -0.5
                && scene.cast([b, 0.0, 0.0], [(p[0] - b) / p[2], p[1] / p[2], 1.0], None).is_some_and(|(zr, _)| zr >= z * (1.0 - 1e-9) - 1e-9);
            occ[k] = !seen;
        }
    }

    let mut labels = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        if visible[i] < MIN_VISIBLE_PIXELS {
            return Err(Error::Invalid(format!("box {i} has only {} visible pixels", visible[i])));
        }
        let occluded = 1.0 - visible[i] as f64 / footprint[i].max(1) as f64;
        labels.push(LabeledBox { object: *obj, difficulty: difficulty_of(occluded, obj.center[2]) });
    }
    Ok(RenderedScene {
        camera: cam,
        left: Image::dense(w, h, left)?,
        right: Image::dense(w, h, right)?,
        disparity: DisparityMap::new(w, h, disp, valid)?,
        occlusion: occ,
        labels: DetectionLabelSet::new(labels)?,
    })
}

fn sample_box(cfg: &SynthConfig, cam: &Camera, rng: &mut ChaCha8Rng) -> BoxPlacement {
    let total: f64 = cfg.mix.iter().sum();
    let mut r = rng.random_range(0.0..total.max(1e-12));
    let mut band = 2;
    for (i, &m) in cfg.mix.iter().enumerate() {
        if r < m {
            band = i;
            break;
        }
        r -= m;
    }
    let (z0, z1) = [(8.0, 14.0), (14.0, 20.0), (20.0, 26.0)][band];
    let z = rng.random_range(z0..z1);
    let size = [rng.random_range(1.55..1.85), rng.random_range(1.4..1.6), rng.random_range(3.6..4.4)];
    let half_fov = (cfg.width as f64 / 2.0 - 12.0) / cam.focal;
    let x = rng.random_range(-1.0..1.0) * (half_fov * z - 1.5).max(0.1);
    let yaw = -FRAC_PI_2 + rng.random_range(-0.35..0.35);
    BoxPlacement { center: [x, cfg.camera_height - 0.5 * size[1], z], size, yaw }
}

fn inside_image(spec: &SceneSpec, b: &BoxPlacement) -> bool {
    let Ok(obj) = b.object() else { return false };
    let Ok(r) = obj.roi(&spec.camera) else { return false };
    r.p_min[0] >= 0.0
        && r.p_min[1] >= 0.0
        && r.p_max[0] <= (spec.width - 1) as f64
        && r.p_max[1] <= (spec.height - 1) as f64
        && r.p_min[2] >= 1.0
        && r.p_max[2] <= (spec.d_max - 1) as f64
}

fn separated(a: &BoxPlacement, b: &BoxPlacement) -> bool {
    let grow = |p: &BoxPlacement| ObjectBox::new(p.center, [p.size[0] + 0.6, p.size[1], p.size[2] + 0.6], p.yaw, 1.0);
    match (grow(a), grow(b)) {
        (Ok(x), Ok(y)) => bev_intersection(&x, &y) == 0.0,
        _ => false,
    }
}

/// Random street scene; placements are redrawn until every box is fully in
/// view, boxes do not touch, and each keeps enough visible pixels.
pub fn random_scene(cfg: &SynthConfig, seed: u64) -> Result<(SceneSpec, RenderedScene)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = cfg.camera()?;
    let lo = cfg.min_boxes.min(cfg.max_boxes);
    for _ in 0..MAX_ATTEMPTS {
        let mut spec = SceneSpec::empty(cfg, seed)?;
        let n = rng.random_range(lo..=cfg.max_boxes.max(lo));
        let mut tries = 0;
        while spec.boxes.len() < n && tries < 50 * n.max(1) {
            tries += 1;
            let b = sample_box(cfg, &cam, &mut rng);
            if inside_image(&spec, &b) && spec.boxes.iter().all(|o| separated(o, &b)) {
                spec.boxes.push(b);
            }
        }
        if spec.boxes.len() < n {
            continue;
        }
        if let Ok(scene) = render(&spec) {
            return Ok((spec, scene));
        }
    }
    Err(Error::Invalid(format!("no valid scene found for seed {seed}")))
}

/// Per-scene seed derived from the master seed.
pub fn scene_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// `n` scenes rendered in parallel; identical for identical arguments.
pub fn make_dataset(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<(SceneSpec, RenderedScene)>> {
    if n == 0 {
        return Err(Error::Invalid("dataset needs at least one scene".into()));
    }
    (0..n).into_par_iter().map(|i| random_scene(cfg, scene_seed(seed, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { supersample: 1, ..SynthConfig::default() }
    }

    #[test]
    fn fronto_plane_has_constant_disparity() {
        let cfg = small_cfg();
        let mut spec = SceneSpec::empty(&cfg, 1).unwrap();
        spec.backdrop = Backdrop::Wall { z: cfg.focal * cfg.baseline / 10.0 };
        let s = render(&spec).unwrap();
        assert!(s.disparity.values.iter().all(|&d| (d - 10.0).abs() < 1e-9));
        assert!(s.disparity.valid.iter().all(|&v| v));
        // The leftmost columns have no partner in the right view.
        assert!(s.occlusion[0] && !s.occlusion[20]);
    }

    #[test]
    fn ground_disparity_falls_toward_horizon() {
        let cfg = small_cfg();
        let mut spec = SceneSpec::empty(&cfg, 1).unwrap();
        spec.backdrop = Backdrop::Ground;
        let s = render(&spec).unwrap();
        let horizon = spec.camera.cy;
        let col = 100;
        let rows: Vec<usize> = (0..cfg.height).filter(|&v| v as f64 > horizon).collect();
        for w in rows.windows(2) {
            assert!(s.disparity.get(col, w[0]) < s.disparity.get(col, w[1]));
        }
        assert!(!s.disparity.is_valid(col, 0));
    }

    #[test]
    fn box_behind_camera_rejected() {
        let mut spec = SceneSpec::empty(&small_cfg(), 1).unwrap();
        spec.boxes.push(BoxPlacement { center: [0.0, 1.0, -5.0], size: [1.7, 1.5, 4.0], yaw: 0.0 });
        assert!(render(&spec).is_err());
    }

    #[test]
    fn random_scene_labels_are_in_volume() {
        let cfg = small_cfg();
        let (_, s) = random_scene(&cfg, 11).unwrap();
        assert!(s.labels.len() >= cfg.min_boxes);
        for b in s.labels.objects() {
            let r = b.roi(&s.camera).unwrap();
            assert!(r.p_min[0] >= 0.0 && r.p_max[0] < cfg.width as f64);
            assert!(r.p_min[2] >= 1.0 && r.p_max[2] < cfg.d_max as f64);
        }
        assert!(s.disparity.values.iter().all(|&d| (0.0..cfg.d_max as f64).contains(&d)));
    }
}
