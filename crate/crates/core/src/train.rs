//! Toy training loop, checkpoints, the loss-curve table and evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::detection::{average_precision, ApReport, DetectionLabelSet, IouMode, ObjectBox};
use crate::diff::{Graph, ParamSnapshot, ParamStore};
use crate::disparity::{disparity_to_depth, DepthAccumulator, DepthMetrics, DisparityMap, Map, StereoGeometry};
use crate::error::{Error, Result};
use crate::io::{read_text, write_bytes};
use crate::model::{Model, Prediction, Sample};
use crate::scalar::{FlushDenormals, Scalar};
use crate::synth::RenderedScene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub disp: f64,
    pub rpn: f64,
    pub header: f64,
    pub total: f64,
}

pub const LOSS_HEADER: &str = "step L_disp L_rpn L_header total";

pub fn format_loss_row(r: &LossRow) -> String {
    format!("{} {:.6} {:.6} {:.6} {:.6}", r.step, r.disp, r.rpn, r.header, r.total)
}

/// Crops a scene to `[h, w]` at `(u0, v0)`. Ground truth is kept only where
/// the match lies inside the cropped right image.
pub fn crop_sample(scene: &RenderedScene, u0: usize, v0: usize, h: usize, w: usize) -> Result<Sample> {
    let gt = scene.disparity.crop(u0, v0, w, h)?;
    let valid = (0..w * h).map(|k| gt.valid[k] && ((k % w) as f64) >= gt.values[k]).collect();
    Ok(Sample {
        left: scene.left.crop(u0, v0, w, h)?,
        right: scene.right.crop(u0, v0, w, h)?,
        gt: Map::new(w, h, gt.values, valid)?,
        camera: scene.camera.cropped(u0, v0),
        objects: scene.labels.objects().copied().collect(),
    })
}

/// A uniformly placed crop origin, or half of the time one centered on a
/// random labeled box.
pub fn crop_origin<R: Rng + ?Sized>(scene: &RenderedScene, h: usize, w: usize, rng: &mut R) -> Result<(usize, usize)> {
    let (iw, ih) = (scene.left.width, scene.left.height);
    if h > ih || w > iw {
        return Err(Error::Invalid(format!("crop {h}x{w} exceeds image {ih}x{iw}")));
    }
    let objs: Vec<&ObjectBox> = scene.labels.objects().collect();
    let (cu, cv) = if objs.is_empty() || rng.random_bool(0.5) {
        (rng.random_range(0.0..iw as f64), rng.random_range(0.0..ih as f64))
    } else {
        let o = objs[rng.random_range(0..objs.len())];
        let c = o.uvd(&scene.camera);
        (c[0] + rng.random_range(-0.25..0.25) * w as f64, c[1] + rng.random_range(-0.25..0.25) * h as f64)
    };
    let place = |c: f64, n: usize, lim: usize| (c - n as f64 / 2.0).round().clamp(0.0, (lim - n) as f64) as usize;
    Ok((place(cu, w, iw), place(cv, h, ih)))
}

fn learning_rate(cfg: &PipelineConfig, step: usize) -> f64 {
    let t = &cfg.train;
    t.learning_rate * t.lr_decay.powi(t.lr_milestones.iter().filter(|&&m| step >= m).count() as i32)
}

/// Runs `cfg.train.steps` optimizer steps, calling `on_row` after each.
pub fn train<T: Scalar>(
    model: &Model,
    store: &mut ParamStore<T>,
    scenes: &[RenderedScene],
    mut on_row: impl FnMut(&LossRow, &ParamStore<T>) -> Result<()>,
) -> Result<Vec<LossRow>> {
    if scenes.is_empty() {
        return Err(Error::Invalid("training needs at least one scene".into()));
    }
    let _ftz = FlushDenormals::new();
    let cfg = &model.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let [h, w] = cfg.train.crop;
    let mut rows = Vec::with_capacity(cfg.train.steps);
    // Each pass visits every scene once, in a fresh order.
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.train.steps {
        if order.is_empty() {
            order = (0..scenes.len()).collect();
            order.shuffle(&mut rng);
        }
        let scene = &scenes[order.pop().expect("refilled above")];
        let (u0, v0) = crop_origin(scene, h, w, &mut rng)?;
        let sample = crop_sample(scene, u0, v0, h, w)?;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let l = model.train_forward(&mut g, &p, &sample, &mut rng)?;
        g.backward(l.total)?;
        store.collect_grads(&mut g, &p);
        store.optimizer_step(learning_rate(cfg, step))?;
        let row = LossRow { step, disp: l.disp, rpn: l.rpn, header: l.header, total: l.total_value };
        on_row(&row, store)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Parameters plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: PipelineConfig,
    pub params: ParamSnapshot,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Invalid(format!("checkpoint serialization: {e}")))?;
        write_bytes(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn restore<T: Scalar>(&self) -> Result<(Model, ParamStore<T>)> {
        let model = Model::new(&self.config)?;
        let store = ParamStore::from_snapshot(&self.params, self.config.train.adam)?;
        Ok((model, store))
    }
}

/// Predictions for every scene, in parallel.
pub fn predict_all<T: Scalar>(model: &Model, store: &ParamStore<T>, scenes: &[RenderedScene]) -> Result<Vec<Prediction>> {
    scenes
        .par_iter()
        .map(|s| {
            let _ftz = FlushDenormals::new();
            model.infer(store, &s.left, &s.right, &s.camera)
        })
        .collect()
}

/// Ground truth restricted to pixels visible in both views.
pub fn visible_gt(scene: &RenderedScene) -> Result<DisparityMap> {
    let d = &scene.disparity;
    let valid = d.valid.iter().zip(&scene.occlusion).map(|(&v, &o)| v && !o).collect();
    Map::new(d.width, d.height, d.values.clone(), valid)
}

/// Disparity RMSE over valid ground-truth pixels.
pub fn disparity_rmse(preds: &[DisparityMap], gts: &[DisparityMap]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::Invalid("prediction and ground truth differ in size".into()));
        }
        for k in 0..g.values.len() {
            if g.valid[k] {
                sum += (p.values[k] - g.values[k]).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no valid ground-truth pixels".into()));
    }
    Ok((sum / n as f64).sqrt())
}

pub fn depth_metrics_all(preds: &[DisparityMap], gts: &[DisparityMap], geom: &StereoGeometry) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    for (p, g) in preds.iter().zip(gts) {
        acc.add(&disparity_to_depth(p, geom), &disparity_to_depth(g, geom))?;
    }
    acc.finish()
}

pub fn detection_ap(dets: &[Vec<ObjectBox>], labels: &[DetectionLabelSet], mode: IouMode) -> ApReport {
    average_precision(dets, labels, 0.7, mode)
}

/// Mean of `total` over consecutive windows of `window` rows.
pub fn window_means(rows: &[LossRow], window: usize) -> Vec<f64> {
    rows.chunks_exact(window.max(1)).map(|c| c.iter().map(|r| r.total).sum::<f64>() / c.len() as f64).collect()
}

pub fn loss_table(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", format_loss_row(r));
    }
    s
}
