//! The full stereo object matching network: disparity branch plus the
//! optional proposal and header branches, wired by the ablation flags.

use rand::Rng;

use crate::camera::Camera;
use crate::config::{Fusion, InputVolume, PipelineConfig};
use crate::detection::{
    assign_anchors, decode_header, generate_anchors, header_loss, header_target, nms, proposals, rpn_loss, rpn_targets,
    vehicle_extents, AnchorSpec, VehicleAnchors, Header, ObjectBox, Rpn, SizePrior,
};
use crate::diff::{Bound, Graph, NodeId, ParamStore, Tensor};
use crate::disparity::{disparity_loss, DisparityMap, Image};
use crate::error::{Error, Result};
use crate::occupancy::{back_project, extract_roi2d_values, fuse, fuse_2d};
use crate::roi::{roi_select, Roi3D, SampleMode};
use crate::scalar::Scalar;
use crate::volume::{build_cost_volume, Aggregator, FeatureExtractor, Refiner};

/// One training example: an image pair with ground truth, in a common pixel frame.
#[derive(Clone, Debug)]
pub struct Sample {
    pub left: Image,
    pub right: Image,
    pub gt: DisparityMap,
    pub camera: Camera,
    pub objects: Vec<ObjectBox>,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub disparity: DisparityMap,
    pub detections: Vec<ObjectBox>,
}

/// Loss nodes of one training step plus their values.
#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub total: NodeId,
    pub disp: f64,
    pub rpn: f64,
    pub header: f64,
    pub total_value: f64,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: PipelineConfig,
    pub features: FeatureExtractor,
    pub refiner: Refiner,
    pub aggregator: Aggregator,
    pub rpn: Option<Rpn>,
    pub header: Option<Header>,
    pub anchors: AnchorSpec,
    pub prior: SizePrior,
}

struct Trunk {
    pred: NodeId,
    det_volume: NodeId,
}

impl Model {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let n = &cfg.network;
        let features = FeatureExtractor { channels: n.feature_channels, layers: n.feature_layers };
        let refiner = Refiner { in_channels: 2 * n.feature_channels, channels: n.refine_channels, layers: n.refine_layers };
        let vol_channels = if n.refine_layers == 0 { 2 * n.feature_channels } else { n.refine_channels };
        let aggregator = Aggregator { in_channels: vol_channels, kernel: n.agg_kernel };
        let cam = cfg.synth.camera()?;
        let a = &cfg.anchors;
        let anchors = AnchorSpec {
            stride: a.stride,
            extents: vehicle_extents(&cam, a.vehicle_size, &a.depths)?,
            vehicle: (a.d_positions > 0).then_some(VehicleAnchors { camera: cam, size: a.vehicle_size, per_cell: a.d_positions }),
        };
        let det_channels = match cfg.flags.input_volume {
            InputVolume::CostV => vol_channels,
            InputVolume::CostA => 1,
        };
        let rpn = cfg.flags.rpn_on.then_some(Rpn {
            in_channels: det_channels,
            channels: n.rpn_channels,
            stride: cfg.anchors.stride,
            anchors_per_cell: anchors.per_cell(),
        });
        let extra = usize::from(cfg.flags.fusion != Fusion::None);
        let header = cfg.flags.header_on.then_some(Header { in_channels: det_channels + extra, channels: n.header_channels, grid: n.roi_grid });
        Ok(Model { cfg: cfg.clone(), features, refiner, aggregator, rpn, header, anchors, prior: SizePrior(cfg.anchors.vehicle_size) })
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new(self.cfg.train.adam);
        self.features.init(&mut store, rng)?;
        self.refiner.init(&mut store, rng)?;
        self.aggregator.init(&mut store, rng)?;
        if let Some(r) = &self.rpn {
            r.init(&mut store, rng)?;
        }
        if let Some(h) = &self.header {
            h.init(&mut store, rng)?;
        }
        Ok(store)
    }

    fn sample_mode(&self) -> SampleMode {
        match (self.cfg.flags.deep_sample_on, self.cfg.flags.selective_on) {
            (_, true) => SampleMode::Selective,
            (true, false) => SampleMode::Deep,
            _ => SampleMode::Trilinear,
        }
    }

    fn trunk<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, left: &Image, right: &Image) -> Result<Trunk> {
        let lift = |img: &Image| -> Result<Tensor<T>> {
            if img.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("input image".into()));
            }
            Ok(standardize(img).to_tensor())
        };
        let (l, r) = (g.constant(lift(left)?), g.constant(lift(right)?));
        let fl = self.features.forward(g, p, l)?;
        let fr = self.features.forward(g, p, r)?;
        let v = build_cost_volume(g, fl, fr, self.cfg.network.d_max)?;
        let refined = self.refiner.forward(g, p, v)?;
        let agg = self.aggregator.forward(g, p, refined)?;
        let pred = crate::disparity::soft_argmax(g, agg)?;
        let det_volume = match self.cfg.flags.input_volume {
            InputVolume::CostV => refined,
            InputVolume::CostA => agg,
        };
        Ok(Trunk { pred, det_volume })
    }

    /// Samples, fuses and runs the header on one RoI; returns the `[9]` output.
    fn header_on_roi<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, header: &Header, vol: NodeId, disp: &DisparityMap, roi: &Roi3D) -> Result<NodeId> {
        let s = self.cfg.network.roi_grid;
        let sampled = roi_select(g, vol, roi, Some(disp), self.sample_mode(), s, self.cfg.network.selective_margin)?;
        let fused = match self.cfg.flags.fusion {
            Fusion::ThreeD => {
                let r2d = extract_roi2d_values(disp, roi, s)?;
                let occ = back_project(&r2d, roi, s)?;
                fuse(g, &sampled, &occ)?
            }
            Fusion::TwoD => {
                let r2d = extract_roi2d_values(disp, roi, s)?;
                fuse_2d(g, &sampled, &r2d)?
            }
            Fusion::None => {
                let m = g.constant(sampled.mask.clone());
                g.instance_norm(sampled.features, Some(m), crate::occupancy::NORM_EPS)?
            }
        };
        header.forward(g, p, fused)
    }

    /// Builds the training objective for one sample.
    pub fn train_forward<T: Scalar, R: Rng + ?Sized>(&self, g: &mut Graph<T>, p: &Bound, s: &Sample, rng: &mut R) -> Result<StepLosses> {
        let trunk = self.trunk(g, p, &s.left, &s.right)?;
        let l_disp = disparity_loss(g, trunk.pred, &s.gt)?;
        let value = |g: &Graph<T>, id: NodeId| g.value(id).data()[0].as_f64();
        let disp_v = value(g, l_disp);
        let (mut l_rpn, mut l_header) = (None, None);

        if let Some(rpn) = &self.rpn {
            let dims = [self.cfg.network.d_max, s.left.height, s.left.width];
            let out = rpn.forward(g, p, trunk.det_volume)?;
            let anchors = generate_anchors(dims, &self.anchors)?;
            let mut gts = Vec::new();
            let mut gt_objects = Vec::new();
            for o in &s.objects {
                if let Some(r) = o.roi(&s.camera).ok().and_then(|r| r.clip(dims)) {
                    gts.push(r);
                    gt_objects.push(*o);
                }
            }
            let asg = assign_anchors(&anchors, &gts, self.cfg.anchors.pos_iou, self.cfg.anchors.neg_iou);
            let targets = rpn_targets::<T>(&anchors, &self.anchors, out.grid, &asg, &gts)?;
            l_rpn = Some(rpn_loss(g, &out, &targets)?.0);

            if let Some(header) = &self.header {
                let disp = DisparityMap::from_tensor(g.value(trunk.pred))?;
                let rc = &self.cfg.rois;
                let mut rois: Vec<(Roi3D, Option<usize>)> = Vec::new();
                for (k, gt) in gts.iter().enumerate() {
                    if let Some(r) = jitter(gt, rc.jitter, rng).clip(dims) {
                        rois.push((r, Some(k)));
                    }
                }
                let props = proposals(g.value(out.cls), g.value(out.reg), &anchors, dims, rc.pre_nms, rc.nms_iou, rc.train_rois);
                for (r, _) in props {
                    if rois.len() >= rc.train_rois.max(gts.len()) {
                        break;
                    }
                    let best = gts.iter().enumerate().map(|(k, gt)| (k, gt.iou(&r))).max_by(|a, b| a.1.total_cmp(&b.1));
                    let matched = best.filter(|&(_, iou)| iou >= rc.match_iou).map(|(k, _)| k);
                    rois.push((r, matched));
                }
                if !rois.is_empty() {
                    let scale = 1.0 / rois.len() as f64;
                    let mut acc: Option<NodeId> = None;
                    for (roi, m) in &rois {
                        let out = self.header_on_roi(g, p, header, trunk.det_volume, &disp, roi)?;
                        let target = m.map(|k| header_target(&gt_objects[k], roi, &s.camera, &self.prior));
                        let l = header_loss(g, out, target.as_ref(), scale)?;
                        acc = Some(match acc {
                            Some(a) => g.add(a, l)?,
                            None => l,
                        });
                    }
                    l_header = acc;
                }
            }
        }

        let rpn_v = l_rpn.map_or(0.0, |id| value(g, id));
        let header_v = l_header.map_or(0.0, |id| value(g, id));
        let w = self.cfg.loss;
        for (name, v) in [("L_disp", disp_v), ("L_rpn", rpn_v), ("L_header", header_v)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("loss component {name} is {v}")));
            }
        }
        let mut total = l_disp;
        if let Some(r) = l_rpn {
            let r = if w.rpn == 1.0 { r } else { g.scale(r, w.rpn)? };
            total = g.add(total, r)?;
        }
        if let Some(h) = l_header {
            let h = g.scale(h, w.header)?;
            total = g.add(total, h)?;
        }
        Ok(StepLosses { total, disp: disp_v, rpn: rpn_v, header: header_v, total_value: disp_v + w.rpn * rpn_v + w.header * header_v })
    }

    /// Scored proposals for an image pair whose size is a multiple of the
    /// anchor stride; empty when the proposal branch is off.
    pub fn propose<T: Scalar>(&self, store: &ParamStore<T>, left: &Image, right: &Image) -> Result<Vec<(Roi3D, f64)>> {
        let Some(rpn) = &self.rpn else { return Ok(Vec::new()) };
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let trunk = self.trunk(&mut g, &p, left, right)?;
        let dims = [self.cfg.network.d_max, left.height, left.width];
        let out = rpn.forward(&mut g, &p, trunk.det_volume)?;
        let anchors = generate_anchors(dims, &self.anchors)?;
        let rc = &self.cfg.rois;
        Ok(proposals(g.value(out.cls), g.value(out.reg), &anchors, dims, rc.pre_nms, rc.nms_iou, rc.keep))
    }

    /// Disparity and (when enabled) detections for a full image pair. Images
    /// are edge-padded to a multiple of the anchor stride.
    pub fn infer<T: Scalar>(&self, store: &ParamStore<T>, left: &Image, right: &Image, cam: &Camera) -> Result<Prediction> {
        if (left.width, left.height) != (right.width, right.height) {
            return Err(Error::Invalid("left and right images differ in size".into()));
        }
        let stride = self.cfg.anchors.stride;
        let (w, h) = (left.width, left.height);
        let (pw, ph) = (w.div_ceil(stride) * stride, h.div_ceil(stride) * stride);
        let (pl, pr) = (pad(left, pw, ph)?, pad(right, pw, ph)?);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let trunk = self.trunk(&mut g, &p, &pl, &pr)?;
        let full = DisparityMap::from_tensor(g.value(trunk.pred))?;
        let disparity = full.crop(0, 0, w, h)?;

        let mut detections = Vec::new();
        if let (Some(rpn), Some(header)) = (&self.rpn, &self.header) {
            let dims = [self.cfg.network.d_max, ph, pw];
            let out = rpn.forward(&mut g, &p, trunk.det_volume)?;
            let anchors = generate_anchors(dims, &self.anchors)?;
            let rc = &self.cfg.rois;
            let props = proposals(g.value(out.cls), g.value(out.reg), &anchors, dims, rc.pre_nms, rc.nms_iou, rc.keep);
            for (roi, _) in props {
                let o = self.header_on_roi(&mut g, &p, header, trunk.det_volume, &full, &roi)?;
                let raw: Vec<f64> = g.value(o).data().iter().map(|v| v.as_f64()).collect();
                let b = decode_header(&raw, &roi, cam, &self.prior)?;
                if b.confidence >= rc.min_confidence {
                    detections.push(b);
                }
            }
            detections = nms(&detections, rc.bev_nms_iou);
        }
        Ok(Prediction { disparity, detections })
    }
}

/// Zero mean, unit variance over the whole image.
fn standardize(img: &Image) -> Image {
    let n = img.values.len() as f64;
    let mean = img.values.iter().sum::<f64>() / n;
    let var = img.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / var.sqrt().max(1e-6);
    Image { values: img.values.iter().map(|v| (v - mean) * scale).collect(), ..img.clone() }
}

fn pad(img: &Image, pw: usize, ph: usize) -> Result<Image> {
    if (img.width, img.height) == (pw, ph) {
        return Ok(img.clone());
    }
    let mut v = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        for x in 0..pw {
            v.push(img.get(x.min(img.width - 1), y.min(img.height - 1)));
        }
    }
    Image::dense(pw, ph, v)
}

/// Random shift and scale of a RoI by up to `amount` of its extent.
fn jitter<R: Rng + ?Sized>(r: &Roi3D, amount: f64, rng: &mut R) -> Roi3D {
    let (c, e) = (r.center(), r.extent());
    let mut jc = c;
    let mut je = e;
    if amount > 0.0 {
        for a in 0..3 {
            jc[a] += rng.random_range(-amount..amount) * e[a];
            je[a] *= rng.random_range(-amount..amount).exp();
        }
    }
    Roi3D::from_center(jc, je).unwrap_or(*r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AblationFlags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(method: u8) -> PipelineConfig {
        let mut cfg = PipelineConfig::for_method(method).unwrap();
        cfg.network.d_max = 16;
        cfg.network.feature_channels = 4;
        cfg.network.feature_layers = 2;
        cfg.network.refine_channels = 3;
        cfg.network.refine_layers = 1;
        cfg.network.rpn_channels = 4;
        cfg.network.header_channels = 4;
        cfg.network.roi_grid = 8;
        cfg.rois.train_rois = 3;
        cfg.train.crop = [32, 48];
        cfg
    }

    fn sample() -> Sample {
        let cam = Camera::centered(200.0, 0.5, 48, 32).unwrap();
        let img = |s: f64| Image::dense(48, 32, (0..48 * 32).map(|i| ((i as f64 * s).sin() + 1.0) / 2.0).collect()).unwrap();
        let gt = DisparityMap::dense(48, 32, vec![8.0; 48 * 32]).unwrap();
        let obj = ObjectBox::new([0.0, 0.2, 12.0], [1.7, 1.5, 4.0], -1.5, 1.0).unwrap();
        Sample { left: img(0.37), right: img(0.41), gt, camera: cam, objects: vec![obj] }
    }

    #[test]
    fn every_method_trains_and_infers() {
        for m in AblationFlags::METHODS {
            let cfg = tiny_cfg(m);
            let model = Model::new(&cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = model.init_params::<f64, _>(&mut rng).unwrap();
            let s = sample();
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let l = model.train_forward(&mut g, &p, &s, &mut rng).unwrap();
            assert!(l.total_value.is_finite());
            assert_eq!(l.rpn > 0.0, cfg.flags.rpn_on, "method {m}");
            assert_eq!(l.header > 0.0, cfg.flags.header_on, "method {m}");
            g.backward(l.total).unwrap();
            store.collect_grads(&mut g, &p);
            store.optimizer_step(1e-3).unwrap();
            let pred = model.infer(&store, &s.left, &s.right, &s.camera).unwrap();
            assert_eq!((pred.disparity.width, pred.disparity.height), (48, 32));
        }
    }

    #[test]
    fn inference_pads_odd_sizes() {
        let model = Model::new(&tiny_cfg(5)).unwrap();
        let store = model.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = Image::dense(37, 21, (0..37 * 21).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let cam = Camera::centered(200.0, 0.5, 37, 21).unwrap();
        let pred = model.infer(&store, &img, &img, &cam).unwrap();
        assert_eq!((pred.disparity.width, pred.disparity.height), (37, 21));
    }
}
