//! Randomized finite-difference suite over every catalog primitive and the
//! composite stages of the pipeline.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detection::{header_loss, rpn_loss, total_loss, Header, Rpn, RpnTargets};
use crate::diff::{check_composite, finite_diff_check, Bound, CheckOptions, ConvAttrs, NodeId, Op, PadMode, ParamStore, PrimitiveKind, SampleGrid, Tensor};
use crate::disparity::{soft_argmax, Map};
use crate::error::Result;
use crate::occupancy::{back_project, extract_roi2d_values, fuse, fuse_2d};
use crate::roi::{roi_select, Roi3D, SampleMode};

pub const COMPOSITES: [&str; 6] = ["soft_argmax-aggregate", "roi_select", "fuse", "rpn-head", "header-head", "total_loss"];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub instances: usize,
    pub passed: usize,
    pub max_rel_err: f64,
    pub excluded: usize,
}

impl SuiteRow {
    pub fn pass(&self) -> bool {
        self.passed == self.instances
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rand_mask(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(0.6) { 1.0 } else { 0.0 })
}

fn rand_points(rng: &mut ChaCha8Rng, n: usize, dims: [usize; 3]) -> Vec<[f64; 3]> {
    // (u, v, d) within the volume, some slightly outside to exercise clamping.
    let [d, h, w] = dims;
    (0..n)
        .map(|_| {
            [
                rng.random_range(-0.3..w as f64 - 0.7),
                rng.random_range(-0.3..h as f64 - 0.7),
                rng.random_range(-0.3..d as f64 - 0.7),
            ]
        })
        .collect()
}

/// A random instance of one primitive: the op and its inputs.
pub fn primitive_case(kind: PrimitiveKind, rng: &mut ChaCha8Rng) -> Result<(Op, Vec<Tensor<f64>>)> {
    let pad_mode = if rng.random_bool(0.5) { PadMode::Zero } else { PadMode::Replicate };
    Ok(match kind {
        PrimitiveKind::Conv2d => {
            let k = [1, 3][rng.random_range(0..2)];
            let attrs = ConvAttrs { stride: rng.random_range(1..3), padding: rng.random_range(0..=k / 2), pad_mode };
            let (c, o) = (rng.random_range(1..3), rng.random_range(1..3));
            let x = rand_t(rng, &[c, 5, 6]);
            (Op::Conv2d(attrs), vec![x, rand_t(rng, &[o, c, k, k]), rand_t(rng, &[o])])
        }
        PrimitiveKind::Conv3d => {
            let k = [1, 2, 3][rng.random_range(0..3)];
            let attrs = ConvAttrs { stride: rng.random_range(1..3), padding: rng.random_range(0..=k / 2), pad_mode };
            let (c, o) = (rng.random_range(1..3), rng.random_range(1..3));
            let x = rand_t(rng, &[c, 4, 4, 5]);
            (Op::Conv3d(attrs), vec![x, rand_t(rng, &[o, c, k, k, k]), rand_t(rng, &[o])])
        }
        PrimitiveKind::Relu => (Op::Relu, vec![rand_t(rng, &[3, 7])]),
        PrimitiveKind::Linear => {
            if rng.random_bool(0.5) {
                (Op::Linear { flatten: true }, vec![rand_t(rng, &[2, 3, 2]), rand_t(rng, &[3, 12]), rand_t(rng, &[3])])
            } else {
                (Op::Linear { flatten: false }, vec![rand_t(rng, &[3, 4]), rand_t(rng, &[2, 4]), rand_t(rng, &[2])])
            }
        }
        PrimitiveKind::SoftmaxAxis => (Op::SoftmaxAxis { axis: rng.random_range(0..3) }, vec![rand_t(rng, &[3, 4, 5])]),
        PrimitiveKind::WeightedIndexSum => {
            (Op::WeightedIndexSum { axis: rng.random_range(0..3) }, vec![rand_t(rng, &[3, 4, 5])])
        }
        PrimitiveKind::InstanceNorm => {
            let x = rand_t(rng, &[2, 3, 4, 5]);
            if rng.random_bool(0.5) {
                let mut m = rand_mask(rng, &[3, 4, 5]);
                m.data_mut()[..3].fill(1.0);
                (Op::InstanceNorm { eps: 1e-5 }, vec![x, m])
            } else {
                (Op::InstanceNorm { eps: 1e-5 }, vec![x])
            }
        }
        PrimitiveKind::ConcatAxis => {
            let axis = rng.random_range(0..3);
            let mut shape = [2, 3, 4];
            let parts = rng.random_range(1..4);
            let xs = (0..parts)
                .map(|_| {
                    shape[axis] = rng.random_range(1..4);
                    rand_t(rng, &shape)
                })
                .collect();
            (Op::ConcatAxis { axis }, xs)
        }
        PrimitiveKind::Add => (Op::Add, vec![rand_t(rng, &[4, 5]), rand_t(rng, &[4, 5])]),
        PrimitiveKind::Mul => (Op::Mul, vec![rand_t(rng, &[4, 5]), rand_t(rng, &[4, 5])]),
        PrimitiveKind::Sum => (Op::Sum, vec![rand_t(rng, &[3, 4, 2])]),
        PrimitiveKind::SmoothL1 => {
            let beta = [0.0, 0.5, 1.0][rng.random_range(0..3)];
            let op = Op::SmoothL1 { beta, scale: rng.random_range(0.5..2.0) };
            let mut xs = vec![rand_t(rng, &[12]), rand_t(rng, &[12])];
            if rng.random_bool(0.5) {
                xs.push(Tensor::from_fn(&[12], |_| rng.random_range(0.0..1.0)));
            }
            (op, xs)
        }
        PrimitiveKind::BceWithLogits => {
            let op = Op::BceWithLogits { scale: rng.random_range(0.5..2.0) };
            let logits = Tensor::from_fn(&[12], |_| rng.random_range(-4.0..4.0));
            let targets = Tensor::from_fn(&[12], |_| rng.random_range(0.0..1.0));
            let mut xs = vec![logits, targets];
            if rng.random_bool(0.5) {
                xs.push(Tensor::from_fn(&[12], |_| rng.random_range(0.0..1.0)));
            }
            (op, xs)
        }
        PrimitiveKind::TrilinearSample | PrimitiveKind::CubicDSample => {
            let dims = [6, 4, 5];
            let grid = Arc::new(SampleGrid::new(rand_points(rng, 8, dims), vec![2, 4])?);
            let x = rand_t(rng, &[2, 6, 4, 5]);
            let op = if kind == PrimitiveKind::TrilinearSample { Op::TrilinearSample(grid) } else { Op::CubicDSample(grid) };
            (op, vec![x])
        }
        PrimitiveKind::MaskZero => {
            let x = rand_t(rng, &[2, 3, 4]);
            let m = if rng.random_bool(0.5) { rand_mask(rng, &[2, 3, 4]) } else { rand_mask(rng, &[3, 4]) };
            (Op::MaskZero, vec![x, m])
        }
        PrimitiveKind::ShiftConcat => {
            let levels = rng.random_range(1..5);
            (Op::ShiftConcat { levels }, vec![rand_t(rng, &[2, 3, 5]), rand_t(rng, &[2, 3, 5])])
        }
    })
}

fn summarize(name: &str, reports: &[crate::diff::GradReport]) -> SuiteRow {
    SuiteRow {
        name: name.to_string(),
        instances: reports.len(),
        passed: reports.iter().filter(|r| r.pass).count(),
        max_rel_err: reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max),
        excluded: reports.iter().map(|r| r.excluded()).sum(),
    }
}

fn options(seed: u64) -> CheckOptions {
    CheckOptions { seed, ..CheckOptions::default() }
}

pub fn run_primitive(kind: PrimitiveKind, instances: usize, seed: u64) -> Result<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(instances);
    for i in 0..instances {
        let (op, xs) = primitive_case(kind, &mut rng)?;
        reports.push(finite_diff_check(&op, &xs, &options(seed.wrapping_add(i as u64)))?);
    }
    Ok(summarize(kind.name(), &reports))
}

/// Appends the parameter tensors of `store` to `inputs`; returns the names and
/// the index of the first parameter.
fn with_params(store: &ParamStore<f64>, mut inputs: Vec<Tensor<f64>>) -> (Vec<Tensor<f64>>, Vec<String>, usize) {
    let first = inputs.len();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for (_, p) in store.iter() {
        inputs.push(p.value.clone());
    }
    (inputs, names, first)
}

fn bound(names: &[String], ids: &[NodeId]) -> Bound {
    names.iter().cloned().zip(ids.iter().copied()).collect()
}

fn random_roi(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Result<Roi3D> {
    let [d, h, w] = dims;
    let ext = [rng.random_range(1.5..w as f64 - 1.5), rng.random_range(1.5..h as f64 - 1.5), rng.random_range(1.5..d as f64 - 1.5)];
    let lim = [w as f64 - 1.0, h as f64 - 1.0, d as f64 - 1.0];
    let c: Vec<f64> = (0..3).map(|a| rng.random_range(ext[a] / 2.0..lim[a] - ext[a] / 2.0)).collect();
    Roi3D::from_center([c[0], c[1], c[2]], ext)
}

fn random_disp(rng: &mut ChaCha8Rng, roi: &Roi3D, w: usize, h: usize) -> Result<Map> {
    let (lo, hi) = (roi.p_min[2], roi.p_max[2]);
    Map::dense(w, h, (0..w * h).map(|_| rng.random_range(lo - 1.0..hi + 1.0)).collect())
}

pub fn composite_case(name: &str, i: usize, rng: &mut ChaCha8Rng, opts: &CheckOptions) -> Result<crate::diff::GradReport> {
    match name {
        "soft_argmax-aggregate" => {
            let xs = vec![rand_t(rng, &[2, 5, 3, 4]), rand_t(rng, &[1, 2, 3, 3, 3]), rand_t(rng, &[1])];
            check_composite(&xs, &[true; 3], opts, |g, ids| {
                let a = g.conv3d(ids[0], ids[1], ids[2], ConvAttrs::same(3, PadMode::Zero))?;
                soft_argmax(g, a)
            })
        }
        "roi_select" => {
            let dims = [7, 5, 6];
            let roi = random_roi(rng, dims)?;
            let disp = random_disp(rng, &roi, dims[2], dims[1])?;
            let mode = [SampleMode::Trilinear, SampleMode::Deep, SampleMode::Selective][i % 3];
            let xs = vec![rand_t(rng, &[2, 7, 5, 6])];
            check_composite(&xs, &[true], opts, |g, ids| Ok(roi_select(g, ids[0], &roi, Some(&disp), mode, 3, 1.0)?.features))
        }
        "fuse" => {
            let dims = [7, 5, 6];
            let roi = random_roi(rng, dims)?;
            let disp = random_disp(rng, &roi, dims[2], dims[1])?;
            let s = 3;
            let r2d = extract_roi2d_values(&disp, &roi, s)?;
            let occ = back_project(&r2d, &roi, s)?;
            let mode = if i.is_multiple_of(2) { SampleMode::Selective } else { SampleMode::Deep };
            let two_d = i % 4 >= 2;
            let xs = vec![rand_t(rng, &[2, 7, 5, 6])];
            check_composite(&xs, &[true], opts, |g, ids| {
                let r = roi_select(g, ids[0], &roi, Some(&disp), mode, s, 1.0)?;
                if two_d { fuse_2d(g, &r, &r2d) } else { fuse(g, &r, &occ) }
            })
        }
        "rpn-head" => {
            let rpn = Rpn { in_channels: 2, channels: 2, stride: 2, anchors_per_cell: 2 };
            let mut store = ParamStore::default();
            rpn.init(&mut store, rng)?;
            let (xs, names, first) = with_params(&store, vec![rand_t(rng, &[2, 4, 4, 4])]);
            let n = 2 * 8;
            let t = RpnTargets {
                cls_target: Tensor::from_fn(&[2, 2, 2, 2], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }),
                cls_weight: Tensor::from_fn(&[2, 2, 2, 2], |_| rng.random_range(0.0..0.2)),
                reg_target: rand_t(rng, &[12, 2, 2, 2]),
                reg_weight: Tensor::from_fn(&[12, 2, 2, 2], |_| if rng.random_bool(0.3) { 0.25 } else { 0.0 }),
                positives: 1,
                negatives: n - 1,
            };
            check_composite(&xs, &vec![true; xs.len()], opts, |g, ids| {
                let p = bound(&names, &ids[first..]);
                let out = rpn.forward(g, &p, ids[0])?;
                Ok(rpn_loss(g, &out, &t)?.0)
            })
        }
        "header-head" => {
            let head = Header { in_channels: 2, channels: 2, grid: 4 };
            let mut store = ParamStore::default();
            head.init(&mut store, rng)?;
            let (xs, names, first) = with_params(&store, vec![rand_t(rng, &[2, 4, 4, 4])]);
            let target: Option<[f64; 8]> = if i.is_multiple_of(2) { Some(std::array::from_fn(|_| rng.random_range(-1.0..1.0))) } else { None };
            check_composite(&xs, &vec![true; xs.len()], opts, |g, ids| {
                let p = bound(&names, &ids[first..]);
                let out = head.forward(g, &p, ids[0])?;
                header_loss(g, out, target.as_ref(), 2.0)
            })
        }
        _ => {
            let xs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[1], |_| rng.random_range(0.1..5.0))).collect();
            let (rpn_on, head_on) = (i % 4 != 3, i % 4 < 2);
            check_composite(&xs, &[true; 3], opts, |g, ids| total_loss(g, ids[0], rpn_on.then_some(ids[1]), head_on.then_some(ids[2])))
        }
    }
}

pub fn run_composite(name: &str, instances: usize, seed: u64) -> Result<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = (0..instances)
        .map(|i| composite_case(name, i, &mut rng, &options(seed.wrapping_add(i as u64))))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(name, &reports))
}

/// Every primitive followed by every composite.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for (k, kind) in PrimitiveKind::ALL.into_iter().enumerate() {
        rows.push(run_primitive(kind, instances, seed.wrapping_add(1000 * k as u64))?);
    }
    for (k, name) in COMPOSITES.iter().enumerate() {
        rows.push(run_composite(name, instances, seed.wrapping_add(1000 * (k + 100) as u64))?);
    }
    Ok(rows)
}

pub fn format_table(rows: &[SuiteRow]) -> String {
    let mut s = format!("{:<24} {:>9} {:>7} {:>12} {:>8}  result\n", "name", "instances", "passed", "max_rel_err", "excluded");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>9} {:>7} {:>12.3e} {:>8}  {}",
            r.name,
            r.instances,
            r.passed,
            r.max_rel_err,
            r.excluded,
            if r.pass() { "PASS" } else { "FAIL" }
        );
    }
    s
}
