//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use somnet::checks::{format_table, run_suite};
use somnet::config::PipelineConfig;
use somnet::detection::{average_precision, bev_iou, total_loss_value, DetectionLabelSet, Difficulty, IouMode, LabeledBox, ObjectBox};
use somnet::diff::{Graph, Producer, Tensor};
use somnet::disparity::{depth_metrics, soft_argmax_values, DisparityMap, Map, StereoGeometry};
use somnet::io::calib::{format_calib, parse_calib};
use somnet::io::pfm::{decode_pfm, encode_pfm};
use somnet::model::Model;
use somnet::occupancy::{back_project, extract_roi2d_values};
use somnet::roi::{deep_sample, roi_select, selective_mask, Roi3D, SampleMode};
use somnet::synth::{make_dataset, RenderedScene, SynthConfig};
use somnet::train::{depth_metrics_all, disparity_rmse, predict_all, train, visible_gt, window_means, LossRow};
use somnet::camera::Camera;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let rows = run_suite(10, 2024).expect("suite runs");
    let secs = start.elapsed().as_secs_f64();
    eprint!("{}", format_table(&rows));
    let all = rows.iter().all(|r| r.pass() && r.instances >= 10);
    let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    outcome("gradient suite", all && secs < 120.0, format!("{} checks, worst rel err {worst:.2e}, {secs:.1}s", rows.len()))
}

fn soft_argmax_exactness() -> Outcome {
    let d = 48;
    let column = |logits: Vec<f64>| soft_argmax_values(&Tensor::from_vec(&[logits.len(), 1, 1], logits).unwrap()).unwrap().data()[0];
    let mut worst_hot = 0.0f64;
    for hot in 0..d {
        let mut l = vec![0.0; d];
        l[hot] = 50.0;
        worst_hot = worst_hot.max((column(l) - hot as f64).abs());
    }
    let uniform = column(vec![0.3; d]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cols = 10_000;
    let logits = Tensor::from_fn(&[d, 1, cols], |_| rng.random_range(-20.0..20.0));
    let out = soft_argmax_values(&logits).unwrap();
    let bounded = out.data().iter().all(|&x| (0.0..=(d - 1) as f64).contains(&x));
    let pass = worst_hot <= 1e-3 && uniform == (d as f64 - 1.0) / 2.0 && bounded;
    outcome("soft-argmax exactness", pass, format!("one-hot err {worst_hot:.1e}, uniform {uniform}, bound holds on {cols} columns: {bounded}"))
}

fn selective_gradient() -> Outcome {
    let (s, dims) = (8, [12usize, 10, 14]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut masked_zero = true;
    let mut worst = 0.0f64;
    let mut masked = 0;
    for _ in 0..20 {
        let vol = Tensor::from_fn(&[3, dims[0], dims[1], dims[2]], |_| rng.random_range(-1.0..1.0));
        let roi = Roi3D::new([1.3, 0.8, 2.1], [11.7, 8.6, 9.4]).unwrap();
        let disp = Map::dense(dims[2], dims[1], (0..dims[1] * dims[2]).map(|_| rng.random_range(0.0..12.0)).collect()).unwrap();
        let weights = Tensor::from_fn(&[3, s, s, s], |_| rng.random_range(-1.0..1.0));
        let mask = selective_mask(&roi, &disp, s, 1.0);
        masked += mask.iter().filter(|m| !**m).count();

        // Selective path: gradient at the deep-sampled features and at the volume.
        let mut g = Graph::<f64>::new();
        let v = g.variable(vol.clone());
        let sel = roi_select(&mut g, v, &roi, Some(&disp), SampleMode::Selective, s, 1.0).unwrap();
        let w = g.constant(weights.clone());
        let prod = g.mul(sel.features, w).unwrap();
        let root = g.sum(prod).unwrap();
        g.backward(root).unwrap();
        let gv_sel = g.grad(v).unwrap().clone();
        // Replay the masking op on a leaf copy of its input to read the pre-mask gradient.
        let (op, inputs) = match &g.node(sel.features).producer {
            Producer::Op { op, inputs } => (op.clone(), inputs.clone()),
            Producer::Leaf => unreachable!("selective features come from a mask"),
        };
        let mut h = Graph::<f64>::new();
        let pre = h.variable(g.value(inputs[0]).clone());
        let mut args = vec![pre];
        args.extend(inputs[1..].iter().map(|&i| h.constant(g.value(i).clone())));
        let out = h.apply(op, &args).unwrap();
        assert_eq!(h.value(out), g.value(sel.features));
        let w = h.constant(weights.clone());
        let prod = h.mul(out, w).unwrap();
        let root = h.sum(prod).unwrap();
        h.backward(root).unwrap();
        let gp = h.grad(pre).unwrap();
        for c in 0..3 {
            for (k, &m) in mask.iter().enumerate() {
                if !m && gp.data()[c * s * s * s + k] != 0.0 {
                    masked_zero = false;
                }
            }
        }

        // Deep path with the masked weights zeroed gives the reference.
        let wm = Tensor::from_fn(&[3, s, s, s], |i| if mask[i % (s * s * s)] { weights.data()[i] } else { 0.0 });
        let mut g = Graph::<f64>::new();
        let v = g.variable(vol);
        let deep = deep_sample(&mut g, v, &roi, s).unwrap();
        let w = g.constant(wm);
        let prod = g.mul(deep.features, w).unwrap();
        let root = g.sum(prod).unwrap();
        g.backward(root).unwrap();
        let gv_deep = g.grad(v).unwrap();
        for (a, b) in gv_sel.data().iter().zip(gv_deep.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        "selective-gradient contract",
        masked_zero && worst <= 1e-10 && masked > 0,
        format!("masked grads exactly zero: {masked_zero} ({masked} masked points), unmasked max diff {worst:.1e}"),
    )
}

fn occupancy_coherence() -> Outcome {
    let s = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut agree, mut total) = (0usize, 0usize);
    for _ in 0..50 {
        // Columns land on whole pixels; each column's disparity is a cell center.
        let u0 = rng.random_range(2..20) as f64;
        let v0 = rng.random_range(2..10) as f64;
        let lo = rng.random_range(3.0..20.0);
        let hi = lo + rng.random_range(2.0..12.0);
        let roi = Roi3D::new([u0 - 0.5, v0 - 0.5, lo], [u0 - 0.5 + s as f64, v0 - 0.5 + s as f64, hi]).unwrap();
        let cell = (hi - lo) / s as f64;
        let (w, h) = (48, 32);
        let slope = rng.random_range(-0.5..0.5);
        let base = rng.random_range(0.0..s as f64);
        let mut values = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let k = if rng.random_bool(0.2) {
                    rng.random_range(-2..s as i64 + 2)
                } else {
                    (base + slope * (x as f64 - u0)).floor() as i64
                };
                values[y * w + x] = lo + (k as f64 + 0.5) * cell;
            }
        }
        let disp = Map::dense(w, h, values).unwrap();
        let occ = back_project(&extract_roi2d_values(&disp, &roi, s).unwrap(), &roi, s).unwrap();
        let sel = selective_mask(&roi, &disp, s, 0.5 * cell);
        for col in 0..s * s {
            total += 1;
            agree += usize::from((0..s).all(|k| (occ.grid[k * s * s + col] == 1) == sel[k * s * s + col]));
        }
    }
    let frac = agree as f64 / total as f64;
    outcome("occupancy/selective coherence", frac >= 0.95, format!("{agree}/{total} columns agree ({:.2}%)", 100.0 * frac))
}

/// Stratified sampling over the union's bounding rectangle: one jittered
/// point per cell of a 1000 x 1000 grid.
fn monte_carlo_iou(a: &ObjectBox, b: &ObjectBox, rng: &mut ChaCha8Rng) -> f64 {
    let inside = |o: &ObjectBox, x: f64, z: f64| {
        let (dx, dz) = (x - o.center[0], z - o.center[2]);
        let (s, c) = o.yaw.sin_cos();
        let along = dx * c - dz * s;
        let across = dx * s + dz * c;
        along.abs() <= 0.5 * o.size[2] && across.abs() <= 0.5 * o.size[0]
    };
    let r = |o: &ObjectBox| 0.5 * o.size[0].hypot(o.size[2]);
    let x0 = (a.center[0] - r(a)).min(b.center[0] - r(b));
    let x1 = (a.center[0] + r(a)).max(b.center[0] + r(b));
    let z0 = (a.center[2] - r(a)).min(b.center[2] - r(b));
    let z1 = (a.center[2] + r(a)).max(b.center[2] + r(b));
    let n = 1000;
    let (mut both, mut either) = (0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (x1 - x0) * (i as f64 + rng.random::<f64>()) / n as f64;
            let z = z0 + (z1 - z0) * (j as f64 + rng.random::<f64>()) / n as f64;
            let (ia, ib) = (inside(a, x, z), inside(b, x, z));
            both += u64::from(ia && ib);
            either += u64::from(ia || ib);
        }
    }
    both as f64 / either as f64
}

fn iou_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let random_box = |rng: &mut ChaCha8Rng, near: Option<[f64; 3]>| {
            let c = match near {
                Some(c) => [c[0] + rng.random_range(-2.0..2.0), c[1], c[2] + rng.random_range(-3.0..3.0)],
                None => [rng.random_range(-5.0..5.0), 1.0, rng.random_range(10.0..30.0)],
            };
            let size = [rng.random_range(1.0..2.5), 1.5, rng.random_range(2.0..5.0)];
            ObjectBox::new(c, size, rng.random_range(-3.1..3.1), 1.0).unwrap()
        };
        let a = random_box(&mut rng, None);
        let b = random_box(&mut rng, Some(a.center));
        let exact = bev_iou(&a, &b);
        let mc = monte_carlo_iou(&a, &b, &mut rng);
        worst = worst.max((exact - mc).abs());
    }
    let a = ObjectBox::new([1.0, 1.0, 15.0], [1.7, 1.5, 4.0], 0.4, 1.0).unwrap();
    let far = ObjectBox::new([9.0, 1.0, 15.0], [1.7, 1.5, 4.0], -0.4, 1.0).unwrap();
    let exact_cases = bev_iou(&a, &a) == 1.0 && bev_iou(&a, &far) == 0.0;
    outcome("IoU oracle equivalence", worst <= 2e-3 && exact_cases, format!("max |exact - oracle| {worst:.2e} over 200 pairs, identity/disjoint exact: {exact_cases}"))
}

/// Configuration of the toy ablation runs.
fn toy_config(method: u8) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_method(method).unwrap();
    cfg.seed = 7;
    cfg
}

struct ToyRun {
    rows: Vec<LossRow>,
    rmse: f64,
    depth_rmse: f64,
    dets: Vec<Vec<ObjectBox>>,
    secs: f64,
}

fn toy_run(method: u8, train_set: &[RenderedScene], held: &[RenderedScene], gts: &[DisparityMap], geom: &StereoGeometry) -> (f64, ToyRun) {
    let cfg = toy_config(method);
    let model = Model::new(&cfg).unwrap();
    let mut store = model.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let eval = |store: &somnet::diff::ParamStore<f32>| {
        let preds = predict_all(&model, store, held).unwrap();
        let d: Vec<DisparityMap> = preds.iter().map(|p| p.disparity.clone()).collect();
        let rmse = disparity_rmse(&d, gts).unwrap();
        let depth = depth_metrics_all(&d, gts, geom).unwrap().rmse;
        (rmse, depth, preds.into_iter().map(|p| p.detections).collect::<Vec<_>>())
    };
    let (untrained, _, _) = eval(&store);
    let start = Instant::now();
    let rows = train(&model, &mut store, train_set, |_, _| Ok(())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (rmse, depth_rmse, dets) = eval(&store);
    eprintln!("method {method}: untrained rmse {untrained:.3}, trained rmse {rmse:.3}, depth rmse {depth_rmse:.3}, {secs:.0}s");
    (untrained, ToyRun { rows, rmse, depth_rmse, dets, secs })
}

/// Window means fall strictly until the first window within 25% of the
/// settled level (mean of the last quarter of windows); later windows count
/// as plateau.
fn decreasing_to_plateau(rows: &[LossRow]) -> (bool, Vec<f64>) {
    let m = window_means(rows, 50);
    if m.len() < 2 {
        return (false, m);
    }
    let tail = &m[m.len() - (m.len() / 4).max(1)..];
    let settled = tail.iter().sum::<f64>() / tail.len() as f64;
    let onset = m.iter().position(|&x| x <= 1.25 * settled).unwrap_or(m.len() - 1);
    (m[..=onset].windows(2).all(|w| w[1] < w[0]), m)
}

fn main() {
    let mut results = vec![gradient_suite(), soft_argmax_exactness(), selective_gradient(), occupancy_coherence(), iou_oracle()];

    let synth = SynthConfig::default();
    let train_set: Vec<RenderedScene> = make_dataset(32, 101, &synth).unwrap().into_iter().map(|p| p.1).collect();
    let held: Vec<RenderedScene> = make_dataset(8, 202, &synth).unwrap().into_iter().map(|p| p.1).collect();
    let gts: Vec<DisparityMap> = held.iter().map(|s| visible_gt(s).unwrap()).collect();
    let geom = StereoGeometry::new(synth.focal, synth.baseline).unwrap();
    let (u1, m1) = toy_run(1, &train_set, &held, &gts, &geom);
    let (u5, m5) = toy_run(5, &train_set, &held, &gts, &geom);
    let (mono1, w1) = decreasing_to_plateau(&m1.rows);
    let (mono5, w5) = decreasing_to_plateau(&m5.rows);
    eprintln!("method 1 windows {w1:.3?}");
    eprintln!("method 5 windows {w5:.3?}");
    let (r1, r5) = (u1 / m1.rmse, u5 / m5.rmse);
    let secs = m1.secs + m5.secs;
    let pass = mono1 && mono5 && r1 >= 5.0 && r5 >= 5.0 && m5.depth_rmse <= m1.depth_rmse && secs < 1800.0;
    results.push(outcome(
        "toy training",
        pass,
        format!(
            "monotone to plateau {mono1}/{mono5}; rmse gain {r1:.2}x/{r5:.2}x; depth rmse M5 {:.3} vs M1 {:.3}; {:.0}s",
            m5.depth_rmse, m1.depth_rmse, secs
        ),
    ));

    let labels: Vec<DetectionLabelSet> = held.iter().map(|s| s.labels.clone()).collect();
    let ap = average_precision(&m5.dets, &labels, 0.7, IouMode::Bev);
    let hand = ap_hand_cases();
    results.push(outcome("detection sanity", ap[&Difficulty::Easy] > 0.5 && hand, format!("AP_BEV@0.7 {ap:.3?}; hand-built AP cases: {hand}")));

    results.push(metric_definitions());
    results.push(format_round_trips());

    eprintln!();
    for r in &results {
        eprintln!("[{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().any(|r| !r.pass) {
        std::process::exit(1);
    }
}

fn ap_hand_cases() -> bool {
    let gt = ObjectBox::new([0.0, 1.0, 12.0], [1.7, 1.5, 4.0], -1.4, 1.0).unwrap();
    let labels = vec![DetectionLabelSet::new(vec![LabeledBox { object: gt, difficulty: Difficulty::Easy }]).unwrap()];
    let perfect = average_precision(&[vec![gt]], &labels, 0.7, IouMode::Bev)[&Difficulty::Easy] == 1.0;
    let none = average_precision(&[vec![]], &labels, 0.7, IouMode::Bev)[&Difficulty::Easy] == 0.0;
    let mut wrong = ObjectBox::new([6.0, 1.0, 20.0], [1.7, 1.5, 4.0], -1.4, 0.4).unwrap();
    wrong.confidence = 0.4;
    let right = ObjectBox { confidence: 0.9, ..gt };
    let ordered = average_precision(&[vec![right, wrong]], &labels, 0.7, IouMode::Bev)[&Difficulty::Easy] == 1.0;
    perfect && none && ordered
}

fn metric_definitions() -> Outcome {
    let gt = Map::dense(1, 1, vec![2.0]).unwrap();
    let pred = Map::dense(1, 1, vec![1.0]).unwrap();
    let m = depth_metrics(&pred, &gt).unwrap();
    let triple = (m.abs_rel, m.sq_rel, m.rmse) == (0.5, 0.5, 1.0);
    let gtn = Map::dense(3, 1, vec![5.0, 10.0, 20.0]).unwrap();
    let z = depth_metrics(&gtn, &gtn).unwrap();
    let zero = (z.abs_rel, z.sq_rel, z.rmse) == (0.0, 0.0, 0.0);
    let total = total_loss_value(1.0, 1.0, 1.0).unwrap();
    outcome("metric definitions", triple && zero && total == 4.0, format!("single pixel {:?}, perfect zero {zero}, total_loss(1,1,1) = {total}", (m.abs_rel, m.sq_rel, m.rmse)))
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_somnet")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_pipeline(root: &Path) -> (bool, Vec<(String, Vec<u8>)>, Vec<u8>) {
    let p = |s: &str| root.join(s).display().to_string();
    let cfg = root.join("cfg.toml");
    let mut c = PipelineConfig::default();
    c.train.steps = 4;
    c.save(&cfg).unwrap();
    let mut ok = run_cli(&["synth", "--out", &p("data"), "--count", "2", "--seed", "3"]);
    ok &= run_cli(&["train", "--data", &p("data"), "--out", &p("run"), "--config", &p("cfg.toml"), "--method", "5"]);
    ok &= run_cli(&["match", "--checkpoint", &p("run/checkpoint.json"), "--data", &p("data"), "--out", &p("pred"), "--detections"]);
    let depth = Command::new(env!("CARGO_BIN_EXE_somnet")).args(["eval-depth", "--pred", &p("pred"), "--gt", &p("data")]).output().unwrap();
    ok &= depth.status.success();
    ok &= run_cli(&["eval-det", "--pred", &p("pred"), "--gt", &p("data")]);
    (ok, dir_bytes(root), depth.stdout)
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pfm_ok = true;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..30));
        let vals: Vec<f64> = (0..w * h).map(|_| f64::from(rng.random_range(-1e4f32..1e4))).collect();
        let m = Map::dense(w, h, vals).unwrap();
        let back = decode_pfm(&encode_pfm(&m)).unwrap();
        pfm_ok &= back.values.iter().zip(&m.values).all(|(a, b)| a.to_bits() == b.to_bits()) && back.valid == m.valid;
    }
    let cam = Camera::centered(200.0, 0.5, 256, 128).unwrap();
    let calib = parse_calib(&format_calib(&cam)).unwrap();
    let calib_ok = calib.focal == 200.0 && calib.baseline == 0.5;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ok_a, files_a, depth_a) = cli_pipeline(a.path());
    let (ok_b, files_b, depth_b) = cli_pipeline(b.path());
    // Saved configs embed nothing path-dependent, so whole trees compare.
    let same = files_a == files_b && depth_a == depth_b;
    outcome(
        "format round-trips",
        pfm_ok && calib_ok && ok_a && ok_b && same,
        format!("PFM bit-exact on 100 maps: {pfm_ok}; calib (f, b) exact: {calib_ok}; CLI exits 0: {}; reproducible: {same} ({} files)", ok_a && ok_b, files_a.len()),
    )
}
