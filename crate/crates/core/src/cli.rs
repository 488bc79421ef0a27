//! Command-line surface: `somnet <subcommand> [flags]`.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checks::{format_table, run_suite};
use crate::config::PipelineConfig;
use crate::detection::{average_precision, Difficulty, IouMode};
use crate::disparity::{DisparityMap, StereoGeometry};
use crate::error::{Error, Result};
use crate::io::dataset::{list_scenes, read_dataset, scene_dir, write_scene, SCENES_DIR};
use crate::io::calib::read_calib;
use crate::io::labels::{read_detections, read_labels, write_detections};
use crate::io::pfm::{read_pfm, write_pfm};
use crate::io::pgm::read_mask;
use crate::model::Model;
use crate::synth::{make_dataset, RenderedScene};
use crate::train::{self, depth_metrics_all, disparity_rmse, format_loss_row, predict_all, Checkpoint, LOSS_HEADER};

#[derive(Parser, Debug)]
#[command(name = "somnet", version, about = "Stereo matching with cost-volume 3D detection on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on a dataset and write checkpoints plus a loss-curve table.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Estimate disparity (and detections) for every scene of a dataset.
    Match {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write detections as `labels.txt`.
        #[arg(long)]
        detections: bool,
    },
    /// Depth metrics of predicted disparity against ground truth.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Score occluded pixels too.
        #[arg(long)]
        all_pixels: bool,
    },
    /// Average precision (BEV and 3D, IoU 0.7) per difficulty.
    EvalDet {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
    },
    /// Finite-difference check of every primitive and composite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train and evaluate one ablation method end to end.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Training dataset; synthesized when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out dataset; synthesized when absent.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation method 1-9; overrides the flags of the config.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=9))]
    pub method: Option<u8>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.flags = crate::config::AblationFlags::method(m)?;
        }
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run_from<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth { out, count, seed, config } => {
            let cfg = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            synth(&out, count, seed, &cfg)?;
            println!("wrote {count} scenes to {}", out.join(SCENES_DIR).display());
            Ok(0)
        }
        Command::Train { data, out, model } => {
            let cfg = model.resolve()?;
            let scenes = read_dataset(&data)?;
            train_to(&out, &cfg, &scenes)?;
            Ok(0)
        }
        Command::Match { checkpoint, data, out, detections } => {
            let ck = Checkpoint::load(&checkpoint)?;
            match_to(&ck, &data, &out, detections)?;
            Ok(0)
        }
        Command::EvalDepth { pred, gt, all_pixels } => {
            print_depth(&eval_depth(&pred, &gt, all_pixels)?);
            Ok(0)
        }
        Command::EvalDet { pred, gt, iou } => {
            print_det(&eval_det(&pred, &gt, iou)?);
            Ok(0)
        }
        Command::Gradcheck { instances, seed } => {
            let start = std::time::Instant::now();
            let rows = run_suite(instances, seed)?;
            print!("{}", format_table(&rows));
            let ok = rows.iter().all(|r| r.pass());
            println!("gradcheck {} in {:.1}s", if ok { "passed" } else { "FAILED" }, start.elapsed().as_secs_f64());
            Ok(if ok { 0 } else { 1 })
        }
        Command::Ablate { out, data, eval_data, model } => {
            let cfg = model.resolve()?;
            let train_root = match data {
                Some(d) => d,
                None => {
                    let d = out.join("train_data");
                    synth(&d, 32, cfg.seed, &cfg)?;
                    d
                }
            };
            let eval_root = match eval_data {
                Some(d) => d,
                None => {
                    let d = out.join("eval_data");
                    synth(&d, 8, cfg.seed.wrapping_add(1), &cfg)?;
                    d
                }
            };
            let scenes = read_dataset(&train_root)?;
            let ck = train_to(&out.join("train"), &cfg, &scenes)?;
            let pred = out.join("pred");
            match_to(&ck, &eval_root, &pred, true)?;
            println!("method {}", cfg.flags.method_number().map_or("custom".to_string(), |m| m.to_string()));
            print_depth(&eval_depth(&pred, &eval_root, false)?);
            if cfg.flags.header_on {
                print_det(&eval_det(&pred, &eval_root, 0.7)?);
            }
            Ok(0)
        }
    }
}

fn synth(out: &Path, count: usize, seed: u64, cfg: &PipelineConfig) -> Result<()> {
    for (i, (_, scene)) in make_dataset(count, seed, &cfg.synth)?.iter().enumerate() {
        write_scene(&scene_dir(out, i), scene)?;
    }
    Ok(())
}

fn train_to(out: &Path, cfg: &PipelineConfig, scenes: &[RenderedScene]) -> Result<Checkpoint> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.toml"))?;
    let model = Model::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = model.init_params::<f32, _>(&mut rng)?;
    let table = out.join("loss.txt");
    let mut file = OpenOptions::new().create(true).append(true).open(&table).map_err(|e| Error::io(&table, e))?;
    let fresh = file.metadata().map_err(|e| Error::io(&table, e))?.len() == 0;
    if fresh {
        writeln!(file, "{LOSS_HEADER}").map_err(|e| Error::io(&table, e))?;
    }
    let t = &cfg.train;
    train::train(&model, &mut store, scenes, |row, store| {
        writeln!(file, "{}", format_loss_row(row)).map_err(|e| Error::io(&table, e))?;
        if t.log_every > 0 && row.step % t.log_every == 0 {
            eprintln!("step {}", format_loss_row(row));
        }
        if t.checkpoint_every > 0 && (row.step + 1) % t.checkpoint_every == 0 {
            let ck = Checkpoint { config: cfg.clone(), params: store.to_snapshot() };
            ck.save(&out.join(format!("checkpoint_{:06}.json", row.step + 1)))?;
        }
        Ok(())
    })?;
    let ck = Checkpoint { config: cfg.clone(), params: store.to_snapshot() };
    ck.save(&out.join("checkpoint.json"))?;
    Ok(ck)
}

fn match_to(ck: &Checkpoint, data: &Path, out: &Path, detections: bool) -> Result<()> {
    let (model, store) = ck.restore::<f32>()?;
    let dirs = list_scenes(data)?;
    let scenes = dirs.iter().map(|d| crate::io::dataset::read_scene(d)).collect::<Result<Vec<_>>>()?;
    let preds = predict_all(&model, &store, &scenes)?;
    for ((dir, scene), p) in dirs.iter().zip(&scenes).zip(&preds) {
        let name = dir.file_name().ok_or_else(|| Error::Invalid(format!("bad scene path {}", dir.display())))?;
        let target = out.join(SCENES_DIR).join(name);
        write_pfm(&target.join("disp.pfm"), &p.disparity)?;
        if detections {
            write_detections(&target.join("labels.txt"), &p.detections, &scene.camera)?;
        }
    }
    println!("matched {} scenes into {}", scenes.len(), out.join(SCENES_DIR).display());
    Ok(())
}

/// Pairs scene directories of `pred` and `gt` by name.
fn paired(pred: &Path, gt: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    list_scenes(gt)?
        .into_iter()
        .map(|g| {
            let name = g.file_name().map(PathBuf::from).unwrap_or_default();
            let p = pred.join(SCENES_DIR).join(&name);
            if p.is_dir() {
                Ok((p, g))
            } else {
                Err(Error::format(&p, "prediction missing for ground-truth scene"))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub disp_rmse: f64,
    pub pixels: usize,
}

pub fn eval_depth(pred: &Path, gt: &Path, all_pixels: bool) -> Result<DepthReport> {
    let mut preds: Vec<DisparityMap> = Vec::new();
    let mut gts: Vec<DisparityMap> = Vec::new();
    let mut geom: Option<StereoGeometry> = None;
    for (p, g) in paired(pred, gt)? {
        preds.push(read_pfm(&p.join("disp.pfm"))?);
        let mut m = read_pfm(&g.join("disp.pfm"))?;
        if !all_pixels {
            let occ = read_mask(&g.join("occ.pgm"))?;
            if occ.len() != m.valid.len() {
                return Err(Error::format(g.join("occ.pgm"), "mask size differs from disparity"));
            }
            for (v, o) in m.valid.iter_mut().zip(occ) {
                *v &= !o;
            }
        }
        gts.push(m);
        let c = read_calib(&g.join("calib.txt"))?;
        let here = StereoGeometry::new(c.focal, c.baseline)?;
        if geom.is_some_and(|prev| prev != here) {
            return Err(Error::format(g.join("calib.txt"), "scenes differ in focal length or baseline"));
        }
        geom = Some(here);
    }
    let geom = geom.ok_or_else(|| Error::Invalid("no scenes to evaluate".into()))?;
    let m = depth_metrics_all(&preds, &gts, &geom)?;
    Ok(DepthReport { abs_rel: m.abs_rel, sq_rel: m.sq_rel, rmse: m.rmse, disp_rmse: disparity_rmse(&preds, &gts)?, pixels: m.count })
}

fn print_depth(r: &DepthReport) {
    println!("{:<10} {:>12}", "metric", "value");
    for (k, v) in [("abs_rel", r.abs_rel), ("sq_rel", r.sq_rel), ("rmse", r.rmse), ("disp_rmse", r.disp_rmse)] {
        println!("{k:<10} {v:>12.6}");
    }
    println!("{:<10} {:>12}", "pixels", r.pixels);
    println!("{}", json!({"depth": {"abs_rel": r.abs_rel, "sq_rel": r.sq_rel, "rmse": r.rmse, "disp_rmse": r.disp_rmse, "pixels": r.pixels}}));
}

pub type DetReport = Vec<(Difficulty, f64, f64)>;

pub fn eval_det(pred: &Path, gt: &Path, iou: f64) -> Result<DetReport> {
    let mut dets = Vec::new();
    let mut labels = Vec::new();
    for (p, g) in paired(pred, gt)? {
        dets.push(read_detections(&p.join("labels.txt"))?);
        labels.push(read_labels(&g.join("labels.txt"))?);
    }
    let bev = average_precision(&dets, &labels, iou, IouMode::Bev);
    let d3 = average_precision(&dets, &labels, iou, IouMode::ThreeD);
    // Bins without ground truth have no AP and are left out.
    Ok(Difficulty::ALL.iter().filter_map(|d| Some((*d, *bev.get(d)?, *d3.get(d)?))).collect())
}

fn print_det(r: &DetReport) {
    println!("{:<10} {:>8} {:>8}", "difficulty", "AP_BEV", "AP_3D");
    for (d, b, t) in r {
        println!("{:<10} {:>8.4} {:>8.4}", d.name(), b, t);
    }
    let rows: Vec<_> = r.iter().map(|(d, b, t)| json!({"difficulty": d.name(), "ap_bev": b, "ap_3d": t})).collect();
    println!("{}", json!({ "detection": rows }));
}
