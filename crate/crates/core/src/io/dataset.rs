//! `scenes/<id>/{left.pgm,right.pgm,disp.pfm,occ.pgm,calib.txt,labels.txt}`.

use std::path::{Path, PathBuf};

use super::calib::{read_calib, write_calib};
use super::labels::{read_labels, write_labels};
use super::pfm::{read_pfm, write_pfm};
use super::pgm::{read_mask, read_pgm, write_mask, write_pgm};
use crate::error::{Error, Result};
use crate::synth::RenderedScene;

pub const SCENES_DIR: &str = "scenes";

pub fn scene_dir(root: &Path, index: usize) -> PathBuf {
    root.join(SCENES_DIR).join(format!("{index:06}"))
}

pub fn write_scene(dir: &Path, s: &RenderedScene) -> Result<()> {
    write_pgm(&dir.join("left.pgm"), &s.left, 65535)?;
    write_pgm(&dir.join("right.pgm"), &s.right, 65535)?;
    write_pfm(&dir.join("disp.pfm"), &s.disparity)?;
    write_mask(&dir.join("occ.pgm"), s.left.width, s.left.height, &s.occlusion)?;
    write_calib(&dir.join("calib.txt"), &s.camera)?;
    write_labels(&dir.join("labels.txt"), &s.labels, &s.camera)
}

pub fn read_scene(dir: &Path) -> Result<RenderedScene> {
    let left = read_pgm(&dir.join("left.pgm"))?;
    let right = read_pgm(&dir.join("right.pgm"))?;
    let disparity = read_pfm(&dir.join("disp.pfm"))?;
    let occlusion = read_mask(&dir.join("occ.pgm"))?;
    let camera = read_calib(&dir.join("calib.txt"))?.camera()?;
    let labels = read_labels(&dir.join("labels.txt"))?;
    let (w, h) = (left.width, left.height);
    if (right.width, right.height) != (w, h) || (disparity.width, disparity.height) != (w, h) || occlusion.len() != w * h {
        return Err(Error::format(dir, "scene files disagree on image size"));
    }
    Ok(RenderedScene { camera, left, right, disparity, occlusion, labels })
}

/// Scene directories under `root/scenes`, sorted by name.
pub fn list_scenes(root: &Path) -> Result<Vec<PathBuf>> {
    let base = root.join(SCENES_DIR);
    let rd = std::fs::read_dir(&base).map_err(|e| Error::io(&base, e))?;
    let mut dirs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(&base, "no scene directories"));
    }
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<RenderedScene>> {
    list_scenes(root)?.iter().map(|d| read_scene(d)).collect()
}
