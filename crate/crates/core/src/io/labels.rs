//! KITTI-style object rows:
//! `type trunc occ alpha x1 y1 x2 y2 h w l x y z ry [score]`.
//!
//! Locations are box bottom centers (y grows downward). The occlusion column
//! carries the difficulty level 0/1/2; alpha is written as -10.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_bytes};
use crate::camera::Camera;
use crate::detection::{DetectionLabelSet, Difficulty, LabeledBox, ObjectBox};
use crate::error::{Error, Result};

pub const CLASS: &str = "Car";

pub fn parse_labels(text: &str) -> std::result::Result<(DetectionLabelSet, Vec<ObjectBox>), String> {
    let mut labels = Vec::new();
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.is_empty() || tok[0] != CLASS {
            continue;
        }
        if tok.len() != 15 && tok.len() != 16 {
            return Err(format!("line {}: expected 15 or 16 fields, got {}", n + 1, tok.len()));
        }
        let v = tok[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: non-numeric token `{t}`", n + 1)))
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        let (h, w, l) = (v[7], v[8], v[9]);
        let center = [v[10], v[11] - 0.5 * h, v[12]];
        let score = v.get(14).copied().unwrap_or(1.0);
        let obj = ObjectBox::new(center, [w, h, l], v[13], score).map_err(|e| format!("line {}: {e}", n + 1))?;
        let difficulty = Difficulty::from_level(v[1] as u8).map_err(|e| format!("line {}: {e}", n + 1))?;
        labels.push(LabeledBox { object: obj, difficulty });
        boxes.push(obj);
    }
    let set = DetectionLabelSet::new(labels).map_err(|e| e.to_string())?;
    Ok((set, boxes))
}

fn row(out: &mut String, obj: &ObjectBox, level: u8, cam: &Camera, score: Option<f64>) -> Result<()> {
    let bb = obj.bbox2d(cam).unwrap_or([-1.0; 4]);
    let [w, h, l] = obj.size;
    let [x, y, z] = obj.center;
    write!(
        out,
        "{CLASS} 0.00 {level} -10 {:.2} {:.2} {:.2} {:.2} {h:.6} {w:.6} {l:.6} {x:.6} {:.6} {z:.6} {:.6}",
        bb[0],
        bb[1],
        bb[2],
        bb[3],
        y + 0.5 * h,
        obj.yaw
    )
    .map_err(|e| Error::Invalid(e.to_string()))?;
    if let Some(s) = score {
        write!(out, " {s:.6}").map_err(|e| Error::Invalid(e.to_string()))?;
    }
    out.push('\n');
    Ok(())
}

pub fn format_labels(set: &DetectionLabelSet, cam: &Camera) -> Result<String> {
    let mut out = String::new();
    for b in &set.boxes {
        row(&mut out, &b.object, b.difficulty.level(), cam, None)?;
    }
    Ok(out)
}

/// Detections with their confidence as the score column.
pub fn format_detections(dets: &[ObjectBox], cam: &Camera) -> Result<String> {
    let mut out = String::new();
    for d in dets {
        row(&mut out, d, 0, cam, Some(d.confidence))?;
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<DetectionLabelSet> {
    parse_labels(&read_text(path)?).map(|(s, _)| s).map_err(|m| Error::format(path, m))
}

pub fn read_detections(path: &Path) -> Result<Vec<ObjectBox>> {
    parse_labels(&read_text(path)?).map(|(_, b)| b).map_err(|m| Error::format(path, m))
}

pub fn write_labels(path: &Path, set: &DetectionLabelSet, cam: &Camera) -> Result<()> {
    write_bytes(path, format_labels(set, cam)?.as_bytes())
}

pub fn write_detections(path: &Path, dets: &[ObjectBox], cam: &Camera) -> Result<()> {
    write_bytes(path, format_detections(dets, cam)?.as_bytes())
}
