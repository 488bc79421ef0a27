//! Projection-matrix calibration text (`P2:` / `P3:` rows of 12 numbers).

use std::path::Path;

use super::{read_text, write_bytes};
use crate::camera::Camera;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CalibInfo {
    pub p2: [f64; 12],
    pub p3: [f64; 12],
    pub focal: f64,
    pub baseline: f64,
}

impl CalibInfo {
    pub fn camera(&self) -> Result<Camera> {
        Camera::new(self.focal, self.baseline, self.p2[2], self.p2[6])
    }
}

pub fn parse_calib(text: &str) -> std::result::Result<CalibInfo, String> {
    let mut rows: [Option<[f64; 12]>; 2] = [None, None];
    for (n, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else { continue };
        let slot = match key {
            "P2:" => 0,
            "P3:" => 1,
            _ => continue,
        };
        let vals = tok
            .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: non-numeric token `{t}`", n + 1)))
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        let arr: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| format!("line {}: {key} has {} numbers, expected 12", n + 1, v.len()))?;
        rows[slot] = Some(arr);
    }
    let p2 = rows[0].ok_or("missing P2 line")?;
    let p3 = rows[1].ok_or("missing P3 line")?;
    let focal = p2[0];
    if !(focal > 0.0) {
        return Err(format!("focal length {focal} must be positive"));
    }
    let baseline = (p2[3] - p3[3]) / focal;
    if !(baseline > 0.0) {
        return Err(format!("baseline {baseline} must be positive"));
    }
    Ok(CalibInfo { p2, p3, focal, baseline })
}

pub fn read_calib(path: &Path) -> Result<CalibInfo> {
    parse_calib(&read_text(path)?).map_err(|m| Error::format(path, m))
}

fn row(name: &str, cam: &Camera, tx: f64) -> String {
    let p = [cam.focal, 0.0, cam.cx, tx, 0.0, cam.focal, cam.cy, 0.0, 0.0, 0.0, 1.0, 0.0];
    let nums: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
    format!("{name}: {}\n", nums.join(" "))
}

pub fn format_calib(cam: &Camera) -> String {
    let right = -cam.focal * cam.baseline;
    [row("P0", cam, 0.0), row("P1", cam, right), row("P2", cam, 0.0), row("P3", cam, right)].concat()
}

pub fn write_calib(path: &Path, cam: &Camera) -> Result<()> {
    write_bytes(path, format_calib(cam).as_bytes())
}
