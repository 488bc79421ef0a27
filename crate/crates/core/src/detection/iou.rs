//! Overlap of oriented boxes by convex polygon clipping.

use super::boxes::ObjectBox;

const AREA_EPS: f64 = 1e-12;

/// Signed shoelace area (positive for counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

fn ccw(poly: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = poly.to_vec();
    if polygon_area(&p) < 0.0 {
        p.reverse();
    }
    p
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` by the convex `clip` polygon.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let clip = ccw(clip);
    let mut out = ccw(subject);
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Intersection area of the two ground footprints.
pub fn bev_intersection(a: &ObjectBox, b: &ObjectBox) -> f64 {
    let inter = clip_polygon(&a.footprint(), &b.footprint());
    if inter.len() < 3 {
        0.0
    } else {
        polygon_area(&inter).abs()
    }
}

pub fn bev_iou(a: &ObjectBox, b: &ObjectBox) -> f64 {
    let (aa, ab) = (a.size[0] * a.size[2], b.size[0] * b.size[2]);
    if aa <= AREA_EPS || ab <= AREA_EPS {
        return 0.0;
    }
    let inter = bev_intersection(a, b);
    (inter / (aa + ab - inter)).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &ObjectBox, b: &ObjectBox) -> f64 {
    let (va, vb) = (a.size.iter().product::<f64>(), b.size.iter().product::<f64>());
    if va <= AREA_EPS || vb <= AREA_EPS {
        return 0.0;
    }
    let ((a0, a1), (b0, b1)) = (a.y_range(), b.y_range());
    let h = (a1.min(b1) - a0.max(b0)).max(0.0);
    if h == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * h;
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}
