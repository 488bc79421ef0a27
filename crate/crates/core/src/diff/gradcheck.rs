//! Central finite-difference verification of analytic gradients (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::ops::Op;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub abs_floor: f64,
    /// Seed for the random output weighting.
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { step: 1e-3, tolerance: 1e-4, abs_floor: 1e-8, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputReport {
    pub input: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Entries skipped because the function has a kink there.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_abs_err).fold(0.0, f64::max)
    }

    pub fn excluded(&self) -> usize {
        self.inputs.iter().map(|r| r.excluded).sum()
    }
}

/// Checks one catalog primitive. Inputs the primitive treats as constants
/// (masks, loss weights) are not probed.
pub fn finite_diff_check(op: &Op, inputs: &[Tensor<f64>], opts: &CheckOptions) -> Result<GradReport> {
    let probe: Vec<bool> = (0..inputs.len()).map(|i| op.differentiable_input(i)).collect();
    check_composite(inputs, &probe, opts, |g, ids| g.apply(op.clone(), ids))
}

/// Checks an arbitrary graph-building closure with respect to the inputs
/// flagged in `probe`. The closure may return a node of any shape; it is
/// reduced to a scalar by a fixed random weighting.
pub fn check_composite<F>(inputs: &[Tensor<f64>], probe: &[bool], opts: &CheckOptions, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if probe.len() != inputs.len() {
        return Err(Error::Invalid("probe flags must match the inputs".into()));
    }
    if inputs.iter().any(|x| !x.all_finite()) {
        return Err(Error::NonFinite("gradient check input".into()));
    }
    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .zip(probe)
        .map(|(x, &p)| if p { g.variable(x.clone()) } else { g.constant(x.clone()) })
        .collect();
    let out = build(&mut g, &ids)?;
    let out_shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let weights = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));
    let wid = g.constant(weights.clone());
    let prod = g.mul(out, wid)?;
    let root = g.sum(prod)?;
    let f0 = g.value(root).data()[0];
    if !f0.is_finite() {
        return Err(Error::NonFinite("forward value during gradient check".into()));
    }
    g.backward(root)?;

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = build(&mut g, &ids)?;
        let v: f64 = g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("perturbed forward value during gradient check".into()))
        }
    };

    let h = opts.step;
    let mut reports = Vec::new();
    let mut pass = true;
    let mut xs = inputs.to_vec();
    for (k, &p) in probe.iter().enumerate() {
        if !p {
            continue;
        }
        let analytic = g.grad(ids[k]).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut rep = InputReport { input: k, ..Default::default() };
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            let at = |xs: &mut Vec<Tensor<f64>>, x: f64| -> Result<f64> {
                xs[k].data_mut()[i] = x;
                let v = eval(xs);
                xs[k].data_mut()[i] = x0;
                v
            };
            let fp = at(&mut xs, x0 + h)?;
            let fm = at(&mut xs, x0 - h)?;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let abs = (a - fd).abs();
            if fd.abs() <= opts.abs_floor && a.abs() <= opts.abs_floor {
                continue;
            }
            let rel = abs / fd.abs().max(a.abs());
            if rel > opts.tolerance {
                // A kink within the small step keeps the one-sided slope gap
                // as the step shrinks (smooth curvature makes it shrink). A
                // kink between the two steps makes the central differences
                // disagree, which a smooth function cannot do at this scale.
                let gap = ((fp - f0) / h - (f0 - fm) / h).abs();
                let hs = h / 10.0;
                let (fps, fms) = (at(&mut xs, x0 + hs)?, at(&mut xs, x0 - hs)?);
                let gap_small = ((fps - f0) / hs - (f0 - fms) / hs).abs();
                let fd_small = (fps - fms) / (2.0 * hs);
                let fd_drift = (fd - fd_small).abs() / fd.abs().max(fd_small.abs());
                if gap > opts.abs_floor && (gap_small > 0.5 * gap || fd_drift > opts.tolerance) {
                    rep.excluded += 1;
                    continue;
                }
            }
            rep.checked += 1;
            rep.max_abs_err = rep.max_abs_err.max(abs);
            rep.max_rel_err = rep.max_rel_err.max(rel);
        }
        pass &= rep.max_rel_err <= opts.tolerance;
        reports.push(rep);
    }
    Ok(GradReport { inputs: reports, tolerance: opts.tolerance, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::ops::SampleGrid;
    use std::sync::Arc;

    #[test]
    fn softmax_random_vector_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[8], |_| rng.random_range(-2.0..2.0));
        let rep = finite_diff_check(&Op::SoftmaxAxis { axis: 0 }, &[x], &CheckOptions::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.excluded(), 0);
    }

    #[test]
    fn cubic_sample_at_node_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn(&[2, 6, 3, 3], |_| rng.random_range(-1.0..1.0));
        let grid = SampleGrid::new(vec![[1.0, 1.0, 2.0], [1.5, 0.5, 3.0]], vec![2]).unwrap();
        let rep = finite_diff_check(&Op::CubicDSample(Arc::new(grid)), &[x], &CheckOptions::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn relu_at_zero_is_excluded() {
        let x = Tensor::from_vec(&[3], vec![0.0, 1.5, -0.7]).unwrap();
        let rep = finite_diff_check(&Op::Relu, &[x], &CheckOptions::default()).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.excluded(), 1);
        assert_eq!(rep.inputs[0].checked, 1);
    }

    #[test]
    fn detects_wrong_gradient() {
        // A composite whose "analytic" side is cut by a constant: x*c where c
        // is the same tensor bound as constant gives half the true gradient
        // of x*x.
        let x = Tensor::from_vec(&[2], vec![0.8, -1.3]).unwrap();
        let rep = check_composite(std::slice::from_ref(&x), &[true], &CheckOptions::default(), |g, ids| {
            let c = g.constant(g.value(ids[0]).clone());
            g.mul(ids[0], c)
        })
        .unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn non_finite_forward_aborts() {
        let x = Tensor::from_vec(&[2], vec![f64::NAN, 1.0]).unwrap();
        assert!(matches!(
            finite_diff_check(&Op::Relu, &[x], &CheckOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
