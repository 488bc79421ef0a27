//! Feature extraction and matching-cost volume construction, refinement and
//! aggregation.
//!
//! Shapes: images `[1,H,W]`, features `[C,H,W]`, cost volumes `[C,D,H,W]`,
//! aggregation volumes `[1,D,H,W]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Bound, ConvAttrs, Graph, NodeId, PadMode, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nn;
use crate::scalar::Scalar;

pub const FEATURE_CHANNELS: usize = 16;
pub const DEFAULT_LEVELS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Shared-weight 2D convolution stack applied to each image of the pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub channels: usize,
    pub layers: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor { channels: FEATURE_CHANNELS, layers: 3 }
    }
}

impl FeatureExtractor {
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        for i in 0..self.layers {
            let inp = if i == 0 { 1 } else { self.channels };
            nn::insert_conv(store, rng, &format!("feat.{i}"), self.channels, inp, 3, 2, 1.0)?;
        }
        Ok(())
    }

    /// `image` is `[1,H,W]`; the same parameters serve both sides.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, image: NodeId) -> Result<NodeId> {
        let attrs = ConvAttrs::same(3, PadMode::Replicate);
        let mut x = image;
        for i in 0..self.layers {
            if i > 0 {
                x = g.relu(x)?;
            }
            x = g.conv2d(x, p.get(&format!("feat.{i}.w"))?, p.get(&format!("feat.{i}.b"))?, attrs)?;
        }
        Ok(x)
    }
}

/// Checks a grayscale image and lifts it to `[1,H,W]`.
pub fn image_tensor<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    if !image.all_finite() {
        return Err(Error::NonFinite("input image".into()));
    }
    match *image.shape() {
        [h, w] => image.clone().reshape(&[1, h, w]),
        [1, _, _] => Ok(image.clone()),
        _ => Err(Error::shape("extract_features", format!("image must be [H,W] or [1,H,W], got {:?}", image.shape()))),
    }
}

/// Runs the feature stack outside of training. `side` only documents intent:
/// both sides share the same weights.
pub fn extract_features<T: Scalar>(
    image: &Tensor<T>,
    store: &ParamStore<T>,
    fx: &FeatureExtractor,
    _side: Side,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let x = g.constant(image_tensor(image)?);
    let f = fx.forward(&mut g, &p, x)?;
    Ok(g.value(f).clone())
}

/// Concatenates left features with right features shifted by each disparity
/// level: `[2C, D, H, W]`, out-of-view entries zero.
pub fn build_cost_volume<T: Scalar>(g: &mut Graph<T>, fl: NodeId, fr: NodeId, d_max: usize) -> Result<NodeId> {
    let w = *g.value(fl).shape().last().unwrap_or(&0);
    if d_max == 0 || d_max > w {
        return Err(Error::Invalid(format!("disparity levels {d_max} must lie in [1, {w}]")));
    }
    g.shift_concat(fl, fr, d_max)
}

/// Tensor-level cost volume construction.
pub fn cost_volume<T: Scalar>(fl: &Tensor<T>, fr: &Tensor<T>, d_max: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (l, r) = (g.constant(fl.clone()), g.constant(fr.clone()));
    let v = build_cost_volume(&mut g, l, r, d_max)?;
    Ok(g.value(v).clone())
}

/// 3D convolution stack refining the cost volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refiner {
    pub in_channels: usize,
    pub channels: usize,
    pub layers: usize,
}

impl Refiner {
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        for i in 0..self.layers {
            let inp = if i == 0 { self.in_channels } else { self.channels };
            nn::insert_conv(store, rng, &format!("refine.{i}"), self.channels, inp, 3, 3, 1.0)?;
        }
        Ok(())
    }

    /// Identity kernels and zero biases; requires `in_channels == channels`.
    pub fn init_identity<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.in_channels != self.channels {
            return Err(Error::Invalid("identity refinement needs equal channel counts".into()));
        }
        for i in 0..self.layers {
            store.insert(&format!("refine.{i}.w"), nn::identity_kernel(self.channels, 3, 3))?;
            store.insert(&format!("refine.{i}.b"), Tensor::zeros(&[self.channels]))?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, v: NodeId) -> Result<NodeId> {
        let attrs = ConvAttrs::same(3, PadMode::Replicate);
        let mut x = v;
        for i in 0..self.layers {
            x = g.conv3d(x, p.get(&format!("refine.{i}.w"))?, p.get(&format!("refine.{i}.b"))?, attrs)?;
            x = g.relu(x)?;
        }
        Ok(x)
    }
}

/// Reduces the channel axis to one logit per disparity level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregator {
    pub in_channels: usize,
    pub kernel: usize,
}

impl Aggregator {
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        nn::insert_conv(store, rng, "agg", 1, self.in_channels, self.kernel, 3, 1.0)
    }

    /// Output `[1,D,H,W]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, v: NodeId) -> Result<NodeId> {
        g.conv3d(v, p.get("agg.w")?, p.get("agg.b")?, ConvAttrs::same(self.kernel, PadMode::Replicate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with_features(seed: u64) -> (ParamStore<f64>, FeatureExtractor) {
        let fx = FeatureExtractor::default();
        let mut store = ParamStore::default();
        fx.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, fx)
    }

    #[test]
    fn constant_image_gives_constant_features() {
        let (store, fx) = store_with_features(1);
        let f = extract_features(&Tensor::full(&[9, 11], 0.3), &store, &fx, Side::Left).unwrap();
        assert_eq!(f.shape(), &[16, 9, 11]);
        for plane in f.data().chunks(99) {
            assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn identical_images_share_features_bit_exact() {
        let (store, fx) = store_with_features(2);
        let img = Tensor::from_fn(&[6, 10], |i| ((i * 37) % 11) as f64 / 11.0);
        let l = extract_features(&img, &store, &fx, Side::Left).unwrap();
        let r = extract_features(&img, &store, &fx, Side::Right).unwrap();
        assert_eq!(l, r);
        assert_eq!(l.shape()[0], FEATURE_CHANNELS);
    }

    #[test]
    fn rejects_non_finite_pixels() {
        let (store, fx) = store_with_features(3);
        let mut img = Tensor::full(&[4, 4], 0.5);
        img.data_mut()[5] = f64::INFINITY;
        assert!(matches!(extract_features(&img, &store, &fx, Side::Left), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shift_rule_hand_example() {
        let l = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let r = Tensor::from_vec(&[1, 1, 3], vec![4.0, 5.0, 6.0]).unwrap();
        let v = cost_volume(&l, &r, 2).unwrap();
        assert_eq!(v.shape(), &[2, 2, 1, 3]);
        // [channel][d][u]
        assert_eq!(&v.data()[0..3], &[1.0, 2.0, 3.0]);
        assert_eq!(&v.data()[3..6], &[1.0, 2.0, 3.0]);
        assert_eq!(&v.data()[6..9], &[4.0, 5.0, 6.0]);
        assert_eq!(&v.data()[9..12], &[0.0, 4.0, 5.0]);
    }

    #[test]
    fn too_many_levels_rejected() {
        let f = Tensor::<f64>::zeros(&[1, 2, 3]);
        assert!(cost_volume(&f, &f, 4).is_err());
        assert!(cost_volume(&f, &f, 0).is_err());
    }

    #[test]
    fn sixteen_channel_features_give_thirty_two_channel_volume() {
        let f = Tensor::<f64>::zeros(&[16, 4, 8]);
        let v = cost_volume(&f, &f, 5).unwrap();
        assert_eq!(v.shape(), &[32, 5, 4, 8]);
    }

    #[test]
    fn identity_refinement_returns_input() {
        let refine = Refiner { in_channels: 2, channels: 2, layers: 2 };
        let mut store = ParamStore::<f64>::default();
        refine.init_identity(&mut store).unwrap();
        let v = Tensor::from_fn(&[2, 3, 4, 5], |i| ((i * 13) % 7) as f64);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.constant(v.clone());
        let y = refine.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y), &v);
    }

    #[test]
    fn zero_volume_refines_to_bias() {
        let refine = Refiner { in_channels: 2, channels: 3, layers: 2 };
        let mut store = ParamStore::<f64>::default();
        refine.init(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        store.get_mut("refine.1.b").unwrap().data_mut().copy_from_slice(&[0.5, 1.0, 0.0]);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.constant(Tensor::zeros(&[2, 3, 4, 4]));
        let y = refine.forward(&mut g, &p, x).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[3, 3, 4, 4]);
        for (c, plane) in out.data().chunks(48).enumerate() {
            assert!(plane.iter().all(|&v| v == [0.5, 1.0, 0.0][c]));
        }
    }

    #[test]
    fn unit_reduction_copies_single_channel() {
        let agg = Aggregator { in_channels: 1, kernel: 3 };
        let mut store = ParamStore::<f64>::default();
        store.insert("agg.w", nn::identity_kernel(1, 3, 3)).unwrap();
        store.insert("agg.b", Tensor::zeros(&[1])).unwrap();
        let v = Tensor::from_fn(&[1, 4, 3, 5], |i| (i as f64 * 0.7).sin());
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.constant(v.clone());
        let a = agg.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(a), &v);
    }
}
