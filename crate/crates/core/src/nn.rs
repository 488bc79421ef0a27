//! Parameter initialization helpers shared by the network stages.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{ParamStore, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// He-normal tensor for a layer with `fan_in` inputs per output.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// Inserts `{name}.w` (`[out, in, k, ...]`, `dims` spatial axes) and a zero `{name}.b`.
pub fn insert_conv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    out: usize,
    inp: usize,
    k: usize,
    dims: usize,
    gain: f64,
) -> Result<()> {
    let mut shape = vec![out, inp];
    shape.extend(std::iter::repeat_n(k, dims));
    let fan_in = inp * k.pow(dims as u32);
    store.insert(&format!("{name}.w"), he_normal(rng, &shape, fan_in, gain))?;
    store.insert(&format!("{name}.b"), Tensor::zeros(&[out]))?;
    Ok(())
}

/// Inserts `{name}.w` (`[out, in]`) and a zero `{name}.b`.
pub fn insert_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    out: usize,
    inp: usize,
    gain: f64,
) -> Result<()> {
    store.insert(&format!("{name}.w"), he_normal(rng, &[out, inp], inp, gain))?;
    store.insert(&format!("{name}.b"), Tensor::zeros(&[out]))?;
    Ok(())
}

/// Weight tensor of an identity convolution: a centered unit tap per channel.
pub fn identity_kernel<T: Scalar>(channels: usize, k: usize, dims: usize) -> Tensor<T> {
    let mut shape = vec![channels, channels];
    shape.extend(std::iter::repeat_n(k, dims));
    let taps = k.pow(dims as u32);
    let center = taps / 2;
    let mut t = Tensor::zeros(&shape);
    for c in 0..channels {
        t.data_mut()[(c * channels + c) * taps + center] = T::one();
    }
    t
}
