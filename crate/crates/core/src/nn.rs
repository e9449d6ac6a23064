//! Shared convolution-layer plumbing for the flow and segmentation networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffarray::{Array, Bound, DiffArray, ParamSet, Real};
use crate::error::{Error, Result};

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

/// He-uniform kernel (fan-in scaled, leaky-relu gain) with zero bias.
pub(crate) fn add_conv<T: Real>(
    params: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<()> {
    let fan_in = (c_in * k * k) as f64;
    let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
    let data = (0..c_out * c_in * k * k)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    params.insert(
        format!("{name}.weight"),
        Array::new([c_out, c_in, k, k], data)?,
    )?;
    params.insert(format!("{name}.bias"), Array::zeros([c_out]))
}

pub(crate) fn add_zero_conv<T: Real>(
    params: &mut ParamSet<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<()> {
    params.insert(format!("{name}.weight"), Array::zeros([c_out, c_in, k, k]))?;
    params.insert(format!("{name}.bias"), Array::zeros([c_out]))
}

pub(crate) fn conv<'t, T: Real>(
    p: &Bound<'t, T>,
    name: &str,
    x: DiffArray<'t, T>,
    stride: usize,
) -> Result<DiffArray<'t, T>> {
    let weight = p.get(&format!("{name}.weight"))?;
    let k = weight.shape()[2];
    x.conv2d(weight, p.get(&format!("{name}.bias"))?, stride, k / 2)
}

pub(crate) fn conv_act<'t, T: Real>(
    p: &Bound<'t, T>,
    name: &str,
    x: DiffArray<'t, T>,
    stride: usize,
) -> Result<DiffArray<'t, T>> {
    Ok(conv(p, name, x, stride)?.leaky_relu(T::lit(LEAKY_SLOPE)))
}

/// Input spatial dims must be divisible by `2^levels`.
pub(crate) fn check_divisible(h: usize, w: usize, levels: usize) -> Result<()> {
    let m = 1usize << levels;
    if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "input {h}x{w} is not divisible by 2^{levels} = {m}"
        )));
    }
    Ok(())
}

pub(crate) fn check_same_dims(what: &'static str, arrays: &[Vec<usize>]) -> Result<(usize, usize)> {
    let dims = |s: &[usize]| match s {
        &[_, h, w] => Some((h, w)),
        _ => None,
    };
    let first = dims(&arrays[0]).ok_or_else(|| Error::shape(what, &arrays[0], &[]))?;
    for s in &arrays[1..] {
        if dims(s) != Some(first) {
            return Err(Error::shape(what, &arrays[0], s));
        }
    }
    Ok(first)
}
