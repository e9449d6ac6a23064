//! Differentiable backward warping and the normalized flow representation.
//!
//! A flow is stored channels-first as `[2, H, W]`: channel 0 is the x
//! displacement as a fraction of the frame width, channel 1 the y
//! displacement as a fraction of the frame height. The pixel displacement
//! at `(y, x)` is therefore `(flow[0] * W, flow[1] * H)`.

pub mod flo;

use crate::diffarray::{Array, CustomOp, DiffArray, Real};
use crate::error::{Error, Result};

/// Normalized displacement field, `[2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T = f32>(Array<T>);

impl<T: Real> FlowField<T> {
    pub fn new(array: Array<T>) -> Result<Self> {
        match array.shape() {
            [2, _, _] if array.is_finite() => Ok(Self(array)),
            [2, _, _] => Err(Error::NonFinite("flow field".into())),
            other => Err(Error::invalid(format!(
                "flow field must have shape [2, H, W], got {other:?}"
            ))),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Array::zeros([2, height, width]))
    }

    /// Same normalized displacement at every pixel.
    pub fn uniform(height: usize, width: usize, dx: T, dy: T) -> Self {
        let plane = height * width;
        let mut data = vec![dx; 2 * plane];
        data[plane..].fill(dy);
        Self(Array::new([2, height, width], data).expect("flow shape"))
    }

    /// Build from pixel-unit displacements `[2, H, W]`.
    pub fn from_pixels(pixels: &Array<T>) -> Result<Self> {
        let (c, h, w) = pixels.chw()?;
        if c != 2 {
            return Err(Error::invalid("pixel flow must have 2 channels"));
        }
        let plane = h * w;
        let data = pixels
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let scale = if i < plane { w } else { h };
                T::lit(v.to_f64_lossy() / scale as f64)
            })
            .collect();
        Self::new(Array::new([2, h, w], data)?)
    }

    /// Pixel-unit displacements `[2, H, W]`.
    pub fn to_pixels(&self) -> Array<T> {
        let (h, w) = self.dims();
        let plane = h * w;
        let data = self
            .0
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let scale = if i < plane { w } else { h };
                T::lit(v.to_f64_lossy() * scale as f64)
            })
            .collect();
        Array::new([2, h, w], data).expect("flow shape")
    }

    /// `(height, width)`
    pub fn dims(&self) -> (usize, usize) {
        let s = self.0.shape();
        (s[1], s[2])
    }

    pub fn array(&self) -> &Array<T> {
        &self.0
    }

    pub fn into_array(self) -> Array<T> {
        self.0
    }

    /// Normalized `(dx, dy)` at a pixel.
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        let (h, w) = self.dims();
        let d = self.0.data();
        (d[y * w + x], d[h * w + y * w + x])
    }
}

/// Normalized to pixel units.
pub fn denormalize_flow<T: Real>(flow: &FlowField<T>) -> Array<T> {
    flow.to_pixels()
}

/// Pixel units to normalized.
pub fn normalize_flow<T: Real>(pixels: &Array<T>) -> Result<FlowField<T>> {
    FlowField::from_pixels(pixels)
}

/// One bilinear sample: the four integer taps and their weights.
#[derive(Clone, Copy)]
struct Taps<T> {
    x0: isize,
    y0: isize,
    ax: T,
    ay: T,
}

fn taps<T: Real>(x: usize, y: usize, fx: T, fy: T, h: usize, w: usize) -> Taps<T> {
    let sx = T::from_usize(x).expect("coord") + fx * T::from_usize(w).expect("width");
    let sy = T::from_usize(y).expect("coord") + fy * T::from_usize(h).expect("height");
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    Taps {
        x0: fx0.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy0.to_isize().unwrap_or(isize::MIN / 2),
        ax: sx - fx0,
        ay: sy - fy0,
    }
}

#[inline]
fn read<T: Real>(plane: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
        plane[y as usize * w + x as usize]
    } else {
        T::zero()
    }
}

fn check_shapes(source: &[usize], flow: &[usize]) -> Result<(usize, usize, usize)> {
    match (source, flow) {
        (&[c, h, w], &[2, fh, fw]) if (h, w) == (fh, fw) => Ok((c, h, w)),
        _ => Err(Error::shape("bilinear_warp", source, flow)),
    }
}

fn warp_forward<T: Real>(source: &Array<T>, flow: &Array<T>) -> Result<Array<T>> {
    let (c, h, w) = check_shapes(source.shape(), flow.shape())?;
    let plane = h * w;
    let (fxs, fys) = flow.data().split_at(plane);
    let src = source.data();
    let mut out = vec![T::zero(); c * plane];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let t = taps(x, y, fxs[p], fys[p], h, w);
            let one = T::one();
            let w00 = (one - t.ax) * (one - t.ay);
            let w01 = t.ax * (one - t.ay);
            let w10 = (one - t.ax) * t.ay;
            let w11 = t.ax * t.ay;
            for ch in 0..c {
                let s = &src[ch * plane..(ch + 1) * plane];
                out[ch * plane + p] = w00 * read(s, h, w, t.y0, t.x0)
                    + w01 * read(s, h, w, t.y0, t.x0 + 1)
                    + w10 * read(s, h, w, t.y0 + 1, t.x0)
                    + w11 * read(s, h, w, t.y0 + 1, t.x0 + 1);
            }
        }
    }
    Array::new([c, h, w], out)
}

/// Warp a plain array (no tape).
pub fn warp_array<T: Real>(source: &Array<T>, flow: &FlowField<T>) -> Result<Array<T>> {
    warp_forward(source, flow.array())
}

struct WarpOp;

impl<T: Real> CustomOp<T> for WarpOp {
    fn name(&self) -> &'static str {
        "bilinear_warp"
    }

    fn backward(
        &self,
        inputs: &[&Array<T>],
        _output: &Array<T>,
        g: &Array<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Array<T>>>> {
        let (source, flow) = (inputs[0], inputs[1]);
        let (c, h, w) = check_shapes(source.shape(), flow.shape())?;
        let plane = h * w;
        let (fxs, fys) = flow.data().split_at(plane);
        let src = source.data();
        let gd = g.data();
        let mut gsrc = needs[0].then(|| vec![T::zero(); c * plane]);
        let mut gflow = needs[1].then(|| vec![T::zero(); 2 * plane]);
        let (wf, hf) = (T::from_usize(w).expect("w"), T::from_usize(h).expect("h"));
        let one = T::one();
        let inside = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = taps(x, y, fxs[p], fys[p], h, w);
                let corners = [
                    (t.y0, t.x0, (one - t.ax) * (one - t.ay)),
                    (t.y0, t.x0 + 1, t.ax * (one - t.ay)),
                    (t.y0 + 1, t.x0, (one - t.ax) * t.ay),
                    (t.y0 + 1, t.x0 + 1, t.ax * t.ay),
                ];
                let (mut dsx, mut dsy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let go = gd[ch * plane + p];
                    if let Some(gs) = gsrc.as_mut() {
                        for &(cy, cx, wt) in &corners {
                            if inside(cy, cx) {
                                gs[ch * plane + cy as usize * w + cx as usize] += go * wt;
                            }
                        }
                    }
                    if gflow.is_some() {
                        let s = &src[ch * plane..(ch + 1) * plane];
                        let v00 = read(s, h, w, t.y0, t.x0);
                        let v01 = read(s, h, w, t.y0, t.x0 + 1);
                        let v10 = read(s, h, w, t.y0 + 1, t.x0);
                        let v11 = read(s, h, w, t.y0 + 1, t.x0 + 1);
                        dsx += go * ((one - t.ay) * (v01 - v00) + t.ay * (v11 - v10));
                        dsy += go * ((one - t.ax) * (v10 - v00) + t.ax * (v11 - v01));
                    }
                }
                if let Some(gf) = gflow.as_mut() {
                    gf[p] = dsx * wf;
                    gf[plane + p] = dsy * hf;
                }
            }
        }
        Ok(vec![
            gsrc.map(|d| Array::new(source.shape(), d)).transpose()?,
            gflow.map(|d| Array::new(flow.shape(), d)).transpose()?,
        ])
    }
}

/// Backward warp: `out(y, x)` is the bilinear sample of `source` at
/// `(x + flow_x * W, y + flow_y * H)`, reading zero outside the frame.
/// Differentiable in both `source` (`[C, H, W]`) and `flow` (`[2, H, W]`).
pub fn bilinear_warp<'t, T: Real>(
    source: DiffArray<'t, T>,
    flow: DiffArray<'t, T>,
) -> Result<DiffArray<'t, T>> {
    let value = warp_forward(&source.value(), &flow.value())?;
    Ok(source
        .tape()
        .push_custom(value, &[source, flow], Box::new(WarpOp)))
}
