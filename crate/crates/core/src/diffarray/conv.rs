//! 2-D cross-correlation (im2col + GEMM) and x2 bilinear upsampling.

use super::array::{gemm, Array, MatRef, Real};
use super::tape::{DiffArray, Op};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1x1, stride 1, no padding: the im2col matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }
}

fn out_dim(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

fn geometry(
    input: &[usize],
    kernel: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (&[c_in, h, w], &[c_out, kc, kh, kw]) = (input, kernel) else {
        return Err(Error::shape("conv2d", input, kernel));
    };
    if kc != c_in || kh != kw {
        return Err(Error::shape("conv2d", input, kernel));
    }
    if bias != [c_out] {
        return Err(Error::shape("conv2d bias", kernel, bias));
    }
    if kh % 2 == 0 {
        return Err(Error::invalid(format!(
            "conv2d kernel size must be odd, got {kh}"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be >= 1"));
    }
    let (Some(h_out), Some(w_out)) = (
        out_dim(h, kh, stride, padding),
        out_dim(w, kh, stride, padding),
    ) else {
        return Err(Error::invalid(format!(
            "conv2d: {kh}x{kh} kernel does not fit {h}x{w} input with padding {padding}"
        )));
    };
    Ok(ConvGeom {
        c_in,
        h,
        w,
        c_out,
        k: kh,
        stride,
        padding,
        h_out,
        w_out,
    })
}

fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, ncols) = (g.k, g.cols());
    let mut cols = vec![T::zero(); g.rows() * ncols];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, ncols) = (g.k, g.cols());
    let mut out = vec![T::zero(); g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_forward<T: Real>(
    input: &Array<T>,
    kernel: &Array<T>,
    bias: &Array<T>,
    stride: usize,
    padding: usize,
) -> Result<Array<T>> {
    let g = geometry(input.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let ncols = g.cols();
    let mut out = vec![T::zero(); g.c_out * ncols];
    for (co, chunk) in out.chunks_mut(ncols).enumerate() {
        chunk.fill(bias.data()[co]);
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        input.data()
    } else {
        owned = im2col(input.data(), &g);
        &owned
    };
    gemm(
        MatRef::new(kernel.data(), g.c_out, g.rows()),
        MatRef::new(cols, g.rows(), ncols),
        &mut out,
        true,
    );
    Array::new([g.c_out, g.h_out, g.w_out], out)
}

pub(crate) type ConvGrads<T> = (Option<Array<T>>, Option<Array<T>>, Option<Array<T>>);

pub(crate) fn conv2d_backward<T: Real>(
    input: &Array<T>,
    kernel: &Array<T>,
    grad_out: &Array<T>,
    stride: usize,
    padding: usize,
    needs: &[bool],
) -> ConvGrads<T> {
    let c_out = kernel.shape()[0];
    let g = geometry(input.shape(), kernel.shape(), &[c_out], stride, padding)
        .expect("geometry validated in forward");
    let ncols = g.cols();
    let dout = grad_out.data();

    let grad_input = needs[0].then(|| {
        let mut dcols = vec![T::zero(); g.rows() * ncols];
        gemm(
            MatRef::transposed(kernel.data(), g.rows(), g.c_out),
            MatRef::new(dout, g.c_out, ncols),
            &mut dcols,
            false,
        );
        let data = if g.is_pointwise() {
            dcols
        } else {
            col2im(&dcols, &g)
        };
        Array::new(input.shape(), data).expect("input gradient shape")
    });

    let grad_kernel = needs[1].then(|| {
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            input.data()
        } else {
            owned = im2col(input.data(), &g);
            &owned
        };
        let mut dk = vec![T::zero(); g.c_out * g.rows()];
        gemm(
            MatRef::new(dout, g.c_out, ncols),
            MatRef::transposed(cols, ncols, g.rows()),
            &mut dk,
            false,
        );
        Array::new(kernel.shape(), dk).expect("kernel gradient shape")
    });

    let grad_bias = needs[2].then(|| {
        let db = dout
            .chunks(ncols)
            .map(|c| c.iter().copied().sum())
            .collect();
        Array::new([g.c_out], db).expect("bias gradient shape")
    });

    (grad_input, grad_kernel, grad_bias)
}

/// Source taps for one output coordinate of the x2 align-corners-false
/// upsampler: `(i0, i1, weight_of_i1)`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample2x_forward<T: Real>(input: &Array<T>) -> Result<Array<T>> {
    let (c, h, w) = input.chw()?;
    if h == 0 || w == 0 {
        return Err(Error::Empty("bilinear_upsample_x2"));
    }
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * ho * wo];
    let src = input.data();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::lit(wx);
                let top = plane[y0 * w + x0] * (T::one() - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (T::one() - wx) + plane[y1 * w + x1] * wx;
                dst[oy * wo + ox] = top * (T::one() - wy) + bot * wy;
            }
        }
    }
    Array::new([c, ho, wo], out)
}

pub(crate) fn upsample2x_backward<T: Real>(input: &Array<T>, grad_out: &Array<T>) -> Array<T> {
    let (c, h, w) = input.chw().expect("validated in forward");
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (ho, wo) = (2 * h, 2 * w);
    let mut gin = vec![T::zero(); c * h * w];
    let g = grad_out.data();
    for ch in 0..c {
        let dst = &mut gin[ch * h * w..(ch + 1) * h * w];
        let src = &g[ch * ho * wo..(ch + 1) * ho * wo];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::lit(wx);
                let v = src[oy * wo + ox];
                dst[y0 * w + x0] += v * (T::one() - wy) * (T::one() - wx);
                dst[y0 * w + x1] += v * (T::one() - wy) * wx;
                dst[y1 * w + x0] += v * wy * (T::one() - wx);
                dst[y1 * w + x1] += v * wy * wx;
            }
        }
    }
    Array::new(input.shape(), gin).expect("upsample gradient shape")
}

impl<'t, T: Real> DiffArray<'t, T> {
    /// Cross-correlation of a `[C_in, H, W]` input with a
    /// `[C_out, C_in, k, k]` kernel. Output size is
    /// `floor((H + 2 * padding - k) / stride) + 1`.
    pub fn conv2d(
        self,
        kernel: DiffArray<'t, T>,
        bias: DiffArray<'t, T>,
        stride: usize,
        padding: usize,
    ) -> Result<DiffArray<'t, T>> {
        let value = conv2d_forward(
            &self.value(),
            &kernel.value(),
            &bias.value(),
            stride,
            padding,
        )?;
        Ok(self.tape.push_op(
            value,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.id,
                stride,
                padding,
            },
        ))
    }

    /// Bilinear x2 upsampling with the align-corners-false convention.
    pub fn upsample2x(self) -> Result<DiffArray<'t, T>> {
        let value = upsample2x_forward(&self.value())?;
        Ok(self.tape.push_op(value, Op::Upsample2x { a: self.id }))
    }
}
