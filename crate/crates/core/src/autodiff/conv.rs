//! Direct cross-correlation kernels.
//!
//! Everything is expressed over three spatial axes; 2D maps use a unit depth
//! axis with a unit kernel depth. The three kernels below are the forward
//! correlation and its two adjoints (with respect to the input and to the
//! kernel). Transposed convolution reuses them with the roles swapped.

use crate::error::{shape_err, Result};
use crate::parallel::for_each_chunk;
use crate::Real;

/// Resolved geometry of one correlation `[in_ch, *input] -> [out_ch, *output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

/// Lifts `dims` spatial values to three axes, using `fill` for the missing
/// leading axes.
pub(crate) fn lift3(values: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    let off = 3 - values.len();
    out[off..].copy_from_slice(values);
    out
}

/// Splits `[C, *spatial]` into channel count and three spatial extents.
pub(crate) fn split_shape(shape: &[usize], dims: usize) -> Result<(usize, [usize; 3])> {
    if !(dims == 2 || dims == 3) {
        return Err(shape_err!("spatial rank must be 2 or 3, got {dims}"));
    }
    if shape.len() != dims + 1 {
        return Err(shape_err!(
            "expected [C, {} spatial axes], got shape {shape:?}",
            dims
        ));
    }
    Ok((shape[0], lift3(&shape[1..], 1)))
}

pub(crate) fn spatial_shape(ch: usize, sp: [usize; 3], dims: usize) -> Vec<usize> {
    let mut s = vec![ch];
    s.extend_from_slice(&sp[3 - dims..]);
    s
}

impl ConvGeom {
    /// Geometry for `conv(input, kernel)` with per-axis stride and padding
    /// given for the `dims` spatial axes.
    pub fn forward(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: &[usize],
        pad: &[usize],
        dims: usize,
    ) -> Result<Self> {
        let (in_ch, input) = split_shape(input_shape, dims)?;
        if kernel_shape.len() != dims + 2 {
            return Err(shape_err!(
                "kernel must be [C_out, C_in, {dims} extents], got {kernel_shape:?}"
            ));
        }
        if kernel_shape[1] != in_ch {
            return Err(shape_err!(
                "kernel expects {} input channels, input has {in_ch}",
                kernel_shape[1]
            ));
        }
        if stride.len() != dims || pad.len() != dims {
            return Err(shape_err!("stride/padding must have {dims} entries"));
        }
        if stride.contains(&0) {
            return Err(shape_err!("stride must be >= 1"));
        }
        let kernel = lift3(&kernel_shape[2..], 1);
        let stride = lift3(stride, 1);
        let pad = lift3(pad, 0);
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * pad[a];
            if kernel[a] > padded {
                return Err(shape_err!(
                    "kernel extent {} exceeds padded input extent {padded} on axis {a}",
                    kernel[a]
                ));
            }
            output[a] = (padded - kernel[a]) / stride[a] + 1;
        }
        Ok(Self {
            in_ch,
            out_ch: kernel_shape[0],
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    /// Geometry of the correlation whose adjoint is `transposed_conv(input,
    /// kernel)`; `input` there is the correlation's output.
    pub fn transposed(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: &[usize],
        dims: usize,
    ) -> Result<Self> {
        let (ch, input) = split_shape(input_shape, dims)?;
        if kernel_shape.len() != dims + 2 {
            return Err(shape_err!(
                "kernel must be [C_in, C_out, {dims} extents], got {kernel_shape:?}"
            ));
        }
        if kernel_shape[0] != ch {
            return Err(shape_err!(
                "transposed kernel expects {} input channels, input has {ch}",
                kernel_shape[0]
            ));
        }
        if stride.len() != dims || stride.contains(&0) {
            return Err(shape_err!("stride must have {dims} entries, each >= 1"));
        }
        let kernel = lift3(&kernel_shape[2..], 1);
        let stride = lift3(stride, 1);
        let mut full = [0; 3];
        for a in 0..3 {
            full[a] = (input[a] - 1) * stride[a] + kernel[a];
        }
        Ok(Self {
            in_ch: kernel_shape[1],
            out_ch: ch,
            input: full,
            kernel,
            stride,
            pad: [0; 3],
            output: input,
        })
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn macs(&self) -> usize {
        self.out_ch * self.in_ch * self.out_plane() * self.kvol()
    }
}

/// Output indices `o` along one axis for which `o*stride + k - pad` lands
/// inside `[0, extent)`.
#[inline]
fn valid_range(out: usize, stride: usize, k: usize, pad: usize, extent: usize) -> (usize, usize) {
    let k = k as isize;
    let pad = pad as isize;
    let s = stride as isize;
    let lo = if pad > k { (pad - k + s - 1) / s } else { 0 };
    let top = extent as isize - 1 + pad - k;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top / s + 1).min(out as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// Column window of one kernel tap along the fastest axis: output columns
/// `lo..hi` read input columns starting at `x0` with the axis stride.
#[derive(Clone, Copy)]
struct ColSpan {
    lo: usize,
    hi: usize,
    x0: usize,
}

fn col_spans(g: &ConvGeom) -> Vec<ColSpan> {
    (0..g.kernel[2])
        .map(|c| {
            let (lo, hi) = valid_range(g.output[2], g.stride[2], c, g.pad[2], g.input[2]);
            let x0 = if lo < hi {
                lo * g.stride[2] + c - g.pad[2]
            } else {
                0
            };
            ColSpan { lo, hi, x0 }
        })
        .collect()
}

/// Input index along an axis for output index `o` and tap `k`, if inside.
#[inline]
fn src_index(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let i = (o * stride + k).checked_sub(pad)?;
    (i < extent).then_some(i)
}

#[inline]
fn axpy<T: Real>(w: T, src: &[T], dst: &mut [T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + w * s;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `out[co] = sum_ci sum_tap k[co, ci, tap] * x[ci, shifted]` (no bias).
///
/// Loops run output-row outermost so the accumulating row stays in cache.
pub(crate) fn corr_forward<T: Real>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [od, oh, ow] = g.output;
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let spans = col_spans(g);
    let mut out = vec![T::zero(); g.out_ch * out_plane];
    for_each_chunk(&mut out, out_plane, |co, oc| {
        for z in 0..od {
            for y in 0..oh {
                let orow = &mut oc[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                for ci in 0..g.in_ch {
                    let xc = &x[ci * in_plane..(ci + 1) * in_plane];
                    let kc = &k[(co * g.in_ch + ci) * kvol..][..kvol];
                    for a in 0..kd {
                        let Some(zi) = src_index(z, a, g.stride[0], g.pad[0], id) else {
                            continue;
                        };
                        for b in 0..kh {
                            let Some(yi) = src_index(y, b, g.stride[1], g.pad[1], ih) else {
                                continue;
                            };
                            let xrow = &xc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                            for (c, sp) in spans.iter().enumerate() {
                                let w = kc[(a * kh + b) * kw + c];
                                let dst = &mut orow[sp.lo..sp.hi];
                                if sx == 1 {
                                    axpy(w, &xrow[sp.x0..], dst);
                                } else {
                                    for (j, d) in dst.iter_mut().enumerate() {
                                        *d = *d + w * xrow[sp.x0 + j * sx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`corr_forward`] with respect to `x`.
pub(crate) fn corr_input_adjoint<T: Real>(gy: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    if g.stride == [1, 1, 1] {
        return corr_input_adjoint_unit(gy, k, g);
    }
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [od, oh, ow] = g.output;
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let spans = col_spans(g);
    let mut gx = vec![T::zero(); g.in_ch * in_plane];
    for_each_chunk(&mut gx, in_plane, |ci, xc| {
        for co in 0..g.out_ch {
            let yc = &gy[co * out_plane..(co + 1) * out_plane];
            let kc = &k[(co * g.in_ch + ci) * kvol..][..kvol];
            for z in 0..od {
                for a in 0..kd {
                    let Some(zi) = src_index(z, a, g.stride[0], g.pad[0], id) else {
                        continue;
                    };
                    for y in 0..oh {
                        let yrow = &yc[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                        for b in 0..kh {
                            let Some(yi) = src_index(y, b, g.stride[1], g.pad[1], ih) else {
                                continue;
                            };
                            let base = (zi * ih + yi) * iw;
                            for (c, sp) in spans.iter().enumerate() {
                                let w = kc[(a * kh + b) * kw + c];
                                for (j, &v) in yrow[sp.lo..sp.hi].iter().enumerate() {
                                    let p = base + sp.x0 + j * sx;
                                    xc[p] = xc[p] + w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Unit-stride input adjoint written as a gather so each input row is
/// accumulated once.
fn corr_input_adjoint_unit<T: Real>(gy: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [od, oh, ow] = g.output;
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [pd, ph, pw] = g.pad;
    // for tap c: input columns xi in lo..hi read output column xi + pw - c
    let spans: Vec<(usize, usize, usize)> = (0..kw)
        .map(|c| {
            let lo = c.saturating_sub(pw);
            let hi = (ow + c).saturating_sub(pw).min(iw);
            let lo = lo.min(hi);
            (lo, hi, lo + pw - c)
        })
        .collect();
    let mut gx = vec![T::zero(); g.in_ch * in_plane];
    for_each_chunk(&mut gx, in_plane, |ci, xc| {
        for zi in 0..id {
            for yi in 0..ih {
                let xrow = &mut xc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                for co in 0..g.out_ch {
                    let yc = &gy[co * out_plane..(co + 1) * out_plane];
                    let kc = &k[(co * g.in_ch + ci) * kvol..][..kvol];
                    for a in 0..kd {
                        let Some(z) = (zi + pd).checked_sub(a).filter(|&z| z < od) else {
                            continue;
                        };
                        for b in 0..kh {
                            let Some(y) = (yi + ph).checked_sub(b).filter(|&y| y < oh) else {
                                continue;
                            };
                            let yrow = &yc[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            for (c, &(lo, hi, o0)) in spans.iter().enumerate() {
                                let w = kc[(a * kh + b) * kw + c];
                                axpy(w, &yrow[o0..], &mut xrow[lo..hi]);
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Adjoint of [`corr_forward`] with respect to the kernel.
pub(crate) fn corr_kernel_grad<T: Real>(x: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [od, oh, ow] = g.output;
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let spans = col_spans(g);
    let mut gk = vec![T::zero(); g.out_ch * g.in_ch * kvol];
    for_each_chunk(&mut gk, g.in_ch * kvol, |co, kc| {
        let yc = &gy[co * out_plane..(co + 1) * out_plane];
        for ci in 0..g.in_ch {
            let xc = &x[ci * in_plane..(ci + 1) * in_plane];
            let acc = &mut kc[ci * kvol..(ci + 1) * kvol];
            for z in 0..od {
                for y in 0..oh {
                    let yrow = &yc[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                    for a in 0..kd {
                        let Some(zi) = src_index(z, a, g.stride[0], g.pad[0], id) else {
                            continue;
                        };
                        for b in 0..kh {
                            let Some(yi) = src_index(y, b, g.stride[1], g.pad[1], ih) else {
                                continue;
                            };
                            let xrow = &xc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                            for (c, sp) in spans.iter().enumerate() {
                                let t = (a * kh + b) * kw + c;
                                let o = &yrow[sp.lo..sp.hi];
                                let s = if sx == 1 {
                                    dot(o, &xrow[sp.x0..])
                                } else {
                                    o.iter()
                                        .enumerate()
                                        .fold(T::zero(), |s, (j, &v)| s + v * xrow[sp.x0 + j * sx])
                                };
                                acc[t] = acc[t] + s;
                            }
                        }
                    }
                }
            }
        }
    });
    gk
}

/// Per-channel sums, the bias gradient.
pub(crate) fn channel_sums<T: Real>(gy: &[T], channels: usize) -> Vec<T> {
    let per = gy.len() / channels;
    gy.chunks(per).map(|c| c.iter().copied().sum()).collect()
}

pub(crate) fn add_bias<T: Real>(y: &mut [T], bias: &[T]) {
    let per = y.len() / bias.len();
    for (c, &b) in y.chunks_mut(per).zip(bias) {
        for v in c {
            *v = *v + b;
        }
    }
}
