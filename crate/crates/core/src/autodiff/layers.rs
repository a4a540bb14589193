//! Forward/backward kernels for the non-convolutional primitives.

use crate::error::{shape_err, Result};
use crate::parallel::for_each_chunk;
use crate::Real;

use super::conv::{lift3, split_shape};

pub(crate) struct Pooled<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    /// Flat input index selected for each output element.
    pub argmax: Vec<usize>,
}

pub(crate) fn max_pool<T: Real>(
    x: &[T],
    shape: &[usize],
    window: &[usize],
    dims: usize,
) -> Result<Pooled<T>> {
    let (ch, sp) = split_shape(shape, dims)?;
    if window.len() != dims || window.contains(&0) {
        return Err(shape_err!("pool window must have {dims} positive entries"));
    }
    let win = lift3(window, 1);
    let mut out_sp = [0; 3];
    for a in 0..3 {
        if sp[a] % win[a] != 0 {
            return Err(shape_err!(
                "extent {} not divisible by pool window {}",
                sp[a],
                win[a]
            ));
        }
        out_sp[a] = sp[a] / win[a];
    }
    let in_plane: usize = sp.iter().product();
    let out_plane: usize = out_sp.iter().product();
    let mut argmax = vec![0usize; ch * out_plane];
    for_each_chunk(&mut argmax, out_plane, |c, am| {
        let xc = &x[c * in_plane..(c + 1) * in_plane];
        for z in 0..out_sp[0] {
            for y in 0..out_sp[1] {
                for w in 0..out_sp[2] {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    // row-major scan; strict comparison keeps the first maximum
                    for a in 0..win[0] {
                        for b in 0..win[1] {
                            for d in 0..win[2] {
                                let i = ((z * win[0] + a) * sp[1] + y * win[1] + b) * sp[2]
                                    + w * win[2]
                                    + d;
                                if best == usize::MAX || xc[i] > best_v {
                                    best = i;
                                    best_v = xc[i];
                                }
                            }
                        }
                    }
                    am[(z * out_sp[1] + y) * out_sp[2] + w] = c * in_plane + best;
                }
            }
        }
    });
    let values = argmax.iter().map(|&i| x[i]).collect();
    let mut out_shape = vec![ch];
    out_shape.extend_from_slice(&out_sp[3 - dims..]);
    Ok(Pooled {
        shape: out_shape,
        values,
        argmax,
    })
}

pub(crate) struct Normed<T> {
    pub values: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel standardization with population variance, then affine.
pub(crate) fn instance_norm<T: Real>(
    x: &[T],
    channels: usize,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> Result<Normed<T>> {
    let per = x.len() / channels;
    if per < 2 {
        return Err(shape_err!(
            "instance norm needs at least 2 spatial elements per channel"
        ));
    }
    if gain.len() != channels || shift.len() != channels {
        return Err(shape_err!(
            "instance norm affine expects {channels} channels, got gain {} / shift {}",
            gain.len(),
            shift.len()
        ));
    }
    let n = T::lit(per as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let inv_std: Vec<T> = xhat
        .chunks_mut(per)
        .zip(x.chunks(per))
        .map(|(h, xc)| {
            let mean = xc.iter().copied().sum::<T>() / n;
            let var = xc.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = (var + eps).sqrt().recip();
            for (hv, &v) in h.iter_mut().zip(xc) {
                *hv = (v - mean) * inv;
            }
            inv
        })
        .collect();
    let mut values = xhat.clone();
    for (c, chunk) in values.chunks_mut(per).enumerate() {
        for v in chunk {
            *v = gain[c] * *v + shift[c];
        }
    }
    Ok(Normed {
        values,
        xhat,
        inv_std,
    })
}

/// Returns `(dx, dgain, dshift)`.
pub(crate) fn instance_norm_backward<T: Real>(
    gy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let channels = inv_std.len();
    let per = gy.len() / channels;
    let n = T::lit(per as f64);
    let mut dx = vec![T::zero(); gy.len()];
    let mut dgain = vec![T::zero(); channels];
    let mut dshift = vec![T::zero(); channels];
    for c in 0..channels {
        let g = &gy[c * per..(c + 1) * per];
        let h = &xhat[c * per..(c + 1) * per];
        let mut sum_g = T::zero();
        let mut sum_gh = T::zero();
        for (&gv, &hv) in g.iter().zip(h) {
            sum_g = sum_g + gv;
            sum_gh = sum_gh + gv * hv;
        }
        dgain[c] = sum_gh;
        dshift[c] = sum_g;
        // d xhat = gy * gain
        let scale = gain[c] * inv_std[c] / n;
        for ((d, &gv), &hv) in dx[c * per..(c + 1) * per].iter_mut().zip(g).zip(h) {
            *d = scale * (n * gv - sum_g - hv * sum_gh);
        }
    }
    (dx, dgain, dshift)
}

/// One output sample of 1D linear interpolation: the two source taps and
/// their weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub w0: T,
    pub w1: T,
}

/// Half-pixel (align-corners = false) interpolation taps for upsampling an
/// axis of length `n` by `factor`.
pub(crate) fn linear_taps<T: Real>(n: usize, factor: usize) -> Vec<Tap<T>> {
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let l = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: T::lit(1.0 - l),
                w1: T::lit(l),
            }
        })
        .collect()
}

/// Shape is `[outer, len, inner]`; interpolates the middle axis.
fn interp_axis<T: Real>(
    x: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    taps: &[Tap<T>],
) -> Vec<T> {
    let out_len = taps.len();
    let mut out = vec![T::zero(); outer * out_len * inner];
    for_each_chunk(&mut out, out_len * inner, |o, oc| {
        let xc = &x[o * len * inner..(o + 1) * len * inner];
        for (j, t) in taps.iter().enumerate() {
            let dst = &mut oc[j * inner..(j + 1) * inner];
            let a = &xc[t.i0 * inner..(t.i0 + 1) * inner];
            let b = &xc[t.i1 * inner..(t.i1 + 1) * inner];
            for ((d, &av), &bv) in dst.iter_mut().zip(a).zip(b) {
                *d = t.w0 * av + t.w1 * bv;
            }
        }
    });
    out
}

fn interp_axis_adjoint<T: Real>(
    gy: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    taps: &[Tap<T>],
) -> Vec<T> {
    let out_len = taps.len();
    let mut gx = vec![T::zero(); outer * len * inner];
    for_each_chunk(&mut gx, len * inner, |o, gc| {
        let yc = &gy[o * out_len * inner..(o + 1) * out_len * inner];
        for (j, t) in taps.iter().enumerate() {
            let src = &yc[j * inner..(j + 1) * inner];
            for (k, &g) in src.iter().enumerate() {
                gc[t.i0 * inner + k] = gc[t.i0 * inner + k] + t.w0 * g;
                gc[t.i1 * inner + k] = gc[t.i1 * inner + k] + t.w1 * g;
            }
        }
    });
    gx
}

/// Separable linear upsampling of every spatial axis of `[C, *spatial]`.
pub(crate) fn upsample<T: Real>(
    x: &[T],
    shape: &[usize],
    factor: usize,
    dims: usize,
) -> Result<(Vec<usize>, Vec<T>)> {
    let (ch, sp) = split_shape(shape, dims)?;
    if factor < 2 {
        return Err(shape_err!("upsampling factor must be >= 2, got {factor}"));
    }
    let mut cur = x.to_vec();
    let mut ext = sp;
    for axis in (3 - dims)..3 {
        let outer = ch * ext[..axis].iter().product::<usize>();
        let inner: usize = ext[axis + 1..].iter().product();
        let taps = linear_taps::<T>(ext[axis], factor);
        cur = interp_axis(&cur, outer, ext[axis], inner, &taps);
        ext[axis] *= factor;
    }
    let mut out_shape = vec![ch];
    out_shape.extend_from_slice(&ext[3 - dims..]);
    Ok((out_shape, cur))
}

pub(crate) fn upsample_backward<T: Real>(
    gy: &[T],
    in_shape: &[usize],
    factor: usize,
    dims: usize,
) -> Vec<T> {
    let (ch, sp) = split_shape(in_shape, dims).expect("validated in forward");
    let mut ext = sp;
    for e in &mut ext[3 - dims..] {
        *e *= factor;
    }
    let mut cur = gy.to_vec();
    for axis in ((3 - dims)..3).rev() {
        let outer = ch * ext[..axis].iter().product::<usize>();
        let inner: usize = ext[axis + 1..].iter().product();
        let taps = linear_taps::<T>(sp[axis], factor);
        cur = interp_axis_adjoint(&cur, outer, sp[axis], inner, &taps);
        ext[axis] = sp[axis];
    }
    cur
}
