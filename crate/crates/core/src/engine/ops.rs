//! Dense kernels. Loop orders are fixed so results are reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{ConvGeometry, PoolAttrs};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub geo: ConvGeometry,
    pub stride: usize,
    pub padding: usize,
}

/// Range of output columns whose input column `ox * stride + k - pad` is in
/// bounds.
#[inline]
fn valid_range(out: usize, inp: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if inp + pad > k {
        ((inp + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// `active` marks input channels that may be non-zero; inactive planes are
/// skipped, which leaves the sums unchanged.
pub fn conv_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &ConvParams,
    active: Option<&[bool]>,
) -> Tensor<T> {
    let [n, c_in, ih, iw] = x.shape();
    let g = &p.geo;
    let (oh, ow) = (g.out_h, g.out_w);
    let (ipg, opg) = (g.in_per_group(), g.out_per_group());
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let mut y = Tensor::zeros([n, g.c_out, oh, ow]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for ni in 0..n {
        for oc in 0..g.c_out {
            let grp = oc / opg;
            let out = &mut yd[(ni * g.c_out + oc) * oh * ow..(ni * g.c_out + oc + 1) * oh * ow];
            if let Some(b) = bias {
                out.iter_mut().for_each(|v| *v = b.data()[oc]);
            }
            for icg in 0..ipg {
                let ic = grp * ipg + icg;
                if active.is_some_and(|a| !a[ic]) {
                    continue;
                }
                let inp = &xd[(ni * c_in + ic) * ih * iw..(ni * c_in + ic + 1) * ih * iw];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, p.stride, p.padding);
                    for kx in 0..kw {
                        let wv = wd[((oc * ipg + icg) * kh + ky) * kw + kx];
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, p.stride, p.padding);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * p.stride + ky - p.padding;
                            let row_in = &inp[iy * iw..(iy + 1) * iw];
                            let row_out = &mut out[oy * ow..(oy + 1) * ow];
                            for ox in ox_lo..ox_hi {
                                row_out[ox] += wv * row_in[ox * p.stride + kx - p.padding];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    p: &ConvParams,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let [n, c_in, ih, iw] = x.shape();
    let g = &p.geo;
    let (oh, ow) = (g.out_h, g.out_w);
    let (ipg, opg) = (g.in_per_group(), g.out_per_group());
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::zero(); g.c_out];
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    for ni in 0..n {
        for oc in 0..g.c_out {
            let grp = oc / opg;
            let go = &dyd[(ni * g.c_out + oc) * oh * ow..(ni * g.c_out + oc + 1) * oh * ow];
            let mut s = T::zero();
            for &v in go {
                s += v;
            }
            db[oc] += s;
            for icg in 0..ipg {
                let ic = grp * ipg + icg;
                let base = (ni * c_in + ic) * ih * iw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, p.stride, p.padding);
                    for kx in 0..kw {
                        let widx = ((oc * ipg + icg) * kh + ky) * kw + kx;
                        let wv = wd[widx];
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, p.stride, p.padding);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * p.stride + ky - p.padding;
                            let row = base + iy * iw;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * p.stride + kx - p.padding;
                                let gv = go[oy * ow + ox];
                                acc += gv * xd[row + ix];
                                dxd[row + ix] += wv * gv;
                            }
                        }
                        dwd[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

pub fn fc_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    c_out: usize,
) -> Tensor<T> {
    let [n, c_in, _, _] = x.shape();
    let mut y = Tensor::zeros([n, c_out, 1, 1]);
    let (xd, wd) = (x.data(), w.data());
    let yd = y.data_mut();
    for ni in 0..n {
        let row = &xd[ni * c_in..(ni + 1) * c_in];
        for o in 0..c_out {
            let mut acc = bias.map_or(T::zero(), |b| b.data()[o]);
            for (wv, xv) in wd[o * c_in..(o + 1) * c_in].iter().zip(row) {
                acc += *wv * *xv;
            }
            yd[ni * c_out + o] = acc;
        }
    }
    y
}

pub fn fc_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    c_out: usize,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let [n, c_in, _, _] = x.shape();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::zero(); c_out];
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    for ni in 0..n {
        for o in 0..c_out {
            let gv = dyd[ni * c_out + o];
            db[o] += gv;
            for i in 0..c_in {
                dwd[o * c_in + i] += gv * xd[ni * c_in + i];
                dxd[ni * c_in + i] += gv * wd[o * c_in + i];
            }
        }
    }
    (dx, dw, db)
}

/// Saved state for batch-norm backward.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance, for the running estimate.
    pub batch_var: Vec<T>,
    pub train: bool,
}

pub fn bn_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    train: bool,
) -> (Tensor<T>, BnSaved<T>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let m = n * plane;
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut unbiased = vec![T::zero(); c];
    if train {
        let mf = T::from_usize(m).unwrap();
        for ch in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                for v in &xd[(ni * c + ch) * plane..(ni * c + ch + 1) * plane] {
                    s += *v;
                }
            }
            let mu = s / mf;
            let mut q = T::zero();
            for ni in 0..n {
                for v in &xd[(ni * c + ch) * plane..(ni * c + ch + 1) * plane] {
                    let d = *v - mu;
                    q += d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = q / mf;
            unbiased[ch] = if m > 1 {
                q / T::from_usize(m - 1).unwrap()
            } else {
                var[ch]
            };
        }
    } else {
        mean.copy_from_slice(running_mean);
        var.copy_from_slice(running_var);
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let hd = xhat.data_mut();
        let yd = y.data_mut();
        for ni in 0..n {
            for ch in 0..c {
                let r = (ni * c + ch) * plane..(ni * c + ch + 1) * plane;
                for i in r {
                    let xh = (xd[i] - mean[ch]) * inv_std[ch];
                    hd[i] = xh;
                    yd[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
    }
    (
        y,
        BnSaved {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: unbiased,
            train,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<T: Real>(
    dy: &Tensor<T>,
    gamma: &[T],
    s: &BnSaved<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let m = T::from_usize(n * plane).unwrap();
    let (dyd, hd) = (dy.data(), s.xhat.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ch in 0..c {
            for i in (ni * c + ch) * plane..(ni * c + ch + 1) * plane {
                dgamma[ch] += dyd[i] * hd[i];
                dbeta[ch] += dyd[i];
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    let dxd = dx.data_mut();
    for ni in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * s.inv_std[ch];
            for i in (ni * c + ch) * plane..(ni * c + ch + 1) * plane {
                dxd[i] = if s.train {
                    k * (dyd[i] - dbeta[ch] / m - hd[i] * dgamma[ch] / m)
                } else {
                    k * dyd[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if *v > T::zero() { *v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
        if *v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Max pooling; returns the flat input index of each output's maximum
/// (first occurrence wins).
pub fn maxpool_forward<T: Real>(
    x: &Tensor<T>,
    p: &PoolAttrs,
    oh: usize,
    ow: usize,
) -> (Tensor<T>, Vec<usize>) {
    let [n, c, ih, iw] = x.shape();
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let xd = x.data();
    let yd = y.data_mut();
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut at = usize::MAX;
                for ky in 0..p.kernel {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..p.kernel {
                        let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let idx = nc * ih * iw + iy as usize * iw + ix as usize;
                        if at == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            at = idx;
                        }
                    }
                }
                let o = (nc * oh + oy) * ow + ox;
                yd[o] = best;
                arg[o] = at;
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Real>(in_shape: [usize; 4], arg: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for (o, &i) in arg.iter().enumerate() {
        dxd[i] += dy.data()[o];
    }
    dx
}

/// Average pooling; padded positions count toward the divisor.
pub fn avgpool_forward<T: Real>(x: &Tensor<T>, p: &PoolAttrs, oh: usize, ow: usize) -> Tensor<T> {
    let [n, c, ih, iw] = x.shape();
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let div = T::from_usize(p.kernel * p.kernel).unwrap();
    let xd = x.data();
    let yd = y.data_mut();
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for ky in 0..p.kernel {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..p.kernel {
                        let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        s += xd[nc * ih * iw + iy as usize * iw + ix as usize];
                    }
                }
                yd[(nc * oh + oy) * ow + ox] = s / div;
            }
        }
    }
    y
}

pub fn avgpool_backward<T: Real>(in_shape: [usize; 4], p: &PoolAttrs, dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, ih, iw] = in_shape;
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(in_shape);
    let div = T::from_usize(p.kernel * p.kernel).unwrap();
    let dxd = dx.data_mut();
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy.data()[(nc * oh + oy) * ow + ox] / div;
                for ky in 0..p.kernel {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..p.kernel {
                        let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        dxd[nc * ih * iw + iy as usize * iw + ix as usize] += g;
                    }
                }
            }
        }
    }
    dx
}

pub fn gap_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let div = T::from_usize(plane).unwrap();
    let data = x
        .data()
        .chunks(plane)
        .map(|ch| {
            let mut s = T::zero();
            for v in ch {
                s += *v;
            }
            s / div
        })
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).unwrap()
}

pub fn gap_backward<T: Real>(in_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
    let plane = in_shape[2] * in_shape[3];
    let div = T::from_usize(plane).unwrap();
    let mut data = Vec::with_capacity(in_shape.iter().product());
    for g in dy.data() {
        let v = *g / div;
        data.extend(core::iter::repeat_n(v, plane));
    }
    Tensor::from_vec(in_shape, data).unwrap()
}

pub fn concat_forward<T: Real>(xs: &[&Tensor<T>]) -> Tensor<T> {
    let [n, _, h, w] = xs[0].shape();
    let c: usize = xs.iter().map(|x| x.shape()[1]).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for ni in 0..n {
        for x in xs {
            let s = x.sample_len();
            data.extend_from_slice(&x.data()[ni * s..(ni + 1) * s]);
        }
    }
    Tensor::from_vec([n, c, h, w], data).unwrap()
}

pub fn concat_backward<T: Real>(dy: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let mut out = Vec::with_capacity(widths.len());
    let mut off = 0;
    for &wc in widths {
        let mut data = Vec::with_capacity(n * wc * plane);
        for ni in 0..n {
            let start = (ni * c + off) * plane;
            data.extend_from_slice(&dy.data()[start..start + wc * plane]);
        }
        out.push(Tensor::from_vec([n, wc, h, w], data).unwrap());
        off += wc;
    }
    out
}

/// Multiplies channel `c` of every sample by `mask[c]`.
pub fn apply_channel_mask<T: Real>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let mut y = x.clone();
    let [_, c, h, w] = x.shape();
    let plane = h * w;
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let m = mask[i % c];
        if m != T::one() {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
    }
    y
}
