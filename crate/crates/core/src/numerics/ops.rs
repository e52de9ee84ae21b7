//! Forward and backward kernels for the fixed network graph.
//!
//! Every backward takes what its forward consumed (or produced) plus the
//! upstream gradient and returns input/parameter gradients. All reductions
//! walk memory in a fixed order so results are reproducible bit for bit.

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub struct LinearGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub type ConvGrads<T> = LinearGrads<T>;

fn check_linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (batch, fan_in) = x.dims2()?;
    let (fan_out, w_in) = w.dims2()?;
    if w_in != fan_in || b.shape() != [fan_out] {
        return Err(Error::dim(format!("linear: input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape())));
    }
    Ok((batch, fan_in, fan_out))
}

/// `y[b, o] = sum_k x[b, k] * w[o, k] + bias[o]`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fan_in, fan_out) = check_linear(x, w, bias)?;
    let mut y = Tensor::zeros(&[batch, fan_out]);
    for row in y.data_mut().chunks_exact_mut(fan_out) {
        row.copy_from_slice(bias.data());
    }
    T::gemm(
        batch,
        fan_in,
        fan_out,
        T::one(),
        x.data(),
        fan_in,
        1,
        w.data(),
        1,
        fan_in,
        T::one(),
        y.data_mut(),
        fan_out,
        1,
    );
    Ok(y)
}

pub fn linear_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, gy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (batch, fan_in) = x.dims2()?;
    let (fan_out, _) = w.dims2()?;
    if gy.shape() != [batch, fan_out] || w.shape()[1] != fan_in {
        return Err(Error::dim(format!(
            "linear backward: input {:?}, weight {:?}, grad {:?}",
            x.shape(),
            w.shape(),
            gy.shape()
        )));
    }
    let mut gx = Tensor::zeros(&[batch, fan_in]);
    T::gemm(
        batch,
        fan_out,
        fan_in,
        T::one(),
        gy.data(),
        fan_out,
        1,
        w.data(),
        fan_in,
        1,
        T::zero(),
        gx.data_mut(),
        fan_in,
        1,
    );
    let mut gw = Tensor::zeros(&[fan_out, fan_in]);
    T::gemm(
        fan_out,
        batch,
        fan_in,
        T::one(),
        gy.data(),
        1,
        fan_out,
        x.data(),
        fan_in,
        1,
        T::zero(),
        gw.data_mut(),
        fan_in,
        1,
    );
    let mut gb = Tensor::zeros(&[fan_out]);
    for row in gy.data().chunks_exact(fan_out) {
        for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads { x: gx, w: gw, b: gb })
}

fn check_conv<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (batch, c, h, w) = x.dims4()?;
    let (o, kc, kh, kw) = k.dims4()?;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::dim(format!("conv2d: kernel must be square and odd, got {:?}", k.shape())));
    }
    if kc != c || b.shape() != [o] {
        return Err(Error::dim(format!("conv2d: input {:?}, kernel {:?}, bias {:?}", x.shape(), k.shape(), b.shape())));
    }
    Ok((batch, c, h, w, o, kh))
}

/// Unfold one `[c, h, w]` sample into `[c * ks * ks, h * w]` columns with zero padding `ks / 2`.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, ks: usize, cols: &mut [T]) {
    let pad = ks / 2;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..ks {
            for kx in 0..ks {
                let row = &mut cols[((ch * ks + ky) * ks + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, o) in out.iter_mut().enumerate() {
                        let sx = xx as isize + kx as isize - pad as isize;
                        *o = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, ks: usize, x: &mut [T]) {
    let pad = ks / 2;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..ks {
            for kx in 0..ks {
                let row = &cols[((ch * ks + ky) * ks + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, &g) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution with "same" zero padding.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, k: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, c, h, w, o, ks) = check_conv(x, k, bias)?;
    let hw = h * w;
    let rows = c * ks * ks;
    let mut cols = vec![T::zero(); rows * hw];
    let mut y = Tensor::zeros(&[batch, o, h, w]);
    for (xs, ys) in x.data().chunks_exact(c * hw).zip(y.data_mut().chunks_exact_mut(o * hw)) {
        im2col(xs, c, h, w, ks, &mut cols);
        for (plane, &b) in ys.chunks_exact_mut(hw).zip(bias.data()) {
            plane.fill(b);
        }
        T::gemm(o, rows, hw, T::one(), k.data(), rows, 1, &cols, hw, 1, T::one(), ys, hw, 1);
    }
    Ok(y)
}

pub fn conv2d_backward<T: Real>(x: &Tensor<T>, k: &Tensor<T>, gy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (batch, c, h, w) = x.dims4()?;
    let (o, _, ks, _) = k.dims4()?;
    if gy.shape() != [batch, o, h, w] || k.shape()[1] != c {
        return Err(Error::dim(format!(
            "conv2d backward: input {:?}, kernel {:?}, grad {:?}",
            x.shape(),
            k.shape(),
            gy.shape()
        )));
    }
    let hw = h * w;
    let rows = c * ks * ks;
    let mut cols = vec![T::zero(); rows * hw];
    let mut gcols = vec![T::zero(); rows * hw];
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    let mut gb = Tensor::zeros(&[o]);
    for ((xs, gys), gxs) in
        x.data().chunks_exact(c * hw).zip(gy.data().chunks_exact(o * hw)).zip(gx.data_mut().chunks_exact_mut(c * hw))
    {
        im2col(xs, c, h, w, ks, &mut cols);
        T::gemm(o, hw, rows, T::one(), gys, hw, 1, &cols, 1, hw, T::one(), gk.data_mut(), rows, 1);
        T::gemm(rows, o, hw, T::one(), k.data(), 1, rows, gys, hw, 1, T::zero(), &mut gcols, hw, 1);
        col2im(&gcols, c, h, w, ks, gxs);
        for (acc, plane) in gb.data_mut().iter_mut().zip(gys.chunks_exact(hw)) {
            *acc += plane.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads { x: gx, w: gk, b: gb })
}

fn shuffle_impl<T: Real>(x: &Tensor<T>, s: usize, forward: bool) -> Result<Tensor<T>> {
    if s == 0 {
        return Err(Error::config("upscale factor must be >= 1"));
    }
    let (b, c_in, h_in, w_in) = x.dims4()?;
    let s2 = s * s;
    // (channels, height, width) of the shuffled (low-channel, high-res) side
    let (c, h, w) = if forward {
        if c_in % s2 != 0 {
            return Err(Error::config(format!("pixel_shuffle: {c_in} channels not divisible by {s}^2")));
        }
        (c_in / s2, h_in * s, w_in * s)
    } else {
        if h_in % s != 0 || w_in % s != 0 {
            return Err(Error::config(format!("pixel_unshuffle: {h_in}x{w_in} not divisible by {s}")));
        }
        (c_in, h_in, w_in)
    };
    let (lh, lw) = (h / s, w / s);
    let out_shape = if forward { [b, c, h, w] } else { [b, c * s2, lh, lw] };
    let mut out = Tensor::zeros(&out_shape);
    let src = x.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for u in 0..s {
                for v in 0..s {
                    let lo_c = ci * s2 + u * s + v;
                    for y in 0..lh {
                        for xx in 0..lw {
                            let lo = ((bi * c * s2 + lo_c) * lh + y) * lw + xx;
                            let hi = ((bi * c + ci) * h + y * s + u) * w + xx * s + v;
                            if forward {
                                dst[hi] = src[lo];
                            } else {
                                dst[lo] = src[hi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `[b, c*s*s, h, w] -> [b, c, h*s, w*s]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    shuffle_impl(x, s, true)
}

/// Inverse of [`pixel_shuffle`]; also its backward.
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    shuffle_impl(x, s, false)
}

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of `x * Phi(x)`.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, k, half) = (T::lit(GELU_C), T::lit(SQRT_2_OVER_PI), T::lit(0.5));
    let mut y = x.clone();
    for v in y.data_mut() {
        let u = k * (*v + c * *v * *v * *v);
        *v = half * *v * (T::one() + u.tanh());
    }
    y
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (c, k, half) = (T::lit(GELU_C), T::lit(SQRT_2_OVER_PI), T::lit(0.5));
    let three_c = T::lit(3.0 * GELU_C);
    let mut gx = gy.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
        let th = (k * (v + c * v * v * v)).tanh();
        let d = half * (T::one() + th) + half * v * (T::one() - th * th) * k * (T::one() + three_c * v * v);
        *g *= d;
    }
    gx
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    y
}

/// Backward of [`sigmoid`] expressed through its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, &s) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (T::one() - s);
    }
    gx
}

/// Per-sample, per-channel spatial mean and population variance.
pub fn channel_stats<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let n = T::lit(hw as f64);
    let mut mean = Tensor::zeros(&[b, c]);
    let mut var = Tensor::zeros(&[b, c]);
    for (i, plane) in x.data().chunks_exact(hw).enumerate() {
        let m = plane.iter().copied().sum::<T>() / n;
        let v = plane.iter().map(|&p| (p - m) * (p - m)).sum::<T>() / n;
        mean.data_mut()[i] = m;
        var.data_mut()[i] = v;
    }
    Ok((mean, var))
}

/// What [`adain_backward`] needs from the forward pass.
#[derive(Clone, Debug)]
pub struct AdainCache<T> {
    /// Normalized input `(x - mean) / sqrt(var + eps)`.
    pub xhat: Tensor<T>,
    /// `1 / sqrt(var + eps)` per sample and channel.
    pub inv_std: Vec<T>,
}

/// `sigma * (x - mean(x)) / sqrt(var(x) + eps) + mu`, statistics per sample and channel.
pub fn adain_forward<T: Real>(
    x: &Tensor<T>,
    sigma: &Tensor<T>,
    mu: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, AdainCache<T>)> {
    let (b, c, h, w) = x.dims4()?;
    if sigma.shape() != [b, c] || mu.shape() != [b, c] {
        return Err(Error::dim(format!(
            "adain: features {:?}, sigma {:?}, mu {:?}",
            x.shape(),
            sigma.shape(),
            mu.shape()
        )));
    }
    let (mean, var) = channel_stats(x)?;
    let hw = h * w;
    let mut xhat = x.clone();
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(b * c);
    for (i, (xh, yp)) in xhat.data_mut().chunks_exact_mut(hw).zip(y.data_mut().chunks_exact_mut(hw)).enumerate() {
        let r = T::one() / (var.data()[i] + eps).sqrt();
        let m = mean.data()[i];
        let (s, t) = (sigma.data()[i], mu.data()[i]);
        for (a, o) in xh.iter_mut().zip(yp.iter_mut()) {
            *a = (*a - m) * r;
            *o = s * *a + t;
        }
        inv_std.push(r);
    }
    Ok((y, AdainCache { xhat, inv_std }))
}

pub struct AdainGrads<T> {
    pub x: Tensor<T>,
    pub sigma: Tensor<T>,
    pub mu: Tensor<T>,
}

pub fn adain_backward<T: Real>(cache: &AdainCache<T>, sigma: &Tensor<T>, gy: &Tensor<T>) -> Result<AdainGrads<T>> {
    let (b, c, h, w) = cache.xhat.dims4()?;
    if gy.shape() != cache.xhat.shape() || sigma.shape() != [b, c] {
        return Err(Error::dim(format!(
            "adain backward: cache {:?}, grad {:?}, sigma {:?}",
            cache.xhat.shape(),
            gy.shape(),
            sigma.shape()
        )));
    }
    let hw = h * w;
    let n = T::lit(hw as f64);
    let mut gx = Tensor::zeros(gy.shape());
    let mut gs = Tensor::zeros(&[b, c]);
    let mut gm = Tensor::zeros(&[b, c]);
    for (i, ((xh, g), out)) in cache
        .xhat
        .data()
        .chunks_exact(hw)
        .zip(gy.data().chunks_exact(hw))
        .zip(gx.data_mut().chunks_exact_mut(hw))
        .enumerate()
    {
        let s = sigma.data()[i];
        let r = cache.inv_std[i];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&a, &gg) in xh.iter().zip(g) {
            sum_g += gg;
            sum_gx += gg * a;
        }
        gs.data_mut()[i] = sum_gx;
        gm.data_mut()[i] = sum_g;
        // gradients w.r.t. xhat are sigma * g
        let mean_g = s * sum_g / n;
        let mean_gx = s * sum_gx / n;
        for ((o, &a), &gg) in out.iter_mut().zip(xh).zip(g) {
            *o = r * (s * gg - mean_g - a * mean_gx);
        }
    }
    Ok(AdainGrads { x: gx, sigma: gs, mu: gm })
}
