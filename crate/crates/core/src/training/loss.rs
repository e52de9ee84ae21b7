//! Patch reconstruction loss: weighted L1 + (1 - SSIM) + total variation,
//! each with an analytic gradient with respect to the prediction.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

use super::TrainConfig;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_WINDOW: usize = 11;

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid<T: Real>(x: &[T], h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); h * ow];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for xx in 0..ow {
            let mut acc = T::zero();
            for (t, &g) in taps.iter().enumerate() {
                acc += g * row[xx + t];
            }
            tmp[y * ow + xx] = acc;
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for (t, &g) in taps.iter().enumerate() {
            let src = &tmp[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += g * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spread an `oh x ow` map back onto `h x w`.
fn filter_valid_adjoint<T: Real>(m: &[T], h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); h * ow];
    for y in 0..oh {
        for (t, &g) in taps.iter().enumerate() {
            let dst = &mut tmp[(y + t) * ow..(y + t + 1) * ow];
            for (d, &v) in dst.iter_mut().zip(&m[y * ow..(y + 1) * ow]) {
                *d += g * v;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for xx in 0..ow {
            let v = tmp[y * ow + xx];
            for (t, &g) in taps.iter().enumerate() {
                row[xx + t] += g * v;
            }
        }
    }
    out
}

fn plane_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("ssim: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    match *a.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        _ => Err(Error::dim(format!("ssim expects [c, h, w] images, got {:?}", a.shape()))),
    }
}

/// Mean SSIM of `a` against `b` and, optionally, its gradient with respect to `a`.
pub fn ssim_with_grad<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    window: usize,
    want_grad: bool,
) -> Result<(T, Option<Tensor<T>>)> {
    let (c, h, w) = plane_dims(a, b)?;
    if window == 0 || window % 2 == 0 {
        return Err(Error::config(format!("ssim window must be odd, got {window}")));
    }
    if h < window || w < window {
        return Err(Error::config(format!(
            "ssim with a {window}x{window} window needs images at least that large, got {w}x{h}; choose a smaller window"
        )));
    }
    let taps: Vec<T> = gaussian_taps(window, SSIM_SIGMA).into_iter().map(T::lit).collect();
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let two = T::lit(2.0);
    let hw = h * w;
    let nwin = (h - window + 1) * (w - window + 1);
    let norm = T::one() / T::lit((nwin * c) as f64);
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Tensor::zeros(a.shape()));
    for ch in 0..c {
        let pa = &a.data()[ch * hw..(ch + 1) * hw];
        let pb = &b.data()[ch * hw..(ch + 1) * hw];
        let sq = |f: &dyn Fn(T, T) -> T| -> Vec<T> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &taps);
        let mu_b = filter_valid(pb, h, w, &taps);
        let e_aa = filter_valid(&sq(&|x, _| x * x), h, w, &taps);
        let e_bb = filter_valid(&sq(&|_, y| y * y), h, w, &taps);
        let e_ab = filter_valid(&sq(&|x, y| x * y), h, w, &taps);
        let mut d_mu = vec![T::zero(); nwin];
        let mut d_aa = vec![T::zero(); nwin];
        let mut d_ab = vec![T::zero(); nwin];
        let mut sum = T::zero();
        for i in 0..nwin {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let a1 = two * ma * mb + c1;
            let a2 = two * (e_ab[i] - ma * mb) + c2;
            let b1 = ma * ma + mb * mb + c1;
            let b2 = (e_aa[i] - ma * ma) + (e_bb[i] - mb * mb) + c2;
            let s = (a1 * a2) / (b1 * b2);
            sum += s;
            if want_grad {
                let den = b1 * b2;
                d_mu[i] = norm * ((two * mb * a2 - two * mb * a1) / den - s * (two * ma / b1 - two * ma / b2));
                d_aa[i] = norm * (-s / b2);
                d_ab[i] = norm * (two * a1 / den);
            }
        }
        total += sum;
        if let Some(g) = grad.as_mut() {
            let g_mu = filter_valid_adjoint(&d_mu, h, w, &taps);
            let g_aa = filter_valid_adjoint(&d_aa, h, w, &taps);
            let g_ab = filter_valid_adjoint(&d_ab, h, w, &taps);
            let out = &mut g.data_mut()[ch * hw..(ch + 1) * hw];
            for k in 0..hw {
                out[k] = g_mu[k] + two * pa[k] * g_aa[k] + pb[k] * g_ab[k];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Mean local SSIM (Gaussian window, sigma 1.5, unit dynamic range), averaged over channels.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    ssim_with_window(a, b, SSIM_WINDOW)
}

pub fn ssim_with_window<T: Real>(a: &Tensor<T>, b: &Tensor<T>, window: usize) -> Result<T> {
    Ok(ssim_with_grad(a, b, window, false)?.0)
}

fn tv_dims<T: Real>(p: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *p.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        _ => Err(Error::dim(format!("tv expects [c, h, w], got {:?}", p.shape()))),
    }
}

/// Anisotropic total variation: mean |horizontal difference| + mean |vertical difference|.
pub fn tv_with_grad<T: Real>(p: &Tensor<T>, want_grad: bool) -> Result<(T, Option<Tensor<T>>)> {
    let (c, h, w) = tv_dims(p)?;
    let d = p.data();
    let nh = c * h * (w - 1);
    let nv = c * (h - 1) * w;
    let (sh, sv) = (
        if nh > 0 { T::one() / T::lit(nh as f64) } else { T::zero() },
        if nv > 0 { T::one() / T::lit(nv as f64) } else { T::zero() },
    );
    let mut sum_h = T::zero();
    let mut sum_v = T::zero();
    let mut grad = want_grad.then(|| Tensor::zeros(p.shape()));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                if x + 1 < w {
                    let diff = d[i + 1] - d[i];
                    sum_h += diff.abs();
                    if let Some(g) = grad.as_mut() {
                        let s = diff.signum() * sh;
                        let s = if diff == T::zero() { T::zero() } else { s };
                        g.data_mut()[i + 1] += s;
                        g.data_mut()[i] -= s;
                    }
                }
                if y + 1 < h {
                    let diff = d[i + w] - d[i];
                    sum_v += diff.abs();
                    if let Some(g) = grad.as_mut() {
                        let s = if diff == T::zero() { T::zero() } else { diff.signum() * sv };
                        g.data_mut()[i + w] += s;
                        g.data_mut()[i] -= s;
                    }
                }
            }
        }
    }
    Ok((sum_h * sh + sum_v * sv, grad))
}

pub fn tv<T: Real>(p: &Tensor<T>) -> Result<T> {
    Ok(tv_with_grad(p, false)?.0)
}

/// Per-patch objective `alpha * L1 + (1 - alpha) * (1 - SSIM) + tv_weight * TV(pred)`
/// and its gradient with respect to `pred`.
pub fn loss_with_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &TrainConfig) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("loss: prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let alpha = T::lit(cfg.alpha);
    let n = T::lit(pred.numel() as f64);
    let mut l1 = T::zero();
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        l1 += d.abs();
        *g = if d == T::zero() { T::zero() } else { alpha * d.signum() / n };
    }
    let (s, gs) = ssim_with_grad(pred, target, cfg.ssim_window, true)?;
    let gs = gs.expect("requested ssim gradient");
    let beta = T::one() - alpha;
    for (g, &v) in grad.data_mut().iter_mut().zip(gs.data()) {
        *g -= beta * v;
    }
    let mut value = alpha * l1 / n + beta * (T::one() - s);
    if cfg.tv_weight != 0.0 {
        let tw = T::lit(cfg.tv_weight);
        let (tvv, gt) = tv_with_grad(pred, true)?;
        value += tw * tvv;
        for (g, &v) in grad.data_mut().iter_mut().zip(gt.expect("requested tv gradient").data()) {
            *g += tw * v;
        }
    }
    Ok((value, grad))
}

pub fn loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &TrainConfig) -> Result<T> {
    Ok(loss_with_grad(pred, target, cfg)?.0)
}
