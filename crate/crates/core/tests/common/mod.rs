//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use psnerv::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Central differences of a scalar function, step `h`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = f(&probe);
        probe.data_mut()[i] = v - h;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `max |a - n| / max |n|`, the tensor-normalized relative error.
pub fn rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff = analytic.data().iter().zip(numeric.data()).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    diff / numeric.max_abs().max(1e-12)
}

/// `sum(r * y)`.
pub fn dot(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                .collect()
        })
        .collect();
    let s: f64 = w.iter().flatten().sum();
    w.iter_mut().flatten().for_each(|v| *v /= s);
    w
}

/// Brute-force sliding-window SSIM of one plane: mean luminance-contrast-structure
/// and mean contrast-structure over every fully contained window.
pub fn naive_ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let (c1, c2) = (1e-4, 9e-4);
    let k = 11;
    let win = gaussian_window(k, 1.5);
    let (mut s_sum, mut cs_sum, mut n) = (0.0, 0.0, 0.0);
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    ma += win[i][j] * a[(y + i) * w + x + j];
                    mb += win[i][j] * b[(y + i) * w + x + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let da = a[(y + i) * w + x + j] - ma;
                    let db = b[(y + i) * w + x + j] - mb;
                    va += win[i][j] * da * da;
                    vb += win[i][j] * db * db;
                    cov += win[i][j] * da * db;
                }
            }
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            s_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
            cs_sum += cs;
            n += 1.0;
        }
    }
    (s_sum / n, cs_sum / n)
}

pub fn naive_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [c, h, w] = *a.shape() else { panic!("expected [c, h, w]") };
    let hw = h * w;
    (0..c)
        .map(|ch| naive_ssim_plane(&a.data()[ch * hw..(ch + 1) * hw], &b.data()[ch * hw..(ch + 1) * hw], h, w).0)
        .sum::<f64>()
        / c as f64
}

fn pool2(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (nh, nw) = (h / 2, w / 2);
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            let mut s = 0.0;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                s += p[(2 * y + dy) * w + 2 * x + dx];
            }
            out[y * nw + x] = s / 4.0;
        }
    }
    (out, nh, nw)
}

/// Brute-force MS-SSIM with `scales` levels, renormalized standard weights,
/// contrast-structure clamped at zero.
pub fn naive_ms_ssim(a: &Tensor<f64>, b: &Tensor<f64>, scales: usize) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let total: f64 = weights[..scales].iter().sum();
    let [c, h, w] = *a.shape() else { panic!("expected [c, h, w]") };
    let hw = h * w;
    let mut acc = 0.0;
    for ch in 0..c {
        let mut pa = a.data()[ch * hw..(ch + 1) * hw].to_vec();
        let mut pb = b.data()[ch * hw..(ch + 1) * hw].to_vec();
        let (mut ph, mut pw) = (h, w);
        let mut v = 1.0;
        for (j, wt) in weights[..scales].iter().enumerate() {
            let (s, cs) = naive_ssim_plane(&pa, &pb, ph, pw);
            let term = if j + 1 == scales { s } else { cs };
            v *= term.max(0.0).powf(wt / total);
            let (na, nh, nw) = pool2(&pa, ph, pw);
            pb = pool2(&pb, ph, pw).0;
            pa = na;
            ph = nh;
            pw = nw;
        }
        acc += v;
    }
    acc / c as f64
}

pub mod grads;
