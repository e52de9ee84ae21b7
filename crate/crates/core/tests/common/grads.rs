//! Finite-difference checks of every differentiable op, in `f64`.

use psnerv::numerics::ops;
use psnerv::training::{loss_with_grad, ssim_with_grad, tv_with_grad};
use psnerv::{Tensor, TrainConfig};

use super::{dot, numeric_grad, rel_err, rng, uniform};

const H: f64 = 1e-5;

/// `(label, max relative error)` for one op and one input.
pub type Check = (String, f64);

fn check(label: &str, analytic: &Tensor<f64>, x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Check {
    (label.to_string(), rel_err(analytic, &numeric_grad(x, H, f)))
}

pub fn linear(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let x = uniform(&[3, 5], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 5], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    let gy = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let g = ops::linear_backward(&x, &w, &gy).unwrap();
    vec![
        check("linear dx", &g.x, &x, |x| dot(&gy, &ops::linear_forward(x, &w, &b).unwrap())),
        check("linear dw", &g.w, &w, |w| dot(&gy, &ops::linear_forward(&x, w, &b).unwrap())),
        check("linear db", &g.b, &b, |b| dot(&gy, &ops::linear_forward(&x, &w, b).unwrap())),
    ]
}

pub fn conv2d(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 5, 6], -1.0, 1.0, &mut r);
    let k = uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    let gy = uniform(&[2, 4, 5, 6], -1.0, 1.0, &mut r);
    let g = ops::conv2d_backward(&x, &k, &gy).unwrap();
    vec![
        check("conv2d dx", &g.x, &x, |x| dot(&gy, &ops::conv2d_forward(x, &k, &b).unwrap())),
        check("conv2d dk", &g.w, &k, |k| dot(&gy, &ops::conv2d_forward(&x, k, &b).unwrap())),
        check("conv2d db", &g.b, &b, |b| dot(&gy, &ops::conv2d_forward(&x, &k, b).unwrap())),
    ]
}

pub fn pixel_shuffle(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for s in [2, 3] {
        let x = uniform(&[2, 2 * s * s, 3, 2], -1.0, 1.0, &mut r);
        let gy = uniform(&[2, 2, 3 * s, 2 * s], -1.0, 1.0, &mut r);
        let gx = ops::pixel_unshuffle(&gy, s).unwrap();
        out.push(check(&format!("pixel_shuffle s={s}"), &gx, &x, |x| dot(&gy, &ops::pixel_shuffle(x, s).unwrap())));
    }
    out
}

pub fn activations(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let x = uniform(&[4, 7], -3.0, 3.0, &mut r);
    let gy = uniform(&[4, 7], -1.0, 1.0, &mut r);
    let y = ops::sigmoid(&x);
    vec![
        check("gelu", &ops::gelu_backward(&x, &gy), &x, |x| dot(&gy, &ops::gelu(x))),
        check("sigmoid", &ops::sigmoid_backward(&y, &gy), &x, |x| dot(&gy, &ops::sigmoid(x))),
    ]
}

pub fn adain(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut r);
    let sigma = uniform(&[2, 3], 0.5, 1.5, &mut r);
    let mu = uniform(&[2, 3], -0.5, 0.5, &mut r);
    let gy = uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut r);
    let eps = 1e-5;
    let (_, cache) = ops::adain_forward(&x, &sigma, &mu, eps).unwrap();
    let g = ops::adain_backward(&cache, &sigma, &gy).unwrap();
    let f = |x: &Tensor<f64>, s: &Tensor<f64>, m: &Tensor<f64>| dot(&gy, &ops::adain_forward(x, s, m, eps).unwrap().0);
    vec![
        check("adain dx", &g.x, &x, |x| f(x, &sigma, &mu)),
        check("adain dsigma", &g.sigma, &sigma, |s| f(&x, s, &mu)),
        check("adain dmu", &g.mu, &mu, |m| f(&x, &sigma, m)),
    ]
}

pub fn ssim(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (window, shape) in [(11, [3, 12, 13]), (5, [2, 7, 9])] {
        let b = uniform(&shape, 0.0, 1.0, &mut r);
        let noise = uniform(&shape, -0.2, 0.2, &mut r);
        let mut a = b.clone();
        a.add_assign(&noise).unwrap();
        let g = ssim_with_grad(&a, &b, window, true).unwrap().1.unwrap();
        out.push(check(&format!("ssim window {window}"), &g, &a, |a| ssim_with_grad(a, &b, window, false).unwrap().0));
    }
    out
}

pub fn tv(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let x = uniform(&[3, 6, 7], 0.0, 1.0, &mut r);
    let g = tv_with_grad(&x, true).unwrap().1.unwrap();
    vec![check("tv", &g, &x, |x| tv_with_grad(x, false).unwrap().0)]
}

pub fn full_loss(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let target = uniform(&[3, 12, 12], 0.0, 1.0, &mut r);
    let pred = uniform(&[3, 12, 12], 0.0, 1.0, &mut r);
    let cfg = TrainConfig { tv_weight: 0.05, ..TrainConfig::default() };
    let g = loss_with_grad(&pred, &target, &cfg).unwrap().1;
    vec![check("full loss", &g, &pred, |p| loss_with_grad(p, &target, &cfg).unwrap().0)]
}

pub fn all(seed: u64) -> Vec<Check> {
    [linear, conv2d, pixel_shuffle, activations, adain, ssim, tv, full_loss].iter().flat_map(|f| f(seed)).collect()
}
