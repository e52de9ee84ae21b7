use crate::model::ModelParams;
use crate::numerics::Real;

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(params: &ModelParams<T>, betas: (f64, f64), eps: f64) -> Self {
        let zeros = || params.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self { beta1: betas.0, beta2: betas.1, eps, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Apply one update using the gradients stored in `params`.
    pub fn step<T: Real>(&mut self, params: &mut ModelParams<T>, lr: f64) {
        assert_eq!(params.params.len(), self.m.len(), "optimizer state does not match parameters");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, m), v) in params.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            for (((x, &g), m), v) in p.value.data_mut().iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *x = T::lit(x.as_f64() - update);
            }
        }
    }
}
