//! One-dimensional fitting-granularity study.
//!
//! A curve of `M` samples is fitted by three MLPs of (nearly) equal size and
//! identical optimizer budget:
//!
//! * point: one sample per query, `x -> y` (optionally `encode(x) -> y`)
//! * section: one section of `M / K` samples per query, `encode(section) -> values`
//! * whole: a single constant query producing all `M` samples
//!
//! Each network has two GELU hidden layers. Hidden widths are searched so the
//! parameter counts of the three modes agree within [`BUDGET_TOLERANCE`].

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{encode_scalar, EncodingConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{ops, Parameter, Tensor};
use crate::par;
use crate::training::{lr_at, Adam};

/// Largest allowed relative spread of parameter counts across modes.
pub const BUDGET_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ToyTarget {
    /// `0.5 sin(2 pi x) + 0.3 sin(6 pi x + 1) + 0.2 sin(14 pi x + 2)`.
    DefaultSines,
    /// Three sines with seeded frequencies, amplitudes and phases.
    RandomSines {
        seed: u64,
    },
    Constant {
        value: f64,
    },
    /// Explicit sample values; their count must equal `samples`.
    Samples {
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyMode {
    Point,
    Section,
    Whole,
}

impl ToyMode {
    pub const ALL: [ToyMode; 3] = [ToyMode::Point, ToyMode::Section, ToyMode::Whole];

    pub fn name(self) -> &'static str {
        match self {
            ToyMode::Point => "point",
            ToyMode::Section => "section",
            ToyMode::Whole => "whole",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub target: ToyTarget,
    /// Total samples `M`.
    pub samples: usize,
    /// Sections `K`; must divide `samples`.
    pub sections: usize,
    /// Target parameter count for every mode.
    pub param_budget: usize,
    pub encoding: EncodingConfig,
    /// Feed the point mode `encode(x)` instead of raw `x`.
    pub point_encoding: bool,
    pub steps: usize,
    pub lr: f64,
    pub warm_fraction: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            target: ToyTarget::DefaultSines,
            samples: 512,
            sections: 16,
            param_budget: 6000,
            encoding: EncodingConfig { base: 1.25, levels: 16 },
            point_encoding: false,
            steps: 1000,
            lr: 1e-3,
            warm_fraction: 0.0,
            seed: 0,
            parallel: true,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.samples == 0 || self.sections == 0 || self.samples % self.sections != 0 {
            errs.push(format!("sections ({}) must divide samples ({})", self.sections, self.samples));
        }
        if let ToyTarget::Samples { values } = &self.target {
            if values.len() != self.samples {
                errs.push(format!("target file has {} samples, config says {}", values.len(), self.samples));
            }
            if values.iter().any(|v| !v.is_finite()) {
                errs.push("target samples must be finite".into());
            }
        }
        if let Err(e) = self.encoding.validate() {
            errs.push(e.to_string());
        }
        if self.steps == 0 {
            errs.push("steps must be >= 1".into());
        }
        if !(self.lr > 0.0) {
            errs.push(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.warm_fraction) {
            errs.push(format!("warm_fraction must lie in [0, 1), got {}", self.warm_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::config(errs.join("; ")))
        }
    }

    fn io_dims(&self, mode: ToyMode) -> (usize, usize) {
        let enc = 2 * self.encoding.levels;
        match mode {
            ToyMode::Point => (if self.point_encoding { enc } else { 1 }, 1),
            ToyMode::Section => (enc, self.samples / self.sections),
            ToyMode::Whole => (1, self.samples),
        }
    }
}

/// Sample positions `(j + 0.5) / M`.
pub fn sample_grid(samples: usize) -> Vec<f64> {
    (0..samples).map(|j| (j as f64 + 0.5) / samples as f64).collect()
}

pub fn target_values(target: &ToyTarget, samples: usize) -> Vec<f64> {
    let xs = sample_grid(samples);
    match target {
        ToyTarget::DefaultSines => xs
            .iter()
            .map(|&x| 0.5 * (TAU * x).sin() + 0.3 * (3.0 * TAU * x + 1.0).sin() + 0.2 * (7.0 * TAU * x + 2.0).sin())
            .collect(),
        ToyTarget::RandomSines { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let terms: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.random_range(0.1..0.5), rng.random_range(1..8) as f64, rng.random_range(0.0..TAU)))
                .collect();
            xs.iter().map(|&x| terms.iter().map(|&(a, f, p)| a * (TAU * f * x + p).sin()).sum()).collect()
        }
        ToyTarget::Constant { value } => vec![*value; samples],
        ToyTarget::Samples { values } => values.clone(),
    }
}

fn mlp_count(input: usize, h1: usize, h2: usize, output: usize) -> usize {
    h1 * (input + 1) + h2 * (h1 + 1) + output * (h2 + 1)
}

/// Hidden widths `(h1, h2)` for a parameter count near `budget`: the most
/// balanced pair within 1% of the budget, or the closest pair if none is.
pub fn solve_widths(input: usize, output: usize, budget: usize) -> (usize, usize) {
    let slack = budget / 100;
    let mut balanced: Option<(usize, (usize, usize))> = None;
    let mut closest = (usize::MAX, (1, 1));
    for h2 in 1..=budget.max(1) {
        if mlp_count(input, 1, h2, output) > 2 * budget.max(1) {
            break;
        }
        // count is affine in h1 for fixed h2: solve then probe neighbours
        let slope = input + 1 + h2;
        let base = mlp_count(input, 0, h2, output);
        let guess = budget.saturating_sub(base) / slope;
        for h1 in guess.saturating_sub(1).max(1)..=guess + 1 {
            let miss = mlp_count(input, h1, h2, output).abs_diff(budget);
            if miss < closest.0 {
                closest = (miss, (h1, h2));
            }
            let spread = h1.abs_diff(h2);
            if miss <= slack && balanced.is_none_or(|(b, _)| spread < b) {
                balanced = Some((spread, (h1, h2)));
            }
        }
    }
    balanced.map_or(closest.1, |(_, w)| w)
}

/// A dense `in -> h1 -> h2 -> out` network with GELU on both hidden layers.
struct Mlp {
    params: ModelParams<f64>,
}

impl Mlp {
    fn new(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::new();
        for (j, w) in dims.windows(2).enumerate() {
            let bound = (6.0 / w[0] as f64).sqrt();
            let weight = Tensor::from_fn(&[w[1], w[0]], |_| rng.random_range(-bound..bound));
            params.push(Parameter::new(format!("layers.{j}.weight"), weight));
            params.push(Parameter::new(format!("layers.{j}.bias"), Tensor::zeros(&[w[1]])));
        }
        Self { params: ModelParams { params } }
    }

    fn value(&self, i: usize) -> &Tensor<f64> {
        &self.params.params[i].value
    }

    fn forward(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let z1 = ops::linear_forward(x, self.value(0), self.value(1))?;
        let a1 = ops::gelu(&z1);
        let z2 = ops::linear_forward(&a1, self.value(2), self.value(3))?;
        let a2 = ops::gelu(&z2);
        let y = ops::linear_forward(&a2, self.value(4), self.value(5))?;
        Ok(vec![z1, a1, z2, a2, y])
    }

    /// Mean squared error against `target`; gradients land in `params`.
    fn loss_and_grad(&mut self, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
        let acts = self.forward(x)?;
        let (z1, a1, z2, a2, y) = (&acts[0], &acts[1], &acts[2], &acts[3], &acts[4]);
        let n = y.numel() as f64;
        let diff: Vec<f64> = y.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let mse = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let gy = Tensor::new(y.shape().to_vec(), diff.iter().map(|d| 2.0 * d / n).collect())?;
        let g3 = ops::linear_backward(a2, self.value(4), &gy)?;
        let g2 = ops::linear_backward(a1, self.value(2), &ops::gelu_backward(z2, &g3.x))?;
        let g1 = ops::linear_backward(x, self.value(0), &ops::gelu_backward(z1, &g2.x))?;
        let grads = [g1.w, g1.b, g2.w, g2.b, g3.w, g3.b];
        for (p, g) in self.params.params.iter_mut().zip(grads) {
            p.grad = g;
        }
        Ok(mse)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeResult {
    pub mode: ToyMode,
    pub hidden: (usize, usize),
    pub param_count: usize,
    pub steps: usize,
    pub lr: f64,
    pub mse: f64,
    /// Fitted curve at the `M` sample positions.
    #[serde(skip)]
    pub fit: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyResult {
    pub x: Vec<f64>,
    pub target: Vec<f64>,
    /// In [`ToyMode::ALL`] order.
    pub modes: Vec<ModeResult>,
}

impl ToyResult {
    pub fn mode(&self, m: ToyMode) -> &ModeResult {
        self.modes.iter().find(|r| r.mode == m).expect("every mode is run")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,target,fit_point,fit_section,fit_whole\n");
        let (p, sct, w) = (self.mode(ToyMode::Point), self.mode(ToyMode::Section), self.mode(ToyMode::Whole));
        for j in 0..self.x.len() {
            s.push_str(&format!("{},{},{},{},{}\n", self.x[j], self.target[j], p.fit[j], sct.fit[j], w.fit[j]));
        }
        s
    }

    pub fn summary_json(&self, cfg: &ToyConfig) -> serde_json::Value {
        serde_json::json!({
            "seed": cfg.seed,
            "samples": cfg.samples,
            "sections": cfg.sections,
            "modes": self.modes,
        })
    }
}

/// Inputs (one row per query) and targets (one row of outputs per query).
fn problem(cfg: &ToyConfig, mode: ToyMode, target: &[f64]) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let m = cfg.samples;
    let k = cfg.sections;
    let (inp, out) = cfg.io_dims(mode);
    let (rows, x): (usize, Vec<f64>) = match mode {
        ToyMode::Point if cfg.point_encoding => {
            (m, sample_grid(m).iter().flat_map(|&x| encode_scalar(x, &cfg.encoding)).collect())
        }
        ToyMode::Point => (m, sample_grid(m)),
        ToyMode::Section => (k, (0..k).flat_map(|s| encode_scalar((s + 1) as f64 / k as f64, &cfg.encoding)).collect()),
        ToyMode::Whole => (1, vec![1.0]),
    };
    Ok((Tensor::new(vec![rows, inp], x)?, Tensor::new(vec![rows, out], target.to_vec())?))
}

fn run_mode(cfg: &ToyConfig, mode: ToyMode, hidden: (usize, usize), target: &[f64]) -> Result<ModeResult> {
    let (inp, out) = cfg.io_dims(mode);
    let (x, y) = problem(cfg, mode, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::new([inp, hidden.0, hidden.1, out], &mut rng);
    let mut adam = Adam::new(&net.params, (0.9, 0.999), 1e-8);
    for step in 0..cfg.steps {
        net.loss_and_grad(&x, &y)?;
        adam.step(&mut net.params, lr_at(step, cfg.steps, cfg.lr, cfg.warm_fraction));
    }
    let fit = net.forward(&x)?.pop().expect("output").into_data();
    let mse = fit.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / target.len() as f64;
    Ok(ModeResult { mode, hidden, param_count: net.params.count(), steps: cfg.steps, lr: cfg.lr, mse, fit })
}

/// Widths per mode in [`ToyMode::ALL`] order, checked against the budget tolerance.
pub fn mode_widths(cfg: &ToyConfig) -> Result<Vec<(usize, usize)>> {
    let widths: Vec<_> = ToyMode::ALL
        .iter()
        .map(|&m| {
            let (i, o) = cfg.io_dims(m);
            solve_widths(i, o, cfg.param_budget)
        })
        .collect();
    let counts: Vec<usize> = ToyMode::ALL
        .iter()
        .zip(&widths)
        .map(|(&m, &(h1, h2))| {
            let (i, o) = cfg.io_dims(m);
            mlp_count(i, h1, h2, o)
        })
        .collect();
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    if (hi - lo) as f64 > BUDGET_TOLERANCE * hi as f64 {
        return Err(Error::config(format!(
            "parameter counts {counts:?} (point, section, whole) differ by more than {}%; raise param_budget",
            BUDGET_TOLERANCE * 100.0
        )));
    }
    Ok(widths)
}

pub fn run_toy(cfg: &ToyConfig) -> Result<ToyResult> {
    cfg.validate()?;
    let widths = mode_widths(cfg)?;
    let target = target_values(&cfg.target, cfg.samples);
    let modes = par::map_range(3, cfg.parallel, |j| run_mode(cfg, ToyMode::ALL[j], widths[j], &target))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyResult { x: sample_grid(cfg.samples), target, modes })
}
