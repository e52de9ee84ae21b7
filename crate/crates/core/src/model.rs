//! The patch network: positional encoding -> MLP stem -> stylized
//! conv/pixel-shuffle blocks -> RGB head, plus a one-layer style MLP that
//! feeds per-channel AdaIN scales and shifts to every block.
//!
//! Forward passes run on one coordinate at a time. [`PsNerv::forward_traced`]
//! records what [`PsNerv::backward`] needs, so batches are processed by
//! running independent samples (possibly in parallel) and summing gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::ArchConfig;
use crate::embedding::{encode, normalize, CoordPair};
use crate::error::{Error, Result};
use crate::numerics::ops::{self, AdainCache};
use crate::numerics::{Parameter, Real, Tensor};
use crate::par;
use crate::patchgrid;

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub params: Vec<Parameter<T>>,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        Self { params: Vec::new() }
    }
}

impl<T: Real> ModelParams<T> {
    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: p.grad.cast() })
                .collect(),
        }
    }
}

/// Per-block AdaIN statistics produced by the style layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleParams<T> {
    pub sigma: Vec<Vec<T>>,
    pub mu: Vec<Vec<T>>,
}

/// Gradients of one backward pass, aligned with [`ModelParams::params`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Vec<Tensor<T>>,
    /// Gradient with respect to the positional encoding.
    pub input: Tensor<T>,
}

struct BlockRecord<T> {
    input: Tensor<T>,
    adain: Option<(AdainCache<T>, Tensor<T>)>,
    pre_act: Tensor<T>,
}

struct Record<T> {
    emb: Tensor<T>,
    h1: Tensor<T>,
    a1: Tensor<T>,
    blocks: Vec<BlockRecord<T>>,
    head_in: Tensor<T>,
    out: Tensor<T>,
}

/// Activations recorded by a forward pass.
pub struct Trace<T> {
    record: Option<Record<T>>,
}

impl<T> Default for Trace<T> {
    fn default() -> Self {
        Self { record: None }
    }
}

impl<T> Trace<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.record.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    style: Option<usize>,
    blocks: usize,
    head: usize,
}

#[derive(Clone, Debug)]
pub struct PsNerv<T = f32> {
    arch: ArchConfig,
    channels: Vec<usize>,
    layout: Layout,
    params: ModelParams<T>,
}

/// Names and shapes of every parameter tensor for `arch`, in storage order.
pub fn param_shapes(arch: &ArchConfig) -> Vec<(String, Vec<usize>)> {
    let ch = arch.channels();
    let emb = arch.encoding.dim();
    let stem_out = ch[0] * arch.base_h * arch.base_w;
    let mut out = vec![
        ("stem.0.weight".to_string(), vec![arch.stem_hidden, emb]),
        ("stem.0.bias".to_string(), vec![arch.stem_hidden]),
        ("stem.1.weight".to_string(), vec![stem_out, arch.stem_hidden]),
        ("stem.1.bias".to_string(), vec![stem_out]),
    ];
    if arch.adain {
        out.push(("style.weight".into(), vec![arch.style_width(), emb]));
        out.push(("style.bias".into(), vec![arch.style_width()]));
    }
    for (j, &s) in arch.upscales.iter().enumerate() {
        out.push((format!("blocks.{j}.weight"), vec![ch[j + 1] * s * s, ch[j], 3, 3]));
        out.push((format!("blocks.{j}.bias"), vec![ch[j + 1] * s * s]));
    }
    let last = *ch.last().unwrap();
    out.push(("head.weight".into(), vec![3, last, 3, 3]));
    out.push(("head.bias".into(), vec![3]));
    out
}

/// Whether global pruning may touch this tensor: weights only, style layer excluded.
pub fn is_prunable(name: &str) -> bool {
    name.ends_with(".weight") && !name.starts_with("style.")
}

impl<T: Real> PsNerv<T> {
    /// Fresh model: Kaiming-uniform weights, zero biases, zero style layer.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_shapes(&arch)
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".bias") || name.starts_with("style.") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-bound..bound)))
                };
                Parameter::new(name, value)
            })
            .collect();
        Self::from_params(arch, ModelParams { params })
    }

    /// Wrap existing parameters, checking names and shapes against `arch`.
    pub fn from_params(arch: ArchConfig, params: ModelParams<T>) -> Result<Self> {
        arch.validate()?;
        let shapes = param_shapes(&arch);
        if shapes.len() != params.params.len() {
            return Err(Error::config(format!(
                "architecture expects {} parameter tensors, got {}",
                shapes.len(),
                params.params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params.params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::config(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let layout =
            Layout { style: arch.adain.then_some(4), blocks: if arch.adain { 6 } else { 4 }, head: shapes.len() - 2 };
        Ok(Self { channels: arch.channels(), arch, layout, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Real>(&self) -> PsNerv<U> {
        PsNerv {
            arch: self.arch.clone(),
            channels: self.channels.clone(),
            layout: self.layout,
            params: self.params.cast(),
        }
    }

    fn value(&self, idx: usize) -> &Tensor<T> {
        &self.params.params[idx].value
    }

    pub fn embed(&self, c: CoordPair) -> Tensor<T> {
        let e = encode(c, &self.arch.encoding);
        Tensor::new(vec![1, e.len()], e.into_iter().map(T::lit).collect()).expect("embedding shape")
    }

    fn style_raw(&self, emb: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        match self.layout.style {
            Some(i) => Ok(Some(ops::linear_forward(emb, self.value(i), self.value(i + 1))?)),
            None => Ok(None),
        }
    }

    /// Offset of block `j`'s `(scale, shift)` pair inside the style output.
    fn style_offset(&self, j: usize) -> usize {
        2 * self.channels[1..=j].iter().sum::<usize>()
    }

    fn block_style(&self, raw: &Tensor<T>, j: usize) -> (Tensor<T>, Tensor<T>) {
        let c = self.channels[j + 1];
        let off = self.style_offset(j);
        let d = raw.data();
        let sigma = Tensor::from_fn(&[1, c], |k| T::one() + d[off + k]);
        let mu = Tensor::from_fn(&[1, c], |k| d[off + c + k]);
        (sigma, mu)
    }

    /// Style layer output split into per-block `sigma = 1 + raw`, `mu = raw`.
    pub fn style_forward(&self, emb: &Tensor<T>) -> Result<Option<StyleParams<T>>> {
        let Some(raw) = self.style_raw(emb)? else {
            return Ok(None);
        };
        let mut style = StyleParams { sigma: Vec::new(), mu: Vec::new() };
        for j in 0..self.arch.upscales.len() {
            let (s, m) = self.block_style(&raw, j);
            style.sigma.push(s.into_data());
            style.mu.push(m.into_data());
        }
        Ok(Some(style))
    }

    /// One stylized block: conv -> pixel shuffle -> AdaIN (if styled) -> GELU.
    pub fn psb_forward(&self, j: usize, x: &Tensor<T>, style: Option<(&Tensor<T>, &Tensor<T>)>) -> Result<Tensor<T>> {
        let mut rec = None;
        self.psb(j, x, style, &mut rec)
    }

    fn psb(
        &self,
        j: usize,
        x: &Tensor<T>,
        style: Option<(&Tensor<T>, &Tensor<T>)>,
        rec: &mut Option<&mut Vec<BlockRecord<T>>>,
    ) -> Result<Tensor<T>> {
        let wi = self.layout.blocks + 2 * j;
        let z = ops::conv2d_forward(x, self.value(wi), self.value(wi + 1))?;
        let u = ops::pixel_shuffle(&z, self.arch.upscales[j])?;
        let (v, cache) = match style {
            Some((sigma, mu)) => {
                let (v, cache) = ops::adain_forward(&u, sigma, mu, T::lit(self.arch.adain_eps))?;
                (v, Some((cache, sigma.clone())))
            }
            None => (u, None),
        };
        let y = ops::gelu(&v);
        if let Some(r) = rec {
            r.push(BlockRecord { input: x.clone(), adain: cache, pre_act: v });
        }
        Ok(y)
    }

    fn run(&self, c: CoordPair, trace: Option<&mut Trace<T>>) -> Result<Tensor<T>> {
        let emb = self.embed(c);
        let h1 = ops::linear_forward(&emb, self.value(0), self.value(1))?;
        let a1 = ops::gelu(&h1);
        let stem = ops::linear_forward(&a1, self.value(2), self.value(3))?;
        let mut x = stem.reshape(&[1, self.channels[0], self.arch.base_h, self.arch.base_w])?;
        let raw = self.style_raw(&emb)?;
        let mut blocks = Vec::new();
        let mut rec = trace.is_some().then_some(&mut blocks);
        for j in 0..self.arch.upscales.len() {
            let style = raw.as_ref().map(|r| self.block_style(r, j));
            x = self.psb(j, &x, style.as_ref().map(|(s, m)| (s, m)), &mut rec)?;
        }
        let h = self.layout.head;
        let out = ops::sigmoid(&ops::conv2d_forward(&x, self.value(h), self.value(h + 1))?);
        let patch = out.clone().reshape(&[3, self.arch.patch_h(), self.arch.patch_w()])?;
        if let Some(t) = trace {
            t.record = Some(Record { emb, h1, a1, blocks, head_in: x, out });
        }
        Ok(patch)
    }

    /// Predicted patch `[3, H/N, W/N]` for a normalized coordinate.
    pub fn forward(&self, c: CoordPair) -> Result<Tensor<T>> {
        self.run(c, None)
    }

    /// Like [`forward`](Self::forward) but records activations into `trace`.
    pub fn forward_traced(&self, c: CoordPair, trace: &mut Trace<T>) -> Result<Tensor<T>> {
        self.run(c, Some(trace))
    }

    /// Backpropagate `out_grad` (shaped like the patch) through the recorded pass.
    pub fn backward(&self, trace: &Trace<T>, out_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let rec =
            trace.record.as_ref().ok_or_else(|| Error::Usage("backward called before a traced forward pass".into()))?;
        let (ph, pw) = (self.arch.patch_h(), self.arch.patch_w());
        if out_grad.shape() != [3, ph, pw] {
            return Err(Error::dim(format!(
                "output gradient {:?} does not match patch [3, {ph}, {pw}]",
                out_grad.shape()
            )));
        }
        let mut grads: Vec<Tensor<T>> = self.params.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let gy = out_grad.clone().reshape(&[1, 3, ph, pw])?;
        let g_logits = ops::sigmoid_backward(&rec.out, &gy);
        let h = self.layout.head;
        let g = ops::conv2d_backward(&rec.head_in, self.value(h), &g_logits)?;
        grads[h] = g.w;
        grads[h + 1] = g.b;
        let mut gx = g.x;

        let mut g_style = self.layout.style.map(|_| Tensor::zeros(&[1, self.arch.style_width()]));
        for (j, br) in rec.blocks.iter().enumerate().rev() {
            let gv = ops::gelu_backward(&br.pre_act, &gx);
            let gu = match (&br.adain, g_style.as_mut()) {
                (Some((cache, sigma)), Some(gs)) => {
                    let ag = ops::adain_backward(cache, sigma, &gv)?;
                    let c = self.channels[j + 1];
                    let off = self.style_offset(j);
                    gs.data_mut()[off..off + c].copy_from_slice(ag.sigma.data());
                    gs.data_mut()[off + c..off + 2 * c].copy_from_slice(ag.mu.data());
                    ag.x
                }
                _ => gv,
            };
            let gz = ops::pixel_unshuffle(&gu, self.arch.upscales[j])?;
            let wi = self.layout.blocks + 2 * j;
            let g = ops::conv2d_backward(&br.input, self.value(wi), &gz)?;
            grads[wi] = g.w;
            grads[wi + 1] = g.b;
            gx = g.x;
        }

        let g_stem = gx.reshape(&[1, self.value(2).shape()[0]])?;
        let g = ops::linear_backward(&rec.a1, self.value(2), &g_stem)?;
        grads[2] = g.w;
        grads[3] = g.b;
        let g_h1 = ops::gelu_backward(&rec.h1, &g.x);
        let g = ops::linear_backward(&rec.emb, self.value(0), &g_h1)?;
        grads[0] = g.w;
        grads[1] = g.b;
        let mut g_emb = g.x;
        if let (Some(si), Some(gs)) = (self.layout.style, g_style) {
            let g = ops::linear_backward(&rec.emb, self.value(si), &gs)?;
            grads[si] = g.w;
            grads[si + 1] = g.b;
            g_emb.add_assign(&g.x)?;
        }
        Ok(Gradients { params: grads, input: g_emb })
    }

    /// Patch for 0-based frame `t` and patch `p`.
    pub fn predict_patch(&self, t: usize, p: usize) -> Result<Tensor<T>> {
        self.forward(normalize(t, self.arch.frames, p, self.arch.patch_count())?)
    }
}

impl PsNerv<f32> {
    /// Evaluate every patch of frame `t`, stitch, and crop away any padding.
    pub fn decode_frame(&self, t: usize, parallel: bool) -> Result<Tensor<f32>> {
        let patches = par::map_range(self.arch.patch_count(), parallel, |p| self.predict_patch(t, p));
        let patches = patches.into_iter().collect::<Result<Vec<_>>>()?;
        let frame = patchgrid::stitch(&patches, &self.arch.grid_config())?;
        if self.arch.needs_padding() {
            patchgrid::crop(&frame, self.arch.height, self.arch.width)
        } else {
            Ok(frame)
        }
    }

    pub fn decode_all(&self, parallel: bool) -> Result<Vec<Tensor<f32>>> {
        (0..self.arch.frames).map(|t| self.decode_frame(t, parallel)).collect()
    }
}
