//! Overfitting the network to one video.
//!
//! Every epoch visits each non-excluded `(frame, patch)` pair exactly once in
//! a seeded shuffled order, split into batches. Per-sample forward/backward
//! passes may run in parallel; their gradients are summed in batch order, so
//! the parallel and sequential paths produce identical parameters.

mod adam;
mod loss;
mod schedule;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{
    gaussian_taps, loss, loss_with_grad, ssim, ssim_with_grad, ssim_with_window, tv, tv_with_grad, SSIM_C1, SSIM_C2,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use schedule::{lr_at, warmup_steps};

use crate::arch::ArchConfig;
use crate::compression::PruneMask;
use crate::embedding::normalize;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::{Gradients, PsNerv, Trace};
use crate::numerics::Tensor;
use crate::par;
use crate::patchgrid::{self, GridConfig};
use crate::video::FrameSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub epochs: usize,
    pub warm_fraction: f64,
    /// Weight of the L1 term; SSIM gets `1 - alpha`.
    pub alpha: f64,
    pub tv_weight: f64,
    /// `(frame, patch)` pairs per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub ssim_window: usize,
    /// Run batch elements on the rayon pool (no effect without the `parallel` feature).
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 300,
            warm_fraction: 0.3,
            alpha: 0.7,
            tv_weight: 1e-3,
            batch_size: 16,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            ssim_window: SSIM_WINDOW,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0) {
            problems.push(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.warm_fraction) {
            problems.push(format!("warm_fraction must lie in [0, 1), got {}", self.warm_fraction));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if !(self.tv_weight >= 0.0) {
            problems.push("tv_weight must be >= 0".into());
        }
        if self.ssim_window % 2 == 0 {
            problems.push(format!("ssim_window must be odd, got {}", self.ssim_window));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            problems.push("adam betas must lie in [0, 1) and eps must be > 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    /// Optimizer steps for a run over `pairs` training pairs.
    pub fn total_steps(&self, pairs: usize) -> usize {
        self.epochs * pairs.div_ceil(self.batch_size.max(1))
    }
}

/// `(frame, patch)` pairs withheld from training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub excluded: BTreeSet<(usize, usize)>,
}

impl MaskSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn contains(&self, t: usize, p: usize) -> bool {
        self.excluded.contains(&(t, p))
    }

    pub fn validate(&self, frames: usize, patches: usize) -> Result<()> {
        match self.excluded.iter().find(|&&(t, p)| t >= frames || p >= patches) {
            Some((t, p)) => Err(Error::Bounds(format!(
                "masked pair (frame {t}, patch {p}) outside {frames} frames x {patches} patches"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub psnr: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub steps: usize,
    pub pairs_per_epoch: usize,
    pub records: Vec<EpochRecord>,
    /// How often each pair (`t * patches + p`) reached the loss.
    pub pair_visits: Vec<u32>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,psnr,lr,seconds\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.loss, r.psnr, r.lr, r.seconds));
        }
        s
    }

    /// Compact summary: final metrics and run shape, without per-pair counters.
    pub fn summary_json(&self) -> serde_json::Value {
        let last = self.records.last();
        serde_json::json!({
            "seed": self.seed,
            "epochs": self.records.len(),
            "steps": self.steps,
            "pairs_per_epoch": self.pairs_per_epoch,
            "final_loss": last.map(|r| r.loss),
            "final_psnr": last.map(|r| r.psnr),
            "seconds": last.map(|r| r.seconds),
        })
    }
}

/// Optional knobs for [`train_model`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Entries held at zero throughout (fine-tuning after pruning).
    pub frozen: Option<&'a PruneMask>,
    pub progress: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Ground-truth patches indexed by `t * patches + p`, padded if the arch asks for it.
pub fn target_patches(video: &FrameSequence, arch: &ArchConfig) -> Result<Vec<Tensor<f32>>> {
    if video.len() != arch.frames || video.height() != arch.height || video.width() != arch.width {
        return Err(Error::config(format!(
            "model expects {} frames of {}x{}, video has {} frames of {}x{}",
            arch.frames,
            arch.width,
            arch.height,
            video.len(),
            video.width(),
            video.height()
        )));
    }
    let grid: GridConfig = arch.grid_config();
    let mut out = Vec::with_capacity(arch.frames * arch.patch_count());
    for (t, frame) in video.frames().iter().enumerate() {
        let frame = if arch.needs_padding() {
            // validated arch: ceil(H / N) * N is exactly the grid height
            patchgrid::replicate_pad(frame, arch.grid)?
        } else {
            frame.clone()
        };
        out.extend(patchgrid::split(&frame, &grid, t)?.into_iter().map(|p| p.pixels));
    }
    Ok(out)
}

struct SampleResult {
    loss: f64,
    psnr: f64,
    grads: Gradients<f32>,
}

/// Train a fresh model; returns the model (parameters + architecture) and the log.
pub fn train(
    video: &FrameSequence,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    mask: &MaskSpec,
) -> Result<(PsNerv<f32>, TrainLog)> {
    cfg.validate()?;
    let mut model = PsNerv::new(arch.clone(), cfg.seed)?;
    let log = train_model(&mut model, video, cfg, mask, TrainOptions::default())?;
    Ok((model, log))
}

/// Continue training `model` in place.
pub fn train_model(
    model: &mut PsNerv<f32>,
    video: &FrameSequence,
    cfg: &TrainConfig,
    mask: &MaskSpec,
    mut opts: TrainOptions<'_>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let arch = model.arch().clone();
    let patches = arch.patch_count();
    mask.validate(arch.frames, patches)?;
    let targets = target_patches(video, &arch)?;
    let mut pairs: Vec<(usize, usize)> = (0..arch.frames)
        .flat_map(|t| (0..patches).map(move |p| (t, p)))
        .filter(|&(t, p)| !mask.contains(t, p))
        .collect();
    if pairs.is_empty() {
        return Err(Error::config("the mask excludes every (frame, patch) pair; nothing left to train on"));
    }
    let frozen = match opts.frozen {
        Some(m) => Some(m.aligned_with(model.params())?),
        None => None,
    };

    let total = cfg.total_steps(pairs.len());
    let mut log = TrainLog {
        seed: cfg.seed,
        steps: 0,
        pairs_per_epoch: pairs.len(),
        records: Vec::with_capacity(cfg.epochs),
        pair_visits: vec![0; arch.frames * patches],
    };
    let mut adam = Adam::new(model.params(), cfg.adam_betas, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let start = Instant::now();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        let (mut loss_sum, mut psnr_sum) = (0.0, 0.0);
        let mut lr = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let results = {
                let m: &PsNerv<f32> = model;
                par::map_slice(batch, cfg.parallel, |&(t, p)| -> Result<SampleResult> {
                    let coord = normalize(t, arch.frames, p, patches)?;
                    let target = &targets[t * patches + p];
                    let mut trace = Trace::new();
                    let pred = m.forward_traced(coord, &mut trace)?;
                    let (l, g) = loss_with_grad(&pred, target, cfg)?;
                    let grads = m.backward(&trace, &g)?;
                    Ok(SampleResult { loss: l as f64, psnr: psnr(&pred, target)?, grads })
                })
            };
            let params = model.params_mut();
            params.zero_grad();
            for (&(t, p), r) in batch.iter().zip(results) {
                let r = r?;
                log.pair_visits[t * patches + p] += 1;
                loss_sum += r.loss;
                psnr_sum += r.psnr.min(100.0);
                for (param, g) in params.params.iter_mut().zip(&r.grads.params) {
                    param.grad.add_assign(g)?;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for (i, param) in params.params.iter_mut().enumerate() {
                param.grad.scale(inv);
                if let Some(f) = &frozen {
                    f.zero_masked(i, param.grad.data_mut());
                }
            }
            lr = lr_at(step, total, cfg.lr, cfg.warm_fraction);
            adam.step(params, lr);
            if let Some(f) = &frozen {
                for (i, param) in params.params.iter_mut().enumerate() {
                    f.zero_masked(i, param.value.data_mut());
                }
            }
            step += 1;
        }
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / pairs.len() as f64,
            psnr: psnr_sum / pairs.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(cb) = opts.progress.as_mut() {
            cb(&rec);
        }
        log.records.push(rec);
    }
    log.steps = step;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EncodingConfig;
    use crate::synthetic;

    fn tiny() -> (FrameSequence, ArchConfig) {
        let video = synthetic::moving_gradient_disk(2, 24, 24, 3);
        let mut arch = ArchConfig::for_video(2, 24, 24, 2).unwrap();
        arch.encoding = EncodingConfig { base: 1.25, levels: 4 };
        arch.base_channels = 8;
        arch.min_channels = 4;
        arch.stem_hidden = 8;
        (video, arch)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 3, ssim_window: 5, lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn full_mask_is_an_error() {
        let (video, arch) = tiny();
        let mask = MaskSpec { excluded: (0..2).flat_map(|t| (0..4).map(move |p| (t, p))).collect() };
        assert!(matches!(train(&video, &arch, &quick_cfg(), &mask), Err(Error::Config(_))));
    }

    #[test]
    fn epochs_cover_pairs_once_and_skip_masked() {
        let (video, arch) = tiny();
        let mask = MaskSpec { excluded: [(0, 1), (1, 3)].into_iter().collect() };
        let cfg = quick_cfg();
        let (_, log) = train(&video, &arch, &cfg, &mask).unwrap();
        assert_eq!(log.pairs_per_epoch, 8 - 2);
        for t in 0..2 {
            for p in 0..4 {
                let expected = if mask.contains(t, p) { 0 } else { cfg.epochs as u32 };
                assert_eq!(log.pair_visits[t * 4 + p], expected);
            }
        }
        assert_eq!(log.steps, cfg.epochs * 2);
        assert_eq!(log.records.len(), 3);
        assert!(log.to_csv().starts_with("epoch,loss,psnr,lr,seconds\n"));
    }

    #[test]
    fn out_of_range_mask_rejected() {
        let (video, arch) = tiny();
        let mask = MaskSpec { excluded: [(5, 0)].into_iter().collect() };
        assert!(matches!(train(&video, &arch, &quick_cfg(), &mask), Err(Error::Bounds(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { alpha: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn seeded_runs_are_identical_and_parallel_matches_sequential() {
        let (video, arch) = tiny();
        let seq = TrainConfig { parallel: false, ..quick_cfg() };
        let (a, la) = train(&video, &arch, &seq, &MaskSpec::none()).unwrap();
        let (b, lb) = train(&video, &arch, &seq, &MaskSpec::none()).unwrap();
        let (c, lc) = train(&video, &arch, &TrainConfig { parallel: true, ..seq.clone() }, &MaskSpec::none()).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.params(), c.params());
        let strip = |l: &TrainLog| l.records.iter().map(|r| (r.loss, r.psnr, r.lr)).collect::<Vec<_>>();
        assert_eq!(strip(&la), strip(&lb));
        assert_eq!(strip(&la), strip(&lc));
    }
}
