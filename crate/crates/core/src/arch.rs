//! Architecture hyperparameters and the automatic upscale-factor derivation.

use serde::{Deserialize, Serialize};

use crate::embedding::EncodingConfig;
use crate::error::{Error, Result};
use crate::patchgrid::GridConfig;

pub const DEFAULT_BLOCKS: usize = 5;
/// Smallest stem grid side the automatic derivation will produce.
pub const DEFAULT_MIN_BASE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub encoding: EncodingConfig,
    /// Patches per side.
    pub grid: usize,
    /// Number of frames the model addresses.
    pub frames: usize,
    /// Source frame size before any padding.
    pub height: usize,
    pub width: usize,
    /// Per-block pixel-shuffle factors.
    pub upscales: Vec<usize>,
    pub base_h: usize,
    pub base_w: usize,
    /// Channels produced by the stem.
    pub base_channels: usize,
    /// Floor for the per-block channel halving.
    pub min_channels: usize,
    pub stem_hidden: usize,
    /// When false every AdaIN layer is replaced by the identity and the style layer is dropped.
    pub adain: bool,
    pub adain_eps: f64,
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Split `total` into exactly `blocks` factors, largest first, padding with 1.
/// Prime factors are merged smallest-pair-first while there are too many.
pub fn factor_upscales(total: usize, blocks: usize) -> Vec<usize> {
    let mut f = prime_factors(total.max(1));
    while f.len() > blocks.max(1) {
        f.sort_unstable();
        let merged = f[0] * f[1];
        f.drain(..2);
        f.push(merged);
    }
    f.sort_unstable_by(|a, b| b.cmp(a));
    f.resize(blocks.max(f.len()), 1);
    f
}

/// Pick the largest total upscale dividing both patch sides that keeps the
/// stem grid at least `min_base` on its short side. Returns `(factors, base_h, base_w)`.
pub fn derive_upscales(patch_h: usize, patch_w: usize, blocks: usize, min_base: usize) -> (Vec<usize>, usize, usize) {
    let g = gcd(patch_h, patch_w);
    let short = patch_h.min(patch_w);
    let total = (1..=g).rev().find(|d| g % d == 0 && short / d >= min_base).unwrap_or(1);
    (factor_upscales(total, blocks), patch_h / total, patch_w / total)
}

impl ArchConfig {
    /// Architecture for a `frames x height x width` video split into `grid x grid`
    /// patches, with upscales derived automatically. Frames that do not divide
    /// by `grid` get patch sizes for the padded frame.
    pub fn for_video(frames: usize, height: usize, width: usize, grid: usize) -> Result<Self> {
        if grid == 0 || frames == 0 || height == 0 || width == 0 {
            return Err(Error::config("frames, height, width and grid must all be positive"));
        }
        let (ph, pw) = (height.div_ceil(grid), width.div_ceil(grid));
        let (upscales, base_h, base_w) = derive_upscales(ph, pw, DEFAULT_BLOCKS, DEFAULT_MIN_BASE);
        Ok(Self {
            encoding: EncodingConfig::default(),
            grid,
            frames,
            height,
            width,
            upscales,
            base_h,
            base_w,
            base_channels: 64,
            min_channels: 32,
            stem_hidden: 256,
            adain: true,
            adain_eps: 1e-5,
        })
    }

    /// Override the upscale factors; the stem grid is recomputed from the patch size.
    pub fn with_upscales(mut self, upscales: Vec<usize>) -> Result<Self> {
        let total: usize = upscales.iter().product();
        let (ph, pw) = (self.patch_h_required(), self.patch_w_required());
        if total == 0 || ph % total != 0 || pw % total != 0 {
            return Err(Error::config(format!(
                "upscales {upscales:?} (product {total}) do not divide the {pw}x{ph} patch"
            )));
        }
        self.base_h = ph / total;
        self.base_w = pw / total;
        self.upscales = upscales;
        Ok(self)
    }

    fn patch_h_required(&self) -> usize {
        self.height.div_ceil(self.grid.max(1))
    }

    fn patch_w_required(&self) -> usize {
        self.width.div_ceil(self.grid.max(1))
    }

    pub fn total_upscale(&self) -> usize {
        self.upscales.iter().product()
    }

    pub fn patch_h(&self) -> usize {
        self.base_h * self.total_upscale()
    }

    pub fn patch_w(&self) -> usize {
        self.base_w * self.total_upscale()
    }

    pub fn patch_count(&self) -> usize {
        self.grid * self.grid
    }

    /// Grid over the (possibly padded) frame the network actually produces.
    pub fn grid_config(&self) -> GridConfig {
        GridConfig { n: self.grid, height: self.grid * self.patch_h(), width: self.grid * self.patch_w() }
    }

    pub fn needs_padding(&self) -> bool {
        let g = self.grid_config();
        (g.height, g.width) != (self.height, self.width)
    }

    /// Stem channels followed by each block's output channels.
    pub fn channels(&self) -> Vec<usize> {
        let mut ch = vec![self.base_channels];
        for _ in &self.upscales {
            let last = *ch.last().unwrap();
            ch.push((last / 2).max(self.min_channels));
        }
        ch
    }

    /// Width of the style layer: a scale and a shift per block output channel.
    pub fn style_width(&self) -> usize {
        2 * self.channels()[1..].iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.encoding.validate() {
            problems.push(e.to_string());
        }
        if self.grid == 0 {
            problems.push("grid must be >= 1".into());
        }
        if self.frames == 0 {
            problems.push("frame count must be >= 1".into());
        }
        if self.upscales.is_empty() || self.upscales.contains(&0) {
            problems.push(format!("upscales must be a non-empty list of factors >= 1, got {:?}", self.upscales));
        }
        if self.base_h == 0 || self.base_w == 0 {
            problems.push("stem grid must be at least 1x1".into());
        }
        if self.base_channels == 0 || self.min_channels == 0 || self.stem_hidden == 0 {
            problems.push("channel widths must be positive".into());
        }
        if !(self.adain_eps > 0.0) {
            problems.push("adain_eps must be > 0".into());
        }
        if problems.is_empty() {
            let (ph, pw) = (self.patch_h_required(), self.patch_w_required());
            if (self.patch_h(), self.patch_w()) != (ph, pw) {
                problems.push(format!(
                    "stem {}x{} upscaled by {} gives {}x{} patches but {}x{} frames with N={} need {pw}x{ph}",
                    self.base_w,
                    self.base_h,
                    self.total_upscale(),
                    self.patch_w(),
                    self.patch_h(),
                    self.width,
                    self.height,
                    self.grid
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hd_factors() {
        let a = ArchConfig::for_video(10, 1080, 1920, 4).unwrap();
        assert_eq!(a.upscales, vec![5, 3, 2, 1, 1]);
        assert_eq!((a.base_w, a.base_h), (16, 9));
        assert_eq!((a.patch_w(), a.patch_h()), (480, 270));
        a.validate().unwrap();
    }

    #[test]
    fn hd720_factors() {
        let a = ArchConfig::for_video(10, 720, 1280, 4).unwrap();
        assert_eq!(a.upscales, vec![5, 2, 2, 1, 1]);
        assert_eq!((a.base_w, a.base_h), (16, 9));
    }

    #[test]
    fn toy_factors_respect_min_base() {
        let a = ArchConfig::for_video(8, 64, 64, 2).unwrap();
        assert_eq!(a.upscales, vec![2, 2, 2, 1, 1]);
        assert_eq!((a.base_h, a.base_w), (4, 4));
    }

    #[test]
    fn too_many_factors_get_merged() {
        assert_eq!(factor_upscales(64, 5), vec![4, 2, 2, 2, 2]);
        assert_eq!(factor_upscales(1, 5), vec![1, 1, 1, 1, 1]);
        assert_eq!(factor_upscales(7 * 3, 5), vec![7, 3, 1, 1, 1]);
    }

    #[test]
    fn channel_schedule_halves_to_floor() {
        let mut a = ArchConfig::for_video(1, 64, 64, 2).unwrap();
        a.base_channels = 128;
        a.min_channels = 24;
        assert_eq!(a.channels(), vec![128, 64, 32, 24, 24, 24]);
        assert_eq!(a.style_width(), 2 * (64 + 32 + 24 * 3));
    }

    #[test]
    fn explicit_upscales_override() {
        let a = ArchConfig::for_video(1, 64, 64, 2).unwrap().with_upscales(vec![4, 2, 1, 1, 1]).unwrap();
        assert_eq!((a.base_h, a.base_w), (4, 4));
        assert!(ArchConfig::for_video(1, 64, 64, 2).unwrap().with_upscales(vec![3]).is_err());
    }

    #[test]
    fn padded_video_arch() {
        let a = ArchConfig::for_video(1, 30, 30, 4).unwrap();
        assert!(a.needs_padding());
        assert_eq!(a.grid_config().height, 32);
        a.validate().unwrap();
    }
}
