//! Splitting frames into an `n x n` grid of patches and stitching them back.
//!
//! Patch `p` sits at grid row `p / n`, column `p % n`.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridConfig {
    /// Patches per side.
    pub n: usize,
    pub height: usize,
    pub width: usize,
}

impl GridConfig {
    pub fn new(n: usize, height: usize, width: usize) -> Result<Self> {
        let g = Self { n, height, width };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("grid needs at least one patch per side (N >= 1)"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("frame dimensions must be positive"));
        }
        if self.height % self.n != 0 || self.width % self.n != 0 {
            return Err(Error::config(format!(
                "frame {}x{} (WxH) is not divisible by N={}; pad the frames to a multiple of N or choose a different N",
                self.width, self.height, self.n
            )));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        self.n * self.n
    }

    pub fn patch_h(&self) -> usize {
        self.height / self.n
    }

    pub fn patch_w(&self) -> usize {
        self.width / self.n
    }

    /// Top-left pixel `(row, col)` of patch `p`.
    pub fn origin(&self, p: usize) -> (usize, usize) {
        ((p / self.n) * self.patch_h(), (p % self.n) * self.patch_w())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// `[3, H/N, W/N]`.
    pub pixels: Tensor<f32>,
    pub t_index: usize,
    pub p_index: usize,
}

fn frame_dims(frame: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *frame.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(format!("expected a [channels, H, W] frame, got {:?}", frame.shape()))),
    }
}

/// Cut `frame` into `N*N` patches in row-major order.
pub fn split(frame: &Tensor<f32>, g: &GridConfig, t_index: usize) -> Result<Vec<Patch>> {
    g.validate()?;
    let (c, h, w) = frame_dims(frame)?;
    if (h, w) != (g.height, g.width) {
        return Err(Error::dim(format!("frame is {w}x{h} but the grid expects {}x{}", g.width, g.height)));
    }
    let (ph, pw) = (g.patch_h(), g.patch_w());
    let src = frame.data();
    (0..g.patch_count())
        .map(|p| {
            let (r0, c0) = g.origin(p);
            let mut data = Vec::with_capacity(c * ph * pw);
            for ch in 0..c {
                for y in 0..ph {
                    let start = (ch * h + r0 + y) * w + c0;
                    data.extend_from_slice(&src[start..start + pw]);
                }
            }
            Ok(Patch { pixels: Tensor::new(vec![c, ph, pw], data)?, t_index, p_index: p })
        })
        .collect()
}

/// Inverse of [`split`]: place patch tensors (given in row-major patch order) into a frame.
pub fn stitch(patches: &[Tensor<f32>], g: &GridConfig) -> Result<Tensor<f32>> {
    g.validate()?;
    if patches.len() != g.patch_count() {
        return Err(Error::dim(format!("stitch needs {} patches, got {}", g.patch_count(), patches.len())));
    }
    let (ph, pw) = (g.patch_h(), g.patch_w());
    let c = frame_dims(&patches[0])?.0;
    let mut frame = Tensor::zeros(&[c, g.height, g.width]);
    let (h, w) = (g.height, g.width);
    let dst = frame.data_mut();
    for (p, patch) in patches.iter().enumerate() {
        if patch.shape() != [c, ph, pw] {
            return Err(Error::dim(format!("patch {p} has shape {:?}, expected {:?}", patch.shape(), [c, ph, pw])));
        }
        let (r0, c0) = g.origin(p);
        for ch in 0..c {
            for y in 0..ph {
                let start = (ch * h + r0 + y) * w + c0;
                dst[start..start + pw].copy_from_slice(&patch.data()[(ch * ph + y) * pw..][..pw]);
            }
        }
    }
    Ok(frame)
}

/// Replicate-pad a `[c, h, w]` frame on the bottom/right up to the next multiple of `multiple`.
pub fn replicate_pad(frame: &Tensor<f32>, multiple: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = frame_dims(frame)?;
    if multiple == 0 {
        return Err(Error::config("pad multiple must be >= 1"));
    }
    let (nh, nw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let src = frame.data();
    Ok(Tensor::from_fn(&[c, nh, nw], |i| {
        let (ch, rest) = (i / (nh * nw), i % (nh * nw));
        let (y, x) = ((rest / nw).min(h - 1), (rest % nw).min(w - 1));
        src[(ch * h + y) * w + x]
    }))
}

/// Keep the top-left `height x width` region of a `[c, h, w]` frame.
pub fn crop(frame: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = frame_dims(frame)?;
    if height > h || width > w || height == 0 || width == 0 {
        return Err(Error::dim(format!("cannot crop {w}x{h} to {width}x{height}")));
    }
    let src = frame.data();
    Ok(Tensor::from_fn(&[c, height, width], |i| {
        let (ch, rest) = (i / (height * width), i % (height * width));
        src[(ch * h + rest / width) * w + rest % width]
    }))
}
