use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A clip of `T` RGB frames, each `[3, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Tensor<f32>>,
    height: usize,
    width: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor<f32>>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::config("video has no frames"))?;
        let (height, width) = match *first.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(Error::dim(format!("frames must be [3, H, W], got {s:?}"))),
        };
        for (t, f) in frames.iter().enumerate() {
            if f.shape() != [3, height, width] {
                return Err(Error::dim(format!(
                    "frame {t} has shape {:?}, expected [3, {height}, {width}]",
                    f.shape()
                )));
            }
            if let Some(v) = f.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("frame {t} holds value {v} outside [0, 1]")));
            }
        }
        Ok(Self { frames, height, width })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Tensor<f32> {
        &self.frames[t]
    }
}
