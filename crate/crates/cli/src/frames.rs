//! PNG frame directories named `frame_%06d.png`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{ImageBuffer, Rgb};
use psnerv::{FrameSequence, Tensor};

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

fn frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    (digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit())).then(|| digits.parse().ok())?
}

/// Frame files keyed by index; other files are ignored.
pub fn list_frames(dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot read frame directory {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let e = e?;
        if let Some(t) = e.file_name().to_str().and_then(frame_index) {
            out.insert(t, e.path());
        }
    }
    Ok(out)
}

/// Load `frame_000000.png ..` as `[3, H, W]` tensors in `[0, 1]`.
pub fn load_frames(dir: &Path) -> Result<FrameSequence> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        bail!("no frame_%06d.png files in {}", dir.display());
    }
    let last = *files.keys().last().unwrap();
    let missing: Vec<String> = (0..=last).filter(|t| !files.contains_key(t)).map(frame_name).collect();
    if !missing.is_empty() {
        bail!("frame sequence in {} has gaps; missing: {}", dir.display(), missing.join(", "));
    }
    let mut problems = Vec::new();
    let mut frames = Vec::with_capacity(files.len());
    let mut size = None;
    for path in files.values() {
        let img = match image::open(path) {
            Ok(i) => i,
            Err(e) => {
                problems.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let Some(rgb) = img.as_rgb8() else {
            problems.push(format!("{}: expected 8-bit RGB, found {:?}", path.display(), img.color()));
            continue;
        };
        let (w, h) = rgb.dimensions();
        match size {
            None => size = Some((w, h)),
            Some(s) if s != (w, h) => {
                problems.push(format!("{}: size {w}x{h} differs from first frame {}x{}", path.display(), s.0, s.1));
                continue;
            }
            _ => {}
        }
        let (w, h) = (w as usize, h as usize);
        let raw = rgb.as_raw();
        let data = (0..3 * h * w)
            .map(|i| {
                let (c, px) = (i / (h * w), i % (h * w));
                raw[px * 3 + c] as f32 / 255.0
            })
            .collect();
        frames.push(Tensor::new(vec![3, h, w], data)?);
    }
    if !problems.is_empty() {
        bail!("unusable frames:\n  - {}", problems.join("\n  - "));
    }
    Ok(FrameSequence::new(frames)?)
}

/// `[0, 1]` to 8-bit with round-half-away-from-zero.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_frame(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    let [_, h, w] = *frame.shape() else { bail!("frame must be [3, H, W], got {:?}", frame.shape()) };
    let d = frame.data();
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        let px = y as usize * w + x as usize;
        Rgb([to_u8(d[px]), to_u8(d[h * w + px]), to_u8(d[2 * h * w + px])])
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Binary mask images (`frame_%06d.png`, any nonzero pixel is masked) as
/// per-frame `[H, W]` boolean grids. Frames without a file are unmasked.
pub fn load_mask_images(dir: &Path, frames: usize, height: usize, width: usize) -> Result<Vec<Option<Vec<bool>>>> {
    let files = list_frames(dir)?;
    let mut problems = Vec::new();
    let mut out = vec![None; frames];
    for (&t, path) in &files {
        if t >= frames {
            problems.push(format!("{}: the video has only {frames} frames", path.display()));
            continue;
        }
        let img = match image::open(path) {
            Ok(i) => i.to_luma8(),
            Err(e) => {
                problems.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        if img.dimensions() != (width as u32, height as u32) {
            problems.push(format!(
                "{}: mask is {}x{}, frames are {width}x{height}",
                path.display(),
                img.width(),
                img.height()
            ));
            continue;
        }
        out[t] = Some(img.as_raw().iter().map(|&v| v != 0).collect());
    }
    if !problems.is_empty() {
        bail!("unusable mask images:\n  - {}", problems.join("\n  - "));
    }
    Ok(out)
}
