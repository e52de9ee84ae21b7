//! Deterministic test videos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;
use crate::video::FrameSequence;

/// A diagonal colour gradient that drifts over time, with a soft-edged disk
/// moving along a seeded straight path across it.
pub fn moving_gradient_disk(frames: usize, height: usize, width: usize, seed: u64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let radius = 0.22 * h.min(w);
    let start = (rng.random_range(0.3..0.7) * w, rng.random_range(0.3..0.7) * h);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = 0.04 * h.min(w);
    let colour = [rng.random_range(0.6..0.95), rng.random_range(0.05..0.4), rng.random_range(0.3..0.8)];
    let phase: f64 = rng.random_range(0.0..1.0);

    let seq = (0..frames)
        .map(|t| {
            let tt = t as f64;
            let (cx, cy) = (start.0 + speed * angle.cos() * tt, start.1 + speed * angle.sin() * tt);
            let drift = 0.05 * tt + phase;
            Tensor::from_fn(&[3, height, width], |i| {
                let c = i / (height * width);
                let y = ((i / width) % height) as f64 + 0.5;
                let x = (i % width) as f64 + 0.5;
                let u = x / w;
                let v = y / h;
                let bg = match c {
                    0 => 0.15 + 0.6 * u,
                    1 => 0.2 + 0.5 * (0.5 + 0.5 * (std::f64::consts::TAU * (0.5 * v + drift)).sin()),
                    _ => 0.8 - 0.5 * (0.5 * u + 0.5 * v),
                };
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let a = 1.0 / (1.0 + ((d - radius) / 1.5).exp());
                ((1.0 - a) * bg + a * colour[c]).clamp(0.0, 1.0) as f32
            })
        })
        .collect();
    FrameSequence::new(seq).expect("synthetic frames are well formed")
}
