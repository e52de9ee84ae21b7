//! Coordinate normalization and sinusoidal positional encoding of
//! `(timestamp, patch index)` pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamp and patch index, each normalized into `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordPair {
    pub t_norm: f64,
    pub i_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Frequency base; level `k` uses `base^k * pi`.
    pub base: f64,
    /// Number of frequency levels per coordinate.
    pub levels: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { base: 1.25, levels: 80 }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base > 1.0) || !self.base.is_finite() {
            return Err(Error::config(format!("encoding base must be > 1, got {}", self.base)));
        }
        if self.levels == 0 {
            return Err(Error::config("encoding needs at least one frequency level"));
        }
        Ok(())
    }

    /// Length of the encoded vector: sin and cos per level for each of two coordinates.
    pub fn dim(&self) -> usize {
        4 * self.levels
    }
}

/// Map 0-based indices to `((frame + 1) / frames, (patch + 1) / patches)`.
pub fn normalize(frame: usize, frames: usize, patch: usize, patches: usize) -> Result<CoordPair> {
    if frame >= frames {
        return Err(Error::Bounds(format!("frame {frame} not in 0..{frames}")));
    }
    if patch >= patches {
        return Err(Error::Bounds(format!("patch {patch} not in 0..{patches}")));
    }
    Ok(CoordPair { t_norm: (frame + 1) as f64 / frames as f64, i_norm: (patch + 1) as f64 / patches as f64 })
}

fn push_levels(out: &mut Vec<f64>, v: f64, cfg: &EncodingConfig) {
    let mut freq = std::f64::consts::PI;
    for _ in 0..cfg.levels {
        let (s, c) = (freq * v).sin_cos();
        out.push(s);
        out.push(c);
        freq *= cfg.base;
    }
}

/// `[sin(b^0 pi v), cos(b^0 pi v), ..., cos(b^(l-1) pi v)]` for one scalar.
pub fn encode_scalar(v: f64, cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * cfg.levels);
    push_levels(&mut out, v, cfg);
    out
}

/// `[sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^0 pi i), cos(b^0 pi i), ...]`,
/// all timestamp terms first. Computed in `f64`.
pub fn encode(c: CoordPair, cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.dim());
    push_levels(&mut out, c.t_norm, cfg);
    push_levels(&mut out, c.i_norm, cfg);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize(9, 10, 15, 16).unwrap(), CoordPair { t_norm: 1.0, i_norm: 1.0 });
        assert_eq!(normalize(0, 10, 0, 1).unwrap().t_norm, 0.1);
        assert_eq!(normalize(0, 1, 3, 16).unwrap().i_norm, 0.25);
        assert!(matches!(normalize(10, 10, 0, 1), Err(Error::Bounds(_))));
        assert!(matches!(normalize(0, 10, 4, 4), Err(Error::Bounds(_))));
    }

    #[test]
    fn encode_unit_coords() {
        let v = encode(CoordPair { t_norm: 1.0, i_norm: 1.0 }, &EncodingConfig { base: 2.0, levels: 1 });
        let expected = [0.0, -1.0, 0.0, -1.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_half_quarter() {
        let v = encode(CoordPair { t_norm: 0.5, i_norm: 0.25 }, &EncodingConfig { base: 2.0, levels: 2 });
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [1.0, 0.0, 0.0, -1.0, h, h, 1.0, 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn default_length() {
        let cfg = EncodingConfig::default();
        assert_eq!(encode(CoordPair { t_norm: 0.3, i_norm: 0.7 }, &cfg).len(), 320);
    }

    #[test]
    fn invalid_configs() {
        assert!(EncodingConfig { base: 1.0, levels: 4 }.validate().is_err());
        assert!(EncodingConfig { base: 2.0, levels: 0 }.validate().is_err());
    }
}
