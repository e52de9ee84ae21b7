//! Distortion and rate metrics: PSNR, single- and multi-scale SSIM, bits per pixel.

use serde::{Deserialize, Serialize, Serializer};

use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::par;
use crate::training::{gaussian_taps, MaskSpec, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

/// Standard five-scale MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("cannot compare {:?} with {:?}", a.shape(), b.shape())));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(1 / MSE)` for unit-range signals; `+inf` when identical.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// `8 * bytes / (frames * height * width)`.
pub fn bpp(model_file_bytes: u64, frames: usize, height: usize, width: usize) -> f64 {
    8.0 * model_file_bytes as f64 / (frames * height * width) as f64
}

struct Plane<'a> {
    data: &'a [f64],
    h: usize,
    w: usize,
}

fn filter_valid(x: &Plane<'_>, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (x.h - k + 1, x.w - k + 1);
    let mut tmp = vec![0.0; x.h * ow];
    for y in 0..x.h {
        for xx in 0..ow {
            tmp[y * ow + xx] = taps.iter().enumerate().map(|(t, g)| g * x.data[y * x.w + xx + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = taps.iter().enumerate().map(|(t, g)| g * tmp[(y + t) * ow + xx]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term of two planes.
fn ssim_components(a: &Plane<'_>, b: &Plane<'_>, taps: &[f64]) -> (f64, f64) {
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.data.iter().zip(b.data).map(|(&x, &y)| f(x, y)).collect() };
    let wrap = |d: &[f64]| filter_valid(&Plane { data: d, h: a.h, w: a.w }, taps);
    let mu_a = filter_valid(a, taps);
    let mu_b = filter_valid(b, taps);
    let e_aa = wrap(&prod(|x, _| x * x));
    let e_bb = wrap(&prod(|_, y| y * y));
    let e_ab = wrap(&prod(|x, y| x * y));
    let n = mu_a.len() as f64;
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + SSIM_C2) / (va + vb + SSIM_C2);
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    (s_sum / n, cs_sum / n)
}

fn downsample(p: &Plane<'_>) -> (Vec<f64>, usize, usize) {
    let (h, w) = (p.h / 2, p.w / 2);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = 2 * y * p.w + 2 * x;
            out.push(0.25 * (p.data[i] + p.data[i + 1] + p.data[i + p.w] + p.data[i + p.w + 1]));
        }
    }
    (out, h, w)
}

fn image_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("cannot compare {:?} with {:?}", a.shape(), b.shape())));
    }
    match *a.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(format!("expected [c, h, w] images, got {:?}", a.shape()))),
    }
}

/// Single-scale SSIM, channel-averaged (same definition as the training loss).
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (c, h, w) = image_dims(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (da, db): (Vec<f64>, Vec<f64>) =
        (a.data().iter().map(|v| v.as_f64()).collect(), b.data().iter().map(|v| v.as_f64()).collect());
    let hw = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let pa = Plane { data: &da[ch * hw..(ch + 1) * hw], h, w };
        let pb = Plane { data: &db[ch * hw..(ch + 1) * hw], h, w };
        total += ssim_components(&pa, &pb, &taps).0;
    }
    Ok(total / c as f64)
}

/// Largest scale count (up to five) whose coarsest level still fits the window.
pub fn max_scales(h: usize, w: usize) -> usize {
    let mut side = h.min(w);
    let mut n = 0;
    while n < MS_SSIM_WEIGHTS.len() && side >= SSIM_WINDOW {
        n += 1;
        side /= 2;
    }
    n
}

/// MS-SSIM with as many scales as the image allows (weights renormalized when fewer than five).
pub fn ms_ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (_, h, w) = image_dims(a, b)?;
    let scales = max_scales(h, w);
    if scales == 0 {
        return Err(Error::config(format!(
            "ms-ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    ms_ssim_scales(a, b, scales)
}

/// MS-SSIM over exactly `scales` dyadic levels (2x2 mean pooling between levels).
/// Negative contrast-structure terms are clamped to zero before exponentiation.
pub fn ms_ssim_scales<T: Real>(a: &Tensor<T>, b: &Tensor<T>, scales: usize) -> Result<f64> {
    let (c, h, w) = image_dims(a, b)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::config(format!("ms-ssim supports 1 to 5 scales, got {scales}")));
    }
    if max_scales(h, w) < scales {
        return Err(Error::config(format!(
            "{w}x{h} images are too small for {scales}-scale ms-ssim (need a short side of at least {})",
            SSIM_WINDOW << (scales - 1)
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let hw = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let mut pa: Vec<f64> = a.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).collect();
        let mut pb: Vec<f64> = b.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).collect();
        let (mut ph, mut pw) = (h, w);
        let mut value = 1.0;
        for (j, &wj) in weights.iter().enumerate() {
            let plane_a = Plane { data: &pa, h: ph, w: pw };
            let plane_b = Plane { data: &pb, h: ph, w: pw };
            let (s, cs) = ssim_components(&plane_a, &plane_b, &taps);
            let term = if j + 1 == scales { s } else { cs };
            value *= term.max(0.0).powf(wj / wsum);
            if j + 1 < scales {
                let (na, nh, nw) = downsample(&plane_a);
                let (nb, _, _) = downsample(&plane_b);
                pa = na;
                pb = nb;
                ph = nh;
                pw = nw;
            }
        }
        total += value;
    }
    Ok(total / c as f64)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

fn ser_db_list<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    struct Db(f64);
    impl Serialize for Db {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            ser_db(&self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for &x in v {
        seq.serialize_element(&Db(x))?;
    }
    seq.end()
}

fn de_db<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => t.parse().map_err(serde::de::Error::custom),
    }
}

fn de_db_list<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    struct Db(#[serde(deserialize_with = "de_db")] f64);
    Ok(Vec::<Db>::deserialize(d)?.into_iter().map(|v| v.0).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityReport {
    pub frames: usize,
    #[serde(serialize_with = "ser_db_list", deserialize_with = "de_db_list")]
    pub psnr_per_frame: Vec<f64>,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_mean: f64,
    pub ms_ssim_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bpp: Option<f64>,
}

/// Per-frame PSNR and mean MS-SSIM of `decoded` against `reference`.
pub fn quality_report(reference: &[Tensor<f32>], decoded: &[Tensor<f32>], parallel: bool) -> Result<QualityReport> {
    if reference.len() != decoded.len() || reference.is_empty() {
        return Err(Error::dim(format!("frame counts differ or are zero: {} vs {}", reference.len(), decoded.len())));
    }
    let per_frame = par::map_range(reference.len(), parallel, |t| -> Result<(f64, f64)> {
        Ok((psnr(&reference[t], &decoded[t])?, ms_ssim(&reference[t], &decoded[t])?))
    });
    let per_frame = per_frame.into_iter().collect::<Result<Vec<_>>>()?;
    let n = per_frame.len() as f64;
    let psnr_per_frame: Vec<f64> = per_frame.iter().map(|p| p.0).collect();
    Ok(QualityReport {
        frames: per_frame.len(),
        psnr_mean: psnr_per_frame.iter().sum::<f64>() / n,
        ms_ssim_mean: per_frame.iter().map(|p| p.1).sum::<f64>() / n,
        psnr_per_frame,
        bpp: None,
    })
}

/// Pooled PSNR over the pixels of excluded and of trained patches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionPsnr {
    #[serde(serialize_with = "ser_db")]
    pub masked: f64,
    #[serde(serialize_with = "ser_db")]
    pub unmasked: f64,
}

/// Split every frame by the model's patch grid and pool squared errors
/// separately over patches listed in `mask` and all others. A region with no
/// pixels gets `NaN`.
pub fn region_psnr(
    reference: &[Tensor<f32>],
    decoded: &[Tensor<f32>],
    arch: &ArchConfig,
    mask: &MaskSpec,
) -> Result<RegionPsnr> {
    if reference.len() != decoded.len() || reference.len() != arch.frames {
        return Err(Error::dim(format!(
            "expected {} frames, got {} reference and {} decoded",
            arch.frames,
            reference.len(),
            decoded.len()
        )));
    }
    let (ph, pw) = (arch.patch_h(), arch.patch_w());
    let (mut sums, mut counts) = ([0.0f64; 2], [0usize; 2]);
    for (t, (a, b)) in reference.iter().zip(decoded).enumerate() {
        if a.shape() != b.shape() || a.shape() != [3, arch.height, arch.width] {
            return Err(Error::dim(format!("frame {t}: shapes {:?} and {:?}", a.shape(), b.shape())));
        }
        let plane = arch.height * arch.width;
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let px = i % plane;
            let (row, col) = (px / arch.width, px % arch.width);
            let p = (row / ph) * arch.grid + col / pw;
            let k = usize::from(!mask.contains(t, p));
            let d = (*x as f64) - (*y as f64);
            sums[k] += d * d;
            counts[k] += 1;
        }
    }
    let db = |k: usize| if counts[k] == 0 { f64::NAN } else { psnr_from_mse(sums[k] / counts[k] as f64) };
    Ok(RegionPsnr { masked: db(0), unmasked: db(1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(shape: &[usize], seed: u64, amp: f64) -> Tensor<f64> {
        let mut s = seed | 1;
        Tensor::from_fn(shape, |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2.0 * amp
        })
    }

    #[test]
    fn psnr_cases() {
        let a = Tensor::<f64>::full(&[3, 4, 4], 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let z = Tensor::<f64>::zeros(&[3, 4, 4]);
        let o = Tensor::<f64>::full(&[3, 4, 4], 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        let b = Tensor::<f64>::full(&[3, 4, 4], 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn psnr_symmetric_and_monotone_in_noise() {
        let base = Tensor::<f64>::full(&[3, 16, 16], 0.5);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.1] {
            let mut n = base.clone();
            n.add_assign(&noise(&[3, 16, 16], 7, amp)).unwrap();
            let p = psnr(&base, &n).unwrap();
            assert_eq!(p, psnr(&n, &base).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn bpp_cases() {
        assert_eq!(bpp(1, 1, 2, 4), 1.0);
        assert!((bpp(1_036_800, 132, 720, 1280) - 0.0682).abs() < 1e-4);
        assert_eq!(bpp(100, 2, 8, 8), bpp(100, 1, 8, 8) / 2.0);
        assert_eq!(bpp(200, 1, 8, 8), 2.0 * bpp(100, 1, 8, 8));
    }

    #[test]
    fn ms_ssim_self_and_symmetry() {
        let a = noise(&[3, 64, 64], 3, 0.5);
        let mut b = a.clone();
        b.add_assign(&noise(&[3, 64, 64], 9, 0.05)).unwrap();
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ms_ssim(&a, &b).unwrap(), ms_ssim(&b, &a).unwrap());
    }

    #[test]
    fn ms_ssim_scale_limits() {
        assert_eq!(max_scales(176, 200), 5);
        assert_eq!(max_scales(175, 200), 4);
        assert_eq!(max_scales(10, 10), 0);
        let a = Tensor::<f64>::zeros(&[1, 64, 64]);
        assert!(matches!(ms_ssim_scales(&a, &a, 5), Err(Error::Config(_))));
        assert!(ms_ssim_scales(&a, &a, 3).is_ok());
        let tiny = Tensor::<f64>::zeros(&[1, 8, 8]);
        assert!(ms_ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn ssim_matches_training_ssim() {
        let a = noise(&[3, 32, 40], 11, 0.5);
        let mut b = a.clone();
        b.add_assign(&noise(&[3, 32, 40], 12, 0.1)).unwrap();
        let here = ssim(&a, &b).unwrap();
        let train = crate::training::ssim(&a, &b).unwrap();
        assert!((here - train).abs() < 1e-6);
        // one-scale ms-ssim is plain ssim
        assert!((ms_ssim_scales(&a, &b, 1).unwrap() - here).abs() < 1e-12);
    }

    #[test]
    fn report_serialization() {
        let f = vec![Tensor::<f32>::full(&[3, 16, 16], 0.5)];
        let r = quality_report(&f, &f, false).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["psnr_mean"], "inf");
        assert_eq!(v["ms_ssim_mean"], 1.0);
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["frames", "ms_ssim_mean", "psnr_mean", "psnr_per_frame"]);
        let back: QualityReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
