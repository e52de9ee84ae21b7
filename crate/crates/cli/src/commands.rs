use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use psnerv::compression::{self, TableMode};
use psnerv::metrics::{self, region_psnr};
use psnerv::toyfit::{self, ToyConfig, ToyMode, ToyTarget};
use psnerv::training::EpochRecord;
use psnerv::{train_model, ArchConfig, FrameSequence, MaskSpec, PsNerv, TrainConfig, TrainLog, TrainOptions};
use serde_json::json;

use crate::config::{Overrides, RunConfig};
use crate::frames::{frame_name, load_frames, load_mask_images, save_frame};

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn read_model(path: &Path) -> Result<(ArchConfig, PsNerv<f32>, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let (arch, params) = compression::load(&bytes).with_context(|| format!("loading {}", path.display()))?;
    let model = PsNerv::from_params(arch.clone(), params)?;
    Ok((arch, model, bytes.len() as u64))
}

fn effective_config(cfg: &RunConfig, arch: &ArchConfig, param_count: usize) -> serde_json::Value {
    json!({ "run": cfg, "arch": arch, "param_count": param_count })
}

fn run_training(
    video: &FrameSequence,
    arch: &ArchConfig,
    train: &TrainConfig,
    mask: &MaskSpec,
) -> Result<(PsNerv<f32>, TrainLog)> {
    let mut model = PsNerv::new(arch.clone(), train.seed)?;
    info!("training {} parameters, upscales {:?}", model.param_count(), arch.upscales);
    let every = (train.epochs / 20).max(1);
    let mut progress = |r: &EpochRecord| {
        if r.epoch % every == 0 || r.epoch + 1 == train.epochs {
            info!("epoch {} loss {:.5} psnr {:.2} lr {:.2e}", r.epoch, r.loss, r.psnr, r.lr);
        }
    };
    let opts = TrainOptions { frozen: None, progress: Some(&mut progress) };
    let log = train_model(&mut model, video, train, mask, opts)?;
    Ok((model, log))
}

fn write_logs(dir: &Path, log: &TrainLog) -> Result<()> {
    fs::write(dir.join("train_log.csv"), log.to_csv())?;
    write_json(&dir.join("train_summary.json"), &log.summary_json())
}

pub fn encode(frames: &Path, out: &Path, o: &Overrides) -> Result<()> {
    let cfg = RunConfig::resolve(o)?;
    let video = load_frames(frames)?;
    let arch = cfg.arch_for(video.len(), video.height(), video.width())?;
    let dir = parent_dir(out);
    fs::create_dir_all(&dir)?;
    let (model, log) = run_training(&video, &arch, &cfg.train, &MaskSpec::none())?;
    fs::write(out, compression::save_raw(&arch, model.params())?)?;
    write_logs(&dir, &log)?;
    write_json(&dir.join("config.json"), &effective_config(&cfg, &arch, model.param_count()))?;
    println!(
        "trained {} params for {} steps; final psnr {:.2} dB -> {}",
        model.param_count(),
        log.steps,
        log.records.last().map_or(f64::NAN, |r| r.psnr),
        out.display()
    );
    Ok(())
}

pub fn decode(model_path: &Path, out: &Path, frames: Option<&[usize]>, parallel: bool) -> Result<()> {
    let (arch, model, _) = read_model(model_path)?;
    let wanted: Vec<usize> = match frames {
        Some(f) => f.to_vec(),
        None => (0..arch.frames).collect(),
    };
    let bad: Vec<String> = wanted.iter().filter(|&&t| t >= arch.frames).map(|t| t.to_string()).collect();
    if !bad.is_empty() {
        bail!("model holds {} frames; requested out-of-range frames {}", arch.frames, bad.join(", "));
    }
    fs::create_dir_all(out)?;
    for &t in &wanted {
        save_frame(&model.decode_frame(t, parallel)?, &out.join(frame_name(t)))?;
    }
    println!("decoded {} frame(s) to {}", wanted.len(), out.display());
    Ok(())
}

pub struct CompressArgs {
    pub model: PathBuf,
    pub out: PathBuf,
    pub sparsity: Option<f64>,
    pub bits: Option<u8>,
    pub table_mode: Option<TableMode>,
    pub config: Option<PathBuf>,
    pub finetune_epochs: Option<usize>,
    pub source: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn compress(a: &CompressArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.sparsity {
        cfg.compress.sparsity = v;
    }
    if let Some(v) = a.bits {
        cfg.compress.bits = v;
    }
    if let Some(v) = a.table_mode {
        cfg.compress.table_mode = v;
    }
    if let Some(v) = a.finetune_epochs {
        cfg.finetune_epochs = v;
    }
    let mut problems = cfg.compress.validate();
    if cfg.finetune_epochs > 0 && a.source.is_none() {
        problems.push("fine-tuning needs the source frames (--source)".into());
    }
    if cfg.finetune_epochs > 0 {
        if let Err(e) = cfg.train.validate() {
            problems.push(e.to_string());
        }
    }
    if !problems.is_empty() {
        bail!("invalid compression settings:\n  - {}", problems.join("\n  - "));
    }
    let (arch, mut model, raw_size) = read_model(&a.model)?;
    let video = match (&a.source, cfg.finetune_epochs) {
        (Some(dir), n) if n > 0 => Some(load_frames(dir)?),
        _ => None,
    };

    let mut finetune = None;
    if let Some(video) = &video {
        let (pruned, mask) = compression::prune_global(model.params(), cfg.compress.sparsity)?;
        *model.params_mut() = pruned;
        let train = TrainConfig { epochs: cfg.finetune_epochs, ..cfg.train.clone() };
        let opts = TrainOptions { frozen: Some(&mask), progress: None };
        let log = train_model(&mut model, video, &train, &MaskSpec::none(), opts)?;
        finetune = Some(log.summary_json());
    }
    let c = compression::compress(&arch, model.params(), &cfg.compress)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, &c.bytes)?;
    let report = json!({
        "input_bytes": raw_size,
        "compression": c.report,
        "bpp": metrics::bpp(c.bytes.len() as u64, arch.frames, arch.height, arch.width),
        "video": { "frames": arch.frames, "height": arch.height, "width": arch.width },
        "finetune": finetune,
    });
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        p.into()
    });
    write_json(&report_path, &report)?;
    println!(
        "{} -> {} bytes ({} pruned of {} prunable, {} bits) -> {}",
        raw_size,
        c.bytes.len(),
        c.report.pruned,
        c.report.prunable,
        c.report.bits,
        a.out.display()
    );
    Ok(())
}

pub fn metrics(
    reference: &Path,
    decoded: &Path,
    model_file: Option<&Path>,
    out: Option<&Path>,
    parallel: bool,
) -> Result<()> {
    let a = load_frames(reference)?;
    let b = load_frames(decoded)?;
    ensure!(
        a.len() == b.len() && a.height() == b.height() && a.width() == b.width(),
        "frame sets differ: {} frames of {}x{} vs {} frames of {}x{}",
        a.len(),
        a.width(),
        a.height(),
        b.len(),
        b.width(),
        b.height()
    );
    let size = match model_file {
        Some(p) => Some(fs::metadata(p).with_context(|| format!("reading {}", p.display()))?.len()),
        None => None,
    };
    let mut report = metrics::quality_report(a.frames(), b.frames(), parallel)?;
    report.bpp = size.map(|s| metrics::bpp(s, a.len(), a.height(), a.width()));
    match out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

/// Excluded pairs from a JSON pair list or a directory of mask PNGs.
fn read_mask(path: &Path, arch: &ArchConfig) -> Result<MaskSpec> {
    if path.is_dir() {
        let images = load_mask_images(path, arch.frames, arch.height, arch.width)?;
        let (ph, pw) = (arch.patch_h(), arch.patch_w());
        let mut mask = MaskSpec::none();
        for (t, img) in images.iter().enumerate() {
            let Some(img) = img else { continue };
            for (i, _) in img.iter().enumerate().filter(|(_, &m)| m) {
                let (row, col) = (i / arch.width, i % arch.width);
                mask.excluded.insert((t, (row / ph) * arch.grid + col / pw));
            }
        }
        Ok(mask)
    } else {
        let text = fs::read_to_string(path).with_context(|| format!("reading mask {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing mask {}", path.display()))
    }
}

pub fn inpaint(frames: &Path, mask_path: &Path, out: &Path, o: &Overrides) -> Result<()> {
    let cfg = RunConfig::resolve(o)?;
    let video = load_frames(frames)?;
    let arch = cfg.arch_for(video.len(), video.height(), video.width())?;
    let mask = read_mask(mask_path, &arch)?;
    mask.validate(arch.frames, arch.patch_count())?;
    if mask.excluded.len() >= arch.frames * arch.patch_count() {
        bail!("the mask excludes all {} (frame, patch) pairs; nothing left to train on", mask.excluded.len());
    }
    fs::create_dir_all(out.join("frames"))?;
    let (model, log) = run_training(&video, &arch, &cfg.train, &mask)?;
    fs::write(out.join("model.psnv"), compression::save_raw(&arch, model.params())?)?;
    let decoded = model.decode_all(cfg.train.parallel)?;
    for (t, f) in decoded.iter().enumerate() {
        save_frame(f, &out.join("frames").join(frame_name(t)))?;
    }
    write_logs(out, &log)?;
    write_json(&out.join("mask.json"), &mask)?;
    write_json(&out.join("config.json"), &effective_config(&cfg, &arch, model.param_count()))?;
    let regions = region_psnr(video.frames(), &decoded, &arch, &mask)?;
    write_json(&out.join("inpaint_report.json"), &json!({ "excluded_pairs": mask.excluded.len(), "psnr": regions }))?;
    println!(
        "excluded {} pairs; psnr masked {:.2} dB, unmasked {:.2} dB -> {}",
        mask.excluded.len(),
        regions.masked,
        regions.unmasked,
        out.display()
    );
    Ok(())
}

pub fn toyfit(
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    steps: Option<usize>,
    target_file: Option<&Path>,
    svg: bool,
) -> Result<()> {
    let mut cfg: ToyConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ToyConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(p) = target_file {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.parse::<f64>().with_context(|| format!("{}: not a number: {l}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        cfg.samples = values.len();
        cfg.target = ToyTarget::Samples { values };
    }
    cfg.validate()?;
    toyfit::mode_widths(&cfg)?;
    fs::create_dir_all(out)?;
    let r = toyfit::run_toy(&cfg)?;
    fs::write(out.join("toyfit.csv"), r.to_csv())?;
    write_json(&out.join("toyfit.json"), &r.summary_json(&cfg))?;
    write_json(&out.join("config.json"), &cfg)?;
    if svg {
        fs::write(out.join("toyfit.svg"), toy_svg(&r))?;
    }
    for m in &r.modes {
        println!("{:<8} params {:>6}  mse {:.3e}", m.mode.name(), m.param_count, m.mse);
    }
    Ok(())
}

fn toy_svg(r: &toyfit::ToyResult) -> String {
    let (w, h, pad) = (800.0, 400.0, 20.0);
    let all = r.target.iter().chain(r.modes.iter().flat_map(|m| m.fit.iter()));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    let line = |ys: &[f64], colour: &str| {
        let pts: Vec<String> = ys
            .iter()
            .zip(&r.x)
            .map(|(&y, &x)| {
                format!("{:.2},{:.2}", pad + x * (w - 2.0 * pad), h - pad - (y - lo) / span * (h - 2.0 * pad))
            })
            .collect();
        format!("<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n", pts.join(" "))
    };
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    s.push_str(&line(&r.target, "black"));
    for (m, c) in [(ToyMode::Point, "blue"), (ToyMode::Section, "green"), (ToyMode::Whole, "red")] {
        s.push_str(&line(&r.mode(m).fit, c));
    }
    s.push_str("</svg>\n");
    s
}

pub fn inspect(path: &Path, as_json: bool) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let info = compression::inspect(&bytes).with_context(|| format!("inspecting {}", path.display()))?;
    if as_json {
        let v = json!({
            "info": info,
            "sparsity": info.zeros as f64 / info.param_count.max(1) as f64,
            "accounted_bytes": info.accounted_bytes(),
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    let bits = info.bits.map_or("none (raw f32)".to_string(), |b| b.to_string());
    println!("file        {}", path.display());
    println!("version     {}", info.version);
    println!("video       {} frames, {}x{}", info.arch.frames, info.arch.width, info.arch.height);
    println!("grid        {0}x{0}, upscales {1:?}", info.arch.grid, info.arch.upscales);
    println!("params      {}", info.param_count);
    println!("zeros       {} ({:.2}%)", info.zeros, 100.0 * info.zeros as f64 / info.param_count.max(1) as f64);
    println!("bits        {bits}");
    println!(
        "bytes       {} total = {} header + {} records + {} checksum",
        info.total_bytes,
        info.header_bytes,
        info.accounted_bytes() - info.header_bytes - info.checksum_bytes,
        info.checksum_bytes
    );
    println!("{:<24} {:>16} {:>5} {:>8} {:>8} {:>10}", "tensor", "shape", "bits", "entries", "table", "payload");
    for t in &info.tensors {
        println!(
            "{:<24} {:>16} {:>5} {:>8} {:>8} {:>10}",
            t.name,
            format!("{:?}", t.shape),
            t.bits.map_or("-".into(), |b| b.to_string()),
            t.table_entries,
            t.table_bytes,
            t.payload_bytes
        );
    }
    Ok(())
}

pub fn synth(out: &Path, frames: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    ensure!(frames > 0 && height > 0 && width > 0, "frames, height and width must be positive");
    let video = psnerv::synthetic::moving_gradient_disk(frames, height, width, seed);
    fs::create_dir_all(out)?;
    for (t, f) in video.frames().iter().enumerate() {
        save_frame(f, &out.join(frame_name(t)))?;
    }
    println!("wrote {frames} frames of {width}x{height} to {}", out.display());
    Ok(())
}
