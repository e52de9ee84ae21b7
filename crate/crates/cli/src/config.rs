//! Run configuration: built-in defaults, then a JSON file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use psnerv::compression::CompressOptions;
use psnerv::{ArchConfig, EncodingConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Architecture knobs that do not depend on the video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSettings {
    pub encoding: EncodingConfig,
    /// Per-block upscale factors; derived from the patch size when absent.
    pub upscales: Option<Vec<usize>>,
    pub base_channels: usize,
    pub min_channels: usize,
    pub stem_hidden: usize,
    pub adain: bool,
    pub adain_eps: f64,
}

impl Default for ArchSettings {
    fn default() -> Self {
        let a = ArchConfig::for_video(1, 4, 4, 1).expect("valid placeholder dims");
        Self {
            encoding: a.encoding,
            upscales: None,
            base_channels: a.base_channels,
            min_channels: a.min_channels,
            stem_hidden: a.stem_hidden,
            adain: a.adain,
            adain_eps: a.adain_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Patches per side.
    pub grid: usize,
    /// Replicate-pad frames whose size is not a multiple of `grid`.
    pub pad: bool,
    pub arch: ArchSettings,
    pub train: TrainConfig,
    pub compress: CompressOptions,
    /// Fine-tuning epochs after pruning (0 disables).
    pub finetune_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            pad: false,
            arch: ArchSettings::default(),
            train: TrainConfig::default(),
            compress: CompressOptions::default(),
            finetune_epochs: 0,
        }
    }
}

/// Command-line overrides shared by the training commands.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Patches per side (N)
    #[arg(long)]
    pub grid: Option<usize>,
    /// Pad frames whose size is not divisible by N
    #[arg(long)]
    pub pad: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Positional-encoding frequency levels (l)
    #[arg(long)]
    pub levels: Option<usize>,
    /// Comma-separated upscale factors, e.g. 5,3,2,1,1
    #[arg(long, value_delimiter = ',')]
    pub upscales: Option<Vec<usize>>,
    #[arg(long)]
    pub stem_hidden: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub min_channels: Option<usize>,
    /// Replace AdaIN with identity (ablation)
    #[arg(long)]
    pub no_adain: bool,
    /// Run batch elements on one thread
    #[arg(long)]
    pub sequential: bool,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(v) = o.grid {
            c.grid = v;
        }
        c.pad |= o.pad;
        if let Some(v) = o.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = o.lr {
            c.train.lr = v;
        }
        if let Some(v) = o.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = o.seed {
            c.train.seed = v;
        }
        if let Some(v) = o.levels {
            c.arch.encoding.levels = v;
        }
        if let Some(v) = &o.upscales {
            c.arch.upscales = Some(v.clone());
        }
        if let Some(v) = o.stem_hidden {
            c.arch.stem_hidden = v;
        }
        if let Some(v) = o.base_channels {
            c.arch.base_channels = v;
        }
        if let Some(v) = o.min_channels {
            c.arch.min_channels = v;
        }
        if o.no_adain {
            c.arch.adain = false;
        }
        if o.sequential {
            c.train.parallel = false;
        }
        Ok(c)
    }

    /// Build the architecture for a `frames x height x width` video, collecting
    /// every problem into one report.
    pub fn arch_for(&self, frames: usize, height: usize, width: usize) -> Result<ArchConfig> {
        let mut problems = Vec::new();
        if let Err(e) = self.train.validate() {
            problems.push(e.to_string());
        }
        problems.extend(self.compress.validate());
        if self.grid == 0 {
            problems.push("grid N must be >= 1".into());
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "));
        }
        if !self.pad && (height % self.grid != 0 || width % self.grid != 0) {
            problems.push(format!(
                "frame size {width}x{height} is not divisible by N={}; pass --pad or choose another N",
                self.grid
            ));
        }
        let mut arch = ArchConfig::for_video(frames, height, width, self.grid)?;
        arch.encoding = self.arch.encoding;
        arch.base_channels = self.arch.base_channels;
        arch.min_channels = self.arch.min_channels;
        arch.stem_hidden = self.arch.stem_hidden;
        arch.adain = self.arch.adain;
        arch.adain_eps = self.arch.adain_eps;
        if let Some(u) = &self.arch.upscales {
            match arch.clone().with_upscales(u.clone()) {
                Ok(a) => arch = a,
                Err(e) => problems.push(e.to_string()),
            }
        }
        if let Err(e) = arch.validate() {
            problems.push(e.to_string());
        }
        let short = arch.patch_h().min(arch.patch_w());
        if self.train.ssim_window > short {
            problems.push(format!(
                "patches are {}x{} but the loss SSIM window is {}; set train.ssim_window <= {short} or use a smaller N",
                arch.patch_w(),
                arch.patch_h(),
                self.train.ssim_window
            ));
        }
        if problems.is_empty() {
            Ok(arch)
        } else {
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "))
        }
    }
}
