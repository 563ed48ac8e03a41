//! Plain-text run configuration: one `key = value` per line, `#` comments.

use std::path::{Path, PathBuf};

use crate::arch::{FcExitSource, Profile, Variant};
use crate::error::{Error, Result};
use crate::train::{Strategy, TrainConfig};

/// Every accepted key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "model variant, e.g. baseline or split_layers_4exits"),
    ("profile", "layer widths: full or tiny"),
    ("strategy", "joint or layerwise"),
    ("seed", "64-bit seed for initialization, shuffling and data"),
    ("lr", "initial learning rate"),
    ("batch_size", "clips per optimizer step"),
    ("max_epochs", "epoch cap for joint and baseline training"),
    ("stage_epochs", "layer-wise epoch cap per stage (times i+1 for split/concat stage i)"),
    ("patience", "epochs without improvement before stopping"),
    ("lr_decay", "learning-rate factor applied on a plateau"),
    ("decay_every", "epochs without improvement between decays"),
    ("clip_seconds", "clip length for synthesized data"),
    ("loss_alpha", "weight of the complex term of the loss"),
    ("loss_compression", "power-law compression exponent"),
    ("fc_exit", "FC exit activations: pre or post_relu"),
    ("manifest", "dataset manifest path"),
    ("baseline_checkpoint", "trained baseline checkpoint (pretrain variants)"),
    ("out_dir", "output directory"),
    ("count", "number of clips to synthesize"),
    ("snr_range", "SNR range in dB as lo:hi"),
    ("val_fraction", "share of clips assigned to validation"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub profile: Profile,
    pub strategy: Strategy,
    pub train: TrainConfig,
    pub fc_exit: FcExitSource,
    pub manifest: Option<PathBuf>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub count: usize,
    pub snr_range: (f64, f64),
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Baseline,
            profile: Profile::Tiny,
            strategy: Strategy::Joint,
            train: TrainConfig::tiny(),
            fc_exit: FcExitSource::default(),
            manifest: None,
            baseline_checkpoint: None,
            out_dir: None,
            count: 100,
            snr_range: (0.0, 20.0),
            val_fraction: 0.1,
        }
    }
}

/// Parses `lo:hi`.
pub fn parse_snr_range(s: &str) -> Result<(f64, f64)> {
    let err = || Error::InvalidArgument(format!("SNR range {s:?} must look like lo:hi"));
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let lo: f64 = a.trim().parse().map_err(|_| err())?;
    let hi: f64 = b.trim().parse().map_err(|_| err())?;
    if !(-10.0..=40.0).contains(&lo) || !(-10.0..=40.0).contains(&hi) || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "SNR range {s:?} must be ordered and within [-10, 40]"
        )));
    }
    Ok((lo, hi))
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base_dir`. All
    /// problems are reported together.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut errs = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut profile_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(format!("line {}: expected key = value", i + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                errs.push(format!("line {}: unknown key `{key}`", i + 1));
                continue;
            }
            if !seen.insert(key.to_string()) {
                errs.push(format!("line {}: duplicate key `{key}`", i + 1));
                continue;
            }
            if key == "profile" {
                profile_set = true;
            }
            if let Err(e) = cfg.set(key, value, base_dir) {
                errs.push(format!("line {}: {key}: {e}", i + 1));
            }
        }
        // Full-profile runs default to the full schedule unless overridden.
        if profile_set && cfg.profile == Profile::Full {
            let full = TrainConfig::full();
            let t = &mut cfg.train;
            if !seen.contains("lr") {
                t.lr = full.lr;
            }
            if !seen.contains("batch_size") {
                t.batch_size = full.batch_size;
            }
            if !seen.contains("clip_seconds") {
                t.clip_seconds = full.clip_seconds;
            }
        }
        if let Err(Error::Config(e)) = cfg.train.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies one `key = value` setting, e.g. a command-line override.
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid number {v:?}")))
        }
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let t = &mut self.train;
        match key {
            "variant" => self.variant = value.parse()?,
            "profile" => self.profile = value.parse()?,
            "strategy" => self.strategy = value.parse()?,
            "seed" => t.seed = num(value)?,
            "lr" => t.lr = num(value)?,
            "batch_size" => t.batch_size = num(value)?,
            "max_epochs" => t.max_epochs = num(value)?,
            "stage_epochs" => t.stage_epochs = num(value)?,
            "patience" => t.patience = num(value)?,
            "lr_decay" => t.lr_decay = num(value)?,
            "decay_every" => t.decay_every = num(value)?,
            "clip_seconds" => t.clip_seconds = num(value)?,
            "loss_alpha" => t.loss.alpha = num(value)?,
            "loss_compression" => t.loss.compression = num(value)?,
            "fc_exit" => self.fc_exit = FcExitSource::parse(value)?,
            "manifest" => self.manifest = Some(path(value)),
            "baseline_checkpoint" => self.baseline_checkpoint = Some(path(value)),
            "out_dir" => self.out_dir = Some(path(value)),
            "count" => self.count = num(value)?,
            "snr_range" => self.snr_range = parse_snr_range(value)?,
            "val_fraction" => {
                let v: f64 = num(value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("must lie in [0, 1], got {v}")));
                }
                self.val_fraction = v;
            }
            _ => unreachable!("key checked against KEYS"),
        }
        Ok(())
    }
}
