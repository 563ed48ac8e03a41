use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::mix::{generate_clip, snr_db, Clip, MixtureSpec, DEFAULT_LEVEL_DB};
use super::stream_rng;
use super::synth::NoiseKind;
use super::wav::wav_read;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Split::Train, Split::Val, Split::Test].into_iter().find(|x| x.name() == s)
    }
}

/// WAV files holding a clip, relative to the manifest directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipFiles {
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub noisy: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub seed: u64,
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub split: Split,
    pub files: Option<ClipFiles>,
}

/// Dataset description, one clip per line:
///
/// ```text
/// clip_seconds 2
/// <seed> <noise kind> <snr dB> <split> [<clean.wav> <noise.wav> <noisy.wav>]
/// ```
///
/// Blank lines and lines starting with `#` are ignored. Without file paths a
/// clip is synthesized from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub clip_seconds: f64,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// `count` clips with SNRs uniform in `snr_range`; `val_fraction` of them
    /// (rounded) go to the validation split, chosen by `seed`.
    pub fn generate(
        count: usize,
        snr_range: (f64, f64),
        seed: u64,
        clip_seconds: f64,
        val_fraction: f64,
    ) -> Result<Self> {
        let (lo, hi) = snr_range;
        if !(-10.0..=40.0).contains(&lo) || !(-10.0..=40.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "SNR range {lo}:{hi} must be ordered and within [-10, 40]"
            )));
        }
        if !(0.0..=1.0).contains(&val_fraction) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction must lie in [0, 1], got {val_fraction}"
            )));
        }
        let mut rng = stream_rng(seed, "manifest");
        let mut records: Vec<ManifestRecord> = (0..count)
            .map(|_| ManifestRecord {
                seed: rng.gen(),
                kind: NoiseKind::ALL[rng.gen_range(0..NoiseKind::ALL.len())],
                snr_db: if lo == hi { lo } else { rng.gen_range(lo..=hi) },
                split: Split::Train,
                files: None,
            })
            .collect();
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        let n_val = (count as f64 * val_fraction).round() as usize;
        for &i in &order[..n_val] {
            records[i].split = Split::Val;
        }
        Ok(Self {
            clip_seconds,
            records,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut clip_seconds = None;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::Manifest { line: line_no, msg };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok[0] == "clip_seconds" {
                let v: f64 = tok
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .filter(|v: &f64| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| err("clip_seconds needs a positive number".into()))?;
                if tok.len() != 2 {
                    return Err(err("clip_seconds takes one value".into()));
                }
                clip_seconds = Some(v);
                continue;
            }
            if tok.len() != 4 && tok.len() != 7 {
                return Err(err(format!(
                    "expected 4 or 7 fields (seed kind snr split [clean noise noisy]), found {}",
                    tok.len()
                )));
            }
            let seed = tok[0]
                .parse()
                .map_err(|_| err(format!("invalid seed {:?}", tok[0])))?;
            let kind = tok[1].parse().map_err(|e: Error| err(e.to_string()))?;
            let snr_db: f64 = tok[2]
                .parse()
                .ok()
                .filter(|v: &f64| (-10.0..=40.0).contains(v))
                .ok_or_else(|| err(format!("SNR {:?} is not a number in [-10, 40]", tok[2])))?;
            let split = Split::parse(tok[3])
                .ok_or_else(|| err(format!("unknown split {:?} (train, val or test)", tok[3])))?;
            let files = (tok.len() == 7).then(|| ClipFiles {
                clean: tok[4].into(),
                noise: tok[5].into(),
                noisy: tok[6].into(),
            });
            records.push(ManifestRecord {
                seed,
                kind,
                snr_db,
                split,
                files,
            });
        }
        let clip_seconds = clip_seconds.ok_or(Error::Manifest {
            line: 0,
            msg: "missing clip_seconds line".into(),
        })?;
        Ok(Self {
            clip_seconds,
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("clip_seconds {}\n", self.clip_seconds);
        for r in &self.records {
            write!(s, "{} {} {} {}", r.seed, r.kind, r.snr_db, r.split.name()).unwrap();
            if let Some(f) = &r.files {
                write!(s, " {} {} {}", f.clean.display(), f.noise.display(), f.noisy.display())
                    .unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn spec(&self, record: &ManifestRecord) -> MixtureSpec {
        MixtureSpec {
            seed: record.seed,
            snr_db: record.snr_db,
            clip_seconds: self.clip_seconds,
            level_db: DEFAULT_LEVEL_DB,
        }
    }

    /// Clip `index`, read from its files (resolved against `base_dir`) or
    /// synthesized from its seed.
    pub fn clip(&self, index: usize, base_dir: &Path) -> Result<Clip> {
        let r = self.records.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("manifest has no record {index}"))
        })?;
        match &r.files {
            None => generate_clip(&self.spec(r), r.kind),
            Some(f) => {
                let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
                let clean = wav_read(resolve(&f.clean))?;
                let noise = wav_read(resolve(&f.noise))?;
                let noisy = wav_read(resolve(&f.noisy))?;
                if clean.len() != noisy.len() || noise.len() != noisy.len() {
                    return Err(Error::shape(
                        "clip file lengths",
                        &[clean.len(), clean.len(), clean.len()],
                        &[clean.len(), noise.len(), noisy.len()],
                    ));
                }
                let snr = snr_db(&clean, &noise);
                Ok(Clip {
                    clean,
                    noise,
                    noisy,
                    snr_db: if snr.is_finite() { snr } else { r.snr_db },
                })
            }
        }
    }

    /// Indices of records in `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }
}
