use crate::dsp::TimeSignal;
use crate::error::{Error, Result};

use super::synth::{synth_noise, synth_speech_like, NoiseKind};

/// Peak level of generated mixtures, in dBFS.
pub const DEFAULT_LEVEL_DB: f64 = -3.0;

const MIN_POWER: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub seed: u64,
    pub snr_db: f64,
    pub clip_seconds: f64,
    /// Peak level the noisy mixture is normalized to, in dBFS.
    pub level_db: f64,
}

impl MixtureSpec {
    pub fn new(seed: u64, snr_db: f64, clip_seconds: f64) -> Self {
        Self {
            seed,
            snr_db,
            clip_seconds,
            level_db: DEFAULT_LEVEL_DB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(-10.0..=40.0).contains(&self.snr_db) {
            errs.push(format!("snr_db must lie in [-10, 40], got {}", self.snr_db));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            errs.push(format!("clip_seconds must be positive, got {}", self.clip_seconds));
        }
        if !(self.level_db <= 0.0 && self.level_db.is_finite()) {
            errs.push(format!("level_db must be at most 0 dBFS, got {}", self.level_db));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// A mixture with its parts: `noisy[n] = clean[n] + noise[n]` exactly, where
/// `noise` is already scaled to the requested SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clean: TimeSignal,
    pub noise: TimeSignal,
    pub noisy: TimeSignal,
    pub snr_db: f64,
}

/// `10 log10(P_clean / P_noise)`.
pub fn snr_db(clean: &TimeSignal, noise: &TimeSignal) -> f64 {
    10.0 * (clean.power() / noise.power()).log10()
}

fn scale(x: &TimeSignal, gain: f64) -> Vec<f32> {
    x.samples().iter().map(|&v| (v as f64 * gain) as f32).collect()
}

/// Nudges the largest samples by single ulps until the sum of squares is as
/// close to `target_sum` as f32 rounding allows.
fn trim_power(x: &mut [f32], target_sum: f64) {
    let energy = |x: &[f32]| x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
    let mut deficit = target_sum - energy(x);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    for &i in &order {
        let v = x[i];
        if v == 0.0 {
            break;
        }
        let grown = f32::from_bits(v.to_bits() + 1);
        let shrunk = f32::from_bits(v.to_bits() - 1);
        let candidate = if deficit > 0.0 { grown } else { shrunk };
        let delta = (candidate as f64).powi(2) - (v as f64).powi(2);
        if (deficit - delta).abs() < deficit.abs() {
            x[i] = candidate;
            deficit -= delta;
        } else {
            break;
        }
    }
}

fn sum(a: &[f32], b: &[f32]) -> Result<TimeSignal> {
    TimeSignal::new(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Scales `noise` so the clean-to-noise power ratio is `snr_db` and adds it
/// to `clean`.
pub fn mix_at_snr(clean: &TimeSignal, noise: &TimeSignal, snr_db: f64) -> Result<Clip> {
    if clean.len() != noise.len() {
        return Err(Error::shape("clean/noise lengths", &[clean.len()], &[noise.len()]));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR must be finite, got {snr_db}")));
    }
    let (pc, pn) = (clean.power(), noise.power());
    if pc < MIN_POWER || pn < MIN_POWER {
        return Err(Error::SilentSignal(format!(
            "cannot mix at an SNR: clean power {pc:e}, noise power {pn:e}"
        )));
    }
    let target = pc / 10f64.powf(snr_db / 10.0);
    let mut scaled = scale(noise, (target / pn).sqrt());
    trim_power(&mut scaled, target * noise.len() as f64);
    let noisy = sum(clean.samples(), &scaled)?;
    Ok(Clip {
        clean: clean.clone(),
        noise: TimeSignal::new(scaled)?,
        noisy,
        snr_db,
    })
}

/// Rescales all parts so the mixture peaks at `level_db` dBFS; the mixture is
/// recomputed from the scaled parts so the additive identity stays exact.
pub fn normalize_peak(clip: &Clip, level_db: f64) -> Result<Clip> {
    let peak = clip.noisy.peak() as f64;
    if peak == 0.0 {
        return Err(Error::SilentSignal("mixture is all zeros".into()));
    }
    let gain = 10f64.powf(level_db / 20.0) / peak;
    let clean = scale(&clip.clean, gain);
    let noise = scale(&clip.noise, gain);
    let noisy = sum(&clean, &noise)?;
    Ok(Clip {
        clean: TimeSignal::new(clean)?,
        noise: TimeSignal::new(noise)?,
        noisy,
        snr_db: clip.snr_db,
    })
}

/// Synthesizes speech and noise for `spec`, mixes and peak-normalizes.
pub fn generate_clip(spec: &MixtureSpec, kind: NoiseKind) -> Result<Clip> {
    spec.validate()?;
    let clean = synth_speech_like(spec.seed, spec.clip_seconds)?;
    let noise = synth_noise(spec.seed, kind, spec.clip_seconds)?;
    normalize_peak(&mix_at_snr(&clean, &noise, spec.snr_db)?, spec.level_db)
}
