//! Enhancement and per-exit evaluation of whole clips.

use std::collections::BTreeMap;

use crate::arch::Model;
use crate::datagen::Clip;
use crate::dsp::{apply_gains, istft, log_power, stft, TimeSignal};
use crate::error::{Error, Result};
use crate::metrics::{log_spectral_distance, si_sdr};

fn mask_signal(noisy: &TimeSignal, mask: &ndarray::Array2<f32>) -> Result<TimeSignal> {
    let spec = stft(noisy)?;
    Ok(istft(&apply_gains(&spec, mask.view())?))
}

/// Enhances `noisy` with the mask of `exit`, or of the deepest exit. The
/// output covers the STFT framing of the input, so it may be slightly
/// shorter.
pub fn enhance(model: &Model<f32>, noisy: &TimeSignal, exit: Option<usize>) -> Result<TimeSignal> {
    let exit = exit.unwrap_or_else(|| model.variant().deepest_exit());
    model.variant().check_exit(exit)?;
    let spec = stft(noisy)?;
    let features = log_power(&spec).into_rows();
    let mask = model.forward_to_exit(features.view(), 1, exit)?;
    Ok(istft(&apply_gains(&spec, mask.view())?))
}

/// Enhanced signals for every exit, from a single forward pass.
pub fn enhance_all_exits(model: &Model<f32>, noisy: &TimeSignal) -> Result<BTreeMap<usize, TimeSignal>> {
    let spec = stft(noisy)?;
    let features = log_power(&spec).into_rows();
    let pass = model.forward_all_exits(features.view(), 1)?;
    pass.masks
        .iter()
        .map(|(&e, m)| Ok((e, mask_signal(noisy, m)?)))
        .collect()
}

/// First `len` samples of `x`.
pub fn truncate(x: &TimeSignal, len: usize) -> Result<TimeSignal> {
    if len > x.len() {
        return Err(Error::shape("signal length", &[len], &[x.len()]));
    }
    TimeSignal::new(x.samples()[..len].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub si_sdr: f64,
    pub lsd: f64,
}

/// Metrics of the unprocessed mixture and of every exit for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub snr_db: f64,
    pub noisy: Scores,
    pub exits: BTreeMap<usize, Scores>,
}

impl ClipScores {
    pub fn si_sdr_improvement(&self, exit: usize) -> Option<f64> {
        self.exits.get(&exit).map(|s| s.si_sdr - self.noisy.si_sdr)
    }
}

/// Scores the mixture and each exit's output against the clean signal, over
/// the samples covered by the STFT framing.
pub fn score_clip(model: &Model<f32>, clip: &Clip) -> Result<ClipScores> {
    let outputs = enhance_all_exits(model, &clip.noisy)?;
    let len = outputs.values().next().map_or(clip.noisy.len(), TimeSignal::len);
    let clean = truncate(&clip.clean, len)?;
    let noisy = truncate(&clip.noisy, len)?;
    let score = |x: &TimeSignal| -> Result<Scores> {
        Ok(Scores {
            si_sdr: si_sdr(&clean, x)?,
            lsd: log_spectral_distance(&clean, x)?,
        })
    };
    Ok(ClipScores {
        snr_db: clip.snr_db,
        noisy: score(&noisy)?,
        exits: outputs
            .iter()
            .map(|(&e, y)| Ok((e, score(y)?)))
            .collect::<Result<_>>()?,
    })
}
