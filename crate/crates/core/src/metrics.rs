//! Objective quality metrics.

use crate::dsp::{stft, TimeSignal};
use crate::error::{Error, Result};

/// Upper bound reported by [`si_sdr`].
pub const SI_SDR_CAP_DB: f64 = 60.0;
/// Floor applied to per-bin power levels in [`log_spectral_distance`].
pub const LSD_FLOOR_DB: f64 = -80.0;

const MIN_ENERGY: f64 = 1e-20;

fn check_lengths(a: &TimeSignal, b: &TimeSignal) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("signal lengths", &[a.len()], &[b.len()]));
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at
/// [`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let r = reference.samples();
    let e = estimate.samples();
    let rr: f64 = r.iter().map(|&x| (x as f64).powi(2)).sum();
    if rr < MIN_ENERGY {
        return Err(Error::SilentSignal("SI-SDR reference is silent".into()));
    }
    let er: f64 = r.iter().zip(e).map(|(&a, &b)| a as f64 * b as f64).sum();
    let alpha = er / rr;
    let (mut target, mut resid) = (0.0, 0.0);
    for (&a, &b) in r.iter().zip(e) {
        let t = alpha * a as f64;
        target += t * t;
        resid += (b as f64 - t).powi(2);
    }
    if resid == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / resid).log10()).min(SI_SDR_CAP_DB))
}

/// RMS over frames of the per-frame RMS difference between power spectra
/// in dB.
pub fn log_spectral_distance(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let a = stft(reference)?;
    let b = stft(estimate)?;
    let level = |c: &num_complex::Complex32| (10.0 * (c.norm_sqr() as f64).log10()).max(LSD_FLOOR_DB);
    let mut total = 0.0;
    for (ra, rb) in a.frames().rows().into_iter().zip(b.frames().rows()) {
        let ms: f64 = ra
            .iter()
            .zip(rb.iter())
            .map(|(x, y)| (level(x) - level(y)).powi(2))
            .sum::<f64>()
            / ra.len() as f64;
        total += ms;
    }
    Ok((total / a.num_frames() as f64).sqrt().max(0.0))
}
