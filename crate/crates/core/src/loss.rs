//! Power-law compressed complex + magnitude spectral loss.

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex;

use crate::dsp::{ComplexSpectrogram, TimeSignal};
use crate::error::{Error, Result};
use crate::nn::Real;

/// Clips whose clean signal has a smaller standard deviation are treated as silent.
pub const MIN_TARGET_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the complex term; the magnitude term gets `1 - alpha`.
    pub alpha: f64,
    /// Compression exponent applied to magnitudes.
    pub compression: f64,
    /// Magnitudes are floored here before compression.
    pub mag_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            compression: 0.3,
            mag_floor: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            errs.push(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            errs.push(format!("compression must be in (0, 1], got {}", self.compression));
        }
        if !(self.mag_floor > 0.0) {
            errs.push(format!("mag_floor must be positive, got {}", self.mag_floor));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Mean over all bins of
/// `alpha |S^c - Ŝ^c|^2 + (1 - alpha) (|S|^c - |Ŝ|^c)^2`, where `X^c`
/// compresses the magnitude and keeps the phase. Magnitudes are floored at
/// `mag_floor` wherever they appear with a negative exponent.
///
/// Returns the loss and its gradient with respect to the real (`re`) and
/// imaginary (`im`) parts of `estimate`.
pub fn compressed_spectral_loss<F: Real>(
    target: ArrayView2<'_, Complex<F>>,
    estimate: ArrayView2<'_, Complex<F>>,
    cfg: &LossConfig,
) -> Result<(f64, Array2<Complex<F>>)> {
    if target.dim() != estimate.dim() {
        return Err(Error::shape("loss inputs", target.shape(), estimate.shape()));
    }
    let count = target.len().max(1) as f64;
    let alpha = F::lit(cfg.alpha);
    let c = F::lit(cfg.compression);
    let floor = F::lit(cfg.mag_floor);
    let two = F::lit(2.0);
    let grad_scale = F::lit(1.0 / count);
    let one = F::one();
    let floor_c1 = floor.powf(c - one);
    let floor_c2 = floor.powf(c - two);

    let mut total = 0.0f64;
    let mut grad = Array2::<Complex<F>>::zeros(target.dim());
    Zip::from(&mut grad)
        .and(&target)
        .and(&estimate)
        .for_each(|g, &s, &e| {
            // One powf per magnitude; the other exponents follow by division.
            let s_norm = s.norm();
            let s_pow = s_norm.powf(c);
            let s_c = if s_norm > floor { s * (s_pow / s_norm) } else { s * floor_c1 };

            let u = e.norm();
            let e_pow = u.powf(c);
            let diff;
            let mag_diff = s_pow - e_pow;
            let mut d;
            let dmag;
            if u <= floor {
                diff = s_c - e * floor_c1;
                d = diff * (-two * floor_c1);
                dmag = e * (-two * mag_diff * c * floor_c2);
            } else {
                let f = e_pow / u;
                diff = s_c - e * f;
                d = diff * (-two * f);
                // Jacobian of e |e|^(c-1) adds (c-1) |e|^(c-3) e (e . diff).
                let proj = e.re * diff.re + e.im * diff.im;
                let u_c2 = f / u;
                d = d - e * (two * (c - one) * (u_c2 / u) * proj);
                dmag = e * (-two * mag_diff * c * u_c2);
            }
            total += cfg.alpha * diff.norm_sqr().to_f64().unwrap_or(f64::NAN)
                + (1.0 - cfg.alpha) * (mag_diff * mag_diff).to_f64().unwrap_or(f64::NAN);
            *g = (d * alpha + dmag * (one - alpha)) * grad_scale;
        });
    Ok((total / count, grad))
}

/// Divides both spectrograms by the time-domain standard deviation of the
/// clean clip.
pub fn normalize_by_target_std(
    clean: &TimeSignal,
    target: &ComplexSpectrogram,
    estimate: &ComplexSpectrogram,
) -> Result<(ComplexSpectrogram, ComplexSpectrogram)> {
    let sigma = target_std(clean)?;
    let inv = (1.0 / sigma) as f32;
    Ok((
        ComplexSpectrogram::new(target.frames().mapv(|v| v * inv))?,
        ComplexSpectrogram::new(estimate.frames().mapv(|v| v * inv))?,
    ))
}

/// Standard deviation of the clean clip, or an error if it is silent.
pub fn target_std(clean: &TimeSignal) -> Result<f64> {
    let sigma = clean.std_dev();
    if sigma < MIN_TARGET_STD {
        return Err(Error::SilentSignal(format!(
            "clean clip standard deviation {sigma:e} is below {MIN_TARGET_STD:e}"
        )));
    }
    Ok(sigma)
}

/// Weighted sum of per-exit losses.
pub fn joint_loss(per_exit: &[f64], weights: &[f64]) -> Result<f64> {
    if per_exit.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} exit losses but {} weights",
            per_exit.len(),
            weights.len()
        )));
    }
    Ok(per_exit.iter().zip(weights).map(|(l, w)| l * w).sum())
}
