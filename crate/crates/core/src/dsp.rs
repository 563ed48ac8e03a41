//! Time/frequency conversion with a square-root Hann STFT, log-power
//! features and spectral mask application.
//!
//! Frames are 512 samples (32 ms at 16 kHz) with a 256-sample hop. The same
//! square-root Hann window is used for analysis and synthesis, so the squared
//! window sums to one at 50% overlap and weighted overlap-add reconstructs the
//! input exactly away from the first and last half-frame.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WIN_LEN: usize = 512;
pub const HOP: usize = 256;
pub const NUM_BINS: usize = WIN_LEN / 2 + 1;
pub const LOG_POWER_EPS: f32 = 1e-12;

/// A mono 16 kHz signal with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<f32>,
}

impl TimeSignal {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("time signal"));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Population standard deviation, accumulated in double precision.
    pub fn std_dev(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().map(|&s| s as f64).sum::<f64>() / n;
        let var = self
            .samples
            .iter()
            .map(|&s| {
                let d = s as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    /// Mean power, in double precision.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
        }
    }
}

/// T x 257 complex STFT frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: Array2<Complex32>,
}

impl ComplexSpectrogram {
    pub fn new(frames: Array2<Complex32>) -> Result<Self> {
        if frames.ncols() != NUM_BINS || frames.nrows() == 0 {
            return Err(Error::shape(
                "spectrogram (frames x bins)",
                &[frames.nrows().max(1), NUM_BINS],
                frames.shape(),
            ));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array2<Complex32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<Complex32> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// Number of time samples produced by [`istft`].
    pub fn signal_len(&self) -> usize {
        (self.num_frames() - 1) * HOP + WIN_LEN
    }
}

/// Log-power features, T x 257.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Array2<f32>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> &Array2<f32> {
        &self.rows
    }

    pub fn into_rows(self) -> Array2<f32> {
        self.rows
    }
}

/// Real-valued suppression gains in [0, 1], T x 257.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    gains: Array2<f32>,
}

impl Mask {
    pub fn new(gains: Array2<f32>) -> Result<Self> {
        if gains.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidArgument(
                "mask values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { gains })
    }

    pub fn constant(frames: usize, value: f32) -> Result<Self> {
        Self::new(Array2::from_elem((frames, NUM_BINS), value))
    }

    pub fn gains(&self) -> &Array2<f32> {
        &self.gains
    }

    pub fn into_gains(self) -> Array2<f32> {
        self.gains
    }
}

/// Periodic square-root Hann window of length [`WIN_LEN`].
pub fn sqrt_hann() -> Vec<f32> {
    (0..WIN_LEN)
        .map(|n| {
            let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / WIN_LEN as f64).cos();
            hann.sqrt() as f32
        })
        .collect()
}

/// Number of full frames that fit in `len` samples. Trailing partial frames
/// are dropped.
pub fn num_frames(len: usize) -> usize {
    if len < WIN_LEN {
        0
    } else {
        (len - WIN_LEN) / HOP + 1
    }
}

fn plan(inverse: bool) -> Arc<dyn Fft<f32>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(WIN_LEN)
    } else {
        planner.plan_fft_forward(WIN_LEN)
    }
}

pub fn stft(signal: &TimeSignal) -> Result<ComplexSpectrogram> {
    let x = signal.samples();
    if x.len() < WIN_LEN {
        return Err(Error::SignalTooShort {
            len: x.len(),
            win_len: WIN_LEN,
        });
    }
    let window = sqrt_hann();
    let fft = plan(false);
    let frames = num_frames(x.len());
    let mut out = Array2::<Complex32>::zeros((frames, NUM_BINS));
    let mut buf = vec![Complex32::new(0.0, 0.0); WIN_LEN];
    let mut scratch = vec![Complex32::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let seg = &x[t * HOP..t * HOP + WIN_LEN];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex32::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, b) in row.iter_mut().zip(&buf[..NUM_BINS]) {
            *o = *b;
        }
    }
    ComplexSpectrogram::new(out)
}

pub fn istft(spec: &ComplexSpectrogram) -> TimeSignal {
    let window = sqrt_hann();
    let fft = plan(true);
    let frames = spec.frames();
    let mut out = vec![0.0f32; spec.signal_len()];
    let mut buf = vec![Complex32::new(0.0, 0.0); WIN_LEN];
    let mut scratch = vec![Complex32::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let scale = 1.0 / WIN_LEN as f32;
    for (t, row) in frames.axis_iter(Axis(0)).enumerate() {
        // Rebuild the Hermitian-symmetric full spectrum.
        for k in 0..NUM_BINS {
            buf[k] = row[k];
        }
        for k in NUM_BINS..WIN_LEN {
            buf[k] = row[WIN_LEN - k].conj();
        }
        buf[0].im = 0.0;
        buf[WIN_LEN / 2].im = 0.0;
        fft.process_with_scratch(&mut buf, &mut scratch);
        let seg = &mut out[t * HOP..t * HOP + WIN_LEN];
        for ((o, b), &w) in seg.iter_mut().zip(&buf).zip(&window) {
            *o += b.re * scale * w;
        }
    }
    TimeSignal { samples: out }
}

pub fn log_power(spec: &ComplexSpectrogram) -> FeatureMatrix {
    FeatureMatrix {
        rows: spec.frames().mapv(|c| (c.norm_sqr() + LOG_POWER_EPS).ln()),
    }
}

/// Applies a real gain per bin; the noisy phase is kept.
pub fn apply_mask(spec: &ComplexSpectrogram, mask: &Mask) -> Result<ComplexSpectrogram> {
    apply_gains(spec, mask.gains().view())
}

pub(crate) fn apply_gains(
    spec: &ComplexSpectrogram,
    gains: ArrayView2<'_, f32>,
) -> Result<ComplexSpectrogram> {
    if gains.dim() != spec.frames().dim() {
        return Err(Error::shape("mask", spec.frames().shape(), gains.shape()));
    }
    let mut out = spec.frames().clone();
    out.zip_mut_with(&gains, |x, &m| *x *= m);
    Ok(ComplexSpectrogram { frames: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> TimeSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TimeSignal::new((0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_second_of_audio_gives_63_frames() {
        let spec = stft(&TimeSignal::zeros(16384)).unwrap();
        assert_eq!(spec.frames().dim(), (63, 257));
        assert!(spec.frames().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn frame_count_drops_partial_frame() {
        assert_eq!(num_frames(16640), 64);
        assert_eq!(num_frames(16640 + 255), 64);
        assert_eq!(num_frames(512), 1);
        assert_eq!(num_frames(511), 0);
    }

    #[test]
    fn short_signal_is_rejected() {
        let err = stft(&TimeSignal::zeros(511)).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { len: 511, .. }));
    }

    #[test]
    fn non_finite_samples_rejected() {
        assert!(TimeSignal::new(vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn cosine_peaks_at_its_bin_and_matches_direct_dft() {
        let len = 16384;
        let f = 500.0;
        let x: Vec<f32> = (0..len)
            .map(|n| (2.0 * PI * f * n as f64 / SAMPLE_RATE as f64).cos() as f32)
            .collect();
        let sig = TimeSignal::new(x.clone()).unwrap();
        let spec = stft(&sig).unwrap();
        let window = sqrt_hann();
        for t in 0..spec.num_frames() {
            let row = spec.frames().row(t);
            let peak = (0..NUM_BINS)
                .max_by(|&a, &b| row[a].norm().partial_cmp(&row[b].norm()).unwrap())
                .unwrap();
            assert_eq!(peak, 16, "frame {t}");
        }
        // Direct DFT oracle on a few frames.
        for &t in &[0usize, 17, 62] {
            for k in [0usize, 15, 16, 17, 100, 256] {
                let mut acc = (0.0f64, 0.0f64);
                for n in 0..WIN_LEN {
                    let v = x[t * HOP + n] as f64 * window[n] as f64;
                    let ang = -2.0 * PI * (k * n) as f64 / WIN_LEN as f64;
                    acc.0 += v * ang.cos();
                    acc.1 += v * ang.sin();
                }
                let got = spec.frames()[[t, k]];
                assert!((got.re as f64 - acc.0).abs() < 1e-3, "re t={t} k={k}");
                assert!((got.im as f64 - acc.1).abs() < 1e-3, "im t={t} k={k}");
            }
        }
    }

    #[test]
    fn istft_of_zeros_is_zero() {
        let spec = ComplexSpectrogram::new(Array2::zeros((5, NUM_BINS))).unwrap();
        let y = istft(&spec);
        assert_eq!(y.len(), 4 * HOP + WIN_LEN);
        assert!(y.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn dc_bin_inverts_to_scaled_window() {
        let mut frames = Array2::zeros((1, NUM_BINS));
        frames[[0, 0]] = Complex32::new(1.0, 0.0);
        let y = istft(&ComplexSpectrogram::new(frames).unwrap());
        let window = sqrt_hann();
        for (n, (&s, &w)) in y.samples().iter().zip(&window).enumerate() {
            // inverse DFT of a unit DC bin is 1/N everywhere
            let expected = w / WIN_LEN as f32;
            assert!((s - expected).abs() < 1e-9, "n={n}: {s} vs {expected}");
        }
    }

    #[test]
    fn round_trip_interior_is_exact() {
        for seed in 0..5 {
            let x = random_signal(16000, seed);
            let y = istft(&stft(&x).unwrap());
            let lo = HOP;
            let hi = y.len() - HOP;
            let err: f64 = (lo..hi)
                .map(|i| ((x.samples()[i] - y.samples()[i]) as f64).powi(2))
                .sum::<f64>()
                / (hi - lo) as f64;
            assert!(err.sqrt() < 1e-6, "rms {}", err.sqrt());
        }
    }

    #[test]
    fn parseval_per_frame() {
        let x = random_signal(4096, 3);
        let spec = stft(&x).unwrap();
        let window = sqrt_hann();
        for t in 0..spec.num_frames() {
            let time: f64 = (0..WIN_LEN)
                .map(|n| ((x.samples()[t * HOP + n] * window[n]) as f64).powi(2))
                .sum();
            let row = spec.frames().row(t);
            let mut freq = 0.0f64;
            for k in 0..NUM_BINS {
                let e = row[k].norm_sqr() as f64;
                freq += if k == 0 || k == NUM_BINS - 1 { e } else { 2.0 * e };
            }
            freq /= WIN_LEN as f64;
            assert!(((freq - time) / time).abs() < 1e-6, "frame {t}");
        }
    }

    #[test]
    fn log_power_values() {
        let mut frames = Array2::zeros((1, NUM_BINS));
        frames[[0, 1]] = Complex32::new(1.0, 0.0);
        frames[[0, 2]] = Complex32::new(0.0, 2.0);
        let f = log_power(&ComplexSpectrogram::new(frames).unwrap());
        assert!((f.rows()[[0, 0]] - (-27.631021)).abs() < 1e-4);
        assert!(f.rows()[[0, 1]].abs() < 1e-6);
        assert!((f.rows()[[0, 2]] - 1.386_294_4).abs() < 1e-5);
        assert!(f.rows().iter().all(|&v| v >= LOG_POWER_EPS.ln()));
    }

    #[test]
    fn mask_application() {
        let mut frames = Array2::from_elem((2, NUM_BINS), Complex32::new(0.3, -0.7));
        frames[[0, 0]] = Complex32::new(2.0, 0.0);
        let spec = ComplexSpectrogram::new(frames).unwrap();

        let ones = apply_mask(&spec, &Mask::constant(2, 1.0).unwrap()).unwrap();
        assert_eq!(ones, spec);

        let zeros = apply_mask(&spec, &Mask::constant(2, 0.0).unwrap()).unwrap();
        assert!(zeros.frames().iter().all(|c| c.norm() == 0.0));

        let half = apply_mask(&spec, &Mask::constant(2, 0.5).unwrap()).unwrap();
        assert_eq!(half.frames()[[0, 0]], Complex32::new(1.0, 0.0));

        let wrong = Mask::constant(3, 0.5).unwrap();
        assert!(matches!(
            apply_mask(&spec, &wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(Mask::new(Array2::from_elem((1, NUM_BINS), 1.5)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn round_trip_any_length(len in 1024usize..6000, seed in any::<u64>()) {
                let x = random_signal(len, seed);
                let y = istft(&stft(&x).unwrap());
                let hi = y.len() - HOP;
                let mse: f64 = (HOP..hi)
                    .map(|i| ((x.samples()[i] - y.samples()[i]) as f64).powi(2))
                    .sum::<f64>() / (hi - HOP) as f64;
                prop_assert!(mse.sqrt() < 1e-6);
            }

            #[test]
            fn mask_keeps_phase(re in -5.0f32..5.0, im in -5.0f32..5.0, m in 0.01f32..1.0) {
                prop_assume!(re.hypot(im) > 1e-3);
                let spec = ComplexSpectrogram::new(
                    Array2::from_elem((1, NUM_BINS), Complex32::new(re, im))).unwrap();
                let out = apply_mask(&spec, &Mask::constant(1, m).unwrap()).unwrap();
                let a = spec.frames()[[0, 0]].arg();
                let b = out.frames()[[0, 0]].arg();
                prop_assert!((a - b).abs() < 1e-5);
            }

            #[test]
            fn log_power_is_monotone(a in 0.0f32..100.0, b in 0.0f32..100.0) {
                let mut frames = Array2::zeros((1, NUM_BINS));
                frames[[0, 0]] = Complex32::new(a, 0.0);
                frames[[0, 1]] = Complex32::new(b, 0.0);
                let f = log_power(&ComplexSpectrogram::new(frames).unwrap());
                if a < b {
                    prop_assert!(f.rows()[[0, 0]] <= f.rows()[[0, 1]]);
                }
            }
        }
    }
}
