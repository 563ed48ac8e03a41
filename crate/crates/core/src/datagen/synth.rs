use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use super::stream_rng;
use crate::dsp::{TimeSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

const FS: f64 = SAMPLE_RATE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
    Hum,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::Hum];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
            NoiseKind::Hum => "hum",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownNoiseKind(s.to_string()))
    }
}

fn num_samples(seconds: f64) -> Result<usize> {
    let n = (seconds * FS).round();
    if !(seconds > 0.0 && seconds.is_finite()) || n < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {seconds} s"
        )));
    }
    Ok(n as usize)
}

/// Two-pole resonator with roughly unit peak gain.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bandwidth: f64) {
        let r = (-PI * bandwidth / FS).exp();
        let theta = 2.0 * PI * freq / FS;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Voiced,
    Unvoiced,
    Silence,
}

const FORMANT_RANGES: [(f64, f64); 4] = [(300.0, 900.0), (900.0, 2300.0), (2300.0, 3300.0), (3300.0, 3900.0)];

/// Raised-cosine fade at both ends of a segment.
fn envelope(i: usize, len: usize) -> f64 {
    let ramp = (0.015 * FS) as usize;
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

fn render_voiced(out: &mut [f64], base_f0: f64, rng: &mut ChaCha8Rng) {
    let len = out.len();
    let f0_start = (base_f0 * rng.gen_range(0.85..1.2)).clamp(80.0, 300.0);
    let f0_end = (base_f0 * rng.gen_range(0.85..1.2)).clamp(80.0, 300.0);
    let count = rng.gen_range(2..=4);
    let formants: Vec<(f64, f64, f64)> = FORMANT_RANGES[..count]
        .iter()
        .map(|&(lo, hi)| (rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(60.0..150.0)))
        .collect();
    let mut filters = vec![Resonator::default(); count];
    let amp = rng.gen_range(0.5..1.0);
    let mut phase = rng.gen_range(0.0..1.0);
    // Glottal pulse shaping: two leaky integrators then a differentiator.
    let (mut g1, mut g2, mut prev) = (0.0, 0.0, 0.0);
    for (i, o) in out.iter_mut().enumerate() {
        let frac = i as f64 / len as f64;
        if i % 32 == 0 {
            for (f, &(start, end, bw)) in filters.iter_mut().zip(&formants) {
                f.tune(start + (end - start) * frac, bw);
            }
        }
        let f0 = f0_start + (f0_end - f0_start) * frac;
        phase += f0 / FS;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        g1 = 0.97 * g1 + pulse;
        g2 = 0.97 * g2 + g1;
        let src = g2 - prev;
        prev = g2;
        let y: f64 = filters.iter_mut().map(|f| f.process(src)).sum();
        *o = amp * envelope(i, len) * y;
    }
}

fn render_unvoiced(out: &mut [f64], rng: &mut ChaCha8Rng) {
    let len = out.len();
    let mut f = Resonator::default();
    f.tune(rng.gen_range(2500.0..6000.0), rng.gen_range(800.0..2000.0));
    let amp = rng.gen_range(0.05..0.2);
    for (i, o) in out.iter_mut().enumerate() {
        let x: f64 = rng.sample(StandardNormal);
        *o = amp * envelope(i, len) * f.process(x);
    }
}

fn to_signal(samples: &[f64], target_std: f64) -> Result<TimeSignal> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return Err(Error::SilentSignal("synthesized signal is constant".into()));
    }
    let k = target_std / std;
    TimeSignal::new(samples.iter().map(|x| ((x - mean) * k) as f32).collect())
}

/// Speech-like signal: a glottal pulse train with a slowly varying pitch
/// (80–300 Hz) through 2–4 moving formant resonators, alternating voiced,
/// unvoiced (fricative noise) and silent segments. Scaled to std 0.1.
pub fn synth_speech_like(seed: u64, seconds: f64) -> Result<TimeSignal> {
    let n = num_samples(seconds)?;
    let mut rng = stream_rng(seed, "speech");
    let base_f0 = rng.gen_range(90.0..250.0);
    let mut out = vec![0.0; n];
    let mut pos = 0;
    let mut kind = Segment::Voiced;
    while pos < n {
        let secs = match kind {
            Segment::Voiced => rng.gen_range(0.12..0.35),
            Segment::Unvoiced => rng.gen_range(0.05..0.15),
            Segment::Silence => rng.gen_range(0.04..0.2),
        };
        let len = ((secs * FS) as usize).min(n - pos);
        let seg = &mut out[pos..pos + len];
        match kind {
            Segment::Voiced => render_voiced(seg, base_f0, &mut rng),
            Segment::Unvoiced => render_unvoiced(seg, &mut rng),
            Segment::Silence => {}
        }
        pos += len;
        let u: f64 = rng.gen();
        kind = if u < 0.6 {
            Segment::Voiced
        } else if u < 0.8 {
            Segment::Unvoiced
        } else {
            Segment::Silence
        };
    }
    to_signal(&out, 0.1)
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// 1/f power spectrum: white noise shaped by 1/sqrt(f) in the frequency
/// domain.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = white(rng, n).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let bin = k.min(n - k) as f64;
        buf[k] /= bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

fn babble(seed: u64, rng: &mut ChaCha8Rng, seconds: f64, n: usize) -> Result<Vec<f64>> {
    let voices = rng.gen_range(4..=6);
    let mut out = vec![0.0; n];
    for _ in 0..voices {
        let v = synth_speech_like(rng.gen::<u64>() ^ seed, seconds)?;
        for (o, &x) in out.iter_mut().zip(v.samples()) {
            *o += x as f64;
        }
    }
    Ok(out)
}

fn hum(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let harmonics: Vec<(f64, f64)> = (1..=12)
        .map(|k| (rng.gen_range(0.3..1.0) / k as f64, rng.gen_range(0.0..2.0 * PI)))
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            harmonics
                .iter()
                .enumerate()
                .map(|(k, &(a, ph))| a * (2.0 * PI * 50.0 * (k + 1) as f64 * t + ph).sin())
                .sum()
        })
        .collect()
}

/// Unit-variance noise of the given kind.
pub fn synth_noise(seed: u64, kind: NoiseKind, seconds: f64) -> Result<TimeSignal> {
    let n = num_samples(seconds)?;
    let mut rng = stream_rng(seed, kind.name());
    let raw = match kind {
        NoiseKind::White => white(&mut rng, n),
        NoiseKind::Pink => pink(&mut rng, n),
        NoiseKind::Babble => babble(seed, &mut rng, seconds, n)?,
        NoiseKind::Hum => hum(&mut rng, n),
    };
    to_signal(&raw, 1.0)
}
