//! Training examples and time-major batches.

use ndarray::{Array2, Axis};
use num_complex::Complex32;

use crate::dsp::{log_power, stft, TimeSignal, NUM_BINS};
use crate::error::{Error, Result};
use crate::loss::target_std;

/// One clip prepared for training. Both spectrograms are divided by the
/// clean clip's standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Array2<f32>,
    pub noisy: Array2<Complex32>,
    pub clean: Array2<Complex32>,
    pub sigma: f64,
}

impl Example {
    pub fn new(clean: &TimeSignal, noisy: &TimeSignal) -> Result<Self> {
        if clean.len() != noisy.len() {
            return Err(Error::shape("clean/noisy lengths", &[clean.len()], &[noisy.len()]));
        }
        let sigma = target_std(clean)?;
        let inv = (1.0 / sigma) as f32;
        let noisy_spec = stft(noisy)?;
        let features = log_power(&noisy_spec).into_rows();
        let clean_spec = stft(clean)?;
        Ok(Self {
            features,
            noisy: noisy_spec.frames().mapv(|c| c * inv),
            clean: clean_spec.frames().mapv(|c| c * inv),
            sigma,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.features.nrows()
    }
}

/// Examples of equal length. Silent clips are excluded and their indices
/// kept in [`Dataset::excluded`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    excluded: Vec<usize>,
}

/// A batch of `batch` sequences, stacked time-major: row `t * batch + b` is
/// frame `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub features: Array2<f32>,
    pub noisy: Array2<Complex32>,
    pub clean: Array2<Complex32>,
}

impl Dataset {
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a TimeSignal, &'a TimeSignal)>,
    {
        let mut ds = Self::default();
        for (i, (clean, noisy)) in pairs.into_iter().enumerate() {
            match Example::new(clean, noisy) {
                Ok(ex) => ds.push(ex)?,
                Err(Error::SilentSignal(_)) => ds.excluded.push(i),
                Err(e) => return Err(e),
            }
        }
        Ok(ds)
    }

    pub fn push(&mut self, ex: Example) -> Result<()> {
        if let Some(first) = self.examples.first() {
            if first.num_frames() != ex.num_frames() {
                return Err(Error::shape(
                    "clip frames",
                    &[first.num_frames()],
                    &[ex.num_frames()],
                ));
            }
        }
        self.examples.push(ex);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Input indices of clips dropped for being silent.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn num_frames(&self) -> usize {
        self.examples.first().map_or(0, Example::num_frames)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "example {bad} out of range for {} clips",
                self.len()
            )));
        }
        let b = indices.len();
        let t = self.num_frames();
        let mut features = Array2::zeros((t * b, NUM_BINS));
        let mut noisy = Array2::zeros((t * b, NUM_BINS));
        let mut clean = Array2::zeros((t * b, NUM_BINS));
        for (slot, &i) in indices.iter().enumerate() {
            let ex = &self.examples[i];
            for frame in 0..t {
                let row = frame * b + slot;
                features.row_mut(row).assign(&ex.features.row(frame));
                noisy.row_mut(row).assign(&ex.noisy.row(frame));
                clean.row_mut(row).assign(&ex.clean.row(frame));
            }
        }
        Ok(Batch {
            batch: b,
            features,
            noisy,
            clean,
        })
    }
}

impl Batch {
    /// Rows belonging to sequence `b`, in time order.
    pub fn sequence_features(&self, b: usize) -> Array2<f32> {
        let rows: Vec<usize> = (b..self.features.nrows()).step_by(self.batch).collect();
        self.features.select(Axis(0), &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, f: f32, amp: f32) -> TimeSignal {
        TimeSignal::new(
            (0..len)
                .map(|n| amp * (2.0 * std::f32::consts::PI * f * n as f32 / 16_000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn batch_is_time_major() {
        let clean: Vec<_> = (0..3).map(|i| tone(4096, 200.0 * (i + 1) as f32, 0.3)).collect();
        let ds = Dataset::from_pairs(clean.iter().zip(clean.iter())).unwrap();
        assert_eq!(ds.len(), 3);
        let b = ds.batch(&[2, 0]).unwrap();
        let t = ds.num_frames();
        assert_eq!(b.features.dim(), (2 * t, NUM_BINS));
        assert_eq!(b.sequence_features(0), ds.examples()[2].features);
        assert_eq!(b.sequence_features(1), ds.examples()[0].features);
        assert_eq!(b.noisy.row(1), ds.examples()[0].noisy.row(0));
    }

    #[test]
    fn spectra_normalized_by_clean_std() {
        let c = tone(4096, 300.0, 0.5);
        let loud = c.scaled(10.0);
        let a = Example::new(&c, &c).unwrap();
        let b = Example::new(&loud, &loud).unwrap();
        for (x, y) in a.clean.iter().zip(b.clean.iter()) {
            assert!((x - y).norm() < 1e-4 * (1.0 + x.norm()));
        }
        assert!((b.sigma / a.sigma - 10.0).abs() < 1e-5);
    }

    #[test]
    fn silent_clips_excluded() {
        let c = tone(4096, 300.0, 0.5);
        let z = TimeSignal::zeros(4096);
        let ds = Dataset::from_pairs([(&c, &c), (&z, &c), (&c, &c)]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.excluded(), &[1]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = tone(4096, 300.0, 0.5);
        let b = tone(8192, 300.0, 0.5);
        assert!(Dataset::from_pairs([(&a, &a), (&b, &b)]).is_err());
        assert!(Example::new(&a, &b).is_err());
        let ds = Dataset::from_pairs([(&a, &a)]).unwrap();
        assert!(ds.batch(&[1]).is_err());
        assert!(ds.batch(&[]).is_err());
    }
}
