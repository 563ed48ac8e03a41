use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{TimeSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

const SCALE: f32 = 32768.0;

fn open_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    }
}

/// Reads a 16-bit PCM mono 16 kHz file into `[-1, 1)`.
pub fn wav_read(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| open_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(Error::UnsupportedWav {
            field: "sample format",
            value: "float".into(),
            expected: "integer PCM",
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedWav {
            field: "bits per sample",
            value: spec.bits_per_sample.to_string(),
            expected: "16",
        });
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav {
            field: "channels",
            value: spec.channels.to_string(),
            expected: "1",
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedWav {
            field: "sample rate",
            value: spec.sample_rate.to_string(),
            expected: "16000",
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if samples.is_empty() {
        return Err(Error::UnsupportedWav {
            field: "length",
            value: "0 samples".into(),
            expected: "at least one sample",
        });
    }
    TimeSignal::new(samples)
}

fn pcm16_spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn write_samples<W: std::io::Write + std::io::Seek>(mut w: WavWriter<W>, signal: &TimeSignal) -> Result<()> {
    for &x in signal.samples() {
        let q = (x * SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        w.write_sample(q)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM mono 16 kHz; samples are rounded and clipped to the
/// representable range.
pub fn wav_write(path: impl AsRef<Path>, signal: &TimeSignal) -> Result<()> {
    let path = path.as_ref();
    let w = WavWriter::create(path, pcm16_spec()).map_err(|e| open_error(path, e))?;
    write_samples(w, signal)
}

/// The exact bytes [`wav_write`] would produce.
pub fn wav_bytes(signal: &TimeSignal) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    write_samples(WavWriter::new(&mut buf, pcm16_spec())?, signal)?;
    Ok(buf.into_inner())
}
