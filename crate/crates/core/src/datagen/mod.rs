//! Synthetic clean/noise clips, SNR-controlled mixing, manifests and WAV I/O.

mod manifest;
mod mix;
mod synth;
mod wav;

pub use manifest::{ClipFiles, Manifest, ManifestRecord, Split};
pub use mix::{generate_clip, mix_at_snr, normalize_peak, snr_db, Clip, MixtureSpec, DEFAULT_LEVEL_DB};
pub use synth::{synth_noise, synth_speech_like, NoiseKind};
pub use wav::{wav_bytes, wav_read, wav_write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent random stream for `(seed, tag)`.
pub(crate) fn stream_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
