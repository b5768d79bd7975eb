//! Audio I/O: WAV read/write, resampling, length normalization, and the
//! synthetic tagged corpus generator.

pub mod resample;
pub mod synth;
pub mod wav;

pub use resample::resample;
pub use synth::{make_corpus, synth_clip, SynthKind, SynthSpec};
pub use wav::{read_wav, write_wav, BitDepth, WavError};

use crate::rng::SeededRng;

/// Sampled mono waveform; the unit of all audio I/O and synthesis.
/// Samples live in [-1, 1] and are finite; the sample rate is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample_rate must be positive");
        debug_assert!(
            samples.iter().all(|s| s.is_finite()),
            "non-finite sample in AudioClip"
        );
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(n_samples: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; n_samples], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Normalizes a clip to exactly `n_samples`: longer clips are cropped from a
/// random starting point, shorter ones padded with silence at the end, and
/// exact-length clips pass through unchanged.
pub fn fit_length(clip: &AudioClip, n_samples: usize, rng: &mut SeededRng) -> AudioClip {
    assert!(n_samples > 0, "n_samples must be positive");
    let len = clip.len();
    if len == n_samples {
        return clip.clone();
    }
    if len > n_samples {
        let start = rng.below(len - n_samples + 1);
        return AudioClip::new(
            clip.samples[start..start + n_samples].to_vec(),
            clip.sample_rate,
        );
    }
    let mut samples = clip.samples.clone();
    samples.resize(n_samples, 0.0);
    AudioClip::new(samples, clip.sample_rate)
}

/// Crop offset chosen by [`fit_length`] for a given rng state; exposed so
/// training can stamp the crop's start time into the timing conditioning.
pub fn fit_length_with_offset(
    clip: &AudioClip,
    n_samples: usize,
    rng: &mut SeededRng,
) -> (AudioClip, usize) {
    assert!(n_samples > 0, "n_samples must be positive");
    let len = clip.len();
    if len == n_samples {
        return (clip.clone(), 0);
    }
    if len > n_samples {
        let start = rng.below(len - n_samples + 1);
        let out = AudioClip::new(
            clip.samples[start..start + n_samples].to_vec(),
            clip.sample_rate,
        );
        return (out, start);
    }
    let mut samples = clip.samples.clone();
    samples.resize(n_samples, 0.0);
    (AudioClip::new(samples, clip.sample_rate), 0)
}
