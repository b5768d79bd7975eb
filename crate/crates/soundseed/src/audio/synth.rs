//! Deterministic synthetic clips with truthful tags: the training corpus.

use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

use super::{write_wav, AudioClip, BitDepth};
use crate::rng::SeededRng;
use crate::tags::{TagSet, TrackMetadata};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Sine,
    Square,
    ClickTrack,
    NoiseBurst,
    Chord,
}

impl SynthKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SynthKind::Sine => "Sine",
            SynthKind::Square => "Square",
            SynthKind::ClickTrack => "Click-Track",
            SynthKind::NoiseBurst => "Noise-Burst",
            SynthKind::Chord => "Chord",
        }
    }

    pub const ALL: [SynthKind; 5] = [
        SynthKind::Sine,
        SynthKind::Square,
        SynthKind::ClickTrack,
        SynthKind::NoiseBurst,
        SynthKind::Chord,
    ];
}

/// Recipe for one synthetic clip. Output is a pure function of
/// (spec, sample_rate).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    /// Fundamental for pitched kinds (sine, square, chord root).
    pub pitch_hz: f32,
    /// Clicks per minute for click-tracks.
    pub bpm: f32,
    pub duration_s: f64,
    pub amplitude: f32,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self, sample_rate: u32) -> Result<(), SynthError> {
        if !(self.duration_s > 0.0) {
            return Err(SynthError::InvalidSpec(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(SynthError::InvalidSpec(format!(
                "amplitude {} outside [0, 1]",
                self.amplitude
            )));
        }
        let pitched = matches!(
            self.kind,
            SynthKind::Sine | SynthKind::Square | SynthKind::Chord
        );
        if pitched {
            let nyquist = sample_rate as f32 / 2.0;
            if !(20.0..nyquist).contains(&self.pitch_hz) {
                return Err(SynthError::InvalidSpec(format!(
                    "pitch {} Hz outside [20, {nyquist})",
                    self.pitch_hz
                )));
            }
        }
        if self.kind == SynthKind::ClickTrack && !(40.0..=240.0).contains(&self.bpm) {
            return Err(SynthError::InvalidSpec(format!(
                "bpm {} outside [40, 240]",
                self.bpm
            )));
        }
        Ok(())
    }
}

/// Boundary between the "Low" and "High" pitch-register tags.
pub const REGISTER_SPLIT_HZ: f32 = 500.0;

const NOTE_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

/// Nearest-semitone note name, e.g. 440 Hz -> "A4".
pub fn note_name(freq_hz: f32) -> String {
    let midi = (69.0 + 12.0 * (freq_hz / 440.0).log2()).round() as i32;
    let octave = midi.div_euclid(12) - 1;
    let name = NOTE_NAMES[midi.rem_euclid(12) as usize];
    format!("{name}{octave}")
}

fn register_tag(freq_hz: f32) -> &'static str {
    if freq_hz >= REGISTER_SPLIT_HZ {
        "High"
    } else {
        "Low"
    }
}

/// Renders the spec at the given rate and returns the clip together with a
/// tag set that truthfully describes it.
pub fn synth_clip(spec: &SynthSpec, sample_rate: u32) -> Result<(AudioClip, TagSet), SynthError> {
    spec.validate(sample_rate)?;
    let n = (spec.duration_s * sample_rate as f64).round() as usize;
    let mut rng = SeededRng::from_seed(spec.seed);
    let a = spec.amplitude;
    let sr = sample_rate as f64;
    let mut tags = TagSet::new();
    tags.push_raw(spec.kind.tag());

    let samples: Vec<f32> = match spec.kind {
        SynthKind::Sine => {
            tags.push_raw(register_tag(spec.pitch_hz));
            tags.push_raw(&format!("Note {}", note_name(spec.pitch_hz)));
            let phase0 = rng.uniform() as f64 * 2.0 * PI;
            let w = 2.0 * PI * spec.pitch_hz as f64 / sr;
            (0..n)
                .map(|i| (a as f64 * (w * i as f64 + phase0).sin()) as f32)
                .collect()
        }
        SynthKind::Square => {
            tags.push_raw(register_tag(spec.pitch_hz));
            tags.push_raw(&format!("Note {}", note_name(spec.pitch_hz)));
            // Band-limited square: odd harmonics up to 90% of Nyquist.
            let phase0 = rng.uniform() as f64 * 2.0 * PI;
            let f0 = spec.pitch_hz as f64;
            let max_h = ((0.45 * sr) / f0).floor() as usize;
            let harmonics: Vec<usize> = (1..=max_h.max(1)).step_by(2).collect();
            let w = 2.0 * PI * f0 / sr;
            (0..n)
                .map(|i| {
                    let mut s = 0.0f64;
                    for &h in &harmonics {
                        s += ((w * h as f64) * i as f64 + h as f64 * phase0).sin() / h as f64;
                    }
                    (a as f64 * s * 4.0 / PI * 0.7) as f32
                })
                .collect()
        }
        SynthKind::ClickTrack => {
            tags.push_raw(&format!("{} BPM", spec.bpm.round() as u32));
            let period = 60.0 / spec.bpm as f64 * sr; // samples between clicks
            let offset = rng.uniform() as f64 * period;
            // Each click is a short decaying 2 kHz tone burst.
            let click_len = (0.010 * sr).round() as usize;
            let tone_w = 2.0 * PI * 2000.0_f64.min(0.4 * sr) / sr;
            let mut buf = vec![0.0f32; n];
            let mut k = 0usize;
            loop {
                let start = (offset + k as f64 * period).round() as usize;
                if start >= n {
                    break;
                }
                for j in 0..click_len.min(n - start) {
                    let env = (-(j as f64) / (0.002 * sr)).exp();
                    buf[start + j] += (a as f64 * env * (tone_w * j as f64).cos()) as f32;
                }
                k += 1;
            }
            buf
        }
        SynthKind::NoiseBurst => {
            // Bursts of white noise separated by silence.
            let burst = (0.4 * sr).round() as usize;
            let gap = (0.25 * sr).round() as usize;
            let offset = rng.below(gap.max(1));
            let mut buf = vec![0.0f32; n];
            let mut pos = offset;
            while pos < n {
                for j in 0..burst.min(n - pos) {
                    // Flat envelope with short fade edges.
                    let fade = 0.02 * sr;
                    let e_in = (j as f64 / fade).min(1.0);
                    let e_out = ((burst - j) as f64 / fade).min(1.0);
                    buf[pos + j] = a * 0.5 * (e_in * e_out) as f32 * (rng.uniform() * 2.0 - 1.0);
                }
                pos += burst + gap;
            }
            buf
        }
        SynthKind::Chord => {
            let root = spec.pitch_hz as f64;
            let minor = rng.uniform() < 0.5;
            let third = root * if minor { 2.0f64.powf(3.0 / 12.0) } else { 2.0f64.powf(4.0 / 12.0) };
            let fifth = root * 2.0f64.powf(7.0 / 12.0);
            tags.push_raw(register_tag(spec.pitch_hz));
            tags.push_raw(&format!(
                "{} {}",
                note_name(spec.pitch_hz).trim_end_matches(|c: char| c.is_ascii_digit() || c == '-'),
                if minor { "Minor" } else { "Major" }
            ));
            let phases: Vec<f64> = (0..3).map(|_| rng.uniform() as f64 * 2.0 * PI).collect();
            let freqs = [root, third, fifth];
            (0..n)
                .map(|i| {
                    let mut s = 0.0f64;
                    for (f, p0) in freqs.iter().zip(phases.iter()) {
                        s += (2.0 * PI * f / sr * i as f64 + p0).sin();
                    }
                    (a as f64 / 3.0 * s) as f32
                })
                .collect()
        }
    };

    Ok((AudioClip::new(samples, sample_rate), tags))
}

/// Synthesizes a tagged corpus totalling about `hours` of audio at
/// `clip_seconds` per clip, writes PCM16 WAVs under `dir`, and returns the
/// manifest entries. Deterministic per seed.
pub fn make_corpus(
    dir: &Path,
    hours: f64,
    seed: u64,
    sample_rate: u32,
    clip_seconds: f64,
) -> Result<Vec<TrackMetadata>, crate::audio::WavError> {
    let n_clips = ((hours * 3600.0) / clip_seconds).round() as usize;
    let root = SeededRng::from_seed(seed);
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let mut rng = root.split(i as u64);
        let mut spec = random_spec(&mut rng);
        spec.duration_s = clip_seconds;
        let (clip, tags) = synth_clip(&spec, sample_rate).expect("generated spec is valid");
        let name = format!("track_{i:04}.wav");
        write_wav(&clip, &dir.join(&name), BitDepth::Pcm16)?;
        let bpm = if spec.kind == SynthKind::ClickTrack {
            Some(spec.bpm.round() as u32)
        } else {
            None
        };
        entries.push(TrackMetadata {
            path: name,
            tags,
            bpm,
            duration_s: clip_seconds,
        });
    }
    Ok(entries)
}

/// Corpus click-track tempos; a small set so each tempo tag recurs often
/// enough for the diffusion model to learn it.
pub const CORPUS_BPMS: [f32; 10] = [
    60.0, 75.0, 90.0, 100.0, 110.0, 120.0, 135.0, 150.0, 165.0, 180.0,
];

fn random_spec(rng: &mut SeededRng) -> SynthSpec {
    // Kind mix weighted toward tonal content; clicks get enough mass for
    // tempo conditioning to be learnable.
    let roll = rng.uniform();
    let kind = if roll < 0.25 {
        SynthKind::Sine
    } else if roll < 0.45 {
        SynthKind::Square
    } else if roll < 0.65 {
        SynthKind::Chord
    } else if roll < 0.90 {
        SynthKind::ClickTrack
    } else {
        SynthKind::NoiseBurst
    };
    let pitch_hz = match kind {
        // Log-uniform, split evenly across the register boundary.
        SynthKind::Sine | SynthKind::Square => {
            if rng.uniform() < 0.5 {
                // Low register: 80..500 Hz
                (80.0f32.ln() + rng.uniform() * (500.0f32.ln() - 80.0f32.ln())).exp()
            } else {
                // High register: 500..3200 Hz
                (500.0f32.ln() + rng.uniform() * (3200.0f32.ln() - 500.0f32.ln())).exp()
            }
        }
        SynthKind::Chord => {
            if rng.uniform() < 0.5 {
                (80.0f32.ln() + rng.uniform() * (500.0f32.ln() - 80.0f32.ln())).exp()
            } else {
                (500.0f32.ln() + rng.uniform() * (1200.0f32.ln() - 500.0f32.ln())).exp()
            }
        }
        _ => 440.0,
    };
    let bpm = CORPUS_BPMS[rng.below(CORPUS_BPMS.len())];
    SynthSpec {
        kind,
        pitch_hz,
        bpm,
        duration_s: 1.0, // overwritten with the configured clip length
        amplitude: rng.range(0.3, 0.9),
        seed: rng.next_u64(),
    }
}
