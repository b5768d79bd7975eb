//! Band-limited sample-rate conversion with a Kaiser-windowed sinc kernel.

use super::AudioClip;

/// Kernel taps (total support in source samples at the narrower rate).
const TAPS: usize = 64;
/// Kaiser shape parameter; ~80 dB stopband.
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (series form).
fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let half = x / 2.0;
    for k in 1..32 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

fn kaiser(r: f64) -> f64 {
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

/// Resamples to `target_rate`. Output length is round(len * target / source);
/// downsampling stretches the kernel so the result stays band-limited below
/// the new Nyquist frequency.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if target_rate == clip.sample_rate {
        return clip.clone();
    }
    let src = &clip.samples;
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (src.len() as f64 * ratio).round() as usize;
    if src.is_empty() || out_len == 0 {
        return AudioClip::new(vec![], target_rate);
    }

    // When downsampling, cut off below the target Nyquist and widen the
    // kernel accordingly.
    let cutoff = ratio.min(1.0);
    let half_width = (TAPS / 2) as f64 / cutoff;

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 / ratio;
        let lo = ((center - half_width).ceil() as isize).max(0) as usize;
        let hi = ((center + half_width).floor() as isize).min(src.len() as isize - 1) as usize;
        let mut acc = 0.0f64;
        for (i, &s) in src.iter().enumerate().take(hi + 1).skip(lo) {
            let t = i as f64 - center;
            let w = cutoff * sinc(cutoff * t) * kaiser(t / half_width);
            acc += w * s as f64;
        }
        out.push(acc as f32);
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_rates_match() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 8000);
        assert_eq!(resample(&clip, 8000), clip);
    }

    #[test]
    fn length_follows_rate_ratio() {
        let clip = AudioClip::new(vec![0.0; 8000], 8000);
        let out = resample(&clip, 4000);
        assert_eq!(out.len(), 4000);
        assert_eq!(out.sample_rate, 4000);
        // Duration preserved within one output sample.
        assert!((out.duration_s() - clip.duration_s()).abs() <= 1.0 / 4000.0);
    }

    #[test]
    fn sine_survives_downsampling_at_the_right_frequency() {
        // 440 Hz sine at 44100 Hz, resampled to 8000 Hz: the dominant DFT
        // peak must fall within one bin of 440 Hz.
        let src_rate = 44100u32;
        let n = src_rate as usize; // 1 second
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                (2.0 * std::f64::consts::PI * 440.0 * i as f64 / src_rate as f64).sin() as f32
                    * 0.7
            })
            .collect();
        let clip = AudioClip::new(samples, src_rate);
        let out = resample(&clip, 8000);

        // Plain DFT magnitude scan (oracle independent of the dsp module).
        let m = out.len();
        let bin_hz = 8000.0 / m as f64;
        let mut best_bin = 0usize;
        let mut best_mag = 0.0f64;
        for k in 1..m / 2 {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for (i, &s) in out.samples.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / m as f64;
                re += s as f64 * ang.cos();
                im += s as f64 * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best_mag {
                best_mag = mag;
                best_bin = k;
            }
        }
        let peak_hz = best_bin as f64 * bin_hz;
        assert!(
            (peak_hz - 440.0).abs() <= bin_hz,
            "peak at {peak_hz} Hz, expected 440"
        );
    }
}
