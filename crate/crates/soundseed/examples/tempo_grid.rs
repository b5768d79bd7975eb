use soundseed::audio::{synth_clip, SynthKind, SynthSpec};
use soundseed::dsp::{estimate_tempo, fold_bpm, TempoEstimate};

fn main() {
    let mut worst = 0.0f32;
    for &bpm in &[60.0f32, 90.0, 120.0, 150.0, 180.0] {
        for seed in 0..5u64 {
            let (clip, _) = synth_clip(
                &SynthSpec {
                    kind: SynthKind::ClickTrack,
                    pitch_hz: 440.0,
                    bpm,
                    duration_s: 8.0,
                    amplitude: 0.8,
                    seed,
                },
                8000,
            )
            .unwrap();
            match estimate_tempo(&clip).unwrap() {
                TempoEstimate::Bpm(est) => {
                    let want = fold_bpm(bpm);
                    // octave-class distance
                    let err = [est, est * 2.0, est / 2.0]
                        .iter()
                        .map(|e| (e - want).abs())
                        .fold(f32::INFINITY, f32::min);
                    worst = worst.max(err);
                    println!("bpm {bpm:>5} seed {seed}: est {est:8.3} want {want:>5} err {err:.3}");
                }
                TempoEstimate::Undetectable => println!("bpm {bpm} seed {seed}: UNDETECTABLE"),
            }
        }
    }
    println!("worst octave-class error: {worst:.3}");
}
