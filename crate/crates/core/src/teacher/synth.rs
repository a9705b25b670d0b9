use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::prosody::{AudioBuffer, Label, UtteranceRecord};

/// A sine tone whose energy equals `energy` (amplitude `sqrt(2 e)`), with
/// 10 ms raised-cosine edges.
pub fn synthesize_tone(freq: f64, energy: f64, duration: f64, sample_rate: u32) -> Vec<f64> {
    let n = (duration * sample_rate as f64).round() as usize;
    let amp = (2.0 * energy.max(0.0)).sqrt().min(1.0);
    let ramp = ((0.01 * sample_rate as f64) as usize).max(1).min(n / 2 + 1);
    (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            let g = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            g * amp * (2.0 * PI * freq * i as f64 / sample_rate as f64).sin()
        })
        .collect()
}

/// Renders utterance records as tones over faint noise and returns the
/// buffer with one label per utterance at its midpoint.
pub fn synthesize_session_audio(
    utterances: &[UtteranceRecord],
    total_duration: f64,
    sample_rate: u32,
    seed: u64,
) -> (AudioBuffer, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (total_duration * sample_rate as f64).ceil() as usize;
    let mut samples: Vec<f64> = (0..n).map(|_| 1e-4 * (rng.gen::<f64>() - 0.5)).collect();
    let mut labels = Vec::with_capacity(utterances.len());
    for u in utterances {
        let start = (u.t_start * sample_rate as f64).round() as usize;
        let tone = synthesize_tone(
            u.features.pitch_mean,
            u.features.energy_mean,
            u.duration(),
            sample_rate,
        );
        for (i, x) in tone.into_iter().enumerate() {
            if let Some(s) = samples.get_mut(start + i) {
                *s += x;
            }
        }
        labels.push(Label {
            word: u.word,
            t: 0.5 * (u.t_start + u.t_end),
        });
    }
    (
        AudioBuffer {
            samples,
            sample_rate,
        },
        labels,
    )
}
