//! Prosodic feature extraction from yes/no utterances.
//!
//! Audio comes in as mono PCM, gets segmented into labelled utterances with an
//! energy detector, and every utterance is summarised by duration,
//! repetition, pitch (Yin), energy and loudness. Energy is the mean squared
//! amplitude of a frame and loudness the mean absolute amplitude; both are
//! aggregated over frames as mean and maximum, and energy additionally as a
//! total over the utterance.

mod features;
mod segment;
mod wav;
mod yin;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{
    extract_features, frame_features, FeatureConfig, FeatureExtraction, FeatureWarning,
    FrameFeatures,
};
pub use segment::{
    detect_repetition, read_labels, segment_utterances, voiced_regions, Label, VadConfig,
    VoicedRegion,
};
pub use wav::{read_wav, write_wav};
pub use yin::{yin_pitch, yin_pitch_with, Pitch, YinConfig};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProsodyError {
    #[error("empty input frame")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("label {word} at t={t:.3}s has no voiced region within {radius:.1}s")]
    UnmatchedLabel { word: Word, t: f64, radius: f64 },
    #[error("baseline standard deviation for {0} is not positive")]
    DegenerateBaseline(&'static str),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ProsodyError>;

/// The two feedback words a teacher may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Word {
    Yes,
    No,
}

impl Word {
    /// +1 for yes, -1 for no.
    pub fn sign(self) -> f64 {
        match self {
            Word::Yes => 1.0,
            Word::No => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Word::Yes => "yes",
            Word::No => "no",
        }
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Word {
    type Err = ProsodyError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yes" => Ok(Word::Yes),
            "no" => Ok(Word::No),
            other => Err(ProsodyError::InvalidParams(format!(
                "unknown word {other:?}"
            ))),
        }
    }
}

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(ProsodyError::InvalidParams(
                "sample rate must be positive".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Decodes 16-bit little-endian mono PCM bytes.
    pub fn from_pcm16_le(bytes: &[u8], sample_rate: u32) -> Result<Self> {
        if bytes.len() % 2 != 0 {
            return Err(ProsodyError::UnsupportedAudio(format!(
                "PCM chunk has odd length {}",
                bytes.len()
            )));
        }
        let samples = bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn to_pcm16_le(&self) -> Vec<u8> {
        self.samples
            .iter()
            .flat_map(|&s| ((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).to_le_bytes())
            .collect()
    }
}

/// Per-utterance prosodic summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProsodyFeatures {
    pub duration: f64,
    pub repetition: u8,
    pub pitch_mean: f64,
    pub pitch_max: f64,
    pub energy_mean: f64,
    pub energy_max: f64,
    pub energy_total: f64,
    pub loudness_mean: f64,
    pub loudness_max: f64,
}

/// One labelled speech segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub word: Word,
    pub t_start: f64,
    pub t_end: f64,
    pub features: ProsodyFeatures,
}

impl UtteranceRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// One JSONL row with every float printed to six decimal places.
    pub fn to_jsonl_line(&self) -> String {
        let f = &self.features;
        format!(
            "{{\"word\":\"{}\",\"t_start\":{:.6},\"t_end\":{:.6},\"duration\":{:.6},\"repetition\":{},\
             \"pitch_mean\":{:.6},\"pitch_max\":{:.6},\"energy_mean\":{:.6},\"energy_max\":{:.6},\
             \"energy_total\":{:.6},\"loudness_mean\":{:.6},\"loudness_max\":{:.6}}}",
            self.word,
            self.t_start,
            self.t_end,
            f.duration,
            f.repetition,
            f.pitch_mean,
            f.pitch_max,
            f.energy_mean,
            f.energy_max,
            f.energy_total,
            f.loudness_mean,
            f.loudness_max
        )
    }
}

/// Mean of squared amplitudes.
pub fn energy(frame: &[f64]) -> Result<f64> {
    if frame.is_empty() {
        return Err(ProsodyError::EmptyInput);
    }
    Ok(frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64)
}

/// Mean of absolute amplitudes (sound pressure as seen by the microphone).
pub fn loudness(frame: &[f64]) -> Result<f64> {
    if frame.is_empty() {
        return Err(ProsodyError::EmptyInput);
    }
    Ok(frame.iter().map(|x| x.abs()).sum::<f64>() / frame.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub std: f64,
}

impl FeatureStat {
    pub fn from_values(values: &[f64]) -> Self {
        Self {
            mean: crate::numeric::mean(values),
            std: crate::numeric::population_std(values),
        }
    }

    fn z(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Per-speaker reference statistics used to z-standardise utterance features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerBaseline {
    pub pitch: FeatureStat,
    pub energy: FeatureStat,
    pub loudness: FeatureStat,
}

/// Shift added to the mean z-score before flooring; keeps the magnitude positive.
pub const MAGNITUDE_SHIFT: f64 = 3.0;
pub const MAGNITUDE_FLOOR: f64 = 0.1;

impl SpeakerBaseline {
    pub fn new(pitch: FeatureStat, energy: FeatureStat, loudness: FeatureStat) -> Result<Self> {
        let b = Self {
            pitch,
            energy,
            loudness,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, stat) in [
            ("pitch", self.pitch),
            ("energy", self.energy),
            ("loudness", self.loudness),
        ] {
            if !(stat.std > 0.0 && stat.std.is_finite() && stat.mean.is_finite()) {
                return Err(ProsodyError::DegenerateBaseline(name));
            }
        }
        Ok(())
    }

    /// Frame-level statistics over the voiced frames of a baseline reading.
    pub fn from_audio(audio: &AudioBuffer, cfg: &FeatureConfig, vad: &VadConfig) -> Result<Self> {
        let frames = frame_features(audio, 0, audio.samples.len(), cfg)?;
        let threshold =
            segment::energy_threshold(&frames.iter().map(|f| f.energy).collect::<Vec<_>>(), vad);
        let voiced: Vec<&FrameFeatures> = frames.iter().filter(|f| f.energy > threshold).collect();
        let energies: Vec<f64> = voiced.iter().map(|f| f.energy).collect();
        let louds: Vec<f64> = voiced.iter().map(|f| f.loudness).collect();
        let pitches: Vec<f64> = voiced.iter().filter_map(|f| f.pitch.hz()).collect();
        if energies.is_empty() {
            return Err(ProsodyError::DegenerateBaseline("energy"));
        }
        if pitches.is_empty() {
            return Err(ProsodyError::DegenerateBaseline("pitch"));
        }
        Self::new(
            FeatureStat::from_values(&pitches),
            FeatureStat::from_values(&energies),
            FeatureStat::from_values(&louds),
        )
    }

    /// Mean z-score of pitch, energy and loudness means.
    pub fn combined_z(&self, features: &ProsodyFeatures) -> Result<f64> {
        self.validate()?;
        Ok((self.pitch.z(features.pitch_mean)
            + self.energy.z(features.energy_mean)
            + self.loudness.z(features.loudness_mean))
            / 3.0)
    }
}

/// Prosody-weighted feedback: `max(mean z + 3, 0.1)` times +1 for yes and -1 for no.
pub fn signed_feedback_value(
    features: &ProsodyFeatures,
    word: Word,
    baseline: &SpeakerBaseline,
) -> Result<f64> {
    let z = baseline.combined_z(features)?;
    Ok(magnitude_from_z(z) * word.sign())
}

pub fn magnitude_from_z(z: f64) -> f64 {
    (z + MAGNITUDE_SHIFT).max(MAGNITUDE_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(energy(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(energy(&[2.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(energy(&[]), Err(ProsodyError::EmptyInput));
    }

    #[test]
    fn loudness_examples() {
        assert_eq!(loudness(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(loudness(&[2.0, 0.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(loudness(&[-0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(loudness(&[]), Err(ProsodyError::EmptyInput));
    }

    fn unit_baseline() -> SpeakerBaseline {
        SpeakerBaseline::new(
            FeatureStat {
                mean: 200.0,
                std: 20.0,
            },
            FeatureStat {
                mean: 0.01,
                std: 0.002,
            },
            FeatureStat {
                mean: 0.08,
                std: 0.01,
            },
        )
        .unwrap()
    }

    fn at_baseline() -> ProsodyFeatures {
        ProsodyFeatures {
            pitch_mean: 200.0,
            energy_mean: 0.01,
            loudness_mean: 0.08,
            ..Default::default()
        }
    }

    #[test]
    fn signed_value_at_baseline() {
        let b = unit_baseline();
        assert_eq!(
            signed_feedback_value(&at_baseline(), Word::Yes, &b).unwrap(),
            3.0
        );
        assert_eq!(
            signed_feedback_value(&at_baseline(), Word::No, &b).unwrap(),
            -3.0
        );
    }

    #[test]
    fn signed_value_one_sigma_no() {
        let b = unit_baseline();
        let f = ProsodyFeatures {
            pitch_mean: 220.0,
            energy_mean: 0.012,
            loudness_mean: 0.09,
            ..Default::default()
        };
        let v = signed_feedback_value(&f, Word::No, &b).unwrap();
        assert!((v + 4.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn magnitude_is_floored() {
        let b = unit_baseline();
        let f = ProsodyFeatures {
            pitch_mean: 0.0,
            energy_mean: 0.0,
            loudness_mean: 0.0,
            ..Default::default()
        };
        assert_eq!(
            signed_feedback_value(&f, Word::Yes, &b).unwrap(),
            MAGNITUDE_FLOOR
        );
    }

    #[test]
    fn degenerate_baseline_rejected() {
        let err = SpeakerBaseline::new(
            FeatureStat {
                mean: 200.0,
                std: 0.0,
            },
            FeatureStat {
                mean: 0.01,
                std: 0.002,
            },
            FeatureStat {
                mean: 0.08,
                std: 0.01,
            },
        )
        .unwrap_err();
        assert_eq!(err, ProsodyError::DegenerateBaseline("pitch"));
    }

    #[test]
    fn pcm_roundtrip_and_odd_chunk() {
        let a = AudioBuffer::new(vec![0.0, 0.5, -0.5], 22050).unwrap();
        let back = AudioBuffer::from_pcm16_le(&a.to_pcm16_le(), 22050).unwrap();
        for (x, y) in a.samples.iter().zip(&back.samples) {
            assert!((x - y).abs() < 1e-4);
        }
        assert!(AudioBuffer::from_pcm16_le(&[1, 2, 3], 22050).is_err());
    }

    #[test]
    fn jsonl_has_six_decimals() {
        let r = UtteranceRecord {
            word: Word::Yes,
            t_start: 1.0,
            t_end: 1.5,
            features: ProsodyFeatures {
                duration: 0.5,
                ..Default::default()
            },
        };
        let line = r.to_jsonl_line();
        assert!(line.contains("\"t_start\":1.000000"));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["word"], "yes");
    }

    proptest! {
        #[test]
        fn energy_loudness_scaling(frame in prop::collection::vec(-1.0f64..1.0, 1..64), a in 0.01f64..10.0) {
            let e = energy(&frame).unwrap();
            let l = loudness(&frame).unwrap();
            let neg: Vec<f64> = frame.iter().map(|x| -x).collect();
            prop_assert_eq!(energy(&neg).unwrap(), e);
            prop_assert_eq!(loudness(&neg).unwrap(), l);
            let scaled: Vec<f64> = frame.iter().map(|x| a * x).collect();
            prop_assert!((energy(&scaled).unwrap() - a * a * e).abs() <= 1e-12 * (1.0 + a * a * e));
            prop_assert!((loudness(&scaled).unwrap() - a * l).abs() <= 1e-12 * (1.0 + a * l));
        }

        #[test]
        fn yes_no_antisymmetric(p in 50.0f64..400.0, e in 0.0f64..0.1, l in 0.0f64..0.5) {
            let b = unit_baseline();
            let f = ProsodyFeatures { pitch_mean: p, energy_mean: e, loudness_mean: l, ..Default::default() };
            let yes = signed_feedback_value(&f, Word::Yes, &b).unwrap();
            let no = signed_feedback_value(&f, Word::No, &b).unwrap();
            prop_assert_eq!(yes, -no);
            prop_assert!(yes > 0.0);
        }
    }
}
