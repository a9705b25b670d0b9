use super::yin::{yin_pitch_with, Pitch, YinConfig};
use super::{energy, loudness, AudioBuffer, ProsodyError, ProsodyFeatures, Result};

/// Framing for per-utterance feature extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub yin: YinConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_length: 2048,
            hop_length: 512,
            yin: YinConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameFeatures {
    pub energy: f64,
    pub loudness: f64,
    pub pitch: Pitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureWarning {
    /// No frame of the utterance had a detectable pitch; pitch fields are 0.
    VoicelessUtterance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureExtraction {
    pub features: ProsodyFeatures,
    pub warning: Option<FeatureWarning>,
}

fn reflect(idx: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = idx.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Frame features for samples `[start, end)`.
///
/// One frame per complete hop (at least one), each centred on the middle of
/// its hop and `frame_length` wide. Samples outside the buffer are taken by
/// reflection at the buffer edges.
pub fn frame_features(
    audio: &AudioBuffer,
    start: usize,
    end: usize,
    cfg: &FeatureConfig,
) -> Result<Vec<FrameFeatures>> {
    if cfg.frame_length == 0 || cfg.hop_length == 0 {
        return Err(ProsodyError::InvalidParams(
            "frame and hop length must be positive".into(),
        ));
    }
    if audio.samples.is_empty() {
        return Err(ProsodyError::EmptyInput);
    }
    if end <= start || end > audio.samples.len() {
        return Err(ProsodyError::InvalidParams(format!(
            "segment [{start}, {end}) outside audio of {} samples",
            audio.samples.len()
        )));
    }
    let n = end - start;
    let count = (n / cfg.hop_length).max(1);
    let half = (cfg.frame_length / 2) as isize;
    let mut frame = vec![0.0; cfg.frame_length];
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let centre = (start + k * cfg.hop_length + cfg.hop_length / 2) as isize;
        for (j, slot) in frame.iter_mut().enumerate() {
            *slot = audio.samples[reflect(centre - half + j as isize, audio.samples.len())];
        }
        out.push(FrameFeatures {
            energy: energy(&frame)?,
            loudness: loudness(&frame)?,
            pitch: yin_pitch_with(&frame, audio.sample_rate, &cfg.yin)?,
        });
    }
    Ok(out)
}

/// Prosodic summary of the utterance between `t_start` and `t_end` seconds.
///
/// Pitch statistics use voiced frames only; `repetition` is left at 0 and is
/// filled in by [`super::detect_repetition`].
pub fn extract_features(
    audio: &AudioBuffer,
    t_start: f64,
    t_end: f64,
    cfg: &FeatureConfig,
) -> Result<FeatureExtraction> {
    if !(t_end > t_start) || t_start < 0.0 {
        return Err(ProsodyError::InvalidParams(format!(
            "bad utterance bounds [{t_start}, {t_end}]"
        )));
    }
    let sr = audio.sample_rate as f64;
    let start = (t_start * sr).round() as usize;
    let end = ((t_end * sr).round() as usize).min(audio.samples.len());
    if end <= start {
        return Err(ProsodyError::InvalidParams(format!(
            "utterance [{t_start}, {t_end}] outside audio of {:.3}s",
            audio.duration()
        )));
    }
    let frames = frame_features(audio, start, end, cfg)?;
    let count = frames.len() as f64;

    let energy_total: f64 = frames.iter().map(|f| f.energy).sum();
    let energy_max = frames.iter().map(|f| f.energy).fold(0.0, f64::max);
    let loudness_sum: f64 = frames.iter().map(|f| f.loudness).sum();
    let loudness_max = frames.iter().map(|f| f.loudness).fold(0.0, f64::max);
    let pitches: Vec<f64> = frames.iter().filter_map(|f| f.pitch.hz()).collect();

    let (pitch_mean, pitch_max, warning) = if pitches.is_empty() {
        (0.0, 0.0, Some(FeatureWarning::VoicelessUtterance))
    } else {
        (
            pitches.iter().sum::<f64>() / pitches.len() as f64,
            pitches.iter().copied().fold(0.0, f64::max),
            None,
        )
    };

    Ok(FeatureExtraction {
        features: ProsodyFeatures {
            duration: t_end - t_start,
            repetition: 0,
            pitch_mean,
            pitch_max,
            energy_mean: energy_total / count,
            energy_max,
            energy_total,
            loudness_mean: loudness_sum / count,
            loudness_max,
        },
        warning,
    })
}
