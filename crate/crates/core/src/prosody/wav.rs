use std::path::Path;

use super::{AudioBuffer, ProsodyError, Result};

/// Reads a 16-bit PCM mono RIFF WAVE file. Anything else is rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let reader =
        hound::WavReader::open(path.as_ref()).map_err(|e| ProsodyError::Io(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(ProsodyError::UnsupportedAudio(format!(
            "{} channels; only mono is accepted",
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(ProsodyError::UnsupportedAudio(format!(
            "{}-bit {:?}; only 16-bit PCM is accepted",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| ProsodyError::Io(e.to_string()))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)
        .map_err(|e| ProsodyError::Io(e.to_string()))?;
    for &s in &audio.samples {
        writer
            .write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(|e| ProsodyError::Io(e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| ProsodyError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_mono() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = AudioBuffer::new(vec![0.0, 0.25, -0.25, 0.5], 22050).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 22050);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(ProsodyError::UnsupportedAudio(_))
        ));
    }
}
