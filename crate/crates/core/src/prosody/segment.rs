use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureConfig};
use super::{energy, AudioBuffer, ProsodyError, Result, UtteranceRecord, Word};

/// Energy voice-activity detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    /// Non-overlapping detection block, in samples.
    pub block: usize,
    pub abs_floor: f64,
    pub rel_factor: f64,
    pub percentile: f64,
    /// Voiced runs separated by at most this gap are merged.
    pub hangover: f64,
    /// Maximum distance between a label and the region it is matched to.
    pub match_radius: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            block: 512,
            abs_floor: 1e-4,
            rel_factor: 0.05,
            percentile: 0.95,
            hangover: 0.15,
            match_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoicedRegion {
    pub t_start: f64,
    pub t_end: f64,
}

impl VoicedRegion {
    fn distance(&self, t: f64) -> f64 {
        if t < self.t_start {
            self.t_start - t
        } else if t > self.t_end {
            t - self.t_end
        } else {
            0.0
        }
    }
}

/// A word label with an approximate time, as read from a labels JSONL file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub word: Word,
    pub t: f64,
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<Label>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ProsodyError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let label: Label = serde_json::from_str(&line)
            .map_err(|e| ProsodyError::InvalidParams(format!("labels line {}: {e}", i + 1)))?;
        out.push(label);
    }
    Ok(out)
}

pub(crate) fn energy_threshold(energies: &[f64], cfg: &VadConfig) -> f64 {
    if energies.is_empty() {
        return cfg.abs_floor;
    }
    let mut sorted = energies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((cfg.percentile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    cfg.abs_floor.max(cfg.rel_factor * sorted[rank - 1])
}

/// Voiced regions of the whole buffer, merged across short pauses.
pub fn voiced_regions(audio: &AudioBuffer, cfg: &VadConfig) -> Result<Vec<VoicedRegion>> {
    if cfg.block == 0 {
        return Err(ProsodyError::InvalidParams(
            "VAD block must be positive".into(),
        ));
    }
    if audio.samples.is_empty() {
        return Ok(Vec::new());
    }
    let energies = audio
        .samples
        .chunks(cfg.block)
        .map(energy)
        .collect::<Result<Vec<f64>>>()?;
    let threshold = energy_threshold(&energies, cfg);
    let sr = audio.sample_rate as f64;
    let len = audio.samples.len();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<usize> = None;
    for (k, e) in energies.iter().enumerate() {
        match (e > &threshold, current) {
            (true, None) => current = Some(k),
            (false, Some(s)) => {
                runs.push((s, k));
                current = None;
            }
            _ => {}
        }
    }
    if let Some(s) = current {
        runs.push((s, energies.len()));
    }

    let to_secs = |block_idx: usize| ((block_idx * cfg.block).min(len)) as f64 / sr;
    let mut regions: Vec<VoicedRegion> = Vec::new();
    for (s, e) in runs {
        let region = VoicedRegion {
            t_start: to_secs(s),
            t_end: to_secs(e),
        };
        match regions.last_mut() {
            Some(prev) if region.t_start - prev.t_end <= cfg.hangover => prev.t_end = region.t_end,
            _ => regions.push(region),
        }
    }
    Ok(regions)
}

/// Matches every label to the nearest unused voiced region and extracts its
/// features. Records come back time-ordered, with repetition flags set.
pub fn segment_utterances(
    audio: &AudioBuffer,
    labels: &[Label],
    vad: &VadConfig,
    features: &FeatureConfig,
    gap_max: f64,
) -> Result<Vec<UtteranceRecord>> {
    let duration = audio.duration();
    for l in labels {
        if !(0.0..=duration).contains(&l.t) {
            return Err(ProsodyError::InvalidParams(format!(
                "label at {}s outside audio of {duration:.3}s",
                l.t
            )));
        }
    }
    let regions = voiced_regions(audio, vad)?;
    let mut used = vec![false; regions.len()];
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].t.total_cmp(&labels[b].t));

    let mut records = Vec::with_capacity(labels.len());
    for idx in order {
        let label = labels[idx];
        let best = regions
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, r)| (i, r.distance(label.t)))
            .filter(|(_, d)| *d <= vad.match_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, _)) = best else {
            return Err(ProsodyError::UnmatchedLabel {
                word: label.word,
                t: label.t,
                radius: vad.match_radius,
            });
        };
        used[i] = true;
        let region = regions[i];
        let extraction = extract_features(audio, region.t_start, region.t_end, features)?;
        if extraction.warning.is_some() {
            log::warn!(
                "utterance {} at {:.3}s has no voiced pitch frames",
                label.word,
                region.t_start
            );
        }
        records.push(UtteranceRecord {
            word: label.word,
            t_start: region.t_start,
            t_end: region.t_end,
            features: extraction.features,
        });
    }
    records.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    detect_repetition(&mut records, gap_max);
    Ok(records)
}

/// Flags every member of a run of consecutive identical words (gap at most
/// `gap_max` seconds) with repetition = 1; everything else gets 0.
pub fn detect_repetition(records: &mut [UtteranceRecord], gap_max: f64) {
    for r in records.iter_mut() {
        r.features.repetition = 0;
    }
    for i in 1..records.len() {
        let gap = records[i].t_start - records[i - 1].t_end;
        if records[i].word == records[i - 1].word && gap <= gap_max {
            records[i].features.repetition = 1;
            records[i - 1].features.repetition = 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prosody::ProsodyFeatures;

    const SR: u32 = 22050;

    fn with_bursts(total: f64, bursts: &[(f64, f64)]) -> AudioBuffer {
        let n = (total * SR as f64) as usize;
        let mut samples = vec![0.0; n];
        for &(start, len) in bursts {
            let s = (start * SR as f64) as usize;
            let e = ((start + len) * SR as f64) as usize;
            for (i, x) in samples[s..e].iter_mut().enumerate() {
                *x = 0.4 * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / SR as f64).sin();
            }
        }
        AudioBuffer::new(samples, SR).unwrap()
    }

    fn run(audio: &AudioBuffer, labels: &[Label]) -> Result<Vec<UtteranceRecord>> {
        segment_utterances(
            audio,
            labels,
            &VadConfig::default(),
            &FeatureConfig::default(),
            1.0,
        )
    }

    #[test]
    fn silence_is_unmatched() {
        let audio = AudioBuffer::new(vec![0.0; 2 * SR as usize], SR).unwrap();
        let err = run(
            &audio,
            &[Label {
                word: Word::Yes,
                t: 1.0,
            }],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ProsodyError::UnmatchedLabel {
                word: Word::Yes,
                ..
            }
        ));
    }

    #[test]
    fn single_burst_boundaries_within_one_hop() {
        let audio = with_bursts(2.5, &[(1.0, 0.5)]);
        let recs = run(
            &audio,
            &[Label {
                word: Word::Yes,
                t: 1.1,
            }],
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        let hop = 512.0 / SR as f64;
        assert!((recs[0].t_start - 1.0).abs() <= hop, "{}", recs[0].t_start);
        assert!((recs[0].t_end - 1.5).abs() <= hop, "{}", recs[0].t_end);
        assert!((recs[0].features.pitch_mean - 200.0).abs() < 4.0);
    }

    #[test]
    fn two_bursts_in_time_order() {
        let audio = with_bursts(4.0, &[(0.5, 0.4), (2.5, 0.6)]);
        let recs = run(
            &audio,
            &[
                Label {
                    word: Word::No,
                    t: 2.7,
                },
                Label {
                    word: Word::Yes,
                    t: 0.6,
                },
            ],
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].word, Word::Yes);
        assert_eq!(recs[1].word, Word::No);
        assert!(recs[0].t_end <= recs[1].t_start);
        // 1.5 s apart: not a repetition even if the words matched
        assert_eq!(recs[0].features.repetition, 0);
    }

    #[test]
    fn far_label_is_unmatched() {
        let audio = with_bursts(5.0, &[(0.5, 0.4)]);
        assert!(run(
            &audio,
            &[Label {
                word: Word::No,
                t: 3.5
            }]
        )
        .is_err());
    }

    #[test]
    fn short_pause_is_bridged() {
        let audio = with_bursts(3.0, &[(1.0, 0.3), (1.4, 0.3)]);
        let regions = voiced_regions(&audio, &VadConfig::default()).unwrap();
        assert_eq!(regions.len(), 1);
    }

    fn rec(word: Word, t: f64) -> UtteranceRecord {
        UtteranceRecord {
            word,
            t_start: t,
            t_end: t + 0.4,
            features: ProsodyFeatures::default(),
        }
    }

    #[test]
    fn repetition_examples() {
        let mut a = vec![rec(Word::Yes, 0.0), rec(Word::Yes, 0.7)];
        detect_repetition(&mut a, 1.0);
        assert!(a.iter().all(|r| r.features.repetition == 1));

        let mut b = vec![rec(Word::Yes, 0.0), rec(Word::No, 0.7), rec(Word::Yes, 1.4)];
        detect_repetition(&mut b, 1.0);
        assert!(b.iter().all(|r| r.features.repetition == 0));

        let mut c = vec![rec(Word::No, 0.0), rec(Word::No, 0.9), rec(Word::No, 1.8)];
        detect_repetition(&mut c, 1.0);
        assert!(c.iter().all(|r| r.features.repetition == 1));
    }

    #[test]
    fn labels_parse() {
        let text = "{\"word\":\"yes\",\"t\":1.5}\n\n{\"word\":\"no\",\"t\":2}\n";
        let labels = read_labels(text.as_bytes()).unwrap();
        assert_eq!(
            labels,
            vec![
                Label {
                    word: Word::Yes,
                    t: 1.5
                },
                Label {
                    word: Word::No,
                    t: 2.0
                }
            ]
        );
        assert!(read_labels("{\"word\":\"maybe\",\"t\":1}".as_bytes()).is_err());
    }
}
