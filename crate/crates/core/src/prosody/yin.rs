//! Yin fundamental-frequency estimation.
//!
//! Difference function, cumulative-mean-normalised difference, first lag
//! under an absolute threshold (then walked down to the local minimum), and
//! parabolic interpolation around the selected lag. Frames where no lag in
//! the search band dips under the threshold are reported as unvoiced.

use super::{ProsodyError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YinConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub threshold: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            f_min: 80.0,
            f_max: 400.0,
            threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pitch {
    Voiced(f64),
    Unvoiced,
}

impl Pitch {
    pub fn hz(self) -> Option<f64> {
        match self {
            Pitch::Voiced(f) => Some(f),
            Pitch::Unvoiced => None,
        }
    }
}

/// Yin with the default threshold of 0.1.
pub fn yin_pitch(frame: &[f64], sample_rate: u32, f_min: f64, f_max: f64) -> Result<Pitch> {
    yin_pitch_with(
        frame,
        sample_rate,
        &YinConfig {
            f_min,
            f_max,
            ..YinConfig::default()
        },
    )
}

pub fn yin_pitch_with(frame: &[f64], sample_rate: u32, cfg: &YinConfig) -> Result<Pitch> {
    let sr = sample_rate as f64;
    if !(cfg.f_min > 0.0 && cfg.f_min < cfg.f_max && cfg.f_max < sr / 2.0) {
        return Err(ProsodyError::InvalidParams(format!(
            "pitch band [{}, {}] invalid for sample rate {}",
            cfg.f_min, cfg.f_max, sample_rate
        )));
    }
    let min_len = (2.0 * sr / cfg.f_min).ceil() as usize;
    if frame.len() < min_len {
        return Err(ProsodyError::InvalidParams(format!(
            "frame of {} samples shorter than {} required for f_min {}",
            frame.len(),
            min_len,
            cfg.f_min
        )));
    }

    let tau_min = ((sr / cfg.f_max).floor() as usize).max(2);
    let tau_max = (sr / cfg.f_min).ceil() as usize;
    // one extra lag so the interpolation neighbour of tau_max exists
    let last = tau_max + 1;
    let window = frame.len() - last;

    let mut diff = vec![0.0; last + 1];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        *d = frame[..window]
            .iter()
            .zip(&frame[tau..tau + window])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }

    let mut cmnd = vec![1.0; last + 1];
    let mut running = 0.0;
    for tau in 1..=last {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let Some(mut tau) = (tau_min..=tau_max).find(|&t| cmnd[t] < cfg.threshold) else {
        return Ok(Pitch::Unvoiced);
    };
    while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
        tau += 1;
    }

    let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > f64::EPSILON {
        (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok(Pitch::Voiced(sr / (tau as f64 + shift)))
}
