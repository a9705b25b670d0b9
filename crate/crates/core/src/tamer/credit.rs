use serde::{Deserialize, Serialize};

use super::TimedStep;
use crate::numeric::adaptive_simpson;

/// Where the first credit interval starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditAnchor {
    /// Step i gets `[d_i, d_{i+1}]`; the oldest step gets `[d_n, d_n + tick]`.
    #[default]
    MostRecentStep,
    /// Step i gets `[d_{i-1}, d_i]` with `d_0 = 0`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditAssigner {
    pub shape: f64,
    pub scale: f64,
    /// Maximum number of recent steps credited.
    pub window: usize,
    /// Width of the oldest step's interval, in seconds.
    pub tick: f64,
    pub anchor: CreditAnchor,
    pub abs_tol: f64,
}

impl Default for CreditAssigner {
    fn default() -> Self {
        Self {
            shape: 2.0,
            scale: 0.28,
            window: 3,
            tick: 1.25,
            anchor: CreditAnchor::MostRecentStep,
            abs_tol: 1e-10,
        }
    }
}

impl CreditAssigner {
    pub fn pdf(&self, x: f64) -> f64 {
        gamma_pdf(x, self.shape, self.scale)
    }

    /// Integral of the delay density over `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let (k, th) = (self.shape, self.scale);
        adaptive_simpson(|x| gamma_pdf(x, k, th), a.max(0.0), b, self.abs_tol, 50)
    }

    /// Weights for `steps` (any order) given feedback at `feedback_t`.
    /// Returned weights are ordered like `delays`: most recent step first.
    pub fn weights_for_delays(&self, delays: &[f64]) -> Vec<f64> {
        let n = delays.len();
        (0..n)
            .map(|i| {
                let (lo, hi) = match self.anchor {
                    CreditAnchor::MostRecentStep => {
                        let hi = if i + 1 < n {
                            delays[i + 1]
                        } else {
                            delays[i] + self.tick
                        };
                        (delays[i], hi)
                    }
                    CreditAnchor::Zero => (if i == 0 { 0.0 } else { delays[i - 1] }, delays[i]),
                };
                self.mass(lo, hi).max(0.0)
            })
            .collect()
    }

    /// Picks the credited steps (those strictly before the feedback, at most
    /// `window` of them) and returns `(index into steps, weight)` pairs,
    /// most recent first.
    pub fn credit(&self, feedback_t: f64, steps: &[TimedStep]) -> Vec<(usize, f64)> {
        let mut eligible: Vec<usize> = (0..steps.len())
            .filter(|&i| steps[i].t < feedback_t)
            .collect();
        eligible.sort_by(|&a, &b| steps[b].t.total_cmp(&steps[a].t));
        eligible.truncate(self.window);
        let delays: Vec<f64> = eligible.iter().map(|&i| feedback_t - steps[i].t).collect();
        eligible
            .into_iter()
            .zip(self.weights_for_delays(&delays))
            .collect()
    }
}

pub fn gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if shape == 1.0 {
            1.0 / scale
        } else if shape < 1.0 {
            f64::INFINITY
        } else {
            0.0
        };
    }
    let ln = (shape - 1.0) * x.ln()
        - x / scale
        - crate::stats::special::ln_gamma(shape)
        - shape * scale.ln();
    ln.exp()
}
