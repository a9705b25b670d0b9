use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, RewardError, TrajectorySnippet};

/// `d -> h -> h -> 1` perceptron with tanh hidden units.
///
/// Parameters live in one flat vector laid out as
/// `[W1 (h x d), b1 (h), W2 (h x h), b2 (h), w3 (h), b3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNet {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

fn layout(d: usize, h: usize) -> Layout {
    let w1 = 0;
    let b1 = w1 + h * d;
    let w2 = b1 + h;
    let b2 = w2 + h * h;
    let w3 = b2 + h;
    let b3 = w3 + h;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        len: b3 + 1,
    }
}

/// Hidden activations kept for the backward pass.
pub struct Activations {
    a1: Vec<f64>,
    a2: Vec<f64>,
    pub out: f64,
}

impl RewardNet {
    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        layout(input_dim, hidden).len
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            params: vec![0.0; Self::param_count(input_dim, hidden)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new_random(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input_dim, hidden);
        let l = layout(input_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill =
            |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, p: &mut [f64]| {
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for x in &mut p[range] {
                    *x = rng.gen_range(-lim..lim);
                }
            };
        fill(l.w1..l.b1, input_dim, hidden, &mut net.params);
        fill(l.w2..l.b2, hidden, hidden, &mut net.params);
        fill(l.w3..l.b3, hidden, 1, &mut net.params);
        net
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(RewardError::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn activations(&self, x: &[f64]) -> Activations {
        let (d, h) = (self.input_dim, self.hidden);
        let l = layout(d, h);
        let p = &self.params;
        let a1: Vec<f64> = (0..h)
            .map(|i| {
                let row = &p[l.w1 + i * d..l.w1 + (i + 1) * d];
                (p[l.b1 + i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        let a2: Vec<f64> = (0..h)
            .map(|i| {
                let row = &p[l.w2 + i * h..l.w2 + (i + 1) * h];
                (p[l.b2 + i] + row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        let out = p[l.b3]
            + p[l.w3..l.b3]
                .iter()
                .zip(&a2)
                .map(|(w, v)| w * v)
                .sum::<f64>();
        Activations { a1, a2, out }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.activations(x).out)
    }

    /// Adds `dout * d out / d params` at input `x` into `grad`.
    pub fn backward(&self, x: &[f64], act: &Activations, dout: f64, grad: &mut [f64]) {
        let (d, h) = (self.input_dim, self.hidden);
        let l = layout(d, h);
        let p = &self.params;
        grad[l.b3] += dout;
        let mut dz2 = vec![0.0; h];
        for i in 0..h {
            grad[l.w3 + i] += dout * act.a2[i];
            dz2[i] = dout * p[l.w3 + i] * (1.0 - act.a2[i] * act.a2[i]);
        }
        let mut da1 = vec![0.0; h];
        for i in 0..h {
            if dz2[i] == 0.0 {
                continue;
            }
            grad[l.b2 + i] += dz2[i];
            let row = l.w2 + i * h;
            for j in 0..h {
                grad[row + j] += dz2[i] * act.a1[j];
                da1[j] += dz2[i] * p[row + j];
            }
        }
        for j in 0..h {
            let dz1 = da1[j] * (1.0 - act.a1[j] * act.a1[j]);
            grad[l.b1 + j] += dz1;
            let row = l.w1 + j * d;
            for k in 0..d {
                grad[row + k] += dz1 * x[k];
            }
        }
    }

    /// Undiscounted sum of per-state rewards.
    pub fn predicted_return(&self, snippet: &TrajectorySnippet) -> Result<f64> {
        let mut total = 0.0;
        for s in &snippet.states {
            total += self.forward(s)?;
        }
        Ok(total)
    }

    /// Adds `scale * d return / d params` into `grad`.
    pub fn return_backward(&self, snippet: &TrajectorySnippet, scale: f64, grad: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        for s in &snippet.states {
            let act = self.activations(s);
            self.backward(s, &act, scale, grad);
        }
    }
}
