use serde::{Deserialize, Serialize};

use super::{Result, RewardError, RewardNet, TrajectorySnippet};
use crate::numeric::log_sum_exp;

/// `tau_i` (index `worse`) is ranked below `tau_j` (index `better`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedPair {
    pub worse: usize,
    pub better: usize,
}

/// Which pair differences share one softmax when building temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempPool {
    /// Same-word and dissimilar pairs normalised together.
    #[default]
    Joint,
    /// Each group normalised over itself.
    Separate,
}

/// Pairs of snippet indices for the contrastive audio loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalBatch {
    pub same_word: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
    pub t0: f64,
    #[serde(default)]
    pub pool: TempPool,
    /// Adds the numerator pair to the denominator (standard InfoNCE form).
    #[serde(default)]
    pub include_positive: bool,
}

impl CalBatch {
    pub fn new(same_word: Vec<(usize, usize)>, dissimilar: Vec<(usize, usize)>, t0: f64) -> Self {
        Self {
            same_word,
            dissimilar,
            t0,
            pool: TempPool::Joint,
            include_positive: false,
        }
    }

    pub fn validate(&self, snippets: &[TrajectorySnippet]) -> Result<()> {
        if self.same_word.is_empty() || self.dissimilar.is_empty() {
            return Err(RewardError::InvalidBatch(
                "need at least one same-word and one dissimilar pair".into(),
            ));
        }
        if !(self.t0 > 0.0) {
            return Err(RewardError::InvalidBatch(format!(
                "t0 = {} must be positive",
                self.t0
            )));
        }
        let word = |i: usize| -> Result<crate::prosody::Word> {
            snippets
                .get(i)
                .ok_or_else(|| RewardError::InvalidBatch(format!("snippet {i} out of range")))?
                .audio
                .map(|a| a.word)
                .ok_or_else(|| RewardError::InvalidBatch(format!("snippet {i} has no audio")))
        };
        for &(m, n) in &self.same_word {
            if word(m)? != word(n)? {
                return Err(RewardError::InvalidBatch(format!(
                    "pair ({m}, {n}) is not same-word"
                )));
            }
        }
        for &(m, n) in &self.dissimilar {
            if word(m)? == word(n)? {
                return Err(RewardError::InvalidBatch(format!(
                    "pair ({m}, {n}) is not dissimilar"
                )));
            }
        }
        Ok(())
    }

    /// Temperatures for the same-word and the dissimilar pairs.
    pub fn temperatures(&self, pitch: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let diff = |&(m, n): &(usize, usize)| (pitch[m] - pitch[n]).abs();
        let same: Vec<f64> = self.same_word.iter().map(diff).collect();
        let dis: Vec<f64> = self.dissimilar.iter().map(diff).collect();
        let norm = |xs: &[f64], lse: f64| {
            xs.iter()
                .map(|x| self.t0 + (x - lse).exp())
                .collect::<Vec<_>>()
        };
        match self.pool {
            TempPool::Joint => {
                let all: Vec<f64> = same.iter().chain(&dis).copied().collect();
                let lse = log_sum_exp(&all);
                (norm(&same, lse), norm(&dis, lse))
            }
            TempPool::Separate => (
                norm(&same, log_sum_exp(&same)),
                norm(&dis, log_sum_exp(&dis)),
            ),
        }
    }
}

/// `1 / (1 + |a - b|)`.
pub fn sim(a: f64, b: f64) -> f64 {
    1.0 / (1.0 + (a - b).abs())
}

/// Derivative of `sim` with respect to `a`; zero at the kink.
fn dsim_da(a: f64, b: f64) -> f64 {
    let d = a - b;
    let s = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    -s / (1.0 + d.abs()).powi(2)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Ranking loss on predicted returns: `sum softplus(R_worse - R_better)`.
/// The gradient with respect to each return is accumulated into `grad`.
pub fn trex_from_returns(returns: &[f64], pairs: &[RankedPair], grad: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    let mut g = grad;
    for p in pairs {
        let x = returns[p.worse] - returns[p.better];
        loss += softplus(x);
        if let Some(g) = g.as_deref_mut() {
            let s = sigmoid(x);
            g[p.worse] += s;
            g[p.better] -= s;
        }
    }
    loss
}

/// Contrastive audio loss on predicted returns, averaged over the same-word
/// pairs. Without `include_positive` the denominator runs over the
/// dissimilar pairs only, so the value can be negative.
pub fn cal_from_returns(
    returns: &[f64],
    pitch: &[f64],
    batch: &CalBatch,
    grad: Option<&mut [f64]>,
) -> f64 {
    let (t_same, t_dis) = batch.temperatures(pitch);
    let logits_dis: Vec<f64> = batch
        .dissimilar
        .iter()
        .zip(&t_dis)
        .map(|(&(m, n), t)| sim(returns[m], returns[n]) / t)
        .collect();
    let b = batch.same_word.len() as f64;
    let mut loss = 0.0;
    // d loss / d logit for each dissimilar pair
    let mut w_dis = vec![0.0; logits_dis.len()];
    let mut w_same = vec![0.0; batch.same_word.len()];
    let base_lse = log_sum_exp(&logits_dis);
    for (k, (&(m, n), t)) in batch.same_word.iter().zip(&t_same).enumerate() {
        let pos = sim(returns[m], returns[n]) / t;
        let lse = if batch.include_positive {
            let mx = base_lse.max(pos);
            mx + ((base_lse - mx).exp() + (pos - mx).exp()).ln()
        } else {
            base_lse
        };
        loss += (lse - pos) / b;
        w_same[k] -= 1.0 / b;
        if batch.include_positive {
            w_same[k] += (pos - lse).exp() / b;
        }
        for (w, l) in w_dis.iter_mut().zip(&logits_dis) {
            *w += (l - lse).exp() / b;
        }
    }
    if let Some(g) = grad {
        let mut push = |pairs: &[(usize, usize)], temps: &[f64], ws: &[f64]| {
            for ((&(m, n), t), w) in pairs.iter().zip(temps).zip(ws) {
                let ds = dsim_da(returns[m], returns[n]) * w / t;
                g[m] += ds;
                g[n] -= ds;
            }
        };
        push(&batch.same_word, &t_same, &w_same);
        push(&batch.dissimilar, &t_dis, &w_dis);
    }
    loss
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub trex: f64,
    pub cal: f64,
}

fn used_indices(pairs: &[RankedPair], batch: Option<&CalBatch>, n: usize) -> Vec<bool> {
    let mut used = vec![false; n];
    for p in pairs {
        used[p.worse] = true;
        used[p.better] = true;
    }
    if let Some(b) = batch {
        for &(m, k) in b.same_word.iter().chain(&b.dissimilar) {
            used[m] = true;
            used[k] = true;
        }
    }
    used
}

fn check_pairs(pairs: &[RankedPair], n: usize) -> Result<()> {
    for p in pairs {
        if p.worse >= n || p.better >= n {
            return Err(RewardError::InvalidBatch(format!(
                "pair ({}, {}) out of range",
                p.worse, p.better
            )));
        }
    }
    Ok(())
}

fn pitches(snippets: &[TrajectorySnippet]) -> Vec<f64> {
    snippets
        .iter()
        .map(|s| s.audio.map_or(0.0, |a| a.pitch_mean))
        .collect()
}

/// Returns of the snippets referenced by the pairs and the batch; others are 0.
fn returns_for(net: &RewardNet, snippets: &[TrajectorySnippet], used: &[bool]) -> Result<Vec<f64>> {
    snippets
        .iter()
        .zip(used)
        .map(|(s, &u)| if u { net.predicted_return(s) } else { Ok(0.0) })
        .collect()
}

pub fn trex_loss(
    net: &RewardNet,
    snippets: &[TrajectorySnippet],
    pairs: &[RankedPair],
) -> Result<f64> {
    check_pairs(pairs, snippets.len())?;
    let r = returns_for(net, snippets, &used_indices(pairs, None, snippets.len()))?;
    Ok(trex_from_returns(&r, pairs, None))
}

pub fn cal_loss(net: &RewardNet, snippets: &[TrajectorySnippet], batch: &CalBatch) -> Result<f64> {
    batch.validate(snippets)?;
    let r = returns_for(
        net,
        snippets,
        &used_indices(&[], Some(batch), snippets.len()),
    )?;
    Ok(cal_from_returns(&r, &pitches(snippets), batch, None))
}

/// `trex + alpha * cal`, with the CAL term skipped when `batch` is `None`.
pub fn combined_loss(
    net: &RewardNet,
    snippets: &[TrajectorySnippet],
    pairs: &[RankedPair],
    batch: Option<&CalBatch>,
    alpha: f64,
) -> Result<LossParts> {
    Ok(loss_and_gradient_impl(net, snippets, pairs, batch, alpha, false)?.0)
}

/// Loss and its exact gradient with respect to `net.params`. Temperatures
/// depend only on pitch and are treated as constants.
pub fn loss_and_gradient(
    net: &RewardNet,
    snippets: &[TrajectorySnippet],
    pairs: &[RankedPair],
    batch: Option<&CalBatch>,
    alpha: f64,
) -> Result<(LossParts, Vec<f64>)> {
    loss_and_gradient_impl(net, snippets, pairs, batch, alpha, true)
}

fn loss_and_gradient_impl(
    net: &RewardNet,
    snippets: &[TrajectorySnippet],
    pairs: &[RankedPair],
    batch: Option<&CalBatch>,
    alpha: f64,
    want_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    if !(alpha >= 0.0) {
        return Err(RewardError::InvalidBatch(format!(
            "alpha = {alpha} must be non-negative"
        )));
    }
    check_pairs(pairs, snippets.len())?;
    if let Some(b) = batch {
        b.validate(snippets)?;
    }
    let used = used_indices(pairs, batch, snippets.len());
    let r = returns_for(net, snippets, &used)?;
    let mut dr = vec![0.0; snippets.len()];
    let trex = trex_from_returns(&r, pairs, want_grad.then_some(&mut dr[..]));
    let mut cal = 0.0;
    if let Some(b) = batch {
        let mut dcal = vec![0.0; snippets.len()];
        cal = cal_from_returns(
            &r,
            &pitches(snippets),
            b,
            want_grad.then_some(&mut dcal[..]),
        );
        for (d, c) in dr.iter_mut().zip(&dcal) {
            *d += alpha * c;
        }
    }
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; net.params.len()];
        for (s, &d) in snippets.iter().zip(&dr) {
            net.return_backward(s, d, &mut grad);
        }
    }
    Ok((
        LossParts {
            total: trex + alpha * cal,
            trex,
            cal,
        },
        grad,
    ))
}
