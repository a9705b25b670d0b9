use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    loss_and_gradient, CalBatch, RankedPair, Result, RewardError, RewardNet, TempPool,
    TrajectorySnippet,
};
use crate::gridworld::{solve_with_reward, AgentState, GridMap, MdpSolution, RewardSpec};
use crate::prosody::Word;
use crate::stats::{spearman, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the contrastive audio loss; 0 is plain ranking loss.
    pub alpha: f64,
    pub t0: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Ranked pairs per gradient step.
    pub pair_batch: usize,
    /// Same-word pairs per CAL batch.
    pub cal_same: usize,
    /// Dissimilar pairs per CAL batch.
    pub cal_dissimilar: usize,
    /// Number of ranked pairs drawn from the training snippets.
    pub num_pairs: usize,
    pub hidden: usize,
    pub seed: u64,
    pub pool: TempPool,
    pub include_positive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            t0: 0.1,
            lr: 1e-3,
            epochs: 60,
            pair_batch: 16,
            cal_same: 16,
            cal_dissimilar: 16,
            num_pairs: 200,
            hidden: 64,
            seed: 0,
            pool: TempPool::Joint,
            include_positive: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub loss: f64,
    pub trex: f64,
    pub cal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub net: RewardNet,
    pub curve: Vec<LossPoint>,
    pub pairs: Vec<RankedPair>,
}

impl TrainOutcome {
    /// `epoch,loss,trex,cal` rows.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,trex,cal\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{},{}\n", p.epoch, p.loss, p.trex, p.cal));
        }
        out
    }
}

/// `count` random pairs with distinct returns, ordered worse-first.
pub fn sample_ranked_pairs(
    snippets: &[TrajectorySnippet],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<RankedPair> {
    let n = snippets.len();
    let mut out = Vec::with_capacity(count);
    if n < 2 {
        return out;
    }
    let mut tries = 0;
    while out.len() < count && tries < count * 100 {
        tries += 1;
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let (ri, rj) = (snippets[i].gt_return, snippets[j].gt_return);
        if ri < rj {
            out.push(RankedPair {
                worse: i,
                better: j,
            });
        } else if rj < ri {
            out.push(RankedPair {
                worse: j,
                better: i,
            });
        }
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn draw_cal_batch(rng: &mut ChaCha8Rng, groups: &[Vec<usize>; 2], cfg: &TrainConfig) -> CalBatch {
    let eligible: Vec<usize> = (0..2).filter(|&g| groups[g].len() >= 2).collect();
    let same = (0..cfg.cal_same)
        .map(|_| {
            let g = &groups[eligible[rng.gen_range(0..eligible.len())]];
            let a = rng.gen_range(0..g.len());
            let mut b = rng.gen_range(0..g.len() - 1);
            if b >= a {
                b += 1;
            }
            (g[a], g[b])
        })
        .collect();
    let dissimilar = (0..cfg.cal_dissimilar)
        .map(|_| {
            (
                groups[0][rng.gen_range(0..groups[0].len())],
                groups[1][rng.gen_range(0..groups[1].len())],
            )
        })
        .collect();
    CalBatch {
        same_word: same,
        dissimilar,
        t0: cfg.t0,
        pool: cfg.pool,
        include_positive: cfg.include_positive,
    }
}

/// Minibatch Adam on the ranking loss plus `alpha` times CAL.
pub fn train(snippets: &[TrajectorySnippet], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let dim = snippets
        .first()
        .and_then(|s| s.states.first())
        .map(|s| s.len())
        .ok_or_else(|| RewardError::InvalidDataset("no snippets".into()))?;
    if let Some(bad) = snippets
        .iter()
        .find(|s| s.states.is_empty() || s.states.iter().any(|x| x.len() != dim))
    {
        return Err(RewardError::InvalidDataset(format!(
            "snippet with {} states has inconsistent or missing features",
            bad.states.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = sample_ranked_pairs(snippets, cfg.num_pairs, &mut rng);
    if pairs.is_empty() {
        return Err(RewardError::InvalidDataset(
            "no ranked pairs (all returns equal?)".into(),
        ));
    }
    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in snippets.iter().enumerate() {
        if let Some(a) = s.audio {
            groups[if a.word == Word::Yes { 0 } else { 1 }].push(i);
        }
    }
    let use_cal = cfg.alpha > 0.0;
    if use_cal && (groups.iter().any(|g| g.is_empty()) || groups.iter().all(|g| g.len() < 2)) {
        return Err(RewardError::InvalidDataset(
            "CAL needs audio on both words and at least two snippets sharing a word".into(),
        ));
    }

    let mut net = RewardNet::new_random(dim, cfg.hidden, rng.gen());
    // separate stream so alpha does not change the pair order
    let mut cal_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut adam = Adam::new(net.params.len(), cfg.lr);
    let mut order = pairs.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut tot, mut tr, mut ca, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.pair_batch.max(1)).enumerate() {
            let batch = use_cal.then(|| draw_cal_batch(&mut cal_rng, &groups, cfg));
            let (parts, grad) =
                loss_and_gradient(&net, snippets, chunk, batch.as_ref(), cfg.alpha)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(RewardError::NonFinite {
                    epoch,
                    step,
                    trex: parts.trex,
                    cal: parts.cal,
                });
            }
            adam.step(&mut net.params, &grad);
            // ranking loss reported per pair so curves compare across batch sizes
            let per_pair = parts.trex / chunk.len() as f64;
            tr += per_pair;
            ca += parts.cal;
            tot += per_pair + cfg.alpha * parts.cal;
            steps += 1;
        }
        let k = steps.max(1) as f64;
        curve.push(LossPoint {
            epoch,
            loss: tot / k,
            trex: tr / k,
            cal: ca / k,
        });
        log::debug!(
            "epoch {epoch}: loss {:.5} trex {:.5} cal {:.5}",
            tot / k,
            tr / k,
            ca / k
        );
    }
    Ok(TrainOutcome { net, curve, pairs })
}

/// Spearman correlation between predicted and true returns.
pub fn evaluate_reward(net: &RewardNet, snippets: &[TrajectorySnippet]) -> Result<f64> {
    if snippets.len() < 3 {
        return Err(StatsError::InsufficientData(format!(
            "{} snippets, need at least 3",
            snippets.len()
        ))
        .into());
    }
    let pred = snippets
        .iter()
        .map(|s| net.predicted_return(s))
        .collect::<Result<Vec<_>>>()?;
    let gt: Vec<f64> = snippets.iter().map(|s| s.gt_return).collect();
    Ok(spearman(&pred, &gt)?.statistic)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyScore {
    /// Solution of the MDP under the learned reward.
    pub solution: MdpSolution,
    /// Ground-truth return of each rollout.
    pub scores: Vec<f64>,
    pub mean_score: f64,
}

/// Value iteration on `reward(features(next state))`, then greedy rollouts
/// from seeded random start states, scored with the true reward.
pub fn policy_from_reward<F>(reward: F, map: &GridMap, rollouts: usize, seed: u64) -> PolicyScore
where
    F: Fn(&[f64]) -> f64,
{
    let spec = RewardSpec::default();
    let solution = solve_with_reward(map, &spec, spec.discount, 1e-8, |out| {
        reward(&map.state_features(&out.next))
    });
    let starts: Vec<AgentState> = solution.non_terminal_states().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_steps = 4 * map.rows * map.cols;
    let mut scores = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let Some(&start) = starts.choose(&mut rng) else {
            break;
        };
        let mut s = start;
        let mut total = 0.0;
        for _ in 0..max_steps {
            let Ok(a) = solution.greedy_action(&s) else {
                break;
            };
            let out = map.step(&spec, s, a);
            total += out.reward;
            s = out.next;
            if out.terminal {
                break;
            }
        }
        scores.push(total);
    }
    let mean_score = crate::numeric::mean(&scores);
    PolicyScore {
        solution,
        scores,
        mean_score,
    }
}
