//! Synthetic teachers: feedback sessions for interactive learning and
//! audio-annotated demonstrations for reward learning.
//!
//! Prosodic features are generated in z-score space and mapped to physical
//! units through a fixed synthetic speaker baseline. Within each word, the
//! mixing weight between the signal latent and independent noise is found by
//! bisection so that the realised within-word Spearman correlation matches
//! the requested expressiveness.

mod synth;

pub use synth::{synthesize_session_audio, synthesize_tone};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, AgentState, GridMap, MdpSolution, RewardSpec};
use crate::prosody::{
    detect_repetition, signed_feedback_value, FeatureStat, ProsodyFeatures, SpeakerBaseline,
    UtteranceRecord, Word, DEFAULT_SAMPLE_RATE,
};
use crate::reward::{SnippetAudio, TrajectorySnippet};
use crate::stats::spearman;
use crate::tamer::{FeedbackEvent, TimedStep};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TeacherError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

pub type Result<T> = std::result::Result<T, TeacherError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherProfile {
    /// Probability that a step whose feedback would be positive gets any.
    pub pos_feedback_prob: f64,
    /// Same for negative feedback; ignored when `pos_bias` is set.
    pub neg_feedback_prob: f64,
    /// Target ratio of positive to negative feedback counts.
    pub pos_bias: Option<f64>,
    /// Target within-word Spearman correlation between the signed prosodic
    /// features and the advantage (or return, for demonstrations).
    pub expressiveness: f64,
    /// Energy and loudness multiplier on "no" utterances.
    pub neg_intensity_boost: f64,
    /// Probability that the feedback sign contradicts the advantage sign.
    pub sign_noise: f64,
    /// Probability that the teaching agent takes a uniformly random action.
    pub explore: f64,
    pub tick: f64,
    pub latency: f64,
    pub seed: u64,
}

impl Default for TeacherProfile {
    fn default() -> Self {
        Self {
            pos_feedback_prob: 0.6,
            neg_feedback_prob: 0.6,
            pos_bias: None,
            expressiveness: 0.25,
            neg_intensity_boost: 1.5,
            sign_noise: 0.1,
            explore: 0.3,
            tick: 1.25,
            latency: 0.3,
            seed: 0,
        }
    }
}

impl TeacherProfile {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("pos_feedback_prob", self.pos_feedback_prob),
            ("neg_feedback_prob", self.neg_feedback_prob),
            ("sign_noise", self.sign_noise),
            ("explore", self.explore),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(TeacherError::InvalidProfile(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        if !(-1.0..=1.0).contains(&self.expressiveness) {
            return Err(TeacherError::InvalidProfile(format!(
                "expressiveness {} outside [-1, 1]",
                self.expressiveness
            )));
        }
        if let Some(b) = self.pos_bias {
            if !(b > 0.0 && b.is_finite()) {
                return Err(TeacherError::InvalidProfile(format!(
                    "pos_bias {b} must be positive"
                )));
            }
        }
        if !(self.neg_intensity_boost > 0.0) {
            return Err(TeacherError::InvalidProfile(
                "neg_intensity_boost must be positive".into(),
            ));
        }
        if !(self.tick > 0.0 && self.latency >= 0.0 && self.latency < self.tick) {
            return Err(TeacherError::InvalidProfile(
                "need 0 <= latency < tick".into(),
            ));
        }
        Ok(())
    }
}

/// The synthetic speaker's reference statistics.
pub fn synthetic_baseline() -> SpeakerBaseline {
    SpeakerBaseline {
        pitch: FeatureStat {
            mean: 180.0,
            std: 30.0,
        },
        energy: FeatureStat {
            mean: 0.01,
            std: 0.003,
        },
        loudness: FeatureStat {
            mean: 0.08,
            std: 0.02,
        },
    }
}

const MAX_DURATION: f64 = 0.9;
const FRAMES_PER_SECOND: f64 = DEFAULT_SAMPLE_RATE as f64 / 512.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrlSession {
    pub steps: Vec<TimedStep>,
    pub feedback: Vec<FeedbackEvent>,
    pub utterances: Vec<UtteranceRecord>,
    /// Advantage of the step each utterance refers to.
    pub advantages: Vec<f64>,
    pub baseline: SpeakerBaseline,
    /// Fraction of generated feature values clamped at zero.
    pub clamp_rate: f64,
}

/// Standardizes `xs` in place; leaves constant input at zero.
fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let m = crate::numeric::mean(xs);
    let s = crate::numeric::population_std(xs);
    for x in xs.iter_mut() {
        *x = if s > 0.0 { (*x - m) / s } else { 0.0 };
    }
}

/// Replaces values by normal quantiles of their (average) ranks, so the
/// latent keeps its ordering but has Gaussian tails.
fn normal_scores(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let r = crate::stats::ranks(xs);
    for (x, r) in xs.iter_mut().zip(r) {
        *x = crate::stats::special::normal_quantile((r - 0.5) / n);
    }
}

fn mix(c: f64, u: f64, eta: f64) -> f64 {
    c * u + (1.0 - c * c).max(0.0).sqrt() * eta
}

/// Mean Spearman of `mix(c, u, eta_k)` against `target` over the noise draws.
fn mixed_spearman(c: f64, u: &[f64], etas: &[Vec<f64>], target: &[f64]) -> Option<f64> {
    let mut acc = 0.0;
    for eta in etas {
        let e: Vec<f64> = u.iter().zip(eta).map(|(&u, &n)| mix(c, u, n)).collect();
        acc += spearman(&e, target).ok()?.statistic;
    }
    Some(acc / etas.len() as f64)
}

/// Mixing weight in `[0, 1]` (sign carried by `rho`) whose realised
/// correlation is closest to `rho`.
fn calibrate(u: &[f64], etas: &[Vec<f64>], target: &[f64], rho: f64) -> f64 {
    let want = rho.abs();
    let sign = if rho < 0.0 { -1.0 } else { 1.0 };
    let f = |c: f64| mixed_spearman(sign * c, u, etas, target);
    let Some(hi_val) = f(1.0) else { return rho };
    if hi_val <= want {
        return sign;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match f(mid) {
            Some(v) if v < want => lo = mid,
            Some(_) => hi = mid,
            None => return rho,
        }
    }
    sign * 0.5 * (lo + hi)
}

struct Draft {
    step: usize,
    word: Word,
    adv: f64,
    duration: f64,
}

fn policy_action(
    rng: &mut ChaCha8Rng,
    solution: &MdpSolution,
    s: &AgentState,
    explore: f64,
) -> Action {
    if rng.gen::<f64>() < explore {
        return Action::ALL[rng.gen_range(0..4)];
    }
    let opt = solution
        .optimal_actions(s)
        .unwrap_or_else(|_| Action::ALL.to_vec());
    opt[rng.gen_range(0..opt.len())]
}

/// A feedback session over `num_steps` ticks of an epsilon-greedy agent.
pub fn generate_intrl_session(
    map: &GridMap,
    solution: &MdpSolution,
    profile: &TeacherProfile,
    num_steps: usize,
) -> Result<IntrlSession> {
    profile.validate()?;
    let spec = RewardSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let dur_dist = LogNormal::new((0.45f64).ln(), 0.25).expect("valid lognormal");

    // pass 1: trajectory and candidate feedback for every step
    let mut steps = Vec::with_capacity(num_steps);
    let mut candidates = Vec::with_capacity(num_steps);
    let mut state = map.start_state();
    for k in 0..num_steps {
        if map.is_terminal(&state) {
            state = map.start_state();
        }
        let t = k as f64 * profile.tick;
        let action = policy_action(&mut rng, solution, &state, profile.explore);
        let adv = solution.advantage(&state, action).unwrap_or(0.0);
        steps.push(TimedStep { t, state, action });
        let mut word = if adv >= 0.0 { Word::Yes } else { Word::No };
        if rng.gen::<f64>() < profile.sign_noise {
            word = if word == Word::Yes {
                Word::No
            } else {
                Word::Yes
            };
        }
        let duration: f64 = dur_dist.sample(&mut rng);
        candidates.push(Draft {
            step: k,
            word,
            adv,
            duration: duration.clamp(0.15, MAX_DURATION),
        });
        state = map.step(&spec, state, action).next;
    }

    // emission rates; pos_bias fixes the realised ratio in expectation
    let n_pos = candidates.iter().filter(|d| d.word == Word::Yes).count() as f64;
    let n_neg = candidates.len() as f64 - n_pos;
    let (p_pos, p_neg) = match profile.pos_bias {
        Some(b) if n_pos > 0.0 && n_neg > 0.0 => {
            let p_neg = profile.pos_feedback_prob * n_pos / (n_neg * b);
            if p_neg <= 1.0 {
                (profile.pos_feedback_prob, p_neg)
            } else {
                ((n_neg * b / n_pos).min(1.0), 1.0)
            }
        }
        _ => (profile.pos_feedback_prob, profile.neg_feedback_prob),
    };
    let drafts: Vec<Draft> = candidates
        .into_iter()
        .filter(|d| rng.gen::<f64>() < if d.word == Word::Yes { p_pos } else { p_neg })
        .collect();

    // pass 2: calibrated prosody per word
    let baseline = synthetic_baseline();
    let mut z = vec![[0.0f64; 3]; drafts.len()];
    for w in [Word::Yes, Word::No] {
        let idx: Vec<usize> = (0..drafts.len()).filter(|&i| drafts[i].word == w).collect();
        if idx.is_empty() {
            continue;
        }
        // magnitude latent: high for good "yes" and for bad "no"
        let mut u: Vec<f64> = idx
            .iter()
            .map(|&i| -w.sign() * drafts[i].adv.abs().ln_1p())
            .collect();
        normal_scores(&mut u);
        let etas: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                idx.iter()
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        // the signed feature is sign * magnitude; correlate that with advantage
        let signed_u: Vec<f64> = u.iter().map(|x| w.sign() * x).collect();
        let adv: Vec<f64> = idx.iter().map(|&i| drafts[i].adv).collect();
        let signed_etas: Vec<Vec<f64>> = etas
            .iter()
            .map(|e| e.iter().map(|x| w.sign() * x).collect())
            .collect();
        let c = calibrate(&signed_u, &signed_etas, &adv, profile.expressiveness);
        for (j, &i) in idx.iter().enumerate() {
            for f in 0..3 {
                z[i][f] = mix(c, u[j], etas[f][j]);
            }
        }
    }

    let mut clamped = 0usize;
    let mut produced = 0usize;
    let mut clamp = |x: f64| {
        produced += 1;
        if x < 0.0 {
            clamped += 1;
            0.0
        } else {
            x
        }
    };
    let mut utterances = Vec::with_capacity(drafts.len());
    let mut advantages = Vec::with_capacity(drafts.len());
    for (d, zs) in drafts.iter().zip(&z) {
        let boost = if d.word == Word::No {
            profile.neg_intensity_boost
        } else {
            1.0
        };
        let pitch_mean = clamp(baseline.pitch.mean + baseline.pitch.std * zs[0]);
        let energy_mean = clamp((baseline.energy.mean + baseline.energy.std * zs[1]) * boost);
        let loudness_mean = clamp((baseline.loudness.mean + baseline.loudness.std * zs[2]) * boost);
        let frames = (d.duration * FRAMES_PER_SECOND).round().max(1.0);
        let spread: f64 = 1.2 + 0.3 * rng.gen::<f64>();
        let features = ProsodyFeatures {
            duration: d.duration,
            repetition: 0,
            pitch_mean,
            pitch_max: pitch_mean * (1.05 + 0.1 * rng.gen::<f64>()),
            energy_mean,
            energy_max: energy_mean * spread,
            energy_total: energy_mean * frames,
            loudness_mean,
            loudness_max: loudness_mean * spread.sqrt(),
        };
        let t_start = steps[d.step].t + profile.latency;
        utterances.push(UtteranceRecord {
            word: d.word,
            t_start,
            t_end: t_start + d.duration,
            features,
        });
        advantages.push(d.adv);
    }
    detect_repetition(&mut utterances, 1.0);
    let feedback = utterances
        .iter()
        .map(|u| FeedbackEvent {
            t: u.t_start,
            value: signed_feedback_value(&u.features, u.word, &baseline)
                .expect("synthetic baseline is valid"),
        })
        .collect();
    Ok(IntrlSession {
        steps,
        feedback,
        utterances,
        advantages,
        baseline,
        clamp_rate: if produced == 0 {
            0.0
        } else {
            clamped as f64 / produced as f64
        },
    })
}

/// Seconds between demonstration states.
pub const DEMO_TICK: f64 = 0.1;
/// Context kept on both sides of an utterance when cutting a snippet.
pub const SNIPPET_BUFFER: f64 = 0.5;

/// Audio-annotated snippets cut from rollouts of mixed quality.
///
/// Each snippet starts at a random non-terminal state and follows a policy
/// whose exploration rate is drawn uniformly, so returns span good and bad
/// play. The word is "yes" above the median return (flipped with the sign
/// noise) and the pitch is calibrated to rank with the return within "yes"
/// and against it within "no".
pub fn generate_demo_dataset(
    map: &GridMap,
    solution: &MdpSolution,
    profile: &TeacherProfile,
    num_snippets: usize,
) -> Result<Vec<TrajectorySnippet>> {
    profile.validate()?;
    let spec = RewardSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let dur_dist = LogNormal::new((0.45f64).ln(), 0.25).expect("valid lognormal");
    let starts: Vec<AgentState> = solution.non_terminal_states().collect();
    if starts.is_empty() {
        return Err(TeacherError::InvalidProfile(
            "map has no non-terminal states".into(),
        ));
    }

    let mut snippets = Vec::with_capacity(num_snippets);
    for _ in 0..num_snippets {
        let duration: f64 = dur_dist.sample(&mut rng);
        let duration = duration.clamp(0.15, MAX_DURATION);
        let len = ((duration + 2.0 * SNIPPET_BUFFER) / DEMO_TICK).round() as usize;
        let explore: f64 = rng.gen();
        let mut s = starts[rng.gen_range(0..starts.len())];
        // the return credits each visited state with its arrival reward,
        // the same per-state decomposition the reward network learns
        let mut states = vec![map.state_features(&s)];
        let mut ret = map.arrival_reward(&spec, &s);
        for _ in 1..len {
            if map.is_terminal(&s) {
                break;
            }
            let a = policy_action(&mut rng, solution, &s, explore);
            s = map.step(&spec, s, a).next;
            ret += map.arrival_reward(&spec, &s);
            states.push(map.state_features(&s));
        }
        snippets.push(TrajectorySnippet {
            states,
            gt_return: ret,
            audio: None,
        });
    }

    let mut returns: Vec<f64> = snippets.iter().map(|s| s.gt_return).collect();
    returns.sort_by(f64::total_cmp);
    let median = if returns.is_empty() {
        0.0
    } else if returns.len() % 2 == 1 {
        returns[returns.len() / 2]
    } else {
        0.5 * (returns[returns.len() / 2 - 1] + returns[returns.len() / 2])
    };
    let words: Vec<Word> = snippets
        .iter()
        .map(|s| {
            let w = if s.gt_return > median {
                Word::Yes
            } else {
                Word::No
            };
            if rng.gen::<f64>() < profile.sign_noise {
                if w == Word::Yes {
                    Word::No
                } else {
                    Word::Yes
                }
            } else {
                w
            }
        })
        .collect();

    let baseline = synthetic_baseline();
    for w in [Word::Yes, Word::No] {
        let idx: Vec<usize> = (0..snippets.len()).filter(|&i| words[i] == w).collect();
        if idx.is_empty() {
            continue;
        }
        let target: Vec<f64> = idx.iter().map(|&i| snippets[i].gt_return).collect();
        let mut u: Vec<f64> = crate::stats::ranks(&target)
            .into_iter()
            .map(|r| w.sign() * r)
            .collect();
        standardize(&mut u);
        let eta: Vec<f64> = idx
            .iter()
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let signed_u: Vec<f64> = u.iter().map(|x| w.sign() * x).collect();
        let signed_eta: Vec<f64> = eta.iter().map(|x| w.sign() * x).collect();
        let c = calibrate(&signed_u, &[signed_eta], &target, profile.expressiveness);
        for (j, &i) in idx.iter().enumerate() {
            let z = mix(c, u[j], eta[j]);
            snippets[i].audio = Some(SnippetAudio {
                word: w,
                pitch_mean: (baseline.pitch.mean + baseline.pitch.std * z).max(0.0),
            });
        }
    }
    Ok(snippets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_map, value_iteration};
    use crate::stats::{spearman, welch_t_test};

    fn setup() -> (GridMap, MdpSolution) {
        let m = generate_map(10, 10, 7).unwrap();
        let s = value_iteration(&m, &RewardSpec::default(), 1e-10);
        (m, s)
    }

    /// n-weighted mean of the within-word Spearman of signed pitch vs advantage.
    fn stratified(s: &IntrlSession) -> f64 {
        let mut acc = 0.0;
        let mut n = 0.0;
        for w in [Word::Yes, Word::No] {
            let idx: Vec<usize> = (0..s.utterances.len())
                .filter(|&i| s.utterances[i].word == w)
                .collect();
            let x: Vec<f64> = idx
                .iter()
                .map(|&i| w.sign() * s.utterances[i].features.pitch_mean)
                .collect();
            let y: Vec<f64> = idx.iter().map(|&i| s.advantages[i]).collect();
            if let Ok(r) = spearman(&x, &y) {
                acc += r.statistic * idx.len() as f64;
                n += idx.len() as f64;
            }
        }
        acc / n
    }

    #[test]
    fn deterministic_under_seed() {
        let (m, s) = setup();
        let p = TeacherProfile {
            seed: 5,
            ..Default::default()
        };
        assert_eq!(
            generate_intrl_session(&m, &s, &p, 200).unwrap(),
            generate_intrl_session(&m, &s, &p, 200).unwrap()
        );
    }

    #[test]
    fn expressiveness_targets() {
        let (m, s) = setup();
        let zero = TeacherProfile {
            expressiveness: 0.0,
            seed: 1,
            ..Default::default()
        };
        let sess = generate_intrl_session(&m, &s, &zero, 1700).unwrap();
        assert!(sess.utterances.len() >= 1000);
        assert!(stratified(&sess).abs() < 0.1, "{}", stratified(&sess));

        let p = TeacherProfile {
            expressiveness: 0.25,
            seed: 2,
            ..Default::default()
        };
        let sess = generate_intrl_session(&m, &s, &p, 1700).unwrap();
        let r = stratified(&sess);
        assert!((0.15..=0.35).contains(&r), "{r}");
        assert!(sess.clamp_rate < 0.01, "{}", sess.clamp_rate);
    }

    #[test]
    fn pos_bias_ratio() {
        let (m, s) = setup();
        let p = TeacherProfile {
            pos_bias: Some(3.0),
            seed: 3,
            ..Default::default()
        };
        let sess = generate_intrl_session(&m, &s, &p, 2500).unwrap();
        let pos = sess
            .utterances
            .iter()
            .filter(|u| u.word == Word::Yes)
            .count() as f64;
        let neg = sess.utterances.len() as f64 - pos;
        assert!(pos + neg >= 1000.0);
        assert!((2.5..=3.5).contains(&(pos / neg)), "{}", pos / neg);
    }

    #[test]
    fn utterances_are_ordered_and_nonnegative() {
        let (m, s) = setup();
        let sess = generate_intrl_session(&m, &s, &TeacherProfile::default(), 300).unwrap();
        for w in sess.utterances.windows(2) {
            assert!(w[0].t_end <= w[1].t_start);
        }
        for (u, f) in sess.utterances.iter().zip(&sess.feedback) {
            assert!(u.features.pitch_mean >= 0.0 && u.features.energy_mean >= 0.0);
            assert_eq!(f.value.signum(), u.word.sign());
        }
    }

    fn demo_corr(d: &[TrajectorySnippet], w: Word) -> f64 {
        let sel: Vec<&TrajectorySnippet> =
            d.iter().filter(|s| s.audio.unwrap().word == w).collect();
        let p: Vec<f64> = sel.iter().map(|s| s.audio.unwrap().pitch_mean).collect();
        let r: Vec<f64> = sel.iter().map(|s| s.gt_return).collect();
        spearman(&p, &r).unwrap().statistic
    }

    #[test]
    fn demo_pitch_correlations() {
        let (m, s) = setup();
        let p = TeacherProfile {
            expressiveness: 0.37,
            seed: 11,
            ..Default::default()
        };
        let d = generate_demo_dataset(&m, &s, &p, 500).unwrap();
        assert!((0.27..=0.47).contains(&demo_corr(&d, Word::Yes)));
        assert!((-0.47..=-0.27).contains(&demo_corr(&d, Word::No)));
        let yes: Vec<f64> = d
            .iter()
            .filter(|s| s.audio.unwrap().word == Word::Yes)
            .map(|s| s.gt_return)
            .collect();
        let no: Vec<f64> = d
            .iter()
            .filter(|s| s.audio.unwrap().word == Word::No)
            .map(|s| s.gt_return)
            .collect();
        assert!(crate::numeric::mean(&yes) > crate::numeric::mean(&no));

        let p0 = TeacherProfile {
            expressiveness: 0.0,
            seed: 12,
            ..Default::default()
        };
        let d0 = generate_demo_dataset(&m, &s, &p0, 500).unwrap();
        assert!(demo_corr(&d0, Word::Yes).abs() < 0.1 && demo_corr(&d0, Word::No).abs() < 0.1);
    }

    #[test]
    fn demo_word_noise_destroys_separation() {
        let (m, s) = setup();
        let p = TeacherProfile {
            sign_noise: 0.5,
            seed: 13,
            ..Default::default()
        };
        let d = generate_demo_dataset(&m, &s, &p, 500).unwrap();
        let yes: Vec<f64> = d
            .iter()
            .filter(|s| s.audio.unwrap().word == Word::Yes)
            .map(|s| s.gt_return)
            .collect();
        let no: Vec<f64> = d
            .iter()
            .filter(|s| s.audio.unwrap().word == Word::No)
            .map(|s| s.gt_return)
            .collect();
        assert!(welch_t_test(&yes, &no).unwrap().p_value > 0.05);
    }
}
