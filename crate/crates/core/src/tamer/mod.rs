//! Learning a human feedback function `H(s, a)` from timed steps and
//! (optionally prosody-weighted) feedback.
//!
//! The learner is myopic: every update regresses the prediction for the
//! credited `(state, action)` pair toward the credited feedback and never
//! looks at successor states.

mod credit;

pub use credit::{gamma_pdf, CreditAnchor, CreditAssigner};

use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, AgentState, GridMap, MdpSolution};

pub const CHECKPOINT_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TamerError {
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("state ({0}, {1}) lies outside the featurizer grid")]
    OutOfGrid(usize, usize),
}

pub type Result<T> = std::result::Result<T, TamerError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedStep {
    pub t: f64,
    pub state: AgentState,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Only the sign of the feedback is used.
    Baseline,
    /// The signed, prosody-weighted value is used as is.
    #[default]
    Prosody,
}

impl Variant {
    pub fn target(self, value: f64) -> f64 {
        match self {
            Variant::Baseline => {
                if value == 0.0 {
                    0.0
                } else {
                    value.signum()
                }
            }
            Variant::Prosody => value,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Variant::Baseline),
            "prosody" => Ok(Variant::Prosody),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Gaussian radial-basis features over the grid, gated by the nut flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfFeaturizer {
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub sigmas: Vec<f64>,
    centers: Vec<(f64, f64)>,
}

impl RbfFeaturizer {
    pub fn new(rows: usize, cols: usize, stride: usize, sigmas: Vec<f64>) -> Self {
        let stride = stride.max(1);
        let mut centers = Vec::new();
        for r in (1..rows.saturating_sub(1)).step_by(stride) {
            for c in (1..cols.saturating_sub(1)).step_by(stride) {
                centers.push((r as f64, c as f64));
            }
        }
        Self {
            rows,
            cols,
            stride,
            sigmas,
            centers,
        }
    }

    /// Centers on every second interior cell, bandwidths 0.5, 1 and 2 cells.
    pub fn for_map(map: &GridMap) -> Self {
        Self::new(map.rows, map.cols, 2, vec![0.5, 1.0, 2.0])
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    fn block(&self) -> usize {
        self.centers.len() * self.sigmas.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.block() + 1
    }

    /// Layout: `[no-nut block | has-nut block | bias]`, each block ordered
    /// sigma-major then center.
    pub fn featurize(&self, s: &AgentState) -> Vec<f64> {
        let mut phi = vec![0.0; self.dim()];
        let offset = if s.has_nut { self.block() } else { 0 };
        let (r, c) = (s.row as f64, s.col as f64);
        for (k, sigma) in self.sigmas.iter().enumerate() {
            let denom = 2.0 * sigma * sigma;
            for (j, (cr, cc)) in self.centers.iter().enumerate() {
                let d2 = (r - cr).powi(2) + (c - cc).powi(2);
                phi[offset + k * self.centers.len() + j] = (-d2 / denom).exp();
            }
        }
        phi[self.dim() - 1] = 1.0;
        phi
    }
}

/// One linear regressor per action over a shared featurization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HModel {
    pub featurizer: RbfFeaturizer,
    pub learning_rate: f64,
    pub weights: [Vec<f64>; 4],
}

impl HModel {
    pub fn new(featurizer: RbfFeaturizer, learning_rate: f64) -> Self {
        let d = featurizer.dim();
        Self {
            featurizer,
            learning_rate,
            weights: std::array::from_fn(|_| vec![0.0; d]),
        }
    }

    pub fn for_map(map: &GridMap) -> Self {
        Self::new(RbfFeaturizer::for_map(map), 0.01)
    }

    pub fn predict_phi(&self, phi: &[f64], action: Action) -> f64 {
        self.weights[action.index()]
            .iter()
            .zip(phi)
            .map(|(w, x)| w * x)
            .sum()
    }

    pub fn predict(&self, s: &AgentState, action: Action) -> f64 {
        self.predict_phi(&self.featurizer.featurize(s), action)
    }

    pub fn predict_all(&self, s: &AgentState) -> [f64; 4] {
        let phi = self.featurizer.featurize(s);
        Action::ALL.map(|a| self.predict_phi(&phi, a))
    }

    /// One SGD step on `(prediction - target)^2` for `action`'s regressor.
    pub fn update(&mut self, s: &AgentState, action: Action, target: f64) {
        let phi = self.featurizer.featurize(s);
        self.update_phi(&phi, action, target);
    }

    pub fn update_phi(&mut self, phi: &[f64], action: Action, target: f64) {
        let err = self.predict_phi(phi, action) - target;
        let step = self.learning_rate * 2.0 * err;
        for (w, x) in self.weights[action.index()].iter_mut().zip(phi) {
            *w -= step * x;
        }
    }

    /// Argmax over actions, ties going to the earlier action.
    pub fn greedy_action(&self, s: &AgentState) -> Action {
        let q = self.predict_all(s);
        let mut best = 0;
        for i in 1..4 {
            if q[i] > q[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    /// Ridge least-squares fit of every action's regressor to the given
    /// `(state, action, target)` samples, replacing the current weights.
    pub fn fit_least_squares(&mut self, samples: &[(AgentState, Action, f64)], ridge: f64) {
        let d = self.featurizer.dim();
        for a in Action::ALL {
            let mut gram = vec![0.0; d * d];
            let mut rhs = vec![0.0; d];
            for (s, _, y) in samples.iter().filter(|x| x.1 == a) {
                let phi = self.featurizer.featurize(s);
                for i in 0..d {
                    if phi[i] == 0.0 {
                        continue;
                    }
                    rhs[i] += phi[i] * y;
                    for j in 0..d {
                        gram[i * d + j] += phi[i] * phi[j];
                    }
                }
            }
            for i in 0..d {
                gram[i * d + i] += ridge;
            }
            self.weights[a.index()] = crate::numeric::cholesky_solve(&gram, &rhs)
                .expect("ridge term keeps the system positive definite");
        }
    }

    /// Euclidean distance between the two weight sets.
    pub fn param_distance(&self, other: &HModel) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION.into(),
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(s).map_err(|e| TamerError::InvalidCheckpoint(e.to_string()))?;
        if ck.version.split('.').next() != CHECKPOINT_VERSION.split('.').next() {
            return Err(TamerError::InvalidCheckpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        let fresh = RbfFeaturizer::new(
            ck.model.featurizer.rows,
            ck.model.featurizer.cols,
            ck.model.featurizer.stride,
            ck.model.featurizer.sigmas.clone(),
        );
        if fresh != ck.model.featurizer || ck.model.weights.iter().any(|w| w.len() != fresh.dim()) {
            return Err(TamerError::InvalidCheckpoint(
                "featurizer and weights disagree".into(),
            ));
        }
        Ok(ck.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    model: HModel,
}

/// Incremental learner shared by offline replay and the live service.
#[derive(Debug, Clone)]
pub struct TamerLearner {
    pub model: HModel,
    pub credit: CreditAssigner,
    pub variant: Variant,
    steps: Vec<TimedStep>,
    updates: usize,
}

impl TamerLearner {
    pub fn new(model: HModel, credit: CreditAssigner, variant: Variant) -> Self {
        Self {
            model,
            credit,
            variant,
            steps: Vec::new(),
            updates: 0,
        }
    }

    pub fn steps(&self) -> &[TimedStep] {
        &self.steps
    }

    pub fn update_count(&self) -> usize {
        self.updates
    }

    pub fn record_step(&mut self, step: TimedStep) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if step.t <= last.t {
                return Err(TamerError::InvalidSession(format!(
                    "step at t={} does not follow t={}",
                    step.t, last.t
                )));
            }
        }
        self.steps.push(step);
        Ok(())
    }

    /// Credits `event` to the recent steps; returns the number of updates.
    pub fn feedback(&mut self, event: FeedbackEvent) -> usize {
        let h = self.variant.target(event.value);
        if h == 0.0 || !h.is_finite() {
            return 0;
        }
        // only the last `window` steps before t can ever be credited
        let end = self.steps.partition_point(|s| s.t < event.t);
        let begin = end.saturating_sub(self.credit.window);
        let recent = &self.steps[begin..end];
        let credited = self.credit.credit(event.t, recent);
        for &(i, w) in &credited {
            let s = recent[i];
            self.model.update(&s.state, s.action, w * h);
        }
        self.updates += credited.len();
        credited.len()
    }
}

fn check_sorted<T>(items: &[T], t: impl Fn(&T) -> f64, what: &str, strict: bool) -> Result<()> {
    for (i, w) in items.windows(2).enumerate() {
        let (a, b) = (t(&w[0]), t(&w[1]));
        if b < a || (strict && b == a) || !a.is_finite() {
            return Err(TamerError::InvalidSession(format!(
                "{what} {} at t={b} is out of order",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Replays a recorded session in time order.
pub fn train_offline(
    model: HModel,
    steps: &[TimedStep],
    feedback: &[FeedbackEvent],
    variant: Variant,
    credit: CreditAssigner,
) -> Result<HModel> {
    check_sorted(steps, |s| s.t, "step", true)?;
    check_sorted(feedback, |f| f.t, "feedback", false)?;
    let mut learner = TamerLearner::new(model, credit, variant);
    let mut si = 0;
    for ev in feedback {
        while si < steps.len() && steps[si].t < ev.t {
            learner.record_step(steps[si])?;
            si += 1;
        }
        learner.feedback(*ev);
    }
    Ok(learner.model)
}

/// Number of non-terminal states whose greedy action is optimal.
pub fn evaluate_policy(model: &HModel, solution: &MdpSolution) -> usize {
    solution
        .non_terminal_states()
        .filter(|s| {
            solution
                .is_optimal(s, model.greedy_action(s))
                .unwrap_or(false)
        })
        .count()
}
