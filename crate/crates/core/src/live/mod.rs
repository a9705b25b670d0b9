//! Live teaching sessions: the grid world advances on a fixed tick, the
//! teacher's yes/no utterances are credited to the agent's recent moves and
//! the learner updates before the next move.
//!
//! [`LiveSession`] is the whole state machine and takes the session clock as
//! an argument, so scripted runs are deterministic. [`server`] wraps it in a
//! websocket endpoint.

pub mod server;

pub use server::{router, serve, serve_on, AppState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, AgentState, GridMap, RewardSpec};
use crate::prosody::{
    extract_features, signed_feedback_value, AudioBuffer, FeatureConfig, ProsodyFeatures,
    SpeakerBaseline, UtteranceRecord, VadConfig, Word, DEFAULT_SAMPLE_RATE,
};
use crate::session::{Outcome, Record, SessionHeader, SessionLog, StepRecord, LOG_VERSION};
use crate::tamer::{CreditAssigner, FeedbackEvent, HModel, TamerLearner, TimedStep, Variant};

/// Largest accepted binary (PCM) frame.
pub const MAX_PCM_FRAME: usize = 64 * 1024;
pub const PCM_SAMPLE_RATE: u32 = DEFAULT_SAMPLE_RATE;
pub const DEFAULT_TICK: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub map: GridMap,
    pub reward: RewardSpec,
    /// Seconds per move.
    pub tick: f64,
    pub epsilon: f64,
    /// Ticks without feedback after which moves become uniformly random;
    /// `None` keeps the agent greedy.
    pub idle_ticks: Option<u64>,
    pub practice_ticks: u64,
    pub max_game_ticks: u64,
    pub variant: Variant,
    pub seed: u64,
}

impl LiveConfig {
    pub fn new(map: GridMap) -> Self {
        Self {
            map,
            reward: RewardSpec::default(),
            tick: DEFAULT_TICK,
            epsilon: 0.1,
            idle_ticks: Some(1),
            practice_ticks: 8,
            max_game_ticks: 400,
            variant: Variant::Prosody,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    BaselineRecording,
    Practice,
    Game,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    PhaseViolation,
    BadMessage,
    BadWord,
    BadTimestamp,
    BadAudio,
    NoBaseline,
    FrameTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Start {
        participant: String,
    },
    /// Finishes the baseline reading: statistics are taken from `baseline`
    /// when given, otherwise from the PCM frames sent since the last message.
    BaselineAudio {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        baseline: Option<SpeakerBaseline>,
    },
    /// `features` wins over buffered PCM; with neither, the bare word is
    /// used as +-1 feedback.
    Utterance {
        word: String,
        t_start: f64,
        t_end: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<ProsodyFeatures>,
    },
    End,
    /// Clock handshake; answered with `pong` in any phase.
    Ping {
        #[serde(default)]
        client_t: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Phase {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<GridMap>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tick: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<Outcome>,
    },
    State {
        tick: u64,
        t: f64,
        agent: AgentState,
        action: Action,
        score: f64,
        terminal: bool,
        phase: Phase,
        explored: bool,
    },
    Ack {
        of: String,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        updates: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        code: Option<ErrorCode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
    /// `server_t` is the session clock that step and utterance times use.
    Pong {
        client_t: f64,
        server_t: f64,
    },
}

fn error(code: ErrorCode, message: impl Into<String>) -> ServerMsg {
    ServerMsg::Error {
        code,
        message: message.into(),
    }
}

fn nack(of: &str, code: ErrorCode, message: impl Into<String>) -> ServerMsg {
    ServerMsg::Ack {
        of: of.into(),
        ok: false,
        value: None,
        updates: None,
        code: Some(code),
        message: Some(message.into()),
    }
}

fn phase_msg(phase: Phase) -> ServerMsg {
    ServerMsg::Phase {
        phase,
        map: None,
        tick: None,
        score: None,
        outcome: None,
    }
}

pub struct LiveSession {
    pub id: u64,
    cfg: LiveConfig,
    phase: Option<Phase>,
    baseline: Option<SpeakerBaseline>,
    learner: TamerLearner,
    agent: AgentState,
    score: f64,
    tick_index: u64,
    phase_ticks: u64,
    ticks_since_feedback: u64,
    last_feedback_t: f64,
    rng: ChaCha8Rng,
    pcm: Vec<u8>,
    log: SessionLog,
    outcome: Option<Outcome>,
}

impl LiveSession {
    pub fn new(cfg: LiveConfig, id: u64) -> Self {
        let learner = TamerLearner::new(
            HModel::for_map(&cfg.map),
            CreditAssigner::default(),
            cfg.variant,
        );
        Self::with_learner(cfg, id, learner)
    }

    /// Starts from an existing learner, e.g. a pretrained model.
    pub fn with_learner(cfg: LiveConfig, id: u64, learner: TamerLearner) -> Self {
        let header = SessionHeader {
            version: LOG_VERSION.into(),
            map: cfg.map.clone(),
            reward: cfg.reward,
            tick: cfg.tick,
            participant: String::new(),
            variant: cfg.variant,
            baseline: None,
        };
        Self {
            id,
            agent: cfg.map.start_state(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ticks_since_feedback: u64::MAX,
            cfg,
            phase: None,
            baseline: None,
            learner,
            score: 0.0,
            tick_index: 0,
            phase_ticks: 0,
            last_feedback_t: f64::NEG_INFINITY,
            pcm: Vec::new(),
            log: SessionLog::new(header),
            outcome: None,
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        self.phase
    }

    pub fn is_ticking(&self) -> bool {
        matches!(self.phase, Some(Phase::Practice | Phase::Game))
    }

    pub fn is_done(&self) -> bool {
        self.phase == Some(Phase::Done)
    }

    pub fn learner(&self) -> &TamerLearner {
        &self.learner
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn agent(&self) -> AgentState {
        self.agent
    }

    pub fn config(&self) -> &LiveConfig {
        &self.cfg
    }

    pub fn handle_text(&mut self, text: &str, now: f64) -> Vec<ServerMsg> {
        match serde_json::from_str::<ClientMsg>(text) {
            Ok(msg) => self.handle(msg, now),
            Err(e) => vec![error(ErrorCode::BadMessage, e.to_string())],
        }
    }

    pub fn handle_binary(&mut self, bytes: &[u8]) -> Vec<ServerMsg> {
        if !matches!(
            self.phase,
            Some(Phase::BaselineRecording | Phase::Practice | Phase::Game)
        ) {
            return vec![error(
                ErrorCode::PhaseViolation,
                "audio outside a recording phase",
            )];
        }
        if bytes.len() > MAX_PCM_FRAME {
            return vec![error(
                ErrorCode::FrameTooLarge,
                format!("{} byte frame exceeds {MAX_PCM_FRAME}", bytes.len()),
            )];
        }
        self.pcm.extend_from_slice(bytes);
        Vec::new()
    }

    pub fn handle(&mut self, msg: ClientMsg, now: f64) -> Vec<ServerMsg> {
        match (msg, self.phase) {
            (ClientMsg::Ping { client_t }, _) => vec![ServerMsg::Pong {
                client_t,
                server_t: now,
            }],
            (ClientMsg::Start { participant }, None) => {
                self.log.header.participant = participant;
                self.phase = Some(Phase::BaselineRecording);
                vec![ServerMsg::Phase {
                    phase: Phase::BaselineRecording,
                    map: Some(self.cfg.map.clone()),
                    tick: Some(self.cfg.tick),
                    score: None,
                    outcome: None,
                }]
            }
            (ClientMsg::BaselineAudio { baseline }, Some(Phase::BaselineRecording)) => {
                let pcm = std::mem::take(&mut self.pcm);
                let baseline = match baseline {
                    Some(b) => match b.validate() {
                        Ok(()) => b,
                        Err(e) => {
                            return vec![nack(
                                "baseline_audio",
                                ErrorCode::NoBaseline,
                                e.to_string(),
                            )]
                        }
                    },
                    None if pcm.is_empty() => {
                        return vec![nack(
                            "baseline_audio",
                            ErrorCode::NoBaseline,
                            "no audio and no statistics",
                        )]
                    }
                    None => match baseline_from_pcm(&pcm) {
                        Ok(b) => b,
                        Err(e) => return vec![nack("baseline_audio", ErrorCode::BadAudio, e)],
                    },
                };
                self.baseline = Some(baseline);
                self.log.header.baseline = Some(baseline);
                let ack = ServerMsg::Ack {
                    of: "baseline_audio".into(),
                    ok: true,
                    value: None,
                    updates: None,
                    code: None,
                    message: None,
                };
                let next = if self.cfg.practice_ticks > 0 {
                    Phase::Practice
                } else {
                    Phase::Game
                };
                vec![ack, self.enter(next, now)]
            }
            (
                ClientMsg::Utterance {
                    word,
                    t_start,
                    t_end,
                    features,
                },
                Some(Phase::Practice | Phase::Game),
            ) => {
                vec![self.ingest(&word, t_start, t_end, features, now)]
            }
            (ClientMsg::End, Some(p)) if p != Phase::Done => self.finish(Outcome::Aborted, now),
            (msg, phase) => {
                self.pcm.clear();
                let name = match msg {
                    ClientMsg::Start { .. } => "start",
                    ClientMsg::BaselineAudio { .. } => "baseline_audio",
                    ClientMsg::Utterance { .. } => "utterance",
                    ClientMsg::End => "end",
                    ClientMsg::Ping { .. } => "ping",
                };
                vec![error(
                    ErrorCode::PhaseViolation,
                    format!("{name} not allowed in phase {phase:?}"),
                )]
            }
        }
    }

    fn ingest(
        &mut self,
        word: &str,
        t_start: f64,
        t_end: f64,
        features: Option<ProsodyFeatures>,
        now: f64,
    ) -> ServerMsg {
        let pcm = std::mem::take(&mut self.pcm);
        let Ok(word) = word.parse::<Word>() else {
            return nack(
                "utterance",
                ErrorCode::BadWord,
                format!("word must be yes or no, got {word:?}"),
            );
        };
        if !(t_start.is_finite() && t_end >= t_start) {
            return nack(
                "utterance",
                ErrorCode::BadTimestamp,
                "t_start/t_end invalid",
            );
        }
        // a start in the future could be credited to steps that do not exist yet
        if t_start > now {
            return nack(
                "utterance",
                ErrorCode::BadTimestamp,
                format!("t_start {t_start} is ahead of the session clock {now}"),
            );
        }
        if t_start < self.last_feedback_t {
            return nack(
                "utterance",
                ErrorCode::BadTimestamp,
                "utterances must arrive in start-time order",
            );
        }
        let Some(baseline) = self.baseline else {
            return nack("utterance", ErrorCode::NoBaseline, "no speaker baseline");
        };
        let features = match features {
            Some(f) => Some(f),
            None if pcm.is_empty() => None,
            None => match features_from_pcm(&pcm) {
                Ok(f) => Some(f),
                Err(e) => return nack("utterance", ErrorCode::BadAudio, e),
            },
        };
        let value = match &features {
            Some(f) => match signed_feedback_value(f, word, &baseline) {
                Ok(v) => v,
                Err(e) => return nack("utterance", ErrorCode::NoBaseline, e.to_string()),
            },
            None => word.sign(),
        };
        let event = FeedbackEvent { t: t_start, value };
        let updates = self.learner.feedback(event);
        self.ticks_since_feedback = 0;
        self.last_feedback_t = t_start;
        let features = features.unwrap_or(ProsodyFeatures {
            duration: t_end - t_start,
            ..Default::default()
        });
        self.log.records.push(Record::Utterance(UtteranceRecord {
            word,
            t_start,
            t_end,
            features,
        }));
        self.log.records.push(Record::Feedback(event));
        ServerMsg::Ack {
            of: "utterance".into(),
            ok: true,
            value: Some(value),
            updates: Some(updates),
            code: None,
            message: None,
        }
    }

    fn enter(&mut self, phase: Phase, now: f64) -> ServerMsg {
        self.phase = Some(phase);
        self.phase_ticks = 0;
        if phase == Phase::Game {
            self.agent = self.cfg.map.start_state();
            self.score = 0.0;
        }
        self.log.records.push(Record::Phase {
            t: now,
            phase: format!("{phase:?}"),
        });
        phase_msg(phase)
    }

    fn finish(&mut self, outcome: Outcome, now: f64) -> Vec<ServerMsg> {
        self.outcome = Some(outcome);
        self.phase = Some(Phase::Done);
        self.log.records.push(Record::Phase {
            t: now,
            phase: format!("{:?}", Phase::Done),
        });
        vec![ServerMsg::Phase {
            phase: Phase::Done,
            map: None,
            tick: None,
            score: Some(self.score),
            outcome: Some(outcome),
        }]
    }

    /// One move. Returns nothing outside the practice and game phases.
    pub fn tick(&mut self, now: f64) -> Vec<ServerMsg> {
        let Some(phase @ (Phase::Practice | Phase::Game)) = self.phase else {
            return Vec::new();
        };
        let idle = self
            .cfg
            .idle_ticks
            .is_some_and(|n| self.ticks_since_feedback >= n);
        let explored = idle || self.rng.gen::<f64>() < self.cfg.epsilon;
        let action = if explored {
            Action::ALL[self.rng.gen_range(0..4)]
        } else {
            self.learner.model.greedy_action(&self.agent)
        };
        if let Err(e) = self.learner.record_step(TimedStep {
            t: now,
            state: self.agent,
            action,
        }) {
            log::warn!("session {}: {e}; tick skipped", self.id);
            return Vec::new();
        }
        let out = self.cfg.map.step(&self.cfg.reward, self.agent, action);
        self.score += out.reward;
        self.tick_index += 1;
        self.phase_ticks += 1;
        self.ticks_since_feedback = self.ticks_since_feedback.saturating_add(1);
        self.log.records.push(Record::Step(StepRecord {
            tick: self.tick_index,
            t: now,
            state: self.agent,
            action,
            reward: out.reward,
            terminal: out.terminal,
            score: self.score,
        }));
        let mut msgs = vec![ServerMsg::State {
            tick: self.tick_index,
            t: now,
            agent: out.next,
            action,
            score: self.score,
            terminal: out.terminal,
            phase,
            explored,
        }];
        self.agent = if out.terminal {
            self.cfg.map.start_state()
        } else {
            out.next
        };
        match phase {
            Phase::Practice if out.terminal || self.phase_ticks >= self.cfg.practice_ticks => {
                msgs.push(self.enter(Phase::Game, now))
            }
            Phase::Game if out.terminal => {
                let outcome = if self.cfg.map.is_bomb(out.next.cell()) {
                    Outcome::Bomb
                } else {
                    Outcome::Delivered
                };
                msgs.extend(self.finish(outcome, now));
            }
            Phase::Game if self.phase_ticks >= self.cfg.max_game_ticks => {
                msgs.extend(self.finish(Outcome::Incomplete, now))
            }
            _ => {}
        }
        msgs
    }

    /// The session log: rows in time order, repetition flags set, footer
    /// written. Ends the session if it is still running.
    pub fn finalize(&mut self, now: f64) -> SessionLog {
        if !self.is_done() {
            self.finish(Outcome::Aborted, now);
        }
        let mut log = self.log.clone();
        log.records.sort_by(|a, b| a.t().total_cmp(&b.t()));
        let mut utts: Vec<UtteranceRecord> = log.utterances();
        crate::prosody::detect_repetition(&mut utts, 1.0);
        let mut it = utts.into_iter();
        for r in log.records.iter_mut() {
            if let Record::Utterance(u) = r {
                *u = it.next().expect("same utterance count");
            }
        }
        // score of the game phase only
        let game_score = self.score;
        log.finish(self.outcome);
        if let Some(f) = log.footer.as_mut() {
            f.score = game_score;
        }
        log
    }
}

fn baseline_from_pcm(pcm: &[u8]) -> Result<SpeakerBaseline, String> {
    let audio = AudioBuffer::from_pcm16_le(pcm, PCM_SAMPLE_RATE).map_err(|e| e.to_string())?;
    SpeakerBaseline::from_audio(&audio, &FeatureConfig::default(), &VadConfig::default())
        .map_err(|e| e.to_string())
}

fn features_from_pcm(pcm: &[u8]) -> Result<ProsodyFeatures, String> {
    let audio = AudioBuffer::from_pcm16_le(pcm, PCM_SAMPLE_RATE).map_err(|e| e.to_string())?;
    let ex = extract_features(&audio, 0.0, audio.duration(), &FeatureConfig::default())
        .map_err(|e| e.to_string())?;
    Ok(ex.features)
}
