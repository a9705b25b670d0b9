//! Simulated-clock driver for live sessions, shared by the test targets.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use prosody_rl::gridworld::{GridMap, MdpSolution};
use prosody_rl::live::{ClientMsg, LiveConfig, LiveSession, Phase, ServerMsg};
use prosody_rl::prosody::ProsodyFeatures;
use prosody_rl::session::Outcome;
use prosody_rl::teacher::synthetic_baseline;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Event {
    pub at: f64,
    pub msg: ClientMsg,
}

/// Drives a session on a simulated clock. Client events are delivered
/// before a tick due at the same time, as the server does.
pub fn play(
    session: &mut LiveSession,
    events: Vec<Event>,
    mut react: impl FnMut(&ServerMsg) -> Vec<Event>,
) -> (Vec<Event>, Vec<ServerMsg>) {
    let tick = session.config().tick;
    let mut pending: VecDeque<Event> = events.into();
    let mut next_tick: Option<f64> = None;
    let mut played = Vec::new();
    let mut received = Vec::new();
    for _ in 0..100_000 {
        if session.is_done() {
            break;
        }
        let take_event = match (pending.front(), next_tick) {
            (Some(e), Some(t)) => e.at <= t,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        let (now, out) = if take_event {
            let e = pending.pop_front().unwrap();
            let out = session.handle(e.msg.clone(), e.at);
            let at = e.at;
            played.push(e);
            (at, out)
        } else {
            let t = next_tick.unwrap();
            next_tick = Some(t + tick);
            (t, session.tick(t))
        };
        if session.is_ticking() && next_tick.is_none() {
            next_tick = Some(now + tick);
        }
        for m in &out {
            for e in react(m) {
                let pos = pending
                    .iter()
                    .position(|p| p.at > e.at)
                    .unwrap_or(pending.len());
                pending.insert(pos, e);
            }
        }
        received.extend(out);
    }
    (played, received)
}

pub fn opening() -> Vec<Event> {
    vec![
        Event {
            at: 0.05,
            msg: ClientMsg::Start {
                participant: "scripted".into(),
            },
        },
        Event {
            at: 0.4,
            msg: ClientMsg::BaselineAudio {
                baseline: Some(synthetic_baseline()),
            },
        },
    ]
}

/// A teacher that says yes to optimal moves and no otherwise, louder when
/// the move is worse, and hangs up after `stop_after` ticks.
pub fn oracle_teacher(
    map: GridMap,
    sol: MdpSolution,
    seed: u64,
    stop_after: u64,
) -> impl FnMut(&ServerMsg) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = map.start_state();
    let base = synthetic_baseline();
    move |m| match *m {
        ServerMsg::Phase {
            phase: Phase::Game, ..
        } => {
            prev = map.start_state();
            Vec::new()
        }
        ServerMsg::State {
            tick,
            t,
            agent,
            action,
            terminal,
            ..
        } => {
            let s = prev;
            prev = if terminal { map.start_state() } else { agent };
            let mut out = Vec::new();
            if rng.gen::<f64>() < 0.7 {
                let adv = sol.advantage(&s, action).unwrap();
                let word = if adv == 0.0 { "yes" } else { "no" };
                let k = 1.0 + 0.4 * rng.gen::<f64>() + 0.02 * adv.abs().min(20.0);
                let features = ProsodyFeatures {
                    duration: 0.3,
                    pitch_mean: base.pitch.mean * k,
                    energy_mean: base.energy.mean * k,
                    loudness_mean: base.loudness.mean * k,
                    ..Default::default()
                };
                let t_start = t + 0.3 + 0.2 * rng.gen::<f64>();
                out.push(Event {
                    at: t_start + 0.35,
                    msg: ClientMsg::Utterance {
                        word: word.into(),
                        t_start,
                        t_end: t_start + 0.3,
                        features: Some(features),
                    },
                });
            }
            if tick == stop_after {
                out.push(Event {
                    at: t + 0.1,
                    msg: ClientMsg::End,
                });
            }
            out
        }
        _ => Vec::new(),
    }
}
pub fn config(map: GridMap, seed: u64) -> LiveConfig {
    let mut cfg = LiveConfig::new(map);
    cfg.seed = seed;
    cfg.max_game_ticks = 120;
    cfg
}

pub const GOLDEN: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/live_transcript.json"
);

#[derive(Debug, Serialize, Deserialize)]
pub struct Transcript {
    pub map: GridMap,
    pub seed: u64,
    pub max_game_ticks: u64,
    pub events: Vec<Event>,
    pub final_score: f64,
    pub steps: usize,
    pub outcome: Outcome,
}
