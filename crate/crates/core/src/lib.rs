//! Speech prosody as a teaching signal for learning agents.
//!
//! The crate is organised around the pipeline a teaching session goes through:
//!
//! * [`prosody`] turns mono PCM audio and yes/no labels into utterance records
//!   with duration, repetition, pitch, energy and loudness features.
//! * [`gridworld`] is the nut-delivery grid world together with its exact
//!   Q / V / advantage tables.
//! * [`tamer`] learns a human feedback function from timed steps and
//!   (optionally prosody-weighted) feedback.
//! * [`reward`] is preference-based reward learning with a contrastive audio
//!   loss on top of the ranking loss.
//! * [`teacher`] produces synthetic teaching sessions and demonstrations.
//! * [`stats`] holds the hypothesis tests and analysis reports.
//! * [`session`] defines the on-disk formats and the replay tool.
//! * [`live`] runs real-time teaching sessions over a websocket.
//! * [`cli`] is the command-line front end.

pub mod cli;
pub mod gridworld;
pub mod live;
pub mod numeric;
pub mod prosody;
pub mod reward;
pub mod session;
pub mod stats;
pub mod tamer;
pub mod teacher;

pub use gridworld::{Action, AgentState, Cell, GridMap, MdpSolution, RewardSpec};
pub use prosody::{AudioBuffer, ProsodyFeatures, SpeakerBaseline, UtteranceRecord, Word};
pub use tamer::{FeedbackEvent, HModel, TimedStep};
