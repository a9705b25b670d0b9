//! Session logs and snippet datasets as versioned JSONL, plus tick-by-tick
//! replay of a recorded session.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gridworld::{AgentState, GridMap, RewardSpec};
use crate::prosody::{SpeakerBaseline, UtteranceRecord, Word};
use crate::reward::TrajectorySnippet;
use crate::tamer::{FeedbackEvent, TimedStep, Variant};
use crate::teacher::IntrlSession;

pub const LOG_VERSION: &str = "1.0";
pub const SNIPPET_FORMAT: &str = "snippets";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unsupported format version {0}")]
    Version(String),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LogError>;

fn corrupt(line: usize, message: impl Into<String>) -> LogError {
    LogError::Corrupt {
        line,
        message: message.into(),
    }
}

fn check_version(v: &str) -> Result<()> {
    if v.split('.').next() != Some("1") {
        return Err(LogError::Version(v.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub version: String,
    pub map: GridMap,
    pub reward: RewardSpec,
    pub tick: f64,
    pub participant: String,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<SpeakerBaseline>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u64,
    pub t: f64,
    pub state: AgentState,
    pub action: crate::gridworld::Action,
    pub reward: f64,
    pub terminal: bool,
    /// Cumulative score after this step.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Delivered,
    Bomb,
    Incomplete,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub score: f64,
    pub steps: usize,
    pub outcome: Outcome,
}

/// Body rows. `Keystroke` is kept for operator-driven sessions; nothing in
/// the learner reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Record {
    Step(StepRecord),
    Feedback(FeedbackEvent),
    Utterance(UtteranceRecord),
    Phase { t: f64, phase: String },
    Keystroke { t: f64, key: String },
}

impl Record {
    pub fn t(&self) -> f64 {
        match self {
            Record::Step(s) => s.t,
            Record::Feedback(f) => f.t,
            Record::Utterance(u) => u.t_start,
            Record::Phase { t, .. } | Record::Keystroke { t, .. } => *t,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum HeaderLine {
    Header(SessionHeader),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum FooterLine {
    Footer(Footer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub records: Vec<Record>,
    pub footer: Option<Footer>,
}

impl SessionLog {
    pub fn new(header: SessionHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
            footer: None,
        }
    }

    /// Log of a synthetic session: steps with their outcomes, then feedback
    /// and utterances merged in time order.
    pub fn from_intrl(
        map: &GridMap,
        reward: RewardSpec,
        tick: f64,
        participant: &str,
        variant: Variant,
        session: &IntrlSession,
    ) -> Self {
        let header = SessionHeader {
            version: LOG_VERSION.to_string(),
            map: map.clone(),
            reward,
            tick,
            participant: participant.to_string(),
            variant,
            baseline: Some(session.baseline),
        };
        let mut log = Self::new(header);
        let mut score = 0.0;
        let mut rows: Vec<Record> = Vec::new();
        for s in &session.steps {
            let out = map.step(&reward, s.state, s.action);
            score += out.reward;
            rows.push(Record::Step(StepRecord {
                tick: (s.t / tick).round() as u64,
                t: s.t,
                state: s.state,
                action: s.action,
                reward: out.reward,
                terminal: out.terminal,
                score,
            }));
        }
        for (u, f) in session.utterances.iter().zip(&session.feedback) {
            rows.push(Record::Utterance(u.clone()));
            rows.push(Record::Feedback(*f));
        }
        // stable: steps stay ahead of feedback sharing their timestamp
        rows.sort_by(|a, b| a.t().total_cmp(&b.t()));
        log.records = rows;
        log.finish(None);
        log
    }

    /// Writes the footer from the step rows. `outcome` overrides the one
    /// derived from the last step.
    pub fn finish(&mut self, outcome: Option<Outcome>) {
        let steps: Vec<&StepRecord> = self.step_records().collect();
        let score = steps.last().map_or(0.0, |s| s.score);
        let derived = match steps.last() {
            Some(s) if s.terminal => {
                let spec = &self.header.reward;
                let next = self.header.map.step(spec, s.state, s.action).next;
                if self.header.map.is_bomb(next.cell()) {
                    Outcome::Bomb
                } else {
                    Outcome::Delivered
                }
            }
            _ => Outcome::Incomplete,
        };
        self.footer = Some(Footer {
            score,
            steps: steps.len(),
            outcome: outcome.unwrap_or(derived),
        });
    }

    pub fn step_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn steps(&self) -> Vec<TimedStep> {
        self.step_records()
            .map(|s| TimedStep {
                t: s.t,
                state: s.state,
                action: s.action,
            })
            .collect()
    }

    pub fn feedback(&self) -> Vec<FeedbackEvent> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Feedback(f) => Some(*f),
                _ => None,
            })
            .collect()
    }

    pub fn utterances(&self) -> Vec<UtteranceRecord> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Utterance(u) => Some(u.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine::Header(self.header.clone()))
            .expect("header serialises");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        if let Some(f) = self.footer {
            out.push_str(
                &serde_json::to_string(&FooterLine::Footer(f)).expect("footer serialises"),
            );
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (n, first) = lines.next().ok_or_else(|| corrupt(1, "empty log"))?;
        let v: serde_json::Value =
            serde_json::from_str(first).map_err(|e| corrupt(n, e.to_string()))?;
        if v.get("type").and_then(|t| t.as_str()) != Some("header") {
            return Err(corrupt(n, "first row must be the header"));
        }
        if let Some(ver) = v.get("version").and_then(|x| x.as_str()) {
            check_version(ver)?;
        }
        let HeaderLine::Header(header) =
            serde_json::from_value(v).map_err(|e| corrupt(n, e.to_string()))?;
        let mut log = Self::new(header);
        let mut last_t = f64::NEG_INFINITY;
        for (n, line) in lines {
            if log.footer.is_some() {
                return Err(corrupt(n, "row after footer"));
            }
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| corrupt(n, e.to_string()))?;
            match v.get("type").and_then(|t| t.as_str()) {
                Some("header") => return Err(corrupt(n, "second header")),
                Some("footer") => {
                    let FooterLine::Footer(f) =
                        serde_json::from_value(v).map_err(|e| corrupt(n, e.to_string()))?;
                    log.footer = Some(f);
                }
                _ => {
                    let r: Record =
                        serde_json::from_value(v).map_err(|e| corrupt(n, e.to_string()))?;
                    let t = r.t();
                    if !t.is_finite() || t < last_t {
                        return Err(corrupt(
                            n,
                            format!("timestamp {t} goes backwards (previous {last_t})"),
                        ));
                    }
                    last_t = t;
                    log.records.push(r);
                }
            }
        }
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LogError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())
            .map_err(|e| LogError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize, Deserialize)]
struct SnippetHeader {
    format: String,
    version: String,
}

pub fn snippets_to_jsonl(snippets: &[TrajectorySnippet]) -> String {
    let header = SnippetHeader {
        format: SNIPPET_FORMAT.into(),
        version: LOG_VERSION.into(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for s in snippets {
        out.push_str(&serde_json::to_string(s).expect("snippet serialises"));
        out.push('\n');
    }
    out
}

/// Reads a snippet dataset. The header row is optional so bare JSONL
/// exported by other tools loads too.
pub fn parse_snippets(text: &str) -> Result<Vec<TrajectorySnippet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| corrupt(n, e.to_string()))?;
        if v.get("format").is_some() {
            if n != 1 {
                return Err(corrupt(n, "header row must come first"));
            }
            let h: SnippetHeader =
                serde_json::from_value(v).map_err(|e| corrupt(n, e.to_string()))?;
            if h.format != SNIPPET_FORMAT {
                return Err(corrupt(
                    n,
                    format!("expected a {SNIPPET_FORMAT} file, found {}", h.format),
                ));
            }
            check_version(&h.version)?;
            continue;
        }
        let s: TrajectorySnippet =
            serde_json::from_value(v).map_err(|e| corrupt(n, e.to_string()))?;
        if s.states.is_empty() {
            return Err(corrupt(n, "snippet without states"));
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMarker {
    pub t: f64,
    pub word: Word,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Frame {
    Header {
        participant: String,
        variant: Variant,
        rows: usize,
        cols: usize,
        tick: f64,
    },
    Step {
        tick: u64,
        t: f64,
        row: f64,
        col: f64,
        has_nut: bool,
        score: f64,
        terminal: bool,
        interpolated: bool,
        feedback: Vec<FeedbackMarker>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub after_tick: u64,
    pub missing: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub frames: Vec<Frame>,
    pub gaps: Vec<Gap>,
}

/// Rebuilds the frame stream. Feedback is attached to the last step at or
/// before it. Missing ticks are reported; with `interpolate` they are
/// filled with linearly interpolated positions.
pub fn replay(log: &SessionLog, interpolate: bool) -> Replay {
    let h = &log.header;
    let mut frames = vec![Frame::Header {
        participant: h.participant.clone(),
        variant: h.variant,
        rows: h.map.rows,
        cols: h.map.cols,
        tick: h.tick,
    }];
    let mut gaps = Vec::new();
    let mut prev: Option<StepRecord> = None;
    for r in &log.records {
        match r {
            Record::Step(s) => {
                if let Some(p) = prev {
                    let missing = s.tick.saturating_sub(p.tick + 1);
                    if missing > 0 {
                        log::warn!("ticks {}..{} missing", p.tick + 1, s.tick - 1);
                        gaps.push(Gap {
                            after_tick: p.tick,
                            missing,
                        });
                        if interpolate {
                            let span = (s.tick - p.tick) as f64;
                            for k in 1..=missing {
                                let a = k as f64 / span;
                                frames.push(Frame::Step {
                                    tick: p.tick + k,
                                    t: p.t + a * (s.t - p.t),
                                    row: p.state.row as f64
                                        + a * (s.state.row as f64 - p.state.row as f64),
                                    col: p.state.col as f64
                                        + a * (s.state.col as f64 - p.state.col as f64),
                                    has_nut: p.state.has_nut,
                                    score: p.score,
                                    terminal: false,
                                    interpolated: true,
                                    feedback: Vec::new(),
                                });
                            }
                        }
                    }
                }
                frames.push(Frame::Step {
                    tick: s.tick,
                    t: s.t,
                    row: s.state.row as f64,
                    col: s.state.col as f64,
                    has_nut: s.state.has_nut,
                    score: s.score,
                    terminal: s.terminal,
                    interpolated: false,
                    feedback: Vec::new(),
                });
                prev = Some(*s);
            }
            Record::Feedback(f) => {
                if let Some(Frame::Step { feedback, .. }) = frames.last_mut() {
                    let word = if f.value >= 0.0 { Word::Yes } else { Word::No };
                    feedback.push(FeedbackMarker {
                        t: f.t,
                        word,
                        value: f.value,
                    });
                }
            }
            _ => {}
        }
    }
    Replay { frames, gaps }
}

/// Text rendering of one frame; step frames draw the grid.
pub fn render_frame(map: &GridMap, frame: &Frame) -> String {
    let mut s = String::new();
    match frame {
        Frame::Header {
            participant,
            variant,
            rows,
            cols,
            tick,
        } => {
            let _ = writeln!(
                s,
                "participant {participant}  variant {variant:?}  {rows}x{cols}  tick {tick} s"
            );
            s.push_str(&map.render(None));
        }
        Frame::Step {
            tick,
            t,
            row,
            col,
            has_nut,
            score,
            terminal,
            interpolated,
            feedback,
        } => {
            let agent = AgentState::new(row.round() as usize, col.round() as usize, *has_nut);
            let _ = write!(
                s,
                "tick {tick}  t={t:.2}  agent ({row:.1}, {col:.1})  score {score}"
            );
            if *interpolated {
                s.push_str("  [interpolated]");
            }
            if *terminal {
                s.push_str("  [terminal]");
            }
            for f in feedback {
                let _ = write!(s, "  {}({:+.2})", f.word, f.value);
            }
            s.push('\n');
            s.push_str(&map.render(Some(&agent)));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_map, value_iteration, Action};
    use crate::teacher::{generate_intrl_session, TeacherProfile};

    fn header(map: GridMap) -> SessionHeader {
        SessionHeader {
            version: LOG_VERSION.into(),
            map,
            reward: RewardSpec::default(),
            tick: 1.25,
            participant: "p".into(),
            variant: Variant::Prosody,
            baseline: None,
        }
    }

    fn step(tick: u64, row: usize, col: usize) -> Record {
        Record::Step(StepRecord {
            tick,
            t: tick as f64 * 1.25,
            state: AgentState::new(row, col, false),
            action: Action::Right,
            reward: -1.0,
            terminal: false,
            score: -(tick as f64),
        })
    }

    #[test]
    fn intrl_log_round_trips_bytes() {
        let m = generate_map(6, 6, 3).unwrap();
        let sol = value_iteration(&m, &RewardSpec::default(), 1e-10);
        let sess = generate_intrl_session(&m, &sol, &TeacherProfile::default(), 60).unwrap();
        let log = SessionLog::from_intrl(
            &m,
            RewardSpec::default(),
            1.25,
            "p1",
            Variant::Prosody,
            &sess,
        );
        let text = log.to_jsonl();
        let back = SessionLog::parse(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(back.steps(), sess.steps);
        assert_eq!(back.feedback(), sess.feedback);
    }

    #[test]
    fn one_step_one_frame() {
        let m = generate_map(6, 6, 0).unwrap();
        let mut log = SessionLog::new(header(m));
        log.records.push(step(1, 2, 2));
        let r = replay(&log, false);
        assert_eq!(r.frames.len(), 2);
        assert!(matches!(r.frames[0], Frame::Header { .. }));
    }

    #[test]
    fn gap_is_flagged_and_interpolated() {
        let m = generate_map(6, 6, 0).unwrap();
        let mut log = SessionLog::new(header(m));
        log.records.push(step(1, 1, 1));
        log.records.push(step(4, 1, 4));
        let plain = replay(&log, false);
        assert_eq!(
            plain.gaps,
            vec![Gap {
                after_tick: 1,
                missing: 2
            }]
        );
        assert_eq!(plain.frames.len(), 3);
        let filled = replay(&log, true);
        assert_eq!(filled.frames.len(), 5);
        let cols: Vec<f64> = filled.frames[1..]
            .iter()
            .map(|f| match f {
                Frame::Step { col, .. } => *col,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(cols, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn corrupt_row_reports_line() {
        let m = generate_map(6, 6, 0).unwrap();
        let mut log = SessionLog::new(header(m));
        log.records.push(step(1, 1, 1));
        let mut text = log.to_jsonl();
        text.push_str("{\"type\":\"step\",\"tick\":oops}\n");
        match SessionLog::parse(&text) {
            Err(LogError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_major_version_rejected() {
        let m = generate_map(6, 6, 0).unwrap();
        let text = SessionLog::new(header(m))
            .to_jsonl()
            .replace("\"version\":\"1.0\"", "\"version\":\"2.0\"");
        assert_eq!(
            SessionLog::parse(&text),
            Err(LogError::Version("2.0".into()))
        );
        assert!(matches!(
            parse_snippets("{\"format\":\"snippets\",\"version\":\"3.1\"}\n"),
            Err(LogError::Version(_))
        ));
    }

    #[test]
    fn snippets_round_trip() {
        let s = vec![TrajectorySnippet {
            states: vec![vec![0.5, 0.25]],
            gt_return: -3.0,
            audio: None,
        }];
        let text = snippets_to_jsonl(&s);
        assert_eq!(parse_snippets(&text).unwrap(), s);
        assert_eq!(parse_snippets(text.lines().nth(1).unwrap()).unwrap(), s);
    }
}
