//! Session-level analyses: feedback balance, yes/no feature contrasts,
//! feature-advantage correlations and the demonstration-dataset report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    chi_square_gof, point_biserial, spearman, welch_t_test, Result, StatsError, TestResult,
};
use crate::gridworld::{normalized_performance, GridMap, MdpSolution, RewardSpec};
use crate::prosody::{
    signed_feedback_value, ProsodyFeatures, SpeakerBaseline, UtteranceRecord, Word,
};
use crate::reward::TrajectorySnippet;
use crate::tamer::TimedStep;

/// Features compared between "yes" and "no".
pub const CONTRAST_FEATURES: [&str; 8] = [
    "duration",
    "pitch_mean",
    "pitch_max",
    "energy_mean",
    "energy_max",
    "energy_total",
    "loudness_mean",
    "loudness_max",
];

/// Features correlated with the advantage, per word.
pub const CORRELATION_FEATURES: [&str; 7] = [
    "duration",
    "pitch_mean",
    "pitch_max",
    "energy_mean",
    "energy_max",
    "loudness_mean",
    "loudness_max",
];

pub const ALPHA: f64 = 0.05;

pub fn feature_value(f: &ProsodyFeatures, name: &str) -> f64 {
    match name {
        "duration" => f.duration,
        "repetition" => f.repetition as f64,
        "pitch_mean" => f.pitch_mean,
        "pitch_max" => f.pitch_max,
        "energy_mean" => f.energy_mean,
        "energy_max" => f.energy_max,
        "energy_total" => f.energy_total,
        "loudness_mean" => f.loudness_mean,
        "loudness_max" => f.loudness_max,
        other => panic!("unknown feature {other}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub yes: usize,
    pub no: usize,
    pub test: TestResult,
    /// More "yes" than "no" with corrected p below 0.05.
    pub positive_dominance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub feature: String,
    pub mean_yes: f64,
    pub mean_no: f64,
    pub test: Option<TestResult>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub yes: Option<TestResult>,
    pub no: Option<TestResult>,
    /// n-weighted mean over words of the correlation of the signed feature
    /// (feature times +1 for yes, -1 for no) with the advantage.
    pub pooled_signed_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrlReport {
    pub events: usize,
    /// Utterances that came before the first step and were skipped.
    pub unlinked: usize,
    pub balance: BalanceReport,
    pub contrasts: Vec<ContrastRow>,
    pub correlations: Vec<CorrelationRow>,
    /// Correlation of the combined signed feedback value with the advantage.
    pub signed_value: Option<TestResult>,
    pub repetition_yes: Option<TestResult>,
    pub repetition_no: Option<TestResult>,
    /// Steps of the first completed delivery over the optimal count.
    pub normalized_performance: Option<f64>,
    pub warnings: Vec<String>,
}

/// One analysed utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub t_start: f64,
    pub word: Word,
    pub advantage: f64,
    pub features: ProsodyFeatures,
}

fn correct(r: TestResult, m: usize) -> TestResult {
    r.with_bonferroni(m)
}

/// Each utterance is matched with the most recent step that started
/// before it.
pub fn link_events(
    steps: &[TimedStep],
    utterances: &[UtteranceRecord],
    solution: &MdpSolution,
) -> (Vec<EventRow>, usize) {
    let mut rows = Vec::with_capacity(utterances.len());
    let mut unlinked = 0;
    for u in utterances {
        let k = steps.partition_point(|s| s.t < u.t_start);
        if k == 0 {
            unlinked += 1;
            continue;
        }
        let s = steps[k - 1];
        match solution.advantage(&s.state, s.action) {
            Ok(advantage) => rows.push(EventRow {
                t_start: u.t_start,
                word: u.word,
                advantage,
                features: u.features,
            }),
            Err(_) => unlinked += 1,
        }
    }
    (rows, unlinked)
}

fn steps_to_first_delivery(steps: &[TimedStep], map: &GridMap) -> Option<usize> {
    let spec = RewardSpec::default();
    let mut count = 0;
    for s in steps {
        count += 1;
        let out = map.step(&spec, s.state, s.action);
        if out.terminal {
            if map.is_bomb(out.next.cell()) {
                count = 0;
            } else {
                return Some(count);
            }
        }
    }
    None
}

pub fn analyze_intrl_session(
    steps: &[TimedStep],
    utterances: &[UtteranceRecord],
    map: &GridMap,
    solution: &MdpSolution,
    baseline: Option<&SpeakerBaseline>,
) -> Result<IntrlReport> {
    let (rows, unlinked) = link_events(steps, utterances, solution);
    if rows.len() < 3 {
        return Err(StatsError::InsufficientData(format!(
            "{} linked feedback events, need at least 3",
            rows.len()
        )));
    }
    let mut warnings = Vec::new();
    let by_word = |w: Word| rows.iter().filter(move |r| r.word == w);
    let yes = by_word(Word::Yes).count();
    let no = rows.len() - yes;

    let half = rows.len() as f64 / 2.0;
    let test = correct(chi_square_gof(&[yes as f64, no as f64], &[half, half])?, 1);
    let balance = BalanceReport {
        yes,
        no,
        positive_dominance: yes > no && test.effective_p() < ALPHA,
        test,
    };

    let m_contrast = CONTRAST_FEATURES.len();
    let contrasts = CONTRAST_FEATURES
        .iter()
        .map(|&name| {
            let a: Vec<f64> = by_word(Word::Yes)
                .map(|r| feature_value(&r.features, name))
                .collect();
            let b: Vec<f64> = by_word(Word::No)
                .map(|r| feature_value(&r.features, name))
                .collect();
            let test = welch_t_test(&a, &b).ok().map(|t| correct(t, m_contrast));
            ContrastRow {
                feature: name.to_string(),
                mean_yes: crate::numeric::mean(&a),
                mean_no: crate::numeric::mean(&b),
                significant: test.is_some_and(|t| t.effective_p() < ALPHA),
                test,
            }
        })
        .collect();

    let m_corr = CORRELATION_FEATURES.len() * 2;
    let corr = |w: Word, name: &str| -> Option<TestResult> {
        let x: Vec<f64> = by_word(w)
            .map(|r| feature_value(&r.features, name))
            .collect();
        let y: Vec<f64> = by_word(w).map(|r| r.advantage).collect();
        spearman(&x, &y).ok().map(|t| correct(t, m_corr))
    };
    let correlations = CORRELATION_FEATURES
        .iter()
        .map(|&name| {
            let (ty, tn) = (corr(Word::Yes, name), corr(Word::No, name));
            let parts: Vec<(f64, f64)> = [(ty, 1.0), (tn, -1.0)]
                .iter()
                .filter_map(|(t, s)| t.map(|t| (t.n as f64, s * t.statistic)))
                .collect();
            let n: f64 = parts.iter().map(|p| p.0).sum();
            let pooled = (n > 0.0).then(|| parts.iter().map(|(k, r)| k * r).sum::<f64>() / n);
            CorrelationRow {
                feature: name.to_string(),
                yes: ty,
                no: tn,
                pooled_signed_r: pooled,
            }
        })
        .collect();

    let signed_value = baseline.and_then(|b| {
        let x: Vec<f64> = rows
            .iter()
            .filter_map(|r| signed_feedback_value(&r.features, r.word, b).ok())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r.advantage).collect();
        (x.len() == y.len())
            .then(|| spearman(&x, &y).ok())
            .flatten()
    });

    let rep = |w: Word| -> Option<TestResult> {
        let f: Vec<bool> = by_word(w).map(|r| r.features.repetition == 1).collect();
        let y: Vec<f64> = by_word(w).map(|r| r.advantage).collect();
        point_biserial(&f, &y).ok().map(|t| correct(t, 2))
    };
    let (repetition_yes, repetition_no) = (rep(Word::Yes), rep(Word::No));
    if repetition_yes.is_none() && repetition_no.is_none() {
        warnings
            .push("repetition correlation undefined (no variation in flags or advantage)".into());
    }
    if unlinked > 0 {
        warnings.push(format!(
            "{unlinked} utterances had no preceding step and were skipped"
        ));
    }

    let normalized_performance = steps_to_first_delivery(steps, map)
        .and_then(|n| normalized_performance(n, map, solution).ok());

    Ok(IntrlReport {
        events: rows.len(),
        unlinked,
        balance,
        contrasts,
        correlations,
        signed_value,
        repetition_yes,
        repetition_no,
        normalized_performance,
        warnings,
    })
}

fn fmt_test(t: &Option<TestResult>) -> String {
    match t {
        Some(t) => match (t.corrected_p, t.m) {
            (Some(c), Some(m)) => format!(
                "{:+.3} (p={:.2e}, corrected p={:.2e}, m={m}, n={})",
                t.statistic, t.p_value, c, t.n
            ),
            _ => format!("{:+.3} (p={:.2e}, n={})", t.statistic, t.p_value, t.n),
        },
        None => "n/a".into(),
    }
}

impl IntrlReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "feedback events: {} ({} yes / {} no)",
            self.events, self.balance.yes, self.balance.no
        );
        let _ = writeln!(
            s,
            "balance chi2 = {:.3}, {}{}",
            self.balance.test.statistic,
            fmt_test(&Some(self.balance.test)),
            if self.balance.positive_dominance {
                "  positive dominance"
            } else {
                ""
            }
        );
        let _ = writeln!(s, "\nyes vs no (Welch):");
        for c in &self.contrasts {
            let _ = writeln!(
                s,
                "  {:<14} yes {:>10.5} no {:>10.5}  t {}{}",
                c.feature,
                c.mean_yes,
                c.mean_no,
                fmt_test(&c.test),
                if c.significant { " *" } else { "" }
            );
        }
        let _ = writeln!(s, "\nSpearman with advantage:");
        for c in &self.correlations {
            let _ = writeln!(
                s,
                "  {:<14} yes {}  no {}  pooled signed {}",
                c.feature,
                fmt_test(&c.yes),
                fmt_test(&c.no),
                c.pooled_signed_r
                    .map_or("n/a".into(), |r| format!("{r:+.3}"))
            );
        }
        let _ = writeln!(
            s,
            "\nsigned feedback value: {}",
            fmt_test(&self.signed_value)
        );
        let _ = writeln!(
            s,
            "repetition (point-biserial): yes {}  no {}",
            fmt_test(&self.repetition_yes),
            fmt_test(&self.repetition_no)
        );
        let _ = writeln!(
            s,
            "normalized performance: {}",
            self.normalized_performance
                .map_or("n/a".into(), |p| format!("{p:.3}"))
        );
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Per-event CSV for plotting.
pub fn event_rows_csv(rows: &[EventRow]) -> String {
    let mut s = String::from("t_start,word,advantage,duration,repetition,pitch_mean,pitch_max,energy_mean,energy_max,energy_total,loudness_mean,loudness_max\n");
    for r in rows {
        let f = &r.features;
        let _ = writeln!(
            s,
            "{:.6},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.t_start,
            r.word,
            r.advantage,
            f.duration,
            f.repetition,
            f.pitch_mean,
            f.pitch_max,
            f.energy_mean,
            f.energy_max,
            f.energy_total,
            f.loudness_mean,
            f.loudness_max
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub snippets: usize,
    pub yes: usize,
    pub no: usize,
    /// Share of annotated snippet time spoken over with "yes".
    pub yes_duration_share: f64,
    pub pitch_contrast: Option<TestResult>,
    pub return_contrast: Option<TestResult>,
    pub mean_return_yes: Option<f64>,
    pub mean_return_no: Option<f64>,
    pub pitch_return_yes: Option<TestResult>,
    pub pitch_return_no: Option<TestResult>,
    /// Set when a word class is missing and some entries are undefined.
    pub partial: bool,
    pub warnings: Vec<String>,
}

pub fn analyze_demo_dataset(snippets: &[TrajectorySnippet]) -> Result<DemoReport> {
    let annotated: Vec<&TrajectorySnippet> =
        snippets.iter().filter(|s| s.audio.is_some()).collect();
    if annotated.is_empty() {
        return Err(StatsError::InsufficientData(
            "no audio-annotated snippets".into(),
        ));
    }
    let group = |w: Word| -> Vec<&TrajectorySnippet> {
        annotated
            .iter()
            .copied()
            .filter(|s| s.audio.map(|a| a.word) == Some(w))
            .collect()
    };
    let (gy, gn) = (group(Word::Yes), group(Word::No));
    let mut warnings = Vec::new();
    for (g, name) in [(&gy, "yes"), (&gn, "no")] {
        if g.is_empty() {
            warnings.push(format!("no \"{name}\" snippets; contrasts undefined"));
        }
    }
    let len = |g: &[&TrajectorySnippet]| g.iter().map(|s| s.states.len()).sum::<usize>() as f64;
    let pitch = |g: &[&TrajectorySnippet]| {
        g.iter()
            .map(|s| s.audio.unwrap().pitch_mean)
            .collect::<Vec<_>>()
    };
    let ret = |g: &[&TrajectorySnippet]| g.iter().map(|s| s.gt_return).collect::<Vec<_>>();
    let total_len = len(&gy) + len(&gn);
    let mean_of = |v: Vec<f64>| (!v.is_empty()).then(|| crate::numeric::mean(&v));
    Ok(DemoReport {
        snippets: annotated.len(),
        yes: gy.len(),
        no: gn.len(),
        yes_duration_share: if total_len > 0.0 {
            len(&gy) / total_len
        } else {
            0.0
        },
        pitch_contrast: welch_t_test(&pitch(&gy), &pitch(&gn)).ok(),
        return_contrast: welch_t_test(&ret(&gy), &ret(&gn)).ok(),
        mean_return_yes: mean_of(ret(&gy)),
        mean_return_no: mean_of(ret(&gn)),
        pitch_return_yes: spearman(&pitch(&gy), &ret(&gy)).ok(),
        pitch_return_no: spearman(&pitch(&gn), &ret(&gn)).ok(),
        partial: gy.is_empty() || gn.is_empty(),
        warnings,
    })
}

impl DemoReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "annotated snippets: {} ({} yes / {} no)",
            self.snippets, self.yes, self.no
        );
        let _ = writeln!(
            s,
            "yes share of snippet time: {:.3}",
            self.yes_duration_share
        );
        let opt = |x: Option<f64>| x.map_or("n/a".into(), |v| format!("{v:.3}"));
        let _ = writeln!(
            s,
            "mean return: yes {}  no {}",
            opt(self.mean_return_yes),
            opt(self.mean_return_no)
        );
        let _ = writeln!(s, "return yes vs no: {}", fmt_test(&self.return_contrast));
        let _ = writeln!(s, "pitch yes vs no: {}", fmt_test(&self.pitch_contrast));
        let _ = writeln!(
            s,
            "Spearman(pitch, return | yes): {}",
            fmt_test(&self.pitch_return_yes)
        );
        let _ = writeln!(
            s,
            "Spearman(pitch, return | no):  {}",
            fmt_test(&self.pitch_return_no)
        );
        if self.partial {
            let _ = writeln!(s, "partial report");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
