//! C interface to prosody-rl.
//!
//! Objects are opaque handles created by `pr_*_new`-style functions and
//! released with the matching `pr_*_free`. Every fallible call returns a
//! [`PrStatus`]; on failure [`pr_last_error`] holds a message for the calling
//! thread. Panics never cross the boundary, they come back as
//! `PR_STATUS_INTERNAL`.
//!
//! Actions are numbered 0 up, 1 down, 2 left, 3 right.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use prosody_rl::gridworld::{
    generate_map, value_iteration, Action, AgentState, GridMap, MdpSolution, RewardSpec,
};
use prosody_rl::prosody::{
    extract_features, signed_feedback_value, AudioBuffer, FeatureConfig, FeatureStat,
    ProsodyFeatures, SpeakerBaseline, Word,
};
use prosody_rl::tamer::{
    evaluate_policy, CreditAssigner, FeedbackEvent, HModel, TamerLearner, TimedStep, Variant,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    BufferTooSmall = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrWord {
    Yes = 0,
    No = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrVariant {
    Baseline = 0,
    Prosody = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrFeatures {
    pub duration: f64,
    /// 1 when the utterance repeats the previous word.
    pub repetition: u8,
    pub pitch_mean: f64,
    pub pitch_max: f64,
    pub energy_mean: f64,
    pub energy_max: f64,
    pub energy_total: f64,
    pub loudness_mean: f64,
    pub loudness_max: f64,
}

/// Mean and standard deviation of pitch, energy and loudness.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrBaseline {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub loudness_mean: f64,
    pub loudness_std: f64,
}

/// Opaque grid map with its solved Q table.
pub struct PrMap {
    map: GridMap,
    solution: MdpSolution,
}

/// Opaque online TAMER learner.
pub struct PrLearner {
    learner: TamerLearner,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: PrStatus, msg: impl Into<String>) -> PrStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PrStatus) -> PrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PrStatus::Internal, "internal panic"),
    }
}

impl From<PrFeatures> for ProsodyFeatures {
    fn from(f: PrFeatures) -> Self {
        ProsodyFeatures {
            duration: f.duration,
            repetition: f.repetition,
            pitch_mean: f.pitch_mean,
            pitch_max: f.pitch_max,
            energy_mean: f.energy_mean,
            energy_max: f.energy_max,
            energy_total: f.energy_total,
            loudness_mean: f.loudness_mean,
            loudness_max: f.loudness_max,
        }
    }
}

impl From<ProsodyFeatures> for PrFeatures {
    fn from(f: ProsodyFeatures) -> Self {
        PrFeatures {
            duration: f.duration,
            repetition: f.repetition,
            pitch_mean: f.pitch_mean,
            pitch_max: f.pitch_max,
            energy_mean: f.energy_mean,
            energy_max: f.energy_max,
            energy_total: f.energy_total,
            loudness_mean: f.loudness_mean,
            loudness_max: f.loudness_max,
        }
    }
}

fn action(index: u32) -> Result<Action, PrStatus> {
    Action::from_index(index as usize).ok_or_else(|| {
        fail(
            PrStatus::InvalidArgument,
            format!("action {index} not in 0..4"),
        )
    })
}

/// Copies `s` plus a NUL into `buf`. `needed` (optional) receives the size
/// including the NUL, also when the buffer is too small.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> PrStatus {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return fail(
            PrStatus::BufferTooSmall,
            format!("need {} bytes", s.len() + 1),
        );
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    PrStatus::Ok
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pr_last_error(
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PrStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    write_str(&msg, buf, len, needed)
}

/// Generates a solvable map with the given interior size and solves it.
///
/// # Safety
/// `out` must be a valid pointer; on success it owns a map to release with
/// [`pr_map_free`].
#[no_mangle]
pub unsafe extern "C" fn pr_map_generate(
    rows: u32,
    cols: u32,
    seed: u64,
    out: *mut *mut PrMap,
) -> PrStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrStatus::NullPointer, "out is null");
        }
        match generate_map(rows as usize, cols as usize, seed) {
            Ok(map) => {
                *out = Box::into_raw(Box::new(solved(map)));
                PrStatus::Ok
            }
            Err(e) => fail(PrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Parses a map from its JSON form and solves it.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_map_from_json(json: *const c_char, out: *mut *mut PrMap) -> PrStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(PrStatus::Parse, "map json is not UTF-8");
        };
        match GridMap::from_json(text) {
            Ok(map) => {
                *out = Box::into_raw(Box::new(solved(map)));
                PrStatus::Ok
            }
            Err(e) => fail(PrStatus::Parse, e.to_string()),
        }
    })
}

fn solved(map: GridMap) -> PrMap {
    let solution = value_iteration(&map, &RewardSpec::default(), 1e-10);
    PrMap { map, solution }
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pr_map_free(map: *mut PrMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Full size including the wall ring.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_map_size(
    map: *const PrMap,
    rows: *mut u32,
    cols: *mut u32,
) -> PrStatus {
    if map.is_null() || rows.is_null() || cols.is_null() {
        return fail(PrStatus::NullPointer, "null argument");
    }
    *rows = (*map).map.rows as u32;
    *cols = (*map).map.cols as u32;
    PrStatus::Ok
}

/// Optimal Q value of taking `action` in state (row, col, has_nut).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_map_q(
    map: *const PrMap,
    row: u32,
    col: u32,
    has_nut: bool,
    action_index: u32,
    out: *mut f64,
) -> PrStatus {
    guard(|| {
        if map.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let a = match action(action_index) {
            Ok(a) => a,
            Err(s) => return s,
        };
        match (*map)
            .solution
            .q(&AgentState::new(row as usize, col as usize, has_nut), a)
        {
            Ok(q) => {
                *out = q;
                PrStatus::Ok
            }
            Err(e) => fail(PrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Writes the map JSON into `buf`.
///
/// # Safety
/// `map` must be valid, `buf` valid for `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pr_map_to_json(
    map: *const PrMap,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PrStatus {
    if map.is_null() {
        return fail(PrStatus::NullPointer, "map is null");
    }
    write_str(&(*map).map.to_json(), buf, len, needed)
}

/// Prosodic features of `samples[t_start..t_end]` (seconds, mono).
///
/// # Safety
/// `samples` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_extract_features(
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    t_start: f64,
    t_end: f64,
    out: *mut PrFeatures,
) -> PrStatus {
    guard(|| {
        if samples.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let data = std::slice::from_raw_parts(samples, n).to_vec();
        let result = AudioBuffer::new(data, sample_rate)
            .and_then(|audio| extract_features(&audio, t_start, t_end, &FeatureConfig::default()));
        match result {
            Ok(x) => {
                *out = x.features.into();
                PrStatus::Ok
            }
            Err(e) => fail(PrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Signed feedback value of an utterance relative to the speaker baseline.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_feedback_value(
    features: *const PrFeatures,
    word: PrWord,
    baseline: *const PrBaseline,
    out: *mut f64,
) -> PrStatus {
    guard(|| {
        if features.is_null() || baseline.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let b = *baseline;
        let base = SpeakerBaseline {
            pitch: FeatureStat {
                mean: b.pitch_mean,
                std: b.pitch_std,
            },
            energy: FeatureStat {
                mean: b.energy_mean,
                std: b.energy_std,
            },
            loudness: FeatureStat {
                mean: b.loudness_mean,
                std: b.loudness_std,
            },
        };
        let w = match word {
            PrWord::Yes => Word::Yes,
            PrWord::No => Word::No,
        };
        match signed_feedback_value(&(*features).into(), w, &base) {
            Ok(v) => {
                *out = v;
                PrStatus::Ok
            }
            Err(e) => fail(PrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// A fresh learner with the default featurization for `map`.
///
/// # Safety
/// `map` and `out` must be valid; release the learner with
/// [`pr_learner_free`].
#[no_mangle]
pub unsafe extern "C" fn pr_learner_new(
    map: *const PrMap,
    variant: PrVariant,
    out: *mut *mut PrLearner,
) -> PrStatus {
    guard(|| {
        if map.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let variant = match variant {
            PrVariant::Baseline => Variant::Baseline,
            PrVariant::Prosody => Variant::Prosody,
        };
        let learner = TamerLearner::new(
            HModel::for_map(&(*map).map),
            CreditAssigner::default(),
            variant,
        );
        *out = Box::into_raw(Box::new(PrLearner { learner }));
        PrStatus::Ok
    })
}

/// # Safety
/// `learner` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_free(learner: *mut PrLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Records that `action_index` was taken in (row, col, has_nut) at time `t`.
/// Times must strictly increase.
///
/// # Safety
/// `learner` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_record_step(
    learner: *mut PrLearner,
    t: f64,
    row: u32,
    col: u32,
    has_nut: bool,
    action_index: u32,
) -> PrStatus {
    guard(|| {
        if learner.is_null() {
            return fail(PrStatus::NullPointer, "learner is null");
        }
        let a = match action(action_index) {
            Ok(a) => a,
            Err(s) => return s,
        };
        let step = TimedStep {
            t,
            state: AgentState::new(row as usize, col as usize, has_nut),
            action: a,
        };
        match (*learner).learner.record_step(step) {
            Ok(()) => PrStatus::Ok,
            Err(e) => fail(PrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Applies feedback `value` given at time `t`; `updates` (optional) receives
/// the number of credited steps.
///
/// # Safety
/// `learner` must be valid; `updates` may be null.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_feedback(
    learner: *mut PrLearner,
    t: f64,
    value: f64,
    updates: *mut usize,
) -> PrStatus {
    guard(|| {
        if learner.is_null() {
            return fail(PrStatus::NullPointer, "learner is null");
        }
        if !(t.is_finite() && value.is_finite()) {
            return fail(PrStatus::InvalidArgument, "t and value must be finite");
        }
        let n = (*learner).learner.feedback(FeedbackEvent { t, value });
        if !updates.is_null() {
            *updates = n;
        }
        PrStatus::Ok
    })
}

/// Predicted human reward of an action.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_predict(
    learner: *const PrLearner,
    row: u32,
    col: u32,
    has_nut: bool,
    action_index: u32,
    out: *mut f64,
) -> PrStatus {
    guard(|| {
        if learner.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let a = match action(action_index) {
            Ok(a) => a,
            Err(s) => return s,
        };
        *out = (*learner)
            .learner
            .model
            .predict(&AgentState::new(row as usize, col as usize, has_nut), a);
        PrStatus::Ok
    })
}

/// Action with the highest predicted human reward.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_greedy_action(
    learner: *const PrLearner,
    row: u32,
    col: u32,
    has_nut: bool,
    out: *mut u32,
) -> PrStatus {
    guard(|| {
        if learner.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        let a = (*learner).learner.model.greedy_action(&AgentState::new(
            row as usize,
            col as usize,
            has_nut,
        ));
        *out = a.index() as u32;
        PrStatus::Ok
    })
}

/// Number of non-terminal states of `map` where the greedy action is optimal.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_optimal_count(
    learner: *const PrLearner,
    map: *const PrMap,
    out: *mut usize,
) -> PrStatus {
    guard(|| {
        if learner.is_null() || map.is_null() || out.is_null() {
            return fail(PrStatus::NullPointer, "null argument");
        }
        *out = evaluate_policy(&(*learner).learner.model, &(*map).solution);
        PrStatus::Ok
    })
}

/// Writes the model checkpoint JSON into `buf`.
///
/// # Safety
/// `learner` must be valid, `buf` valid for `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_checkpoint(
    learner: *const PrLearner,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PrStatus {
    if learner.is_null() {
        return fail(PrStatus::NullPointer, "learner is null");
    }
    write_str(
        &(*learner).learner.model.to_checkpoint_json(),
        buf,
        len,
        needed,
    )
}
