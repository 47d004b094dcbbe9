//! C interface to `lrs-core`.
//!
//! Objects cross the boundary as opaque pointers created by `*_open` or `*_parse`
//! functions and released with the matching `*_free`. Every fallible call returns an
//! [`LrsStatus`]; on failure a description is kept per thread and can be copied out with
//! [`lrs_last_error`]. Panics are caught and reported as [`LrsStatus::Panic`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use lrs_core::eval;
use lrs_core::instruction::{self, Instruction, MatchLevel};
use lrs_core::ltl::{EventTrace, LtlFormula};
use lrs_core::mdp::{Action, Environment, Room, State};
use lrs_core::shaping::{self, RewardRule, RuleKind};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    NotFound = 4,
    TerminalState = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Parsed LTL formula.
pub struct LrsLtl(LtlFormula);

/// A room together with its current state.
pub struct LrsEnv {
    env: Environment,
    state: State,
}

/// An instruction bound to a room's predicates.
pub struct LrsInstruction(Instruction);

/// Flattened agent state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LrsState {
    pub row: u32,
    pub col: u32,
    pub has_key: bool,
    pub on_ladder: bool,
    pub on_rope: bool,
    pub on_conveyor: bool,
    pub alive: bool,
    pub at_goal: bool,
}

impl From<State> for LrsState {
    fn from(s: State) -> Self {
        LrsState {
            row: s.row as u32,
            col: s.col as u32,
            has_key: s.has_key,
            on_ladder: s.on_ladder,
            on_rope: s.on_rope,
            on_conveyor: s.on_conveyor,
            alive: s.alive,
            at_goal: s.at_goal,
        }
    }
}

/// Outcome of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LrsStep {
    pub next_state: LrsState,
    pub reward: f64,
    pub done: bool,
    pub death: bool,
}

struct Failure(LrsStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: LrsStatus, message: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, message.into()))
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> LrsStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let text = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(LrsStatus::Panic, text))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            LrsStatus::Ok
        }
        Err(Failure(status, message)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = message);
            status
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(LrsStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(LrsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().map_or_else(|| fail(LrsStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().map_or_else(|| fail(LrsStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(LrsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn actions(codes: &[u32]) -> FfiResult<Vec<Action>> {
    codes
        .iter()
        .map(|&c| Action::from_index(c as usize).map_or_else(|| fail(LrsStatus::InvalidArgument, format!("action code {c} out of range")), Ok))
        .collect()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to fit)
/// and returns the full message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lrs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------------------------
// LTL

/// Parses a formula such as `F(d0 & F d1)`.
///
/// # Safety
/// `text_ptr` must be a NUL-terminated string and `out_ptr` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lrs_ltl_parse(text_ptr: *const c_char, out_ptr: *mut *mut LrsLtl) -> LrsStatus {
    guard(|| {
        let src = text(text_ptr, "text")?;
        let slot = out(out_ptr, "out")?;
        let f = LtlFormula::parse(src).or_else(|e| fail(LrsStatus::ParseError, e.to_string()))?;
        *slot = Box::into_raw(Box::new(LrsLtl(f)));
        Ok(())
    })
}

/// Evaluates a formula at `index` of a trace given as `n_steps` strings, each a
/// whitespace-separated list of the propositions true at that step.
///
/// # Safety
/// `formula` must come from [`lrs_ltl_parse`]; `steps` must hold `n_steps` valid strings.
#[no_mangle]
pub unsafe extern "C" fn lrs_ltl_eval(
    formula: *const LrsLtl,
    steps: *const *const c_char,
    n_steps: usize,
    index: usize,
    result: *mut bool,
) -> LrsStatus {
    guard(|| {
        let f = handle(formula, "formula")?;
        let slot = out(result, "result")?;
        let mut trace = Vec::with_capacity(n_steps);
        for &p in slice(steps, n_steps, "steps")? {
            trace.push(text(p, "step")?.split_whitespace().map(str::to_string).collect::<BTreeSet<_>>());
        }
        *slot = f.0.eval(&EventTrace::new(trace), index).or_else(|e| fail(LrsStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `formula` must be null or come from [`lrs_ltl_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lrs_ltl_free(formula: *mut LrsLtl) {
    if !formula.is_null() {
        drop(Box::from_raw(formula));
    }
}

// ---------------------------------------------------------------------------------------------
// Environment

fn new_env(room: Room) -> *mut LrsEnv {
    let env = Environment::new(Arc::new(room));
    let state = env.room().initial_state();
    Box::into_raw(Box::new(LrsEnv { env, state }))
}

/// Opens a built-in room (`a1`, `a2`, `b3`, `chain`) or a `.room` file path.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out_ptr` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lrs_env_open(id: *const c_char, out_ptr: *mut *mut LrsEnv) -> LrsStatus {
    guard(|| {
        let id = text(id, "id")?;
        let slot = out(out_ptr, "out")?;
        let room = Room::resolve(id).or_else(|e| fail(LrsStatus::NotFound, e.to_string()))?;
        *slot = new_env(room);
        Ok(())
    })
}

/// Resets to the start state; `seed` drives no-op starts and sticky actions.
///
/// # Safety
/// `env` must come from [`lrs_env_open`]; `state` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn lrs_env_reset(env: *mut LrsEnv, seed: u64, state: *mut LrsState) -> LrsStatus {
    guard(|| {
        let e = out(env, "env")?;
        e.state = e.env.reset(seed);
        if let Some(s) = state.as_mut() {
            *s = e.state.into();
        }
        Ok(())
    })
}

/// Applies action code `action` (0 Left, 1 Right, 2 Up, 3 Down, 4 Jump, 5 JumpLeft,
/// 6 JumpRight, 7 NoOp) to the current state.
///
/// # Safety
/// `env` must come from [`lrs_env_open`] and `step` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrs_env_step(env: *mut LrsEnv, action: u32, step: *mut LrsStep) -> LrsStatus {
    guard(|| {
        let e = out(env, "env")?;
        let slot = out(step, "step")?;
        let a = actions(&[action])?[0];
        let t = e.env.step(&e.state, a).or_else(|err| fail(LrsStatus::TerminalState, err.to_string()))?;
        e.state = t.next_state;
        *slot = LrsStep { next_state: t.next_state.into(), reward: t.env_reward, done: t.done, death: t.death };
        Ok(())
    })
}

/// # Safety
/// `env` must be null or come from [`lrs_env_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lrs_env_free(env: *mut LrsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

// ---------------------------------------------------------------------------------------------
// Instructions and language rewards

/// Loads the built-in instruction of a room (`a1`, `a2`, `b3`, `chain`) or an instruction file.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out_ptr` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lrs_instruction_open(id: *const c_char, out_ptr: *mut *mut LrsInstruction) -> LrsStatus {
    guard(|| {
        let id = text(id, "id")?;
        let slot = out(out_ptr, "out")?;
        let path = Path::new(id);
        let loaded = if path.exists() { Instruction::load(path) } else { Instruction::builtin(id) };
        let instr = loaded.or_else(|e| fail(LrsStatus::NotFound, e.to_string()))?;
        *slot = Box::into_raw(Box::new(LrsInstruction(instr)));
        Ok(())
    })
}

/// # Safety
/// `instr` must be null or come from [`lrs_instruction_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lrs_instruction_free(instr: *mut LrsInstruction) {
    if !instr.is_null() {
        drop(Box::from_raw(instr));
    }
}

/// Replays an action script from the room's start and classifies it against the instruction:
/// 0 full match, 1 partial match, 2 no match.
///
/// # Safety
/// Handles must be valid; `script` must hold `len` action codes.
#[no_mangle]
pub unsafe extern "C" fn lrs_match_level(
    env: *const LrsEnv,
    instr: *const LrsInstruction,
    script: *const u32,
    len: usize,
    level: *mut u32,
) -> LrsStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let i = handle(instr, "instruction")?;
        let slot = out(level, "level")?;
        let traj = e.env.room().replay(&actions(slice(script, len, "script")?)?);
        *slot = match instruction::match_level(&traj, &i.0).level {
            MatchLevel::Full => 0,
            MatchLevel::Partial => 1,
            MatchLevel::None => 2,
        };
        Ok(())
    })
}

/// Replays an action script and writes the per-step language reward under `rule`
/// (1, 2 or 3) into `rewards`. The replay stops at the first terminal state, so `*written`
/// may be smaller than `len`.
///
/// # Safety
/// Handles must be valid; `script` must hold `len` codes and `rewards` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn lrs_episode_lang_rewards(
    env: *const LrsEnv,
    instr: *const LrsInstruction,
    rule: u32,
    script: *const u32,
    len: usize,
    rewards: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> LrsStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let i = handle(instr, "instruction")?;
        let count = out(written, "written")?;
        let kind = match rule {
            1 => RuleKind::FullyMatched,
            2 => RuleKind::PartiallyMatched,
            3 => RuleKind::RelaxedOrdering,
            r => return fail(LrsStatus::InvalidArgument, format!("rule {r} is not 1, 2 or 3")),
        };
        let traj = e.env.room().replay(&actions(slice(script, len, "script")?)?);
        let r = shaping::episode_lang_rewards(&RewardRule::new(kind), &traj, &i.0);
        *count = r.len();
        if r.len() > capacity {
            return fail(LrsStatus::BufferTooSmall, format!("need {} slots, got {capacity}", r.len()));
        }
        if !r.is_empty() {
            if rewards.is_null() {
                return fail(LrsStatus::NullPointer, "rewards is null");
            }
            ptr::copy_nonoverlapping(r.as_ptr(), rewards, r.len());
        }
        Ok(())
    })
}

/// Subgoal potential `alpha * completed`.
///
/// # Safety
/// `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrs_potential(alpha: f64, gamma: f64, completed: u32, result: *mut f64) -> LrsStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let cfg = shaping::PotentialConfig::new(alpha, gamma).or_else(|e| fail(LrsStatus::InvalidArgument, e.to_string()))?;
        let mut progress = shaping::ProgressState::new(completed as usize);
        progress.c = completed as usize;
        *slot = shaping::potential(&progress, &cfg);
        Ok(())
    })
}

/// Potential-based shaping term `phi_cur - phi_prev / gamma`.
///
/// # Safety
/// `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrs_shaping_term(phi_prev: f64, phi_cur: f64, gamma: f64, result: *mut f64) -> LrsStatus {
    guard(|| {
        let slot = out(result, "result")?;
        *slot = shaping::shaping_term(phi_prev, phi_cur, gamma).or_else(|e| fail(LrsStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------------------------
// Evaluation

/// Normalised area under the cumulative-wins curve of one run given as per-episode win flags.
///
/// # Safety
/// `wins` must hold `len` bytes (nonzero meaning a win) and `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrs_auc(wins: *const u8, len: usize, budget: usize, win_cap: usize, result: *mut f64) -> LrsStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let flags: Vec<bool> = slice(wins, len, "wins")?.iter().map(|&w| w != 0).collect();
        *slot = eval::auc_from_wins(&flags, budget, win_cap).or_else(|e| fail(LrsStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Fraction of runs with at least one win, from per-run win counts.
///
/// # Safety
/// `win_counts` must hold `len` values and `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrs_success_rate(win_counts: *const u64, len: usize, result: *mut f64) -> LrsStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let counts = slice(win_counts, len, "win_counts")?;
        if counts.is_empty() {
            return fail(LrsStatus::InvalidArgument, "no runs");
        }
        *slot = counts.iter().filter(|&&w| w > 0).count() as f64 / counts.len() as f64;
        Ok(())
    })
}

/// One-sided Mann-Whitney p-value for "sample `a` tends to be smaller than sample `b`".
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` values; `p_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrs_significance(a: *const f64, na: usize, b: *const f64, nb: usize, p_value: *mut f64) -> LrsStatus {
    guard(|| {
        let slot = out(p_value, "p_value")?;
        let s = eval::significance(slice(a, na, "a")?, slice(b, nb, "b")?).or_else(|e| fail(LrsStatus::InvalidArgument, e.to_string()))?;
        *slot = s.p_value;
        Ok(())
    })
}
