//! Instructions as constraint sets over trajectories.
//!
//! An instruction is an ordered list of atomic sentences. Each sentence carries a segment
//! pattern: a sequence of actions (its action constraint `C_a` is the set of those actions) and/or
//! a sequence of named state predicates (its state constraint `C_s`). A sentence *completes* at the
//! step where the most recent transitions reproduce its pattern. The temporal constraint `C_t` is
//! an LTL formula over the completion propositions `done_1 ... done_m`, by default requiring the
//! sentences to complete in order.
//!
//! Binding files are TOML:
//!
//! ```toml
//! name = "A2"
//! # temporal = "F (done_1 & F done_2)"    optional, defaults to in-order completion
//!
//! [predicates]
//! mid_ladder = "on_ladder & col = 9"
//! floor = "row >= 8 & !has_key"
//!
//! [[sentence]]
//! id = "climb_down"
//! text = "Climb down the ladder"
//! actions = ["Down", "Down"]
//! states = ["mid_ladder", "floor"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::ltl::{compile_order, is_valid_atom, EventTrace, LtlError, LtlFormula};
use crate::mdp::{Action, State, Trajectory, Transition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstructionError {
    #[error("unknown state field {0:?}")]
    UnknownField(String),
    #[error("malformed predicate {text:?}: {reason}")]
    BadPredicate { text: String, reason: String },
    #[error("sentence {0:?} has neither an action nor a state pattern")]
    EmptySentence(String),
    #[error("sentence {id:?}: action pattern has {actions} steps but state pattern has {states}")]
    PatternLength { id: String, actions: usize, states: usize },
    #[error("sentence {sentence:?} references unknown predicate {predicate:?}")]
    UnknownPredicate { sentence: String, predicate: String },
    #[error("predicate name {0:?} is not a usable proposition name")]
    BadPredicateName(String),
    #[error("instruction has no sentences")]
    NoSentences,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("temporal constraint mentions unknown proposition {0:?}")]
    UnknownProposition(String),
    #[error(transparent)]
    Ltl(#[from] LtlError),
    #[error("malformed binding file: {0}")]
    Format(String),
    #[error("unknown built-in instruction {0:?}")]
    UnknownInstruction(String),
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    HasKey,
    OnLadder,
    OnRope,
    OnConveyor,
    Alive,
    AtGoal,
    Row,
    Col,
}

impl Field {
    fn parse(name: &str) -> Result<Field, InstructionError> {
        Ok(match name {
            "has_key" => Field::HasKey,
            "on_ladder" => Field::OnLadder,
            "on_rope" => Field::OnRope,
            "on_conveyor" => Field::OnConveyor,
            "alive" => Field::Alive,
            "at_goal" => Field::AtGoal,
            "row" => Field::Row,
            "col" => Field::Col,
            _ => return Err(InstructionError::UnknownField(name.to_string())),
        })
    }

    fn is_numeric(self) -> bool {
        matches!(self, Field::Row | Field::Col)
    }

    fn flag(self, s: &State) -> bool {
        match self {
            Field::HasKey => s.has_key,
            Field::OnLadder => s.on_ladder,
            Field::OnRope => s.on_rope,
            Field::OnConveyor => s.on_conveyor,
            Field::Alive => s.alive,
            Field::AtGoal => s.at_goal,
            Field::Row | Field::Col => unreachable!("numeric field used as flag"),
        }
    }

    fn number(self, s: &State) -> i64 {
        match self {
            Field::Row => s.row as i64,
            Field::Col => s.col as i64,
            _ => unreachable!("flag field used as number"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Flag { field: Field, negated: bool },
    Compare { field: Field, cmp: Cmp, value: i64 },
}

impl Term {
    fn holds(&self, s: &State) -> bool {
        match *self {
            Term::Flag { field, negated } => field.flag(s) != negated,
            Term::Compare { field, cmp, value } => {
                let x = field.number(s);
                match cmp {
                    Cmp::Eq => x == value,
                    Cmp::Ne => x != value,
                    Cmp::Lt => x < value,
                    Cmp::Le => x <= value,
                    Cmp::Gt => x > value,
                    Cmp::Ge => x >= value,
                }
            }
        }
    }
}

/// Conjunction of conditions on symbolic state fields, e.g. `on_ladder & col = 9 & !has_key`.
///
/// Flags: `has_key`, `on_ladder`, `on_rope`, `on_conveyor`, `alive`, `at_goal` (optionally negated
/// with `!`). Numbers: `row`, `col` compared with `= != < <= > >=`. `true` is the empty conjunction.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePredicate {
    text: String,
    terms: Vec<Term>,
}

impl StatePredicate {
    pub fn holds(&self, s: &State) -> bool {
        self.terms.iter().all(|t| t.holds(s))
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for StatePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for StatePredicate {
    type Err = InstructionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| InstructionError::BadPredicate { text: text.to_string(), reason: reason.to_string() };
        let mut terms = Vec::new();
        for raw in text.split('&') {
            let term = raw.trim();
            if term.is_empty() {
                return Err(bad("empty conjunct"));
            }
            if term == "true" {
                continue;
            }
            let ops = [("<=", Cmp::Le), (">=", Cmp::Ge), ("!=", Cmp::Ne), ("=", Cmp::Eq), ("<", Cmp::Lt), (">", Cmp::Gt)];
            if let Some((sym, cmp)) = ops.iter().find(|(sym, _)| term.contains(sym)) {
                let (lhs, rhs) = term.split_once(sym).expect("operator present");
                let field = Field::parse(lhs.trim())?;
                if !field.is_numeric() {
                    return Err(bad("only row and col can be compared"));
                }
                let value = rhs.trim().parse::<i64>().map_err(|_| bad("comparison needs an integer"))?;
                terms.push(Term::Compare { field, cmp: *cmp, value });
            } else {
                let (negated, name) = match term.strip_prefix('!') {
                    Some(rest) => (true, rest.trim()),
                    None => (false, term),
                };
                let field = Field::parse(name)?;
                if field.is_numeric() {
                    return Err(bad("row and col need a comparison"));
                }
                terms.push(Term::Flag { field, negated });
            }
        }
        Ok(StatePredicate { text: text.trim().to_string(), terms })
    }
}

/// How a sentence's segment pattern relates to the most recent transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Completion {
    None,
    /// Exactly one of the two components completed.
    Partial,
    /// Every non-empty component completed.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSentence {
    pub id: String,
    pub text: String,
    /// Segment action pattern; its distinct actions form `C_a`.
    pub actions: Vec<Action>,
    /// Segment state pattern as predicate names; its distinct names form `C_s`.
    pub states: Vec<String>,
}

impl AtomicSentence {
    pub fn action_set(&self) -> BTreeSet<Action> {
        self.actions.iter().copied().collect()
    }

    pub fn state_set(&self) -> BTreeSet<String> {
        self.states.iter().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    name: String,
    predicates: BTreeMap<String, StatePredicate>,
    sentences: Vec<AtomicSentence>,
    temporal: LtlFormula,
    explicit_temporal: bool,
    /// `states` of each sentence resolved to predicates, to avoid map lookups while training.
    resolved: Vec<Vec<StatePredicate>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BindingFile {
    name: Option<String>,
    temporal: Option<String>,
    #[serde(default)]
    predicates: BTreeMap<String, String>,
    #[serde(default, rename = "sentence")]
    sentences: Vec<SentenceEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceEntry {
    id: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    actions: Vec<String>,
    #[serde(default)]
    states: Vec<String>,
}

pub fn done_prop(i: usize) -> String {
    format!("done_{}", i + 1)
}

pub fn action_prop(a: Action) -> &'static str {
    match a {
        Action::Left => "act_left",
        Action::Right => "act_right",
        Action::Up => "act_up",
        Action::Down => "act_down",
        Action::Jump => "act_jump",
        Action::JumpLeft => "act_jump_left",
        Action::JumpRight => "act_jump_right",
        Action::NoOp => "act_noop",
    }
}

impl Instruction {
    /// Validates and assembles an instruction. Without `temporal`, `C_t` is the in-order formula.
    pub fn new(
        name: &str,
        predicates: BTreeMap<String, StatePredicate>,
        sentences: Vec<AtomicSentence>,
        temporal: Option<LtlFormula>,
    ) -> Result<Instruction, InstructionError> {
        if sentences.is_empty() {
            return Err(InstructionError::NoSentences);
        }
        for pname in predicates.keys() {
            if !is_valid_atom(pname) || pname.starts_with("done_") || pname.starts_with("act_") {
                return Err(InstructionError::BadPredicateName(pname.clone()));
            }
        }
        let mut resolved = Vec::with_capacity(sentences.len());
        for s in &sentences {
            if s.is_empty() {
                return Err(InstructionError::EmptySentence(s.id.clone()));
            }
            if !s.actions.is_empty() && !s.states.is_empty() && s.actions.len() != s.states.len() {
                return Err(InstructionError::PatternLength { id: s.id.clone(), actions: s.actions.len(), states: s.states.len() });
            }
            let preds = s
                .states
                .iter()
                .map(|p| {
                    predicates.get(p).cloned().ok_or_else(|| InstructionError::UnknownPredicate {
                        sentence: s.id.clone(),
                        predicate: p.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            resolved.push(preds);
        }
        let explicit_temporal = temporal.is_some();
        let temporal = match temporal {
            Some(f) => {
                let known: BTreeSet<String> = (0..sentences.len())
                    .map(done_prop)
                    .chain(predicates.keys().cloned())
                    .chain(Action::ALL.iter().map(|a| action_prop(*a).to_string()))
                    .collect();
                if let Some(unknown) = f.atoms().into_iter().find(|a| !known.contains(a)) {
                    return Err(InstructionError::UnknownProposition(unknown));
                }
                f
            }
            None => default_order(sentences.len())?,
        };
        Ok(Instruction { name: name.to_string(), predicates, sentences, temporal, explicit_temporal, resolved })
    }

    pub fn parse(text: &str) -> Result<Instruction, InstructionError> {
        let file: BindingFile = toml::from_str(text).map_err(|e| InstructionError::Format(e.to_string()))?;
        let predicates = file
            .predicates
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.parse::<StatePredicate>()?)))
            .collect::<Result<BTreeMap<_, _>, InstructionError>>()?;
        let sentences = file
            .sentences
            .into_iter()
            .map(|e| {
                let actions = e
                    .actions
                    .iter()
                    .map(|a| a.parse::<Action>().map_err(|_| InstructionError::UnknownAction(a.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(AtomicSentence { id: e.id, text: e.text, actions, states: e.states })
            })
            .collect::<Result<Vec<_>, InstructionError>>()?;
        let temporal = file.temporal.as_deref().map(LtlFormula::parse).transpose()?;
        Instruction::new(file.name.as_deref().unwrap_or("instruction"), predicates, sentences, temporal)
    }

    pub fn load(path: &Path) -> Result<Instruction, InstructionError> {
        let text = std::fs::read_to_string(path).map_err(|e| InstructionError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Instruction::parse(&text)
    }

    /// The shipped instruction for a built-in room.
    pub fn builtin(room: &str) -> Result<Instruction, InstructionError> {
        let text = match room.to_ascii_lowercase().as_str() {
            "a1" => include_str!("../data/instructions/a1.toml"),
            "a2" => include_str!("../data/instructions/a2.toml"),
            "b3" => include_str!("../data/instructions/b3.toml"),
            "chain" => include_str!("../data/instructions/chain.toml"),
            _ => return Err(InstructionError::UnknownInstruction(room.to_string())),
        };
        Instruction::parse(text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sentences(&self) -> &[AtomicSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn predicates(&self) -> &BTreeMap<String, StatePredicate> {
        &self.predicates
    }

    pub fn temporal(&self) -> &LtlFormula {
        &self.temporal
    }

    /// Union of every sentence's action constraint.
    pub fn action_constraint(&self) -> BTreeSet<Action> {
        self.sentences.iter().flat_map(|s| s.actions.iter().copied()).collect()
    }

    /// Union of every sentence's state constraint, resolved to predicates.
    pub fn state_constraint(&self) -> Vec<&StatePredicate> {
        let names: BTreeSet<&String> = self.sentences.iter().flat_map(|s| s.states.iter()).collect();
        names.into_iter().map(|n| &self.predicates[n]).collect()
    }

    /// Completion of sentence `i` at the last transition of `prefix`.
    pub fn completion_at(&self, i: usize, prefix: &[Transition]) -> Completion {
        let sentence = &self.sentences[i];
        let n = prefix.len();
        let actions_match = !sentence.actions.is_empty()
            && n >= sentence.actions.len()
            && prefix[n - sentence.actions.len()..].iter().zip(&sentence.actions).all(|(t, a)| t.action == *a);
        let preds = &self.resolved[i];
        let states_match = !preds.is_empty()
            && n >= preds.len()
            && prefix[n - preds.len()..].iter().zip(preds).all(|(t, p)| p.holds(&t.next_state));
        let full = (sentence.actions.is_empty() || actions_match) && (preds.is_empty() || states_match);
        if full {
            Completion::Full
        } else if actions_match || states_match {
            Completion::Partial
        } else {
            Completion::None
        }
    }

    /// Completion of every sentence at every step: `out[t][i]`.
    pub fn completion_table(&self, traj: &Trajectory) -> Vec<Vec<Completion>> {
        (1..=traj.len())
            .map(|t| (0..self.len()).map(|i| self.completion_at(i, &traj.transitions[..t])).collect())
            .collect()
    }

    /// Step index of each sentence's first full completion.
    pub fn first_full_completions(&self, traj: &Trajectory) -> Vec<Option<usize>> {
        let mut first = vec![None; self.len()];
        for t in 0..traj.len() {
            for (i, slot) in first.iter_mut().enumerate() {
                if slot.is_none() && self.completion_at(i, &traj.transitions[..=t]) == Completion::Full {
                    *slot = Some(t);
                }
            }
        }
        first
    }

    /// Same instruction with `C_t` replaced by the in-order formula over the current sentences.
    fn with_default_order(mut self) -> Result<Instruction, InstructionError> {
        self.temporal = default_order(self.sentences.len())?;
        self.explicit_temporal = false;
        Ok(self)
    }

    fn rebuild(&self, keep: &[usize], strip_actions: bool) -> Result<Instruction, InstructionError> {
        let sentences: Vec<AtomicSentence> = keep
            .iter()
            .map(|&i| {
                let mut s = self.sentences[i].clone();
                if strip_actions {
                    s.actions.clear();
                }
                s
            })
            .collect();
        let resolved = keep.iter().map(|&i| self.resolved[i].clone()).collect();
        Instruction {
            name: self.name.clone(),
            predicates: self.predicates.clone(),
            sentences,
            temporal: LtlFormula::True,
            explicit_temporal: false,
            resolved,
        }
        .with_default_order()
    }
}

fn default_order(m: usize) -> Result<LtlFormula, LtlError> {
    let props: Vec<String> = (0..m).map(done_prop).collect();
    compile_order(&props)
}

/// Proposition trace of a trajectory, one set per transition.
///
/// Each set holds the instruction's predicates true on `next_state`, the action proposition of the
/// taken action when that action appears in some `C_a`, and `done_i` at sentence `i`'s first full
/// completion.
pub fn label_events(traj: &Trajectory, instruction: &Instruction) -> EventTrace {
    let used_actions = instruction.action_constraint();
    let first = instruction.first_full_completions(traj);
    let mut steps: Vec<BTreeSet<String>> = traj
        .transitions
        .iter()
        .map(|t| {
            let mut set: BTreeSet<String> = instruction
                .predicates
                .iter()
                .filter(|(_, p)| p.holds(&t.next_state))
                .map(|(n, _)| n.clone())
                .collect();
            if used_actions.contains(&t.action) {
                set.insert(action_prop(t.action).to_string());
            }
            set
        })
        .collect();
    for (i, step) in first.iter().enumerate() {
        if let Some(t) = step {
            steps[*t].insert(done_prop(i));
        }
    }
    EventTrace::new(steps)
}

/// Every action of `c_a` is taken somewhere in the trajectory.
pub fn check_action_constraint(traj: &Trajectory, c_a: &BTreeSet<Action>) -> bool {
    c_a.iter().all(|a| traj.transitions.iter().any(|t| t.action == *a))
}

/// Every predicate of `c_s` holds on some visited state, the initial state included.
pub fn check_state_constraint(traj: &Trajectory, c_s: &[&StatePredicate]) -> bool {
    c_s.iter().all(|p| {
        traj.initial_state().is_some_and(|s| p.holds(&s)) || traj.transitions.iter().any(|t| p.holds(&t.next_state))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchLevel {
    Full,
    Partial,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub action_ok: bool,
    pub state_ok: bool,
    pub temporal_ok: bool,
    /// First full completion step per sentence.
    pub completions: Vec<Option<usize>>,
    pub level: MatchLevel,
}

pub fn match_level(traj: &Trajectory, instruction: &Instruction) -> MatchReport {
    let action_ok = check_action_constraint(traj, &instruction.action_constraint());
    let state_ok = check_state_constraint(traj, &instruction.state_constraint());
    let completions = instruction.first_full_completions(traj);
    let temporal_ok = !traj.is_empty() && instruction.temporal.eval(&label_events(traj, instruction), 0).unwrap_or(false);
    let progressed = (1..=traj.len())
        .any(|t| (0..instruction.len()).any(|i| instruction.completion_at(i, &traj.transitions[..t]) != Completion::None));
    let level = if action_ok && state_ok && temporal_ok {
        MatchLevel::Full
    } else if !(action_ok || state_ok || temporal_ok) || !progressed {
        MatchLevel::None
    } else {
        MatchLevel::Partial
    };
    MatchReport { action_ok, state_ok, temporal_ok, completions, level }
}

/// Skips intermediate sentences: keeps indices that are multiples of `n` plus the last sentence.
/// Instructions with fewer than three sentences come back unchanged.
pub fn degrade_type1(instruction: &Instruction, n: usize) -> Result<Instruction, InstructionError> {
    let m = instruction.len();
    if m < 3 || n < 2 {
        return Ok(instruction.clone());
    }
    let keep: Vec<usize> = (0..m).filter(|i| i % n == 0 || *i == m - 1).collect();
    instruction.rebuild(&keep, false)
}

/// Drops the action dimension: every `C_a` becomes empty and sentences left without any pattern
/// are removed.
pub fn degrade_type2(instruction: &Instruction) -> Result<Instruction, InstructionError> {
    let keep: Vec<usize> = (0..instruction.len()).filter(|&i| !instruction.sentences[i].states.is_empty()).collect();
    if keep.len() == instruction.len() && instruction.sentences.iter().all(|s| s.actions.is_empty()) {
        return Ok(instruction.clone());
    }
    if keep.is_empty() {
        return Err(InstructionError::NoSentences);
    }
    instruction.rebuild(&keep, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Room, RoomSpec};
    use proptest::prelude::*;

    fn a2() -> (Room, Instruction) {
        (Room::builtin("a2").unwrap(), Instruction::builtin("a2").unwrap())
    }

    fn preds(list: &[(&str, &str)]) -> BTreeMap<String, StatePredicate> {
        list.iter().map(|(k, v)| (k.to_string(), v.parse().unwrap())).collect()
    }

    #[test]
    fn predicate_parsing() {
        let p: StatePredicate = "on_ladder & col = 9 & !has_key".parse().unwrap();
        let room = Room::builtin("a2").unwrap();
        let s = room.transition(&room.initial_state(), Action::Down);
        assert!(p.holds(&s));
        assert_eq!("wings".parse::<StatePredicate>(), Err(InstructionError::UnknownField("wings".into())));
        assert!("row".parse::<StatePredicate>().is_err());
        assert!("has_key > 2".parse::<StatePredicate>().is_err());
        assert!("true".parse::<StatePredicate>().unwrap().holds(&s));
    }

    #[test]
    fn two_downs_complete_the_ladder_sentence() {
        let grid = "\
S--
H..
H..
-G-";
        let room = Room::new(RoomSpec::from_grid("ladder", grid).unwrap()).unwrap();
        let instr = Instruction::new(
            "ladder",
            preds(&[("on_ladder", "on_ladder"), ("bottom", "row = 3")]),
            vec![AtomicSentence {
                id: "climb".into(),
                text: "go down that ladder".into(),
                actions: vec![Action::Down, Action::Down, Action::Down],
                states: vec!["on_ladder".into(), "on_ladder".into(), "bottom".into()],
            }],
            None,
        )
        .unwrap();
        let traj = room.replay(&[Action::Down, Action::Down, Action::Down]);
        let trace = label_events(&traj, &instr);
        assert_eq!(trace.first_index("done_1"), Some(2));
        assert!(trace.holds(0, "act_down"));
        assert_eq!(match_level(&traj, &instr).level, MatchLevel::Full);
    }

    #[test]
    fn no_bindings_gives_empty_sets() {
        let room = Room::new(RoomSpec::from_grid("c", "S--G").unwrap()).unwrap();
        let instr = Instruction::new(
            "only_noop",
            BTreeMap::new(),
            vec![AtomicSentence { id: "wait".into(), text: String::new(), actions: vec![Action::NoOp], states: vec![] }],
            None,
        )
        .unwrap();
        let traj = room.replay(&[Action::Right, Action::Right]);
        let trace = label_events(&traj, &instr);
        assert!(trace.steps.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn scripted_solution_completes_in_order() {
        let (room, instr) = a2();
        let traj = room.replay(&room.spec().solution);
        assert!(traj.won());
        let trace = label_events(&traj, &instr);
        let steps: Vec<usize> = (0..instr.len()).map(|i| trace.first_index(&done_prop(i)).unwrap()).collect();
        assert!(steps.windows(2).all(|w| w[0] <= w[1]), "{steps:?}");
        assert_eq!(match_level(&traj, &instr).level, MatchLevel::Full);
    }

    #[test]
    fn shortcut_is_not_the_instruction() {
        let (room, instr) = a2();
        let traj = room.replay(&room.spec().shortcut);
        assert!(traj.won());
        assert_ne!(match_level(&traj, &instr).level, MatchLevel::Full);
    }

    #[test]
    fn constraint_checks() {
        let (room, _) = a2();
        let traj = room.replay(&[Action::Down, Action::Down]);
        assert!(check_action_constraint(&traj, &BTreeSet::new()));
        assert!(!check_action_constraint(&traj, &[Action::Down, Action::Right].into_iter().collect()));
        assert!(check_state_constraint(&traj, &[]));
        let rope: StatePredicate = "on_rope".parse().unwrap();
        assert!(!check_state_constraint(&traj, &[&rope]));
    }

    #[test]
    fn out_of_order_is_partial() {
        let room = Room::new(RoomSpec::from_grid("c", "S---G").unwrap()).unwrap();
        let instr = Instruction::new(
            "order",
            BTreeMap::new(),
            vec![
                AtomicSentence { id: "a".into(), text: String::new(), actions: vec![Action::Right], states: vec![] },
                AtomicSentence { id: "b".into(), text: String::new(), actions: vec![Action::NoOp], states: vec![] },
            ],
            None,
        )
        .unwrap();
        let traj = room.replay(&[Action::NoOp, Action::Right]);
        let report = match_level(&traj, &instr);
        assert!(report.action_ok && report.state_ok);
        assert!(!report.temporal_ok);
        assert_eq!(report.level, MatchLevel::Partial);
    }

    #[test]
    fn only_state_constraint_is_partial() {
        let room = Room::new(RoomSpec::from_grid("c", "S---G").unwrap()).unwrap();
        let instr = Instruction::new(
            "walk",
            preds(&[("far", "col >= 2")]),
            vec![AtomicSentence { id: "a".into(), text: String::new(), actions: vec![Action::Right, Action::Right], states: vec!["far".into(), "far".into()] }],
            None,
        )
        .unwrap();
        // reaches col 2 and 3 by jumping, never pressing Right
        let traj = room.replay(&[Action::JumpRight, Action::NoOp]);
        let report = match_level(&traj, &instr);
        assert!(report.state_ok && !report.action_ok && !report.temporal_ok);
        assert_eq!(report.level, MatchLevel::Partial);
        let idle = room.replay(&[Action::NoOp]);
        assert_eq!(match_level(&idle, &instr).level, MatchLevel::None);
    }

    #[test]
    fn validation_errors() {
        let s = |a: Vec<Action>, st: Vec<&str>| AtomicSentence { id: "s".into(), text: String::new(), actions: a, states: st.into_iter().map(String::from).collect() };
        assert_eq!(Instruction::new("x", BTreeMap::new(), vec![], None), Err(InstructionError::NoSentences));
        assert_eq!(Instruction::new("x", BTreeMap::new(), vec![s(vec![], vec![])], None), Err(InstructionError::EmptySentence("s".into())));
        assert!(matches!(Instruction::new("x", BTreeMap::new(), vec![s(vec![Action::Up], vec!["p"])], None), Err(InstructionError::UnknownPredicate { .. })));
        let p = preds(&[("p", "alive")]);
        assert!(matches!(Instruction::new("x", p.clone(), vec![s(vec![Action::Up, Action::Up], vec!["p"])], None), Err(InstructionError::PatternLength { .. })));
        let bad_t = LtlFormula::parse("F done_2").unwrap();
        assert!(matches!(Instruction::new("x", p, vec![s(vec![Action::Up], vec!["p"])], Some(bad_t)), Err(InstructionError::UnknownProposition(_))));
        assert!(matches!(Instruction::parse("[[sentence]]\nid='a'\nactions=['Fly']"), Err(InstructionError::UnknownAction(_))));
    }

    fn five() -> Instruction {
        let sentences = (0..5)
            .map(|i| AtomicSentence { id: format!("s{}", i + 1), text: String::new(), actions: vec![Action::ALL[i]], states: vec![] })
            .collect();
        Instruction::new("five", BTreeMap::new(), sentences, None).unwrap()
    }

    #[test]
    fn type1_keeps_strided_and_last() {
        let d = degrade_type1(&five(), 2).unwrap();
        let ids: Vec<&str> = d.sentences().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s1", "s3", "s5"]);
        assert_eq!(d.temporal(), &compile_order(&["done_1", "done_2", "done_3"]).unwrap());
        let four = degrade_type1(&five(), 3).unwrap();
        assert_eq!(four.sentences().iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["s1", "s4", "s5"]);
    }

    #[test]
    fn type1_on_two_sentences_is_identity() {
        let (_, instr) = a2();
        let two = degrade_type1(&five(), 2).unwrap();
        let two = two.rebuild(&[0, 1], false).unwrap();
        assert_eq!(degrade_type1(&two, 2).unwrap(), two);
        let d = degrade_type1(&instr, 2).unwrap();
        assert!(d.sentences().iter().all(|s| s.id != "walk_right_conveyor"));
        assert!(instr.sentences().iter().any(|s| s.id == "walk_right_conveyor"));
    }

    #[test]
    fn type2_strips_actions() {
        let (room, instr) = a2();
        let d = degrade_type2(&instr).unwrap();
        assert!(d.sentences().iter().all(|s| s.actions.is_empty()));
        assert_eq!(d.state_constraint().len(), instr.state_constraint().len());
        assert_eq!(degrade_type2(&d).unwrap(), d);
        let traj = room.replay(&room.spec().solution);
        assert!(match_level(&traj, &d).action_ok);
        assert_eq!(match_level(&traj, &d).level, MatchLevel::Full);
        // sentences with actions only disappear
        assert!(matches!(degrade_type2(&five()), Err(InstructionError::NoSentences)));
    }

    fn arb_actions() -> impl Strategy<Value = Vec<Action>> {
        prop::collection::vec(prop::sample::select(Action::ALL.to_vec()), 0..40)
    }

    proptest! {
        #[test]
        fn action_check_matches_scan(script in arb_actions(), set in prop::collection::btree_set(prop::sample::select(Action::ALL.to_vec()), 0..4)) {
            let room = Room::builtin("a2").unwrap();
            let traj = room.replay(&script);
            let taken: Vec<Action> = traj.actions().collect();
            let oracle = set.iter().all(|a| taken.contains(a));
            prop_assert_eq!(check_action_constraint(&traj, &set), oracle);
        }

        #[test]
        fn state_check_matches_scan(script in arb_actions(), which in prop::collection::vec(0usize..4, 0..3)) {
            let room = Room::builtin("a2").unwrap();
            let traj = room.replay(&script);
            let all: Vec<StatePredicate> = ["on_ladder", "on_conveyor", "row >= 4 & col < 9", "has_key"].iter().map(|p| p.parse().unwrap()).collect();
            let chosen: Vec<&StatePredicate> = which.iter().map(|i| &all[*i]).collect();
            let mut visited = vec![room.initial_state()];
            visited.extend(traj.transitions.iter().map(|t| t.next_state));
            let oracle = chosen.iter().all(|p| visited.iter().any(|s| p.holds(s)));
            prop_assert_eq!(check_state_constraint(&traj, &chosen), oracle);
        }

        #[test]
        fn constraint_checks_are_monotone(script in arb_actions(), extra in arb_actions()) {
            let (room, instr) = a2();
            let short = room.replay(&script);
            let mut joined = script.clone();
            joined.extend(extra);
            let long = room.replay(&joined);
            let c_a = instr.action_constraint();
            let c_s = instr.state_constraint();
            prop_assert!(!check_action_constraint(&short, &c_a) || check_action_constraint(&long, &c_a));
            prop_assert!(!check_state_constraint(&short, &c_s) || check_state_constraint(&long, &c_s));
        }

        #[test]
        fn type2_is_idempotent(stride in 2usize..4) {
            let (_, instr) = a2();
            let base = degrade_type1(&instr, stride).unwrap();
            let once = degrade_type2(&base).unwrap();
            prop_assert_eq!(degrade_type2(&once).unwrap(), once);
        }
    }
}
