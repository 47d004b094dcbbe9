//! Simulated language rewards, subgoal potentials and reward-stream mixing.
//!
//! Three matching rules turn sentence completions into a per-step language reward:
//!
//! - [`RuleKind::FullyMatched`] pays `r_full` when the active sentence has its first full
//!   completion, then moves the pointer on. Nothing else is ever paid.
//! - [`RuleKind::PartiallyMatched`] also accepts a completion of only the action or only the state
//!   component of the active sentence (paying `r_partial`), still moving strictly in order.
//! - [`RuleKind::RelaxedOrdering`] accepts any not-yet-credited sentence. Only a first full
//!   completion that respects the order pays `r_full`, everything else pays `r_partial`.
//!
//! Each sentence is credited at most once per episode and the per-step sum is clipped to `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruction::{Completion, Instruction};
use crate::mdp::{Trajectory, Transition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapingError {
    #[error("discount {0} outside (0, 1]")]
    BadGamma(f64),
    #[error("potential scale must be positive, got {0}")]
    BadAlpha(f64),
    #[error("partial reward {partial} must be below full reward {full}")]
    BadMagnitudes { full: f64, partial: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    FullyMatched,
    PartiallyMatched,
    RelaxedOrdering,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRule {
    pub kind: RuleKind,
    pub r_full: f64,
    pub r_partial: f64,
}

impl RewardRule {
    pub fn new(kind: RuleKind) -> RewardRule {
        RewardRule { kind, r_full: 1.0, r_partial: 0.5 }
    }

    pub fn with_magnitudes(kind: RuleKind, r_full: f64, r_partial: f64) -> Result<RewardRule, ShapingError> {
        if !(r_partial < r_full) || r_partial < 0.0 {
            return Err(ShapingError::BadMagnitudes { full: r_full, partial: r_partial });
        }
        Ok(RewardRule { kind, r_full, r_partial })
    }
}

/// Per-episode matching state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgressState {
    /// Index of the active sentence; equals the sentence count once all are credited in order.
    pub pointer: usize,
    /// How each sentence was credited, `Completion::None` while uncredited.
    pub credited: Vec<Completion>,
    /// Whether each sentence has already had a full completion this episode.
    pub seen_full: Vec<bool>,
    /// Number of credited sentences.
    pub c: usize,
}

impl ProgressState {
    pub fn new(n_sentences: usize) -> ProgressState {
        ProgressState { pointer: 0, credited: vec![Completion::None; n_sentences], seen_full: vec![false; n_sentences], c: 0 }
    }

    pub fn is_complete(&self) -> bool {
        self.c == self.credited.len()
    }

    fn credit(&mut self, i: usize, how: Completion) {
        debug_assert_eq!(self.credited[i], Completion::None);
        self.credited[i] = how;
        self.c += 1;
    }
}

/// Language reward for the last transition of `prefix`, plus the updated progress.
pub fn lrs_step_reward(
    rule: &RewardRule,
    prefix: &[Transition],
    instruction: &Instruction,
    progress: &ProgressState,
) -> (f64, ProgressState) {
    let mut next = progress.clone();
    if prefix.is_empty() {
        return (0.0, next);
    }
    let m = instruction.len();
    let now: Vec<Completion> = (0..m).map(|i| instruction.completion_at(i, prefix)).collect();
    let first_full = |i: usize| now[i] == Completion::Full && !progress.seen_full[i];
    let mut reward = 0.0;

    match rule.kind {
        RuleKind::FullyMatched => {
            while next.pointer < m && first_full(next.pointer) {
                next.credit(next.pointer, Completion::Full);
                next.pointer += 1;
                reward += rule.r_full;
            }
        }
        RuleKind::PartiallyMatched => {
            while next.pointer < m && now[next.pointer] != Completion::None {
                let p = next.pointer;
                if first_full(p) {
                    next.credit(p, Completion::Full);
                    reward += rule.r_full;
                } else {
                    next.credit(p, Completion::Partial);
                    reward += rule.r_partial;
                }
                next.pointer += 1;
            }
        }
        RuleKind::RelaxedOrdering => {
            for i in 0..m {
                if next.credited[i] != Completion::None || now[i] == Completion::None {
                    continue;
                }
                let lower_done = next.credited[..i].iter().all(|c| *c != Completion::None);
                let higher_clear = next.credited[i + 1..].iter().all(|c| *c == Completion::None);
                if first_full(i) && lower_done && higher_clear {
                    next.credit(i, Completion::Full);
                    reward += rule.r_full;
                } else {
                    next.credit(i, Completion::Partial);
                    reward += rule.r_partial;
                }
            }
            next.pointer = next.credited.iter().position(|c| *c == Completion::None).unwrap_or(m);
        }
    }

    for (i, c) in now.iter().enumerate() {
        if *c == Completion::Full {
            next.seen_full[i] = true;
        }
    }
    (reward.clamp(0.0, 1.0), next)
}

/// Language rewards for every step of a finished trajectory.
pub fn episode_lang_rewards(rule: &RewardRule, traj: &Trajectory, instruction: &Instruction) -> Vec<f64> {
    let mut progress = ProgressState::new(instruction.len());
    (1..=traj.len())
        .map(|t| {
            let (r, p) = lrs_step_reward(rule, &traj.transitions[..t], instruction, &progress);
            progress = p;
            r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig { alpha: 1.0, gamma: 0.99 }
    }
}

impl PotentialConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<PotentialConfig, ShapingError> {
        if !(alpha > 0.0) {
            return Err(ShapingError::BadAlpha(alpha));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(ShapingError::BadGamma(gamma));
        }
        Ok(PotentialConfig { alpha, gamma })
    }
}

/// Subgoal potential `alpha * c`.
pub fn potential(progress: &ProgressState, config: &PotentialConfig) -> f64 {
    config.alpha * progress.c as f64
}

/// `phi_cur - phi_prev / gamma`.
pub fn shaping_term(phi_prev: f64, phi_cur: f64, gamma: f64) -> Result<f64, ShapingError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ShapingError::BadGamma(gamma));
    }
    Ok(phi_cur - phi_prev / gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCoefficients {
    pub env_lang: f64,
    pub intrinsic: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        RewardCoefficients { env_lang: 3.0, intrinsic: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardClips {
    pub env: (f64, f64),
    pub lang: (f64, f64),
    pub intrinsic: (f64, f64),
}

impl Default for RewardClips {
    fn default() -> Self {
        RewardClips { env: (0.0, 1.0), lang: (0.0, 1.0), intrinsic: (0.0, 5.0) }
    }
}

/// Clips each stream, then mixes: `env_lang * (env + lang) + intrinsic * int`.
pub fn combine_rewards(env_r: f64, lang_r: f64, int_r: f64, coef: &RewardCoefficients, clips: &RewardClips) -> f64 {
    let env = env_r.clamp(clips.env.0, clips.env.1);
    let lang = lang_r.clamp(clips.lang.0, clips.lang.1);
    let int = int_r.clamp(clips.intrinsic.0, clips.intrinsic.1);
    coef.env_lang * (env + lang) + coef.intrinsic * int
}

/// How the language stream is produced during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrsMode {
    Off,
    Rule(RewardRule),
    /// Potential-based shaping on the in-order subgoal count. Not clipped, since the shaping term
    /// is negative between subgoals.
    Potential(PotentialConfig),
}

/// Stateful per-episode language reward generator.
#[derive(Debug, Clone)]
pub struct Shaper {
    mode: LrsMode,
    progress: ProgressState,
    phi_prev: f64,
}

impl Shaper {
    pub fn new(mode: LrsMode, n_sentences: usize) -> Shaper {
        Shaper { mode, progress: ProgressState::new(n_sentences), phi_prev: 0.0 }
    }

    pub fn reset(&mut self) {
        self.progress = ProgressState::new(self.progress.credited.len());
        self.phi_prev = 0.0;
    }

    pub fn progress(&self) -> &ProgressState {
        &self.progress
    }

    /// Reward for the last transition of `prefix` (the current episode so far).
    pub fn step(&mut self, prefix: &[Transition], instruction: &Instruction) -> f64 {
        match self.mode {
            LrsMode::Off => 0.0,
            LrsMode::Rule(rule) => {
                let (r, p) = lrs_step_reward(&rule, prefix, instruction, &self.progress);
                self.progress = p;
                r
            }
            LrsMode::Potential(cfg) => {
                let rule = RewardRule::new(RuleKind::FullyMatched);
                let (_, p) = lrs_step_reward(&rule, prefix, instruction, &self.progress);
                self.progress = p;
                let phi = potential(&self.progress, &cfg);
                let f = shaping_term(self.phi_prev, phi, cfg.gamma).expect("validated gamma");
                self.phi_prev = phi;
                f
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruction::{match_level, AtomicSentence, MatchLevel};
    use crate::mdp::{Action, Room, RoomSpec};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn a2() -> (Room, Instruction) {
        (Room::builtin("a2").unwrap(), Instruction::builtin("a2").unwrap())
    }

    fn total(rule: RuleKind, traj: &Trajectory, instr: &Instruction) -> f64 {
        episode_lang_rewards(&RewardRule::new(rule), traj, instr).iter().sum()
    }

    #[test]
    fn rule1_pays_full_solution() {
        let (room, instr) = a2();
        let traj = room.replay(&room.spec().solution);
        let rewards = episode_lang_rewards(&RewardRule::new(RuleKind::FullyMatched), &traj, &instr);
        let paid: Vec<f64> = rewards.iter().copied().filter(|r| *r > 0.0).collect();
        assert_eq!(paid, vec![1.0; instr.len()]);
        assert_eq!(*rewards.last().unwrap(), 1.0);
        for rule in [RuleKind::PartiallyMatched, RuleKind::RelaxedOrdering] {
            assert_eq!(total(rule, &traj, &instr), instr.len() as f64);
        }
    }

    #[test]
    fn rule2_pays_half_for_state_component() {
        let room = Room::new(RoomSpec::from_grid("c", "S---G").unwrap()).unwrap();
        let p: BTreeMap<_, _> = [("far".to_string(), "col >= 2".parse().unwrap())].into();
        let instr = Instruction::new(
            "walk",
            p,
            vec![AtomicSentence { id: "a".into(), text: String::new(), actions: vec![Action::Right, Action::Right], states: vec!["far".into(), "far".into()] }],
            None,
        )
        .unwrap();
        let traj = room.replay(&[Action::JumpRight, Action::NoOp]);
        let r = episode_lang_rewards(&RewardRule::new(RuleKind::PartiallyMatched), &traj, &instr);
        assert_eq!(r, vec![0.0, 0.5]);
        assert_eq!(total(RuleKind::FullyMatched, &traj, &instr), 0.0);
    }

    #[test]
    fn rule3_rewards_last_sentence_first() {
        let (room, instr) = a2();
        // near the start: press Up (blocked), then step left
        let traj = room.replay(&[Action::Up, Action::Left, Action::Right, Action::Up, Action::Left]);
        let r3 = episode_lang_rewards(&RewardRule::new(RuleKind::RelaxedOrdering), &traj, &instr);
        assert_eq!(r3[1], 0.5);
        // the last sentence is paid once even though its action pattern repeats
        assert_eq!(r3[4], 0.0);
        assert_eq!(total(RuleKind::FullyMatched, &traj, &instr), 0.0);
        assert_eq!(total(RuleKind::PartiallyMatched, &traj, &instr), 0.0);
    }

    #[test]
    fn potentials_and_shaping_terms() {
        let mut p = ProgressState::new(4);
        assert_eq!(potential(&p, &PotentialConfig::default()), 0.0);
        p.c = 2;
        assert_eq!(potential(&p, &PotentialConfig::new(1.0, 0.99).unwrap()), 2.0);
        p.c = 3;
        assert_eq!(potential(&p, &PotentialConfig::new(0.5, 0.99).unwrap()), 1.5);
        assert_eq!(shaping_term(0.0, 1.0, 0.99).unwrap(), 1.0);
        assert_eq!(shaping_term(1.3, 1.3, 1.0).unwrap(), 0.0);
        assert!((shaping_term(1.0, 2.0, 0.99).unwrap() - 0.989_898_989_9).abs() < 1e-9);
        assert_eq!(shaping_term(1.0, 2.0, 0.0), Err(ShapingError::BadGamma(0.0)));
        assert!(PotentialConfig::new(0.0, 0.9).is_err());
    }

    #[test]
    fn combine_examples() {
        let (c, k) = (RewardCoefficients::default(), RewardClips::default());
        assert_eq!(combine_rewards(1.0, 0.0, 0.0, &c, &k), 3.0);
        assert_eq!(combine_rewards(0.0, 0.0, 7.0, &c, &k), 5.0);
        assert_eq!(combine_rewards(0.0, 0.0, 0.0, &c, &k), 0.0);
        assert_eq!(combine_rewards(2.0, -1.0, 0.0, &c, &k), 3.0);
    }

    #[test]
    fn magnitude_invariant() {
        assert!(RewardRule::with_magnitudes(RuleKind::PartiallyMatched, 1.0, 1.0).is_err());
        assert!(RewardRule::with_magnitudes(RuleKind::PartiallyMatched, 1.0, 0.3).is_ok());
    }

    fn chain_instruction() -> (Room, Instruction) {
        (Room::builtin("chain").unwrap(), Instruction::builtin("chain").unwrap())
    }

    /// Every action sequence of length up to 6 over a reduced alphabet in the chain room.
    fn all_sequences(alphabet: &[Action], max_len: usize) -> Vec<Vec<Action>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for seq in &frontier {
                for a in alphabet {
                    let mut s: Vec<Action> = seq.clone();
                    s.push(*a);
                    next.push(s);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn dominance_by_enumeration() {
        let (room, instr) = chain_instruction();
        let clean = room.replay(&room.spec().solution);
        assert_eq!(match_level(&clean, &instr).level, MatchLevel::Full);
        for rule in [RuleKind::FullyMatched, RuleKind::PartiallyMatched, RuleKind::RelaxedOrdering] {
            let full = total(rule, &clean, &instr);
            assert_eq!(full, instr.len() as f64);
            for seq in all_sequences(&[Action::Left, Action::Right, Action::JumpRight, Action::NoOp], 6) {
                let traj = room.replay(&seq);
                if match_level(&traj, &instr).level != MatchLevel::Full {
                    assert!(total(rule, &traj, &instr) < full, "{rule:?} {seq:?}");
                }
            }
        }
    }

    #[test]
    fn rule1_silence_by_enumeration() {
        let (room, instr) = chain_instruction();
        for seq in all_sequences(&[Action::Left, Action::Right, Action::JumpRight, Action::NoOp], 6) {
            let traj = room.replay(&seq);
            let total_r = total(RuleKind::FullyMatched, &traj, &instr);
            if match_level(&traj, &instr).level != MatchLevel::Full {
                assert!(total_r < instr.len() as f64);
            } else {
                assert_eq!(total_r, instr.len() as f64);
            }
        }
    }

    fn arb_script() -> impl Strategy<Value = Vec<Action>> {
        prop::collection::vec(prop::sample::select(Action::ALL.to_vec()), 1..80)
    }

    proptest! {
        #[test]
        fn once_only_and_clipped(script in arb_script(), k in 0usize..3) {
            let (room, instr) = a2();
            let traj = room.replay(&script);
            let rule = RewardRule::new([RuleKind::FullyMatched, RuleKind::PartiallyMatched, RuleKind::RelaxedOrdering][k]);
            let mut progress = ProgressState::new(instr.len());
            for t in 1..=traj.len() {
                let (r, p) = lrs_step_reward(&rule, &traj.transitions[..t], &instr, &progress);
                prop_assert!((0.0..=1.0).contains(&r));
                // credited sentences never get uncredited, and c counts them
                for i in 0..instr.len() {
                    prop_assert!(progress.credited[i] == Completion::None || p.credited[i] == progress.credited[i]);
                }
                prop_assert_eq!(p.c, p.credited.iter().filter(|c| **c != Completion::None).count());
                prop_assert!(p.pointer >= progress.pointer);
                progress = p;
            }
            let total_r: f64 = episode_lang_rewards(&rule, &traj, &instr).iter().sum();
            prop_assert!(total_r <= instr.len() as f64 * rule.r_full + 1e-12);
        }

        #[test]
        fn rule1_pays_only_along_matching_prefixes(script in arb_script()) {
            // at every paying step the prefix fully matches the sub-instruction of credited sentences
            let (room, instr) = a2();
            let traj = room.replay(&script);
            let rule = RewardRule::new(RuleKind::FullyMatched);
            let mut progress = ProgressState::new(instr.len());
            for t in 1..=traj.len() {
                let (r, p) = lrs_step_reward(&rule, &traj.transitions[..t], &instr, &progress);
                progress = p;
                if r > 0.0 {
                    let keep: Vec<usize> = (0..progress.c).collect();
                    let sub = sub_instruction(&instr, &keep);
                    let prefix = Trajectory { transitions: traj.transitions[..t].to_vec() };
                    prop_assert_eq!(match_level(&prefix, &sub).level, MatchLevel::Full);
                }
            }
            let credited = progress.c;
            let level = match_level(&traj, &instr).level;
            prop_assert_eq!(credited == instr.len(), level == MatchLevel::Full);
        }

        #[test]
        fn pointer_matcher_agrees_with_temporal_full(script in arb_script()) {
            let (room, instr) = a2();
            let traj = room.replay(&script);
            let r1 = total(RuleKind::FullyMatched, &traj, &instr);
            let full = match_level(&traj, &instr).level == MatchLevel::Full;
            prop_assert_eq!(r1 == instr.len() as f64, full);
        }

        #[test]
        fn telescoping(phis in prop::collection::vec(0u32..6, 1..60), gamma in 0.5f64..=1.0) {
            let mut prev = 0.0;
            let mut sum = 0.0;
            for (t, c) in phis.iter().enumerate() {
                let cur = *c as f64;
                sum += gamma.powi(t as i32) * shaping_term(prev, cur, gamma).unwrap();
                prev = cur;
            }
            let t_last = phis.len() - 1;
            let expected = gamma.powi(t_last as i32) * prev;
            prop_assert!((sum - expected).abs() < 1e-10);
        }
    }

    fn sub_instruction(instr: &Instruction, keep: &[usize]) -> Instruction {
        let sentences = keep.iter().map(|i| instr.sentences()[*i].clone()).collect();
        Instruction::new("sub", instr.predicates().clone(), sentences, None).unwrap()
    }

    #[test]
    fn potential_mode_telescopes_over_solution() {
        let (room, instr) = a2();
        let traj = room.replay(&room.spec().solution);
        let cfg = PotentialConfig::new(1.0, 0.99).unwrap();
        let mut shaper = Shaper::new(LrsMode::Potential(cfg), instr.len());
        let mut sum = 0.0;
        for t in 1..=traj.len() {
            sum += cfg.gamma.powi(t as i32 - 1) * shaper.step(&traj.transitions[..t], &instr);
        }
        let expected = cfg.gamma.powi(traj.len() as i32 - 1) * instr.len() as f64;
        assert!((sum - expected).abs() < 1e-10);
    }
}
