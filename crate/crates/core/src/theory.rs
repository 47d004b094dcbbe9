//! Exhaustive numerical checks on tiny deterministic MDPs.
//!
//! Two results are verified here. First, potential-based shaping on state-action pairs leaves the
//! greedy policy unchanged: value iteration is run on states augmented with the previous
//! state-action pair, with and without the shaping term, and the greedy choices compared. Second,
//! under a softmax distribution over the enumerated deterministic policies, the gradient of the
//! expected return splits exactly into contributions from goal-reaching policies and from
//! partially consistent ones, and rewarding the latter slows the ascent toward the goal set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agent::softmax;

pub const MAX_STATES: usize = 12;
pub const MAX_POLICIES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{0} states exceed the limit of {MAX_STATES}")]
    TooManyStates(usize),
    #[error("{0} deterministic policies exceed the enumeration limit")]
    TooManyPolicies(f64),
    #[error("transition ({state}, {action}) leads to unknown state {next}")]
    BadTransition { state: usize, action: usize, next: usize },
    #[error("start state {0} is out of range or terminal")]
    BadStart(usize),
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("discount {0} outside (0, 1]")]
    BadGamma(f64),
    #[error("policy {0} outside the partial and goal sets has non-zero return")]
    RemainderReturn(usize),
    #[error("parameter vector has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("goal and partial sets must both be non-empty")]
    EmptyClass,
}

/// Small deterministic MDP with goal and death terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerableMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub start: usize,
    /// `next[s * n_actions + a]`
    pub next: Vec<usize>,
    /// Environment reward for taking `a` in `s`.
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub goal: Vec<bool>,
    /// States whose visit marks a trajectory as partially consistent with an instruction.
    pub marked: Vec<bool>,
    pub gamma: f64,
    /// Rollouts are cut after this many steps.
    pub horizon: usize,
}

impl EnumerableMdp {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.n_states > MAX_STATES {
            return Err(TheoryError::TooManyStates(self.n_states));
        }
        if self.start >= self.n_states || self.terminal[self.start] {
            return Err(TheoryError::BadStart(self.start));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TheoryError::BadGamma(self.gamma));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let next = self.next[s * self.n_actions + a];
                if next >= self.n_states {
                    return Err(TheoryError::BadTransition { state: s, action: a, next });
                }
            }
        }
        Ok(())
    }

    pub fn step(&self, s: usize, a: usize) -> (usize, f64) {
        (self.next[s * self.n_actions + a], self.reward[s * self.n_actions + a])
    }

    fn decision_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|s| !self.terminal[*s]).collect()
    }

    /// Chain of `n` decision states: action 0 moves right (the last move reaches the goal, reward
    /// 1), action 1 falls into a death state. `marked` lists decision states counting as partial
    /// progress.
    pub fn chain(n: usize, marked: &[usize]) -> EnumerableMdp {
        let n_states = n + 2;
        let (goal, death) = (n, n + 1);
        let mut next = vec![death; n_states * 2];
        let mut reward = vec![0.0; n_states * 2];
        for s in 0..n {
            next[s * 2] = s + 1;
            next[s * 2 + 1] = death;
        }
        reward[(n - 1) * 2] = 1.0;
        for a in 0..2 {
            next[goal * 2 + a] = goal;
            next[death * 2 + a] = death;
        }
        let mut terminal = vec![false; n_states];
        terminal[goal] = true;
        terminal[death] = true;
        let mut is_goal = vec![false; n_states];
        is_goal[goal] = true;
        let mut is_marked = vec![false; n_states];
        for m in marked {
            is_marked[*m] = true;
        }
        EnumerableMdp { n_states, n_actions: 2, start: 0, next, reward, terminal, goal: is_goal, marked: is_marked, gamma: 0.99, horizon: n + 1 }
    }

    /// One decision, two actions, both ending the episode.
    pub fn bandit() -> EnumerableMdp {
        EnumerableMdp {
            n_states: 2,
            n_actions: 2,
            start: 0,
            next: vec![1, 1, 1, 1],
            reward: vec![1.0, 0.0, 0.0, 0.0],
            terminal: vec![false, true],
            goal: vec![false, true],
            marked: vec![false, false],
            gamma: 0.99,
            horizon: 1,
        }
    }

    /// Two branches from the start: one leads on to the goal, the other passes a marked state on
    /// the way to a dead end.
    pub fn branching() -> EnumerableMdp {
        // 0 start, 1 goal branch, 2 marked branch, 3 dead-end corridor, 4 goal, 5 death
        let (goal, death) = (4, 5);
        let next = vec![1, 2, goal, death, 3, death, death, death, goal, goal, death, death];
        let mut reward = vec![0.0; 12];
        reward[2] = 1.0;
        EnumerableMdp {
            n_states: 6,
            n_actions: 2,
            start: 0,
            next,
            reward,
            terminal: vec![false, false, false, false, true, true],
            goal: vec![false, false, false, false, true, false],
            marked: vec![false, false, true, false, false, false],
            gamma: 0.99,
            horizon: 4,
        }
    }

    /// Random layered MDP: every decision state moves to a strictly larger index, so all
    /// trajectories terminate. The last state is the goal, the one before it a death state.
    pub fn random_dag<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> EnumerableMdp {
        assert!((3..=MAX_STATES).contains(&n_states));
        let (goal, death) = (n_states - 1, n_states - 2);
        let mut next = vec![0; n_states * n_actions];
        let mut reward = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                let idx = s * n_actions + a;
                next[idx] = if s >= death { s } else { rng.gen_range(s + 1..n_states) };
                if s < death && next[idx] == goal {
                    reward[idx] = 1.0;
                }
            }
        }
        let mut terminal = vec![false; n_states];
        terminal[goal] = true;
        terminal[death] = true;
        let mut is_goal = vec![false; n_states];
        is_goal[goal] = true;
        let marked = (0..n_states).map(|s| s > 0 && s < death && rng.gen_bool(0.3)).collect();
        EnumerableMdp {
            n_states,
            n_actions,
            start: 0,
            next,
            reward,
            terminal,
            goal: is_goal,
            marked,
            gamma: rng.gen_range(0.8..0.99),
            horizon: n_states,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PolicyClass {
    Goal,
    Partial,
    Rest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    /// Action per state (terminal states carry 0).
    pub actions: Vec<usize>,
    /// Visited `(state, action)` pairs in order.
    pub path: Vec<(usize, usize)>,
    pub reached_goal: bool,
    /// Discounted environment return.
    pub ret: f64,
    pub class: PolicyClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPartition {
    pub policies: Vec<PolicyOutcome>,
}

impl PolicyPartition {
    pub fn indices(&self, class: PolicyClass) -> Vec<usize> {
        self.policies.iter().enumerate().filter(|(_, p)| p.class == class).map(|(i, _)| i).collect()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Rolls out every deterministic policy. A policy is partial when its trajectory satisfies
/// `is_partial` without reaching the goal.
pub fn enumerate_policies<F>(mdp: &EnumerableMdp, is_partial: F) -> Result<PolicyPartition, TheoryError>
where
    F: Fn(&[(usize, usize)], &EnumerableMdp) -> bool,
{
    mdp.validate()?;
    let decision = mdp.decision_states();
    let count = (mdp.n_actions as f64).powi(decision.len() as i32);
    if count > MAX_POLICIES as f64 {
        return Err(TheoryError::TooManyPolicies(count));
    }
    let mut policies = Vec::with_capacity(count as usize);
    for k in 0..count as usize {
        let mut actions = vec![0; mdp.n_states];
        let mut rest = k;
        for s in &decision {
            actions[*s] = rest % mdp.n_actions;
            rest /= mdp.n_actions;
        }
        let mut s = mdp.start;
        let mut path = Vec::new();
        let mut ret = 0.0;
        let mut discount = 1.0;
        let mut reached_goal = false;
        for _ in 0..mdp.horizon {
            if mdp.terminal[s] {
                break;
            }
            let a = actions[s];
            let (next, r) = mdp.step(s, a);
            path.push((s, a));
            ret += discount * r;
            discount *= mdp.gamma;
            s = next;
            reached_goal |= mdp.goal[s];
        }
        let class = if reached_goal {
            PolicyClass::Goal
        } else if is_partial(&path, mdp) {
            PolicyClass::Partial
        } else {
            PolicyClass::Rest
        };
        policies.push(PolicyOutcome { actions, path, reached_goal, ret, class });
    }
    Ok(PolicyPartition { policies })
}

/// The default partial-match predicate: the trajectory visits a marked state.
pub fn visits_marked(path: &[(usize, usize)], mdp: &EnumerableMdp) -> bool {
    path.iter().any(|(s, a)| mdp.marked[*s] || mdp.marked[mdp.step(*s, *a).0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueResult {
    /// `q[x * n_actions + a]` over the (possibly augmented) state space.
    pub q: Vec<f64>,
    pub greedy: Vec<usize>,
    pub sweeps: usize,
}

pub const VI_TOLERANCE: f64 = 1e-10;
const TIE_TOLERANCE: f64 = 1e-9;

/// Index of the largest value, preferring the lowest index among near-ties.
pub fn tolerant_argmax(xs: &[f64]) -> usize {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    xs.iter().position(|x| *x >= max - TIE_TOLERANCE).unwrap_or(0)
}

/// Generic tabular value iteration. `model(x, a)` returns `(reward, next, next_is_terminal)`;
/// terminal successors contribute `terminal_value(next)` instead of a bootstrap.
fn value_iteration_general<M, T>(n: usize, n_actions: usize, gamma: f64, model: M, terminal_value: T, cap: usize) -> Result<ValueResult, TheoryError>
where
    M: Fn(usize, usize) -> (f64, usize, bool),
    T: Fn(usize) -> f64,
{
    let table: Vec<(f64, usize, bool)> = (0..n).flat_map(|x| (0..n_actions).map(move |a| (x, a))).map(|(x, a)| model(x, a)).collect();
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * n_actions];
    for sweep in 1..=cap {
        let mut delta: f64 = 0.0;
        for x in 0..n {
            for a in 0..n_actions {
                let (r, next, term) = table[x * n_actions + a];
                q[x * n_actions + a] = r + gamma * if term { terminal_value(next) } else { v[next] };
            }
        }
        for x in 0..n {
            let best = q[x * n_actions..(x + 1) * n_actions].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[x]).abs());
            v[x] = best;
        }
        if delta < VI_TOLERANCE {
            let greedy = (0..n).map(|x| tolerant_argmax(&q[x * n_actions..(x + 1) * n_actions])).collect();
            return Ok(ValueResult { q, greedy, sweeps: sweep });
        }
    }
    Err(TheoryError::NoConvergence(cap))
}

/// Optimal action values for `reward(s, a)` (terminal states are worth 0).
pub fn value_iteration<R>(mdp: &EnumerableMdp, reward: R) -> Result<ValueResult, TheoryError>
where
    R: Fn(usize, usize) -> f64,
{
    mdp.validate()?;
    value_iteration_general(
        mdp.n_states,
        mdp.n_actions,
        mdp.gamma,
        |s, a| {
            if mdp.terminal[s] {
                (0.0, s, true)
            } else {
                let (next, _) = mdp.step(s, a);
                (reward(s, a), next, mdp.terminal[next])
            }
        },
        |_| 0.0,
        100_000,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    /// Greedy action at every reachable decision state agrees with and without shaping.
    pub greedy_equal: bool,
    /// Largest telescoping residual over all enumerated trajectories.
    pub max_telescoping_residual: f64,
    /// Return-maximising policy sets agree once the terminal zero-potential step is included.
    pub argmax_sets_equal: bool,
    pub trajectories: usize,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.greedy_equal && self.argmax_sets_equal && self.max_telescoping_residual < 1e-10
    }
}

/// Shaped return of a path: sum of `gamma^t (R_t + F_t)` with
/// `F_t = phi(s_t, a_t) - phi(s_{t-1}, a_{t-1}) / gamma`, plus optionally the terminal step
/// that moves to the zero potential.
fn shaped_return(mdp: &EnumerableMdp, path: &[(usize, usize)], phi: &[f64], phi_init: f64, terminal_step: bool) -> (f64, f64) {
    let g = mdp.gamma;
    let mut prev = phi_init;
    let mut unshaped = 0.0;
    let mut shaping = 0.0;
    let mut discount = 1.0;
    for (s, a) in path {
        let cur = phi[s * mdp.n_actions + a];
        unshaped += discount * mdp.step(*s, *a).1;
        shaping += discount * (cur - prev / g);
        prev = cur;
        discount *= g;
    }
    if terminal_step {
        shaping += discount * (0.0 - prev / g);
    }
    (unshaped, shaping)
}

/// Checks that shaping with potential `phi[s * n_actions + a]` leaves optimal behaviour unchanged.
pub fn check_policy_invariance(mdp: &EnumerableMdp, phi: &[f64], phi_init: f64) -> Result<InvarianceReport, TheoryError> {
    mdp.validate()?;
    let (n, na, g) = (mdp.n_states, mdp.n_actions, mdp.gamma);
    if phi.len() != n * na {
        return Err(TheoryError::Dimension { got: phi.len(), expected: n * na });
    }

    let plain = value_iteration(mdp, |s, a| mdp.step(s, a).1)?;

    // augmented state: (s, previous pair) where index 0 means "episode start"
    let n_prev = n * na + 1;
    let aug = |s: usize, prev: usize| s * n_prev + prev;
    let prev_phi = |prev: usize| if prev == 0 { phi_init } else { phi[prev - 1] };
    let shaped = value_iteration_general(
        n * n_prev,
        na,
        g,
        |x, a| {
            let (s, prev) = (x / n_prev, x % n_prev);
            if mdp.terminal[s] {
                return (0.0, x, true);
            }
            let (next, r) = mdp.step(s, a);
            let f = phi[s * na + a] - prev_phi(prev) / g;
            (r + f, aug(next, s * na + a + 1), mdp.terminal[next])
        },
        // the terminal pseudo-step moves to the zero potential
        |x| {
            let prev = x % n_prev;
            -prev_phi(prev) / g
        },
        100_000,
    )?;

    // compare greedy actions at every augmented state reachable from the start
    let mut greedy_equal = true;
    let mut stack = vec![aug(mdp.start, 0)];
    let mut seen = vec![false; n * n_prev];
    while let Some(x) = stack.pop() {
        if seen[x] {
            continue;
        }
        seen[x] = true;
        let s = x / n_prev;
        if mdp.terminal[s] {
            continue;
        }
        if shaped.greedy[x] != plain.greedy[s] {
            greedy_equal = false;
        }
        for a in 0..na {
            let next = mdp.step(s, a).0;
            stack.push(aug(next, s * na + a + 1));
        }
    }

    let partition = enumerate_policies(mdp, |_, _| false)?;
    let mut max_residual: f64 = 0.0;
    let mut plain_returns = Vec::with_capacity(partition.len());
    let mut shaped_returns = Vec::with_capacity(partition.len());
    for p in &partition.policies {
        let (unshaped, shaping) = shaped_return(mdp, &p.path, phi, phi_init, false);
        let t_last = p.path.len().saturating_sub(1) as i32;
        let phi_last = p.path.last().map_or(phi_init, |(s, a)| phi[s * na + a]);
        let expected = if p.path.is_empty() { -phi_init / g } else { g.powi(t_last) * phi_last - phi_init / g };
        max_residual = max_residual.max((shaping - expected).abs());
        let (_, with_terminal) = shaped_return(mdp, &p.path, phi, phi_init, true);
        plain_returns.push(unshaped);
        shaped_returns.push(unshaped + with_terminal);
    }
    let argmax_set = |xs: &[f64]| -> Vec<usize> {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        xs.iter().enumerate().filter(|(_, x)| **x >= max - TIE_TOLERANCE).map(|(i, _)| i).collect()
    };
    // with phi_init != 0 every shaped return carries the same offset -phi_init / gamma
    let offset = -phi_init / g;
    let shifted: Vec<f64> = shaped_returns.iter().map(|x| x - offset).collect();
    let argmax_sets_equal = argmax_set(&plain_returns) == argmax_set(&shifted);

    Ok(InvarianceReport { greedy_equal, max_telescoping_residual: max_residual, argmax_sets_equal, trajectories: partition.len() })
}

/// Subgoal potential for random MDPs: `alpha` times a random subgoal count in `0..=max_count`.
pub fn random_subgoal_potential<R: Rng>(rng: &mut R, mdp: &EnumerableMdp, alpha: f64, max_count: u32) -> Vec<f64> {
    (0..mdp.n_states * mdp.n_actions).map(|_| alpha * f64::from(rng.gen_range(0..=max_count))).collect()
}

/// Returns of every enumerated policy: 1 on the goal set, `magnitude` on the partial set, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTable {
    pub returns: Vec<f64>,
    pub class: Vec<PolicyClass>,
}

impl ReturnTable {
    pub fn new(partition: &PolicyPartition, goal_return: f64, magnitude: f64) -> ReturnTable {
        let class: Vec<PolicyClass> = partition.policies.iter().map(|p| p.class).collect();
        let returns = class
            .iter()
            .map(|c| match c {
                PolicyClass::Goal => goal_return,
                PolicyClass::Partial => magnitude,
                PolicyClass::Rest => 0.0,
            })
            .collect();
        ReturnTable { returns, class }
    }

    pub fn from_values(partition: &PolicyPartition, returns: Vec<f64>) -> Result<ReturnTable, TheoryError> {
        if returns.len() != partition.len() {
            return Err(TheoryError::Dimension { got: returns.len(), expected: partition.len() });
        }
        let class: Vec<PolicyClass> = partition.policies.iter().map(|p| p.class).collect();
        if let Some(i) = (0..returns.len()).find(|i| class[*i] == PolicyClass::Rest && returns[*i] != 0.0) {
            return Err(TheoryError::RemainderReturn(i));
        }
        Ok(ReturnTable { returns, class })
    }

    pub fn expected(&self, theta: &[f64]) -> f64 {
        softmax(theta).iter().zip(&self.returns).map(|(p, g)| p * g).sum()
    }

    /// `d E[G] / d theta_j = p_j (G_j - E[G])`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = softmax(theta);
        let e: f64 = p.iter().zip(&self.returns).map(|(p, g)| p * g).sum();
        p.iter().zip(&self.returns).map(|(p, g)| p * (g - e)).collect()
    }

    fn class_sums(&self, p: &[f64], class: PolicyClass) -> (f64, f64) {
        let mut prob = 0.0;
        let mut mass = 0.0;
        for i in 0..p.len() {
            if self.class[i] == class {
                prob += p[i];
                mass += p[i] * self.returns[i];
            }
        }
        (prob, mass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub expected_return: f64,
    pub p_goal: f64,
    pub p_partial: f64,
    pub p_rest: f64,
    pub e_goal: f64,
    pub e_partial: f64,
    /// `1 - P(rest)`.
    pub constant: f64,
    /// `|E[G] - (const * E_L + (E_G - E_L) * P_G)|`.
    pub scalar_residual: f64,
    /// Max abs difference between the direct gradient and the four-term product-rule split.
    pub decomposition_residual: f64,
    /// Max relative error between the direct gradient and central finite differences.
    pub finite_difference_error: f64,
    /// Norm of the gradient part not captured by `(E_G - E_L) * grad P_G`, for information.
    pub approximation_gap: f64,
}

impl DecompositionReport {
    pub fn passed(&self) -> bool {
        self.decomposition_residual < 1e-8 && self.finite_difference_error < 1e-4 && self.scalar_residual < 1e-12
    }
}

/// Splits `grad E[G]` into `E_L grad P_L + E_G grad P_G + P_L grad E_L + P_G grad E_G` and checks
/// it against the direct gradient and against central finite differences (`h = 1e-5`).
pub fn gradient_decomposition_check(table: &ReturnTable, theta: &[f64]) -> Result<DecompositionReport, TheoryError> {
    let n = table.returns.len();
    if theta.len() != n {
        return Err(TheoryError::Dimension { got: theta.len(), expected: n });
    }
    if let Some(i) = (0..n).find(|i| table.class[*i] == PolicyClass::Rest && table.returns[*i] != 0.0) {
        return Err(TheoryError::RemainderReturn(i));
    }
    let p = softmax(theta);
    let (p_g, s_g) = table.class_sums(&p, PolicyClass::Goal);
    let (p_l, s_l) = table.class_sums(&p, PolicyClass::Partial);
    if p_g == 0.0 || p_l == 0.0 {
        return Err(TheoryError::EmptyClass);
    }
    let (e_g, e_l) = (s_g / p_g, s_l / p_l);
    let expected = table.expected(theta);
    let p_rest = 1.0 - p_g - p_l;
    let constant = 1.0 - p_rest;
    let scalar_residual = (expected - (constant * e_l + (e_g - e_l) * p_g)).abs();

    let direct = table.gradient(theta);
    let member = |j: usize, c: PolicyClass| if table.class[j] == c { 1.0 } else { 0.0 };
    let mut decomposition_residual: f64 = 0.0;
    let mut gap_sq = 0.0;
    for j in 0..n {
        let d_pg = p[j] * (member(j, PolicyClass::Goal) - p_g);
        let d_pl = p[j] * (member(j, PolicyClass::Partial) - p_l);
        let d_sg = p[j] * (table.returns[j] * member(j, PolicyClass::Goal) - s_g);
        let d_sl = p[j] * (table.returns[j] * member(j, PolicyClass::Partial) - s_l);
        let d_eg = (d_sg * p_g - s_g * d_pg) / (p_g * p_g);
        let d_el = (d_sl * p_l - s_l * d_pl) / (p_l * p_l);
        let split = e_l * d_pl + e_g * d_pg + p_l * d_el + p_g * d_eg;
        decomposition_residual = decomposition_residual.max((split - direct[j]).abs());
        gap_sq += (direct[j] - (e_g - e_l) * d_pg).powi(2);
    }

    let h = 1e-5;
    let mut fd_error: f64 = 0.0;
    let mut probe = theta.to_vec();
    for j in 0..n {
        probe[j] = theta[j] + h;
        let up = table.expected(&probe);
        probe[j] = theta[j] - h;
        let down = table.expected(&probe);
        probe[j] = theta[j];
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(direct[j].abs()).max(1e-6);
        fd_error = fd_error.max((fd - direct[j]).abs() / scale);
    }

    Ok(DecompositionReport {
        expected_return: expected,
        p_goal: p_g,
        p_partial: p_l,
        p_rest,
        e_goal: e_g,
        e_partial: e_l,
        constant,
        scalar_residual,
        decomposition_residual,
        finite_difference_error: fd_error,
        approximation_gap: gap_sq.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub magnitude: f64,
    /// Iterations until `P(goal) >= threshold`; `None` when the cap was hit first.
    pub iterations: Option<usize>,
    pub final_p_goal: f64,
}

/// Exact gradient ascent on the softmax-over-policies objective from `theta = 0` for each
/// partial-reward magnitude.
pub fn convergence_rate_sweep(partition: &PolicyPartition, magnitudes: &[f64], lr: f64, threshold: f64, cap: usize) -> Vec<SweepRow> {
    magnitudes
        .iter()
        .map(|&m| {
            let table = ReturnTable::new(partition, 1.0, m);
            let mut theta = vec![0.0; partition.len()];
            let p_goal = |theta: &[f64]| table.class_sums(&softmax(theta), PolicyClass::Goal).0;
            let mut iterations = None;
            for it in 0..=cap {
                if p_goal(&theta) >= threshold {
                    iterations = Some(it);
                    break;
                }
                if it == cap {
                    break;
                }
                let g = table.gradient(&theta);
                for (t, d) in theta.iter_mut().zip(g) {
                    *t += lr * d;
                }
            }
            SweepRow { magnitude: m, iterations, final_p_goal: p_goal(&theta) }
        })
        .collect()
}

/// True when iteration counts never decrease with the magnitude (censored runs count as infinite).
pub fn is_non_decreasing(rows: &[SweepRow]) -> bool {
    rows.windows(2).all(|w| {
        let a = w[0].iterations.unwrap_or(usize::MAX);
        let b = w[1].iterations.unwrap_or(usize::MAX);
        a <= b
    })
}

/// A named testbed used by the report and the sweep.
pub fn testbeds() -> Vec<(&'static str, EnumerableMdp)> {
    vec![
        ("chain3", EnumerableMdp::chain(3, &[1])),
        ("chain4", EnumerableMdp::chain(4, &[2])),
        ("branching", EnumerableMdp::branching()),
    ]
}

pub const SWEEP_MAGNITUDES: [f64; 3] = [0.0, 0.25, 0.5];
pub const SWEEP_LR: f64 = 1.0;
pub const SWEEP_THRESHOLD: f64 = 0.9;
pub const SWEEP_CAP: usize = 200_000;

/// `|sum_t gamma^t F_t - (gamma^T phi_T - phi_init / gamma)|` for a potential sequence, with
/// `F_t` from [`crate::shaping::shaping_term`].
pub fn telescoping_residual(phis: &[f64], phi_init: f64, gamma: f64) -> Result<f64, TheoryError> {
    let mut prev = phi_init;
    let mut sum = 0.0;
    let mut discount = 1.0;
    for &phi in phis {
        sum += discount * crate::shaping::shaping_term(prev, phi, gamma).map_err(|_| TheoryError::BadGamma(gamma))?;
        prev = phi;
        discount *= gamma;
    }
    let expected = match phis.len() {
        0 => -phi_init / gamma,
        n => gamma.powi(n as i32 - 1) * phis[n - 1] - phi_init / gamma,
    };
    Ok((sum - expected).abs())
}

/// Largest telescoping residual over `episodes` random walks on random MDPs, each with a random
/// subgoal potential.
pub fn telescoping_suite(seed: u64, episodes: usize) -> Result<f64, TheoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..episodes {
        let n = rng.gen_range(3..=MAX_STATES);
        let na = rng.gen_range(2..=4);
        let mdp = EnumerableMdp::random_dag(&mut rng, n, na);
        let alpha = rng.gen_range(0.1..2.0);
        let phi = random_subgoal_potential(&mut rng, &mdp, alpha, 4);
        let phi_init = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-2.0..2.0) };
        let mut s = mdp.start;
        let mut phis = Vec::new();
        while !mdp.terminal[s] {
            let a = rng.gen_range(0..na);
            phis.push(phi[s * na + a]);
            s = mdp.step(s, a).0;
        }
        worst = worst.max(telescoping_residual(&phis, phi_init, mdp.gamma)?);
    }
    Ok(worst)
}

/// Runs the invariance check on `count` random MDPs with random subgoal potentials.
pub fn invariance_suite(seed: u64, count: usize) -> Result<Vec<InvarianceReport>, TheoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(4..=MAX_STATES);
            let na = rng.gen_range(2..=3);
            let mdp = EnumerableMdp::random_dag(&mut rng, n, na);
            let alpha = rng.gen_range(0.1..2.0);
            let phi = random_subgoal_potential(&mut rng, &mdp, alpha, 3);
            check_policy_invariance(&mdp, &phi, 0.0)
        })
        .collect()
}

/// Decomposition reports for `count` random parameter vectors on the 4-state chain.
pub fn decomposition_suite(seed: u64, count: usize, magnitude: f64) -> Result<Vec<DecompositionReport>, TheoryError> {
    let part = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked)?;
    let table = ReturnTable::new(&part, 1.0, magnitude);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let theta: Vec<f64> = (0..part.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            gradient_decomposition_check(&table, &theta)
        })
        .collect()
}

/// Convergence sweep over [`SWEEP_MAGNITUDES`] on every testbed.
pub fn sweep_suite() -> Result<Vec<(&'static str, Vec<SweepRow>)>, TheoryError> {
    testbeds()
        .into_iter()
        .map(|(name, mdp)| {
            let part = enumerate_policies(&mdp, visits_marked)?;
            Ok((name, convergence_rate_sweep(&part, &SWEEP_MAGNITUDES, SWEEP_LR, SWEEP_THRESHOLD, SWEEP_CAP)))
        })
        .collect()
}

/// `testbed,magnitude,iterations,final_p_goal`; censored runs leave `iterations` empty.
pub fn sweep_csv() -> Result<String, TheoryError> {
    let mut out = String::from("testbed,magnitude,iterations,final_p_goal\n");
    for (name, rows) in sweep_suite()? {
        for r in rows {
            let it = r.iterations.map(|i| i.to_string()).unwrap_or_default();
            out.push_str(&format!("{name},{},{it},{}\n", r.magnitude, r.final_p_goal));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Every theory check with a one-line verdict.
pub fn run_checks(seed: u64) -> Result<Vec<TheoryCheck>, TheoryError> {
    let mut out = Vec::new();

    let bandit = enumerate_policies(&EnumerableMdp::bandit(), visits_marked)?;
    out.push(TheoryCheck { name: "bandit policy count", passed: bandit.len() == 2, detail: format!("|Pi| = {}", bandit.len()) });

    let chain = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked)?;
    let (g, l) = (chain.indices(PolicyClass::Goal).len(), chain.indices(PolicyClass::Partial).len());
    out.push(TheoryCheck {
        name: "chain4 partition",
        passed: chain.len() == 16 && g == 1 && l == 3,
        detail: format!("|Pi| = {}, |Pi_G| = {g}, |Pi_L| = {l}", chain.len()),
    });

    let worst = telescoping_suite(seed, 500)?;
    out.push(TheoryCheck { name: "telescoping identity", passed: worst < 1e-10, detail: format!("500 episodes, max residual {worst:.2e}") });

    let reports = invariance_suite(seed, 20)?;
    let ok = reports.iter().filter(|r| r.passed()).count();
    let worst = reports.iter().map(|r| r.max_telescoping_residual).fold(0.0, f64::max);
    out.push(TheoryCheck {
        name: "policy invariance",
        passed: ok == reports.len(),
        detail: format!("{ok}/{} MDPs keep their greedy policy, max residual {worst:.2e}", reports.len()),
    });

    let reports = decomposition_suite(seed, 20, 0.5)?;
    let res = reports.iter().map(|r| r.decomposition_residual).fold(0.0, f64::max);
    let fd = reports.iter().map(|r| r.finite_difference_error).fold(0.0, f64::max);
    let gap = reports.iter().map(|r| r.approximation_gap).fold(0.0, f64::max);
    out.push(TheoryCheck {
        name: "gradient decomposition",
        passed: reports.iter().all(DecompositionReport::passed),
        detail: format!("residual {res:.2e}, finite-difference error {fd:.2e}, goal-term-only gap {gap:.3}"),
    });

    for (name, rows) in sweep_suite()? {
        let its: Vec<String> = rows.iter().map(|r| r.iterations.map_or("censored".to_string(), |i| i.to_string())).collect();
        out.push(TheoryCheck {
            name: match name {
                "chain3" => "convergence sweep (chain3)",
                "chain4" => "convergence sweep (chain4)",
                _ => "convergence sweep (branching)",
            },
            passed: is_non_decreasing(&rows) && rows[0].iterations.is_some(),
            detail: format!("iterations at {SWEEP_MAGNITUDES:?}: {}", its.join(", ")),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_has_two_policies() {
        let part = enumerate_policies(&EnumerableMdp::bandit(), visits_marked).unwrap();
        assert_eq!(part.len(), 2);
    }

    #[test]
    fn chain_partition_sizes() {
        let part = enumerate_policies(&EnumerableMdp::chain(3, &[]), visits_marked).unwrap();
        assert_eq!(part.len(), 8);
        assert_eq!(part.indices(PolicyClass::Goal).len(), 1);
        let part = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked).unwrap();
        assert_eq!(part.len(), 16);
        assert_eq!(part.indices(PolicyClass::Goal).len(), 1);
        assert_eq!(part.indices(PolicyClass::Partial).len(), 3);
        for i in part.indices(PolicyClass::Partial) {
            assert!(!part.policies[i].reached_goal);
        }
    }

    #[test]
    fn too_many_policies_is_an_error() {
        let mut mdp = EnumerableMdp::chain(10, &[]);
        mdp.n_actions = 2;
        let wide = EnumerableMdp { n_actions: 8, next: vec![11; 12 * 8], reward: vec![0.0; 12 * 8], ..mdp.clone() };
        assert!(matches!(enumerate_policies(&wide, visits_marked), Err(TheoryError::TooManyPolicies(_))));
        let big = EnumerableMdp { n_states: 13, ..mdp };
        assert!(matches!(enumerate_policies(&big, visits_marked), Err(TheoryError::TooManyStates(13))));
    }

    /// 1x2 corridor: Right reaches the goal, the other actions stay put.
    fn corridor(gamma: f64) -> EnumerableMdp {
        EnumerableMdp {
            n_states: 2,
            n_actions: 3,
            start: 0,
            next: vec![0, 1, 0, 1, 1, 1],
            reward: vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            terminal: vec![false, true],
            goal: vec![false, true],
            marked: vec![false, false],
            gamma,
            horizon: 5,
        }
    }

    #[test]
    fn value_iteration_by_hand() {
        let mdp = corridor(0.5);
        let vi = value_iteration(&mdp, |s, a| mdp.step(s, a).1).unwrap();
        assert!((vi.q[1] - 1.0).abs() < 1e-9);
        assert!((vi.q[0] - 0.5).abs() < 1e-9);
        assert!((vi.q[2] - 0.5).abs() < 1e-9);
        assert_eq!(vi.greedy[0], 1);
        let zero = value_iteration(&mdp, |_, _| 0.0).unwrap();
        assert!(zero.q.iter().all(|q| *q == 0.0));
        assert_eq!(zero.greedy[0], 0);
    }

    #[test]
    fn zero_and_constant_potentials() {
        let mdp = EnumerableMdp::chain(3, &[]);
        let zero = vec![0.0; mdp.n_states * mdp.n_actions];
        let r = check_policy_invariance(&mdp, &zero, 0.0).unwrap();
        assert!(r.passed() && r.max_telescoping_residual == 0.0);
        let mut unit = EnumerableMdp::chain(3, &[]);
        unit.gamma = 1.0;
        let c = vec![2.5; unit.n_states * unit.n_actions];
        assert!(check_policy_invariance(&unit, &c, 0.0).unwrap().passed());
        let part = enumerate_policies(&unit, |_, _| false).unwrap();
        for p in &part.policies {
            let (_, shaping) = shaped_return(&unit, &p.path, &c, 0.0, false);
            assert!((shaping - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn random_dags_are_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = rng.gen_range(4..=8);
            let mdp = EnumerableMdp::random_dag(&mut rng, n, 3);
            let phi = random_subgoal_potential(&mut rng, &mdp, 1.0, 3);
            let report = check_policy_invariance(&mdp, &phi, 0.0).unwrap();
            assert!(report.passed(), "{report:?}");
            let shifted = check_policy_invariance(&mdp, &phi, 1.5).unwrap();
            assert!(shifted.passed(), "{shifted:?}");
        }
    }

    #[test]
    fn decomposition_on_chain4() {
        let part = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked).unwrap();
        let table = ReturnTable::new(&part, 1.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..part.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r = gradient_decomposition_check(&table, &theta).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn no_false_positives_leaves_goal_term_only() {
        let part = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked).unwrap();
        let table = ReturnTable::new(&part, 1.0, 0.0);
        let theta = vec![0.1; part.len()];
        let r = gradient_decomposition_check(&table, &theta).unwrap();
        assert_eq!(r.e_partial, 0.0);
        assert!(r.approximation_gap < 1e-12, "{}", r.approximation_gap);
    }

    #[test]
    fn remainder_with_return_is_rejected() {
        let part = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked).unwrap();
        let mut values = vec![0.0; part.len()];
        let rest = part.indices(PolicyClass::Rest)[0];
        values[rest] = 0.3;
        assert_eq!(ReturnTable::from_values(&part, values), Err(TheoryError::RemainderReturn(rest)));
    }

    #[test]
    fn sweep_is_monotone_on_testbeds() {
        for (name, mdp) in testbeds() {
            let part = enumerate_policies(&mdp, visits_marked).unwrap();
            let rows = convergence_rate_sweep(&part, &SWEEP_MAGNITUDES, SWEEP_LR, SWEEP_THRESHOLD, SWEEP_CAP);
            assert!(rows[0].iterations.is_some(), "{name}");
            assert!(is_non_decreasing(&rows), "{name}: {rows:?}");
        }
    }

    #[test]
    fn all_checks_pass() {
        for c in run_checks(7).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn telescoping_by_hand() {
        // phi = [1, 2], gamma = 0.5: F_0 = 1, F_1 = 2 - 2 = 0; sum = 1 = 0.5 * 2
        assert!(telescoping_residual(&[1.0, 2.0], 0.0, 0.5).unwrap() < 1e-15);
        assert!(telescoping_residual(&[1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn full_magnitude_may_stall() {
        let part = enumerate_policies(&EnumerableMdp::chain(4, &[2]), visits_marked).unwrap();
        let rows = convergence_rate_sweep(&part, &[1.0], SWEEP_LR, SWEEP_THRESHOLD, 2_000);
        assert!(rows[0].iterations.is_none());
    }
}
