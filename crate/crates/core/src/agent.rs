//! Tabular reinforcement-learning agents.
//!
//! Policies are softmax tables `theta[s, a]` over the eight actions. [`ppo_update`] performs
//! clipped-surrogate ascent with an entropy bonus using closed-form gradients and Adam. Value
//! functions are tables too, one per reward stream (environment, language, intrinsic), each with
//! its own discount. [`NoveltyCounter`] provides the visit-count exploration bonus and
//! [`ActorCritic`] the Monte Carlo actor-critic used on tiny MDPs.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Action;

pub const N_ACTIONS: usize = Action::COUNT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("cannot update from an empty batch")]
    EmptyBatch,
    #[error("invalid hyperparameter {name} = {value}")]
    BadHyperparameter { name: &'static str, value: f64 },
}

/// Softmax policy table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub n_states: usize,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(n_states: usize) -> PolicyParams {
        PolicyParams { n_states, theta: vec![0.0; n_states * N_ACTIONS] }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.theta[s * N_ACTIONS..(s + 1) * N_ACTIONS]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.theta[s * N_ACTIONS..(s + 1) * N_ACTIONS]
    }

    pub fn probs(&self, s: usize) -> [f64; N_ACTIONS] {
        policy_probs(self, s).0
    }

    pub fn sample<R: Rng>(&self, s: usize, rng: &mut R) -> (usize, f64) {
        let p = self.probs(s);
        let a = WeightedIndex::new(p).expect("softmax weights are positive").sample(rng);
        (a, p[a].ln())
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn entropy(&self, s: usize) -> f64 {
        entropy(&self.probs(s))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Action distribution at `s` and its largest probability.
pub fn policy_probs(params: &PolicyParams, s: usize) -> ([f64; N_ACTIONS], f64) {
    let p = softmax(params.row(s));
    let mut out = [0.0; N_ACTIONS];
    out.copy_from_slice(&p);
    let max = out.iter().copied().fold(0.0, f64::max);
    (out, max)
}

/// Visit counts for the `1 / sqrt(N + 1)` exploration bonus.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyCounter {
    counts: Vec<u64>,
    clip: (f64, f64),
}

impl NoveltyCounter {
    pub fn new(n_states: usize) -> NoveltyCounter {
        NoveltyCounter { counts: vec![0; n_states], clip: (0.0, 5.0) }
    }

    pub fn count(&self, s: usize) -> u64 {
        self.counts[s]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Bonus for visiting `s`, computed before the visit is recorded.
    pub fn bonus(&mut self, s: usize) -> f64 {
        let b = (1.0 / ((self.counts[s] + 1) as f64).sqrt()).clamp(self.clip.0, self.clip.1);
        self.counts[s] += 1;
        b
    }

    /// Snapshot for a rollout worker; the worker's own visits accumulate in the view.
    pub fn view(&self) -> NoveltyView {
        NoveltyView { base: self.clone(), delta: vec![0; self.counts.len()] }
    }

    /// Adds a worker's visits. Merging views in worker order keeps runs reproducible.
    pub fn merge(&mut self, view: &NoveltyView) {
        for (c, d) in self.counts.iter_mut().zip(&view.delta) {
            *c += d;
        }
    }
}

/// Read-only snapshot of the shared counts plus one worker's own visits.
#[derive(Debug, Clone)]
pub struct NoveltyView {
    base: NoveltyCounter,
    delta: Vec<u64>,
}

impl NoveltyView {
    pub fn bonus(&mut self, s: usize) -> f64 {
        let n = self.base.counts[s] + self.delta[s];
        self.delta[s] += 1;
        (1.0 / ((n + 1) as f64).sqrt()).clamp(self.base.clip.0, self.base.clip.1)
    }
}

/// Generalised advantage estimates.
///
/// `values[t]` is the value of the state at step `t`, `bootstrap` the value of the state following
/// the last step. `dones[t]` cuts both the bootstrap and the recursion after step `t`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Result<Vec<f64>, AgentError> {
    let n = rewards.len();
    for (what, got) in [("values", values.len()), ("dones", dones.len())] {
        if got != n {
            return Err(AgentError::LengthMismatch { what, got, expected: n });
        }
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// `(x - mean) / (std + 1e-8)` over the whole slice.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub rollout_length: usize,
    pub n_envs: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub gamma_env: f64,
    pub gamma_lang: f64,
    pub gamma_int: f64,
    pub gae_lambda: f64,
    /// Step size of the tabular value regression.
    pub value_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            learning_rate: 1e-4,
            rollout_length: 128,
            n_envs: 8,
            epochs: 4,
            minibatches: 4,
            clip: 0.2,
            entropy_coef: 0.001,
            gamma_env: 0.99,
            gamma_lang: 0.99,
            gamma_int: 0.99,
            gae_lambda: 0.95,
            value_lr: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let unit = |name, v: f64| if v > 0.0 && v <= 1.0 { Ok(()) } else { Err(AgentError::BadHyperparameter { name, value: v }) };
        let pos = |name, v: f64| if v > 0.0 { Ok(()) } else { Err(AgentError::BadHyperparameter { name, value: v }) };
        pos("learning_rate", self.learning_rate)?;
        pos("rollout_length", self.rollout_length as f64)?;
        pos("n_envs", self.n_envs as f64)?;
        pos("epochs", self.epochs as f64)?;
        pos("minibatches", self.minibatches as f64)?;
        pos("clip", self.clip)?;
        if self.entropy_coef < 0.0 {
            return Err(AgentError::BadHyperparameter { name: "entropy_coef", value: self.entropy_coef });
        }
        unit("gamma_env", self.gamma_env)?;
        unit("gamma_lang", self.gamma_lang)?;
        unit("gamma_int", self.gamma_int)?;
        unit("gae_lambda", self.gae_lambda)?;
        unit("value_lr", self.value_lr)?;
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.rollout_length * self.n_envs / self.minibatches
    }
}

/// One value table per reward stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub env: Vec<f64>,
    pub lang: Vec<f64>,
    pub int: Vec<f64>,
}

impl ValueTables {
    pub fn zeros(n_states: usize) -> ValueTables {
        ValueTables { env: vec![0.0; n_states], lang: vec![0.0; n_states], int: vec![0.0; n_states] }
    }
}

/// A transition prepared for the PPO update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
    pub old_logp: f64,
    /// Mixed and normalised advantage.
    pub advantage: f64,
    pub ret_env: f64,
    pub ret_lang: f64,
    pub ret_int: f64,
}

/// Adam optimiser state for gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], cfg: &PpoConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] += cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Clipped surrogate plus entropy bonus, averaged over `batch`.
pub fn surrogate_objective(params: &PolicyParams, batch: &[Sample], clip: f64, entropy_coef: f64) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let p = params.probs(s.state);
        let ratio = (p[s.action].ln() - s.old_logp).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        total += (ratio * s.advantage).min(clipped * s.advantage) + entropy_coef * entropy(&p);
    }
    total / batch.len() as f64
}

/// Closed-form gradient of [`surrogate_objective`] with respect to every entry of `theta`.
pub fn surrogate_gradient(params: &PolicyParams, batch: &[Sample], clip: f64, entropy_coef: f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.theta.len()];
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let p = params.probs(s.state);
        let ratio = (p[s.action].ln() - s.old_logp).exp();
        let clipped_out = (s.advantage > 0.0 && ratio > 1.0 + clip) || (s.advantage < 0.0 && ratio < 1.0 - clip);
        let h = entropy(&p);
        let row = &mut grad[s.state * N_ACTIONS..(s.state + 1) * N_ACTIONS];
        for b in 0..N_ACTIONS {
            let mut g = -entropy_coef * p[b] * (p[b].ln() + h);
            if !clipped_out {
                let indicator = if b == s.action { 1.0 } else { 0.0 };
                g += s.advantage * ratio * (indicator - p[b]);
            }
            row[b] += scale * g;
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub clip_fraction: f64,
    pub mean_entropy: f64,
}

/// Several epochs of minibatch clipped-surrogate ascent followed by tabular value regression.
pub fn ppo_update<R: Rng>(
    batch: &[Sample],
    params: &mut PolicyParams,
    values: &mut ValueTables,
    adam: &mut Adam,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let n_mb = cfg.minibatches.clamp(1, batch.len());
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch.len().div_ceil(n_mb)) {
            let mb: Vec<Sample> = chunk.iter().map(|i| batch[*i]).collect();
            for s in &mb {
                let ratio = (params.probs(s.state)[s.action].ln() - s.old_logp).exp();
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1;
                }
                seen += 1;
            }
            let grad = surrogate_gradient(params, &mb, cfg.clip, cfg.entropy_coef);
            adam.ascend(&mut params.theta, &grad, cfg);
            regress_values(values, &mb, cfg.value_lr);
        }
    }
    let mean_entropy = batch.iter().map(|s| params.entropy(s.state)).sum::<f64>() / batch.len() as f64;
    Ok(UpdateStats { clip_fraction: clipped as f64 / seen.max(1) as f64, mean_entropy })
}

/// Moves each visited state's value toward the mean return observed for it in the minibatch.
fn regress_values(values: &mut ValueTables, mb: &[Sample], lr: f64) {
    let mut acc: std::collections::BTreeMap<usize, (f64, f64, f64, f64)> = std::collections::BTreeMap::new();
    for s in mb {
        let e = acc.entry(s.state).or_insert((0.0, 0.0, 0.0, 0.0));
        e.0 += s.ret_env;
        e.1 += s.ret_lang;
        e.2 += s.ret_int;
        e.3 += 1.0;
    }
    for (state, (env, lang, int, n)) in acc {
        values.env[state] += lr * (env / n - values.env[state]);
        values.lang[state] += lr * (lang / n - values.lang[state]);
        values.int[state] += lr * (int / n - values.int[state]);
    }
}

/// Monte Carlo actor-critic with a tabular action-value critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: PolicyParams,
    pub q: Vec<f64>,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl ActorCritic {
    pub fn new(n_states: usize, actor_lr: f64, critic_lr: f64) -> ActorCritic {
        ActorCritic { policy: PolicyParams::zeros(n_states), q: vec![0.0; n_states * N_ACTIONS], actor_lr, critic_lr }
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * N_ACTIONS + a]
    }

    /// Critic step `Q <- Q - critic_lr * d(delta^2)/dQ` with `delta = G - Q`, then actor step
    /// `theta <- theta + actor_lr * Q * grad log pi`.
    pub fn update(&mut self, s: usize, a: usize, g: f64) {
        let idx = s * N_ACTIONS + a;
        let delta = g - self.q[idx];
        self.q[idx] += 2.0 * self.critic_lr * delta;
        let q = self.q[idx];
        let p = self.policy.probs(s);
        let lr = self.actor_lr;
        for (b, th) in self.policy.row_mut(s).iter_mut().enumerate() {
            let indicator = if b == a { 1.0 } else { 0.0 };
            *th += lr * q * (indicator - p[b]);
        }
    }

    /// Updates every step of an episode given per-step rewards and the discount.
    pub fn update_episode(&mut self, steps: &[(usize, usize)], rewards: &[f64], gamma: f64) -> Result<(), AgentError> {
        if steps.len() != rewards.len() {
            return Err(AgentError::LengthMismatch { what: "rewards", got: rewards.len(), expected: steps.len() });
        }
        let mut g = 0.0;
        let mut returns = vec![0.0; rewards.len()];
        for t in (0..rewards.len()).rev() {
            g = rewards[t] + gamma * g;
            returns[t] = g;
        }
        for ((s, a), g) in steps.iter().zip(returns) {
            self.update(*s, *a, g);
        }
        Ok(())
    }
}

/// `log pi(a|s)` gradient term used by the actor, exposed for finite-difference checks.
pub fn actor_objective(params: &PolicyParams, s: usize, a: usize, q: f64) -> f64 {
    q * params.probs(s)[a].ln()
}
