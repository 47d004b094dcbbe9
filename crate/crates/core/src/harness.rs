//! Experiment configuration, multi-seed training, result files and condition comparison.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/config.toml         resolved config echo (every consumed hyperparameter)
//! <out>/summary.toml        per-seed and aggregate statistics
//! <out>/auc_boxplot.csv     seed,auc
//! <out>/seed_01/run.csv     episode,steps,env_r,lang_r,int_r,win
//! <out>/seed_01/wins.csv    episode,steps,shortcut,instruction_match
//! <out>/seed_01/updates.csv per-update diagnostics
//! <out>/seed_01/heatmap.csv visit counts, plus heatmap.pgm
//! <out>/seed_01/last_win.txt action script of the last winning episode
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{gae_advantages, normalize, ActorCritic, Adam, AgentError, NoveltyCounter, NoveltyView, PolicyParams, PpoConfig, Sample, ValueTables};
use crate::eval::{auc, mean, significance, std_dev, success_rate, EpisodeRow, EvalError, Heatmap, RunRecord};
use crate::instruction::{degrade_type1, degrade_type2, match_level, Instruction, InstructionError, MatchLevel};
use crate::mdp::{Action, Environment, MdpError, Room, State, Trajectory, Transition};
use crate::shaping::{LrsMode, PotentialConfig, RewardRule, RuleKind, Shaper, ShapingError};

/// Environment variable naming the output root when `--out` is not given.
pub const OUT_DIR_ENV: &str = "LRS_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("malformed config: {0}")]
    Config(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad seed list {0:?}")]
    Seeds(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("cannot compare: {0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = HarnessError;
            fn from_str(s: &str) -> Result<Self, HarnessError> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(HarnessError::Invalid(format!(
                        "unknown {} {other:?} (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(AgentKind { Ppo => "ppo", PpoNovelty => "ppo_novelty", ActorCritic => "actor_critic" });
string_enum!(LrsKind { Off => "off", Rule1 => "rule1", Rule2 => "rule2", Rule3 => "rule3", PotentialShaping => "potential_shaping" });
string_enum!(Granularity { Full => "full", Type1 => "type1", Type2 => "type2" });

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}
fn default_win_cap() -> usize {
    1500
}
fn default_stride() -> usize {
    2
}
fn default_granularity() -> Granularity {
    Granularity::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Built-in room id or path to a `.room` file.
    pub room: String,
    /// Instruction file; empty selects the built-in instruction of the room.
    #[serde(default)]
    pub instruction: String,
    pub agent: AgentKind,
    pub lrs: LrsKind,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    /// Type-1 degradation keeps every `type1_stride`-th sentence.
    #[serde(default = "default_stride")]
    pub type1_stride: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub episodes: usize,
    #[serde(default = "default_win_cap")]
    pub win_cap: usize,
    #[serde(default)]
    pub output: String,
}

/// Room overrides. Unset values are filled from the room file when the config is resolved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub sticky_prob: Option<f64>,
    pub noop_max: Option<usize>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub r_full: f64,
    pub r_partial: f64,
    pub env_lang_coef: f64,
    pub intrinsic_coef: f64,
    pub potential_alpha: f64,
    pub potential_gamma: f64,
    pub env_clip: (f64, f64),
    pub lang_clip: (f64, f64),
    pub intrinsic_clip: (f64, f64),
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            r_full: 1.0,
            r_partial: 0.5,
            env_lang_coef: 3.0,
            intrinsic_coef: 1.0,
            potential_alpha: 1.0,
            potential_gamma: 0.99,
            env_clip: (0.0, 1.0),
            lang_clip: (0.0, 1.0),
            intrinsic_clip: (0.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorCriticSection {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
}

impl Default for ActorCriticSection {
    fn default() -> Self {
        ActorCriticSection { actor_lr: 0.1, critic_lr: 0.25, gamma: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub actor_critic: ActorCriticSection,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub episodes: Option<usize>,
    pub room: Option<String>,
    pub lrs: Option<LrsKind>,
    pub agent: Option<AgentKind>,
}

/// Parses `1-10`, `1,2,5` or a mix such as `1-3,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Seeds(text.to_string());
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::parse(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(HarnessError::Invalid("seed list is empty".into()));
        }
        let mut sorted = e.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != e.seeds.len() {
            return Err(HarnessError::Invalid("seeds must be distinct".into()));
        }
        if e.episodes == 0 {
            return Err(HarnessError::Invalid("episode budget must be at least 1".into()));
        }
        if e.win_cap == 0 {
            return Err(HarnessError::Invalid("win cap must be at least 1".into()));
        }
        if e.granularity == Granularity::Type1 && e.type1_stride < 2 {
            return Err(HarnessError::Invalid("type1_stride must be at least 2".into()));
        }
        if e.name.trim().is_empty() {
            return Err(HarnessError::Invalid("experiment name is empty".into()));
        }
        self.ppo.validate()?;
        let ac = &self.actor_critic;
        if !(ac.actor_lr > 0.0 && ac.critic_lr > 0.0 && ac.critic_lr <= 0.5 && ac.gamma > 0.0 && ac.gamma <= 1.0) {
            return Err(HarnessError::Invalid("actor_critic needs actor_lr > 0, critic_lr in (0, 0.5], gamma in (0, 1]".into()));
        }
        let r = &self.reward;
        RewardRule::with_magnitudes(RuleKind::FullyMatched, r.r_full, r.r_partial)?;
        PotentialConfig::new(r.potential_alpha, r.potential_gamma)?;
        for (name, (lo, hi)) in [("env_clip", r.env_clip), ("lang_clip", r.lang_clip), ("intrinsic_clip", r.intrinsic_clip)] {
            if lo > hi {
                return Err(HarnessError::Invalid(format!("{name} has lower bound above upper bound")));
            }
        }
        if let Some(p) = self.environment.sticky_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::Invalid(format!("sticky_prob {p} outside [0, 1]")));
            }
        }
        if self.environment.max_steps == Some(0) {
            return Err(HarnessError::Invalid("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(out) = &o.out {
            self.experiment.output = out.display().to_string();
        }
        if let Some(seeds) = &o.seeds {
            self.experiment.seeds = seeds.clone();
        }
        if let Some(n) = o.episodes {
            self.experiment.episodes = n;
        }
        if let Some(room) = &o.room {
            self.experiment.room = room.clone();
            self.experiment.instruction.clear();
            self.environment = EnvironmentSection::default();
        }
        if let Some(lrs) = o.lrs {
            self.experiment.lrs = lrs;
        }
        if let Some(agent) = o.agent {
            self.experiment.agent = agent;
        }
        if o.out.is_none() && self.experiment.output.is_empty() {
            let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            self.experiment.output = root.join(&self.experiment.name).display().to_string();
        }
        self.validate()
    }

    /// Loads the room and instruction and fills every unset room parameter.
    pub fn resolve(&self) -> Result<Setup, HarnessError> {
        self.validate()?;
        let e = &self.experiment;
        let mut spec = Room::resolve(&e.room)?.spec().clone();
        let env = &self.environment;
        spec.sticky_prob = env.sticky_prob.unwrap_or(spec.sticky_prob);
        spec.noop_max = env.noop_max.unwrap_or(spec.noop_max);
        spec.max_steps = env.max_steps.unwrap_or(spec.max_steps);
        let room = Arc::new(Room::new(spec)?);

        let reference = if e.instruction.is_empty() {
            Instruction::builtin(&e.room).ok()
        } else {
            Some(Instruction::load(Path::new(&e.instruction))?)
        };
        let shaping_instruction = match (&reference, e.lrs) {
            (_, LrsKind::Off) => None,
            (None, _) => {
                return Err(HarnessError::Invalid(format!("room {:?} has no instruction, so LRS mode {} cannot run", e.room, e.lrs)));
            }
            (Some(instr), _) => Some(match e.granularity {
                Granularity::Full => instr.clone(),
                Granularity::Type1 => degrade_type1(instr, e.type1_stride)?,
                Granularity::Type2 => degrade_type2(instr)?,
            }),
        };
        if e.agent == AgentKind::ActorCritic && e.lrs == LrsKind::PotentialShaping {
            return Err(HarnessError::Invalid("actor_critic uses undiscounted Monte Carlo targets; pair it with a rule, not potential shaping".into()));
        }
        let r = &self.reward;
        let mode = match e.lrs {
            LrsKind::Off => LrsMode::Off,
            LrsKind::Rule1 => LrsMode::Rule(RewardRule::with_magnitudes(RuleKind::FullyMatched, r.r_full, r.r_partial)?),
            LrsKind::Rule2 => LrsMode::Rule(RewardRule::with_magnitudes(RuleKind::PartiallyMatched, r.r_full, r.r_partial)?),
            LrsKind::Rule3 => LrsMode::Rule(RewardRule::with_magnitudes(RuleKind::RelaxedOrdering, r.r_full, r.r_partial)?),
            LrsKind::PotentialShaping => LrsMode::Potential(PotentialConfig::new(r.potential_alpha, r.potential_gamma)?),
        };
        let mut echo = self.clone();
        echo.environment = EnvironmentSection {
            sticky_prob: Some(room.spec().sticky_prob),
            noop_max: Some(room.spec().noop_max),
            max_steps: Some(room.max_steps()),
        };
        Ok(Setup { config: echo, room, reference, instruction: shaping_instruction, mode })
    }
}

/// A resolved experiment ready to train.
#[derive(Debug, Clone)]
pub struct Setup {
    /// Config with every room parameter filled in.
    pub config: ExperimentConfig,
    pub room: Arc<Room>,
    /// Undegraded instruction used to judge wins, when the room has one.
    pub reference: Option<Instruction>,
    /// Instruction the shaper matches against (possibly degraded).
    pub instruction: Option<Instruction>,
    pub mode: LrsMode,
}

impl Setup {
    /// Config echo written next to the results.
    pub fn echo(&self) -> String {
        toml::to_string(&self.config).expect("config serialises")
    }

    /// SHA-256 of the echo with the output path blanked.
    pub fn config_hash(&self) -> String {
        let mut c = self.config.clone();
        c.experiment.output.clear();
        let text = toml::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRow {
    pub episode: usize,
    pub steps: usize,
    #[serde(with = "bool01")]
    pub shortcut: bool,
    #[serde(with = "bool01")]
    pub instruction_match: bool,
}

mod bool01 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        Ok(u8::deserialize(d)? != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub update: usize,
    pub episodes: usize,
    pub wins: usize,
    pub clip_fraction: f64,
    pub mean_entropy: f64,
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub record: RunRecord,
    pub wins: Vec<WinRow>,
    pub updates: Vec<UpdateRow>,
    pub heatmap: Heatmap,
    /// Action script of the last winning episode.
    pub last_win: Option<Vec<Action>>,
}

/// Per-episode bookkeeping shared by both agents.
struct Recorder<'a> {
    setup: &'a Setup,
    rows: Vec<EpisodeRow>,
    wins: Vec<WinRow>,
    heatmap: Heatmap,
    n_wins: usize,
    last_win: Option<Vec<Action>>,
}

impl<'a> Recorder<'a> {
    fn new(setup: &'a Setup) -> Recorder<'a> {
        Recorder { setup, rows: Vec::new(), wins: Vec::new(), heatmap: Heatmap::new(setup.room.rows(), setup.room.cols()), n_wins: 0, last_win: None }
    }

    fn finished(&self) -> bool {
        let e = &self.setup.config.experiment;
        self.rows.len() >= e.episodes || self.n_wins >= e.win_cap
    }

    fn into_outcome(self, seed: u64, updates: Vec<UpdateRow>) -> SeedOutcome {
        let record = RunRecord { seed, config_hash: self.setup.config_hash(), rows: self.rows };
        SeedOutcome { record, wins: self.wins, updates, heatmap: self.heatmap, last_win: self.last_win }
    }

    fn push(&mut self, episode: &Finished) {
        if self.finished() {
            return;
        }
        let traj = Trajectory { transitions: episode.transitions.clone() };
        let won = traj.won();
        let index = self.rows.len() + 1;
        self.rows.push(EpisodeRow { episode: index, steps: traj.len(), env_r: episode.env_r, lang_r: episode.lang_r, int_r: episode.int_r, win: won });
        self.heatmap.add(&traj).expect("room and heatmap share a shape");
        if won {
            self.n_wins += 1;
            let shortcut = traj.transitions.iter().any(|t| self.setup.room.is_cliff_drop(t));
            let instruction_match = self.setup.reference.as_ref().is_some_and(|i| match_level(&traj, i).level == MatchLevel::Full);
            self.wins.push(WinRow { episode: index, steps: traj.len(), shortcut, instruction_match });
            self.last_win = Some(traj.actions().collect());
        }
    }
}

struct Finished {
    transitions: Vec<Transition>,
    env_r: f64,
    lang_r: f64,
    int_r: f64,
}

struct StepRecord {
    state: usize,
    action: usize,
    logp: f64,
    r_env: f64,
    r_lang: f64,
    r_int: f64,
    done: bool,
    next_state: usize,
}

struct Worker {
    env: Environment,
    rng: ChaCha8Rng,
    state: State,
    episode: Vec<Transition>,
    shaper: Shaper,
    totals: (f64, f64, f64),
}

fn clip(x: f64, (lo, hi): (f64, f64)) -> f64 {
    x.clamp(lo, hi)
}

impl Worker {
    fn new(setup: &Setup, seed: u64, index: usize) -> Worker {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let mut env = Environment::new(Arc::clone(&setup.room));
        let state = env.reset(rng.gen());
        let n = setup.instruction.as_ref().map_or(0, Instruction::len);
        Worker { env, rng, state, episode: Vec::new(), shaper: Shaper::new(setup.mode, n), totals: (0.0, 0.0, 0.0) }
    }

    /// One environment step. Returns the record and, when the episode ended, the episode.
    fn step(&mut self, setup: &Setup, policy: &PolicyParams, novelty: Option<&mut NoveltyView>) -> (StepRecord, Option<Finished>) {
        let room = &setup.room;
        let reward = &setup.config.reward;
        let s = room.state_index(&self.state);
        let (a, logp) = policy.sample(s, &mut self.rng);
        let t = self.env.step(&self.state, Action::from_index(a).expect("sampled action index")).expect("workers only step live states");
        self.episode.push(t);
        let lang = match (&setup.instruction, setup.mode) {
            (Some(instr), LrsMode::Potential(_)) => self.shaper.step(&self.episode, instr),
            (Some(instr), _) => clip(self.shaper.step(&self.episode, instr), reward.lang_clip),
            (None, _) => 0.0,
        };
        let next = room.state_index(&t.next_state);
        // a dead agent has nothing left to explore, so deaths earn no bonus
        let int = match novelty {
            Some(v) if !t.death => clip(v.bonus(next), reward.intrinsic_clip),
            _ => 0.0,
        };
        let env_r = clip(t.env_reward, reward.env_clip);
        self.totals.0 += env_r;
        self.totals.1 += lang;
        self.totals.2 += int;
        // running out of time counts as terminal
        let done = t.done || self.episode.len() >= room.max_steps();
        self.state = t.next_state;
        let rec = StepRecord { state: s, action: a, logp, r_env: env_r, r_lang: lang, r_int: int, done, next_state: next };
        if !done {
            return (rec, None);
        }
        let (env_r, lang_r, int_r) = self.totals;
        let finished = Finished { transitions: std::mem::take(&mut self.episode), env_r, lang_r, int_r };
        self.totals = (0.0, 0.0, 0.0);
        self.shaper.reset();
        self.state = self.env.reset(self.rng.gen());
        (rec, Some(finished))
    }
}

/// Trains one seed with PPO (optionally with the novelty bonus).
fn train_ppo(setup: &Setup, seed: u64) -> Result<SeedOutcome, HarnessError> {
    let cfg = setup.config.ppo;
    let reward = setup.config.reward;
    let n_states = setup.room.n_states();
    let use_novelty = setup.config.experiment.agent == AgentKind::PpoNovelty;
    let mut policy = PolicyParams::zeros(n_states);
    let mut values = ValueTables::zeros(n_states);
    let mut adam = Adam::new(policy.theta.len());
    let mut novelty = NoveltyCounter::new(n_states);
    let mut update_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut workers: Vec<Worker> = (0..cfg.n_envs).map(|w| Worker::new(setup, seed, w)).collect();
    let mut recorder = Recorder::new(setup);
    let mut updates = Vec::new();

    while !recorder.finished() {
        let snapshot = &policy;
        let base = &novelty;
        let rounds: Vec<(Vec<StepRecord>, Vec<Finished>, Option<NoveltyView>)> = workers
            .par_iter_mut()
            .map(|w| {
                let mut view = use_novelty.then(|| base.view());
                let mut steps = Vec::with_capacity(cfg.rollout_length);
                let mut finished = Vec::new();
                for _ in 0..cfg.rollout_length {
                    let (rec, done) = w.step(setup, snapshot, view.as_mut());
                    steps.push(rec);
                    finished.extend(done);
                }
                (steps, finished, view)
            })
            .collect();

        let mut batch = Vec::with_capacity(cfg.rollout_length * cfg.n_envs);
        for (steps, finished, view) in &rounds {
            if let Some(v) = view {
                novelty.merge(v);
            }
            for f in finished {
                recorder.push(f);
            }
            batch.extend(worker_samples(steps, &values, &cfg, &reward)?);
        }
        let mut adv: Vec<f64> = batch.iter().map(|s: &Sample| s.advantage).collect();
        normalize(&mut adv);
        for (s, a) in batch.iter_mut().zip(adv) {
            s.advantage = a;
        }
        let stats = crate::agent::ppo_update(&batch, &mut policy, &mut values, &mut adam, &cfg, &mut update_rng)?;
        updates.push(UpdateRow {
            update: updates.len() + 1,
            episodes: recorder.rows.len(),
            wins: recorder.n_wins,
            clip_fraction: stats.clip_fraction,
            mean_entropy: stats.mean_entropy,
        });
    }
    Ok(recorder.into_outcome(seed, updates))
}

/// Per-stream GAE for one worker's rollout, mixed into a single advantage.
fn worker_samples(steps: &[StepRecord], values: &ValueTables, cfg: &PpoConfig, reward: &crate::harness::RewardSection) -> Result<Vec<Sample>, HarnessError> {
    let last = steps.last().expect("rollouts are non-empty");
    let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
    let never = vec![false; steps.len()];
    let stream = |r: &dyn Fn(&StepRecord) -> f64, table: &[f64], dones: &[bool], episodic: bool, gamma: f64| {
        let rewards: Vec<f64> = steps.iter().map(r).collect();
        let v: Vec<f64> = steps.iter().map(|s| table[s.state]).collect();
        let bootstrap = if episodic && last.done { 0.0 } else { table[last.next_state] };
        gae_advantages(&rewards, &v, dones, bootstrap, gamma, cfg.gae_lambda).map(|adv| {
            let returns: Vec<f64> = adv.iter().zip(&v).map(|(a, v)| a + v).collect();
            (adv, returns)
        })
    };
    let (a_env, ret_env) = stream(&|s| s.r_env, &values.env, &dones, true, cfg.gamma_env)?;
    let (a_lang, ret_lang) = stream(&|s| s.r_lang, &values.lang, &dones, true, cfg.gamma_lang)?;
    // the novelty stream ignores episode boundaries
    let (a_int, ret_int) = stream(&|s| s.r_int, &values.int, &never, false, cfg.gamma_int)?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(t, s)| Sample {
            state: s.state,
            action: s.action,
            old_logp: s.logp,
            advantage: reward.env_lang_coef * (a_env[t] + a_lang[t]) + reward.intrinsic_coef * a_int[t],
            ret_env: ret_env[t],
            ret_lang: ret_lang[t],
            ret_int: ret_int[t],
        })
        .collect())
}

/// Trains one seed with the Monte Carlo actor-critic on a single environment.
fn train_actor_critic(setup: &Setup, seed: u64) -> Result<SeedOutcome, HarnessError> {
    let ac_cfg = setup.config.actor_critic;
    let reward = setup.config.reward;
    let mut agent = ActorCritic::new(setup.room.n_states(), ac_cfg.actor_lr, ac_cfg.critic_lr);
    let mut worker = Worker::new(setup, seed, 0);
    let mut recorder = Recorder::new(setup);
    let mut updates = Vec::new();
    let mut steps = Vec::new();
    let mut rewards = Vec::new();
    while !recorder.finished() {
        let (rec, done) = worker.step(setup, &agent.policy, None);
        steps.push((rec.state, rec.action));
        rewards.push(reward.env_lang_coef * (rec.r_env + rec.r_lang));
        if let Some(f) = done {
            agent.update_episode(&steps, &rewards, ac_cfg.gamma)?;
            let mean_entropy = steps.iter().map(|(s, _)| agent.policy.entropy(*s)).sum::<f64>() / steps.len() as f64;
            steps.clear();
            rewards.clear();
            recorder.push(&f);
            updates.push(UpdateRow { update: updates.len() + 1, episodes: recorder.rows.len(), wins: recorder.n_wins, clip_fraction: 0.0, mean_entropy });
        }
    }
    Ok(recorder.into_outcome(seed, updates))
}

/// Trains one seed. Deterministic given the setup and the seed.
pub fn train_seed(setup: &Setup, seed: u64) -> Result<SeedOutcome, HarnessError> {
    match setup.config.experiment.agent {
        AgentKind::Ppo | AgentKind::PpoNovelty => train_ppo(setup, seed),
        AgentKind::ActorCritic => train_actor_critic(setup, seed),
    }
}

/// Trains every seed in parallel without touching the filesystem.
pub fn train_all(setup: &Setup) -> Result<Vec<SeedOutcome>, HarnessError> {
    setup.config.experiment.seeds.par_iter().map(|&seed| train_seed(setup, seed)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub room: String,
    pub agent: AgentKind,
    pub lrs: LrsKind,
    pub granularity: Granularity,
    pub episodes: usize,
    pub win_cap: usize,
    pub config_hash: String,
    pub code_version: String,
    pub created_unix: u64,
    pub seeds: Vec<u64>,
    pub auc: Vec<f64>,
    pub wins: Vec<usize>,
    pub shortcut_wins: Vec<usize>,
    pub matching_wins: Vec<usize>,
    /// Heatmap-weighted mean Manhattan distance of visited cells from the start cell.
    pub distance: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub success_rate: f64,
    pub mean_distance: f64,
}

impl Summary {
    pub fn compute(setup: &Setup, outcomes: &[SeedOutcome]) -> Result<Summary, HarnessError> {
        let e = &setup.config.experiment;
        let records: Vec<RunRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
        let aucs = records.iter().map(|r| auc(r, e.episodes, e.win_cap)).collect::<Result<Vec<_>, _>>()?;
        let start = setup.room.start_cell();
        let distance: Vec<f64> = outcomes.iter().map(|o| o.heatmap.mean_distance_from(start)).collect();
        Ok(Summary {
            name: e.name.clone(),
            room: setup.room.name().to_string(),
            agent: e.agent,
            lrs: e.lrs,
            granularity: e.granularity,
            episodes: e.episodes,
            win_cap: e.win_cap,
            config_hash: setup.config_hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seeds: records.iter().map(|r| r.seed).collect(),
            mean_auc: mean(&aucs),
            std_auc: std_dev(&aucs),
            auc: aucs,
            wins: records.iter().map(RunRecord::wins).collect(),
            shortcut_wins: outcomes.iter().map(|o| o.wins.iter().filter(|w| w.shortcut).count()).collect(),
            matching_wins: outcomes.iter().map(|o| o.wins.iter().filter(|w| w.instruction_match).count()).collect(),
            success_rate: success_rate(&records)?,
            mean_distance: mean(&distance),
            distance,
        })
    }

    /// True when everything except the creation time agrees.
    pub fn same_statistics(&self, other: &Summary) -> bool {
        Summary { created_unix: 0, ..self.clone() } == Summary { created_unix: 0, ..other.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub dir: PathBuf,
    pub run_paths: Vec<PathBuf>,
    pub summary: Summary,
    pub outcomes: Vec<SeedOutcome>,
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed:02}"))
}

fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| HarnessError::Csv(format!("{}: {e}", path.display())))
}

/// Writes the run directory for already-trained outcomes.
pub fn persist(setup: &Setup, outcomes: Vec<SeedOutcome>) -> Result<ExperimentResult, HarnessError> {
    let dir = PathBuf::from(&setup.config.experiment.output);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_text(&dir.join("config.toml"), &setup.echo())?;
    let mut run_paths = Vec::new();
    for o in &outcomes {
        let sd = seed_dir(&dir, o.record.seed);
        fs::create_dir_all(&sd).map_err(io_err(&sd))?;
        let run = sd.join("run.csv");
        let mut buf = Vec::new();
        o.record.write_csv(&mut buf)?;
        fs::write(&run, buf).map_err(io_err(&run))?;
        run_paths.push(run);
        write_text(&sd.join("wins.csv"), &csv_string(&o.wins, &["episode", "steps", "shortcut", "instruction_match"])?)?;
        write_text(&sd.join("updates.csv"), &csv_string(&o.updates, &["update", "episodes", "wins", "clip_fraction", "mean_entropy"])?)?;
        write_text(&sd.join("heatmap.csv"), &o.heatmap.to_csv())?;
        write_text(&sd.join("heatmap.pgm"), &o.heatmap.to_pgm())?;
        if let Some(script) = &o.last_win {
            let names: Vec<&str> = script.iter().map(|a| a.name()).collect();
            write_text(&sd.join("last_win.txt"), &format!("{}\n", names.join(" ")))?;
        }
    }
    let summary = Summary::compute(setup, &outcomes)?;
    write_text(&dir.join("summary.toml"), &toml::to_string(&summary).expect("summary serialises"))?;
    let mut boxplot = String::from("seed,auc\n");
    for (seed, a) in summary.seeds.iter().zip(&summary.auc) {
        boxplot.push_str(&format!("{seed},{a}\n"));
    }
    write_text(&dir.join("auc_boxplot.csv"), &boxplot)?;
    Ok(ExperimentResult { dir, run_paths, summary, outcomes })
}

/// Trains every configured seed and writes the run directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let setup = config.resolve()?;
    let dir = PathBuf::from(&setup.config.experiment.output);
    if dir.as_os_str().is_empty() {
        return Err(HarnessError::Invalid("no output directory configured".into()));
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let outcomes = train_all(&setup)?;
    persist(&setup, outcomes)
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub setup: Setup,
    pub summary: Summary,
    pub outcomes: Vec<SeedOutcome>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, HarnessError> {
    let config = ExperimentConfig::parse(&read_text(&dir.join("config.toml"))?)?;
    let setup = config.resolve()?;
    let summary: Summary = toml::from_str(&read_text(&dir.join("summary.toml"))?).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.join("summary.toml").display())))?;
    let hash = setup.config_hash();
    let mut outcomes = Vec::new();
    for &seed in &setup.config.experiment.seeds {
        let sd = seed_dir(dir, seed);
        let run = sd.join("run.csv");
        let record = RunRecord::read_csv(fs::File::open(&run).map_err(io_err(&run))?, seed, &hash)?;
        let wins = read_csv_rows(&sd.join("wins.csv"))?;
        let updates = read_csv_rows(&sd.join("updates.csv"))?;
        let heatmap = Heatmap::from_csv(&read_text(&sd.join("heatmap.csv"))?)?;
        let script = sd.join("last_win.txt");
        let last_win = if script.exists() { Some(Action::parse_script(&read_text(&script)?)?) } else { None };
        outcomes.push(SeedOutcome { record, wins, updates, heatmap, last_win });
    }
    Ok(LoadedRun { setup, summary, outcomes })
}

/// Recomputes the summary from the persisted per-seed files.
pub fn recompute_summary(dir: &Path) -> Result<(Summary, Summary), HarnessError> {
    let loaded = load_run(dir)?;
    let fresh = Summary::compute(&loaded.setup, &loaded.outcomes)?;
    Ok((loaded.summary, fresh))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionStats {
    pub name: String,
    pub n: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub success_rate: f64,
    pub aucs: Vec<f64>,
}

impl ConditionStats {
    fn from_run(run: &LoadedRun) -> Result<ConditionStats, HarnessError> {
        let e = &run.setup.config.experiment;
        let aucs = run.outcomes.iter().map(|o| auc(&o.record, e.episodes, e.win_cap)).collect::<Result<Vec<_>, _>>()?;
        let records: Vec<RunRecord> = run.outcomes.iter().map(|o| o.record.clone()).collect();
        Ok(ConditionStats { name: e.name.clone(), n: aucs.len(), mean_auc: mean(&aucs), std_auc: std_dev(&aucs), success_rate: success_rate(&records)?, aucs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub reference: ConditionStats,
    pub candidate: ConditionStats,
    /// One-sided p-value for "candidate AUC below reference AUC".
    pub p_value: f64,
    pub exact: bool,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>4} {:>16} {:>6}", "condition", "n", "AUC mean±std", "SR")?;
        for c in [&self.reference, &self.candidate] {
            writeln!(f, "{:<24} {:>4} {:>8.4}±{:<7.4} {:>6.2}", c.name, c.n, c.mean_auc, c.std_auc, c.success_rate)?;
        }
        write!(f, "p(candidate < reference) = {:.4} ({})", self.p_value, if self.exact { "exact" } else { "normal approx." })
    }
}

/// Compares two run directories on AUC. Both must use the same room, budget and win cap.
pub fn compare(reference: &Path, candidate: &Path) -> Result<Comparison, HarnessError> {
    let a = load_run(reference)?;
    let b = load_run(candidate)?;
    compare_loaded(&a, &b)
}

pub fn compare_loaded(a: &LoadedRun, b: &LoadedRun) -> Result<Comparison, HarnessError> {
    let (ea, eb) = (&a.setup.config.experiment, &b.setup.config.experiment);
    if a.setup.room.name() != b.setup.room.name() {
        return Err(HarnessError::Mismatch(format!("rooms differ ({} vs {})", a.setup.room.name(), b.setup.room.name())));
    }
    if ea.episodes != eb.episodes || ea.win_cap != eb.win_cap {
        return Err(HarnessError::Mismatch(format!("budgets differ ({}/{} vs {}/{})", ea.episodes, ea.win_cap, eb.episodes, eb.win_cap)));
    }
    let reference = ConditionStats::from_run(a)?;
    let candidate = ConditionStats::from_run(b)?;
    let sig = significance(&candidate.aucs, &reference.aucs)?;
    Ok(Comparison { reference, candidate, p_value: sig.p_value, exact: sig.exact })
}

/// Merges the per-seed heatmaps of a run, writes `heatmap.csv` and `heatmap.pgm` at its top level
/// and returns the merged map with its mean distance from the start cell.
pub fn merge_heatmaps(dir: &Path) -> Result<(Heatmap, f64), HarnessError> {
    let run = load_run(dir)?;
    let mut merged = Heatmap::new(run.setup.room.rows(), run.setup.room.cols());
    for o in &run.outcomes {
        merged.merge(&o.heatmap)?;
    }
    write_text(&dir.join("heatmap.csv"), &merged.to_csv())?;
    write_text(&dir.join("heatmap.pgm"), &merged.to_pgm())?;
    let d = merged.mean_distance_from(run.setup.room.start_cell());
    Ok((merged, d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GranularityRow {
    pub condition: Granularity,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// One-sided p-value for "AUC below the full instruction".
    pub p_vs_full: f64,
    pub std_ratio: f64,
}

/// Runs the config with the full, Type-1 and Type-2 instructions under `<output>/{full,type1,type2}`
/// and writes `<output>/granularity.csv`.
pub fn sweep_granularity(config: &ExperimentConfig) -> Result<Vec<GranularityRow>, HarnessError> {
    if config.experiment.lrs == LrsKind::Off {
        return Err(HarnessError::Invalid("granularity sweep needs an LRS mode".into()));
    }
    let root = PathBuf::from(&config.experiment.output);
    let mut stats = Vec::new();
    for g in [Granularity::Full, Granularity::Type1, Granularity::Type2] {
        let mut c = config.clone();
        c.experiment.granularity = g;
        c.experiment.name = format!("{}_{}", config.experiment.name, g);
        c.experiment.output = root.join(g.as_str()).display().to_string();
        let result = run_experiment(&c)?;
        stats.push((g, result.summary.auc.clone()));
    }
    let full = stats[0].1.clone();
    let full_std = std_dev(&full);
    let mut rows = Vec::new();
    for (g, aucs) in stats {
        let p = significance(&aucs, &full)?.p_value;
        let std = std_dev(&aucs);
        rows.push(GranularityRow { condition: g, mean_auc: mean(&aucs), std_auc: std, p_vs_full: p, std_ratio: if full_std > 0.0 { std / full_std } else { f64::INFINITY } });
    }
    write_text(&root.join("granularity.csv"), &csv_string(&rows, &["condition", "mean_auc", "std_auc", "p_vs_full", "std_ratio"])?)?;
    Ok(rows)
}
