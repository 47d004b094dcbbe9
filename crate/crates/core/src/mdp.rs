//! Side-view grid rooms standing in for the Montezuma's Revenge screens.
//!
//! A room is a rectangular tile map read from a plain-text file, one character per tile:
//!
//! | char | tile        | behaviour                                                        |
//! |------|-------------|------------------------------------------------------------------|
//! | `#`  | wall        | never entered; moves into it are ignored                         |
//! | `.`  | air         | entering it is a fatal fall                                      |
//! | `-`  | platform    | walkable                                                         |
//! | `S`  | start       | walkable platform, the unique start cell                         |
//! | `H`  | ladder      | walkable, `Up`/`Down` climb                                      |
//! | `\|` | rope        | walkable, `Up`/`Down` climb, can be jumped onto                  |
//! | `<`  | conveyor    | walkable, drifts the agent one cell left unless it moves sideways |
//! | `>`  | conveyor    | as `<`, drifting right                                           |
//! | `x`  | hazard      | entering it is fatal                                             |
//! | `k`  | key         | walkable, entering it picks up the key                           |
//! | `D`  | door        | goal when entered holding the key, otherwise blocks              |
//! | `G`  | goal        | goal without a key requirement                                   |
//! | `C`  | cliff drop  | entering it drops the agent to the first floor below (survivable) |
//!
//! Each room has exactly one `S` and exactly one goal tile (`D` or `G`). A room file starts with
//! optional `key = value` header lines (`name`, `max_steps`, `sticky`, `noop_max`, `solution`,
//! `shortcut`), then a line reading `[grid]` followed by the tile rows. Lines starting with `;`
//! are comments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_STEPS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("room has no tiles")]
    EmptyGrid,
    #[error("row {row} has {found} tiles, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("unknown tile character {ch:?} at row {row}, col {col}")]
    UnknownTile { ch: char, row: usize, col: usize },
    #[error("room must contain exactly one start tile, found {0}")]
    StartCount(usize),
    #[error("room must contain exactly one goal tile (D or G), found {0}")]
    GoalCount(usize),
    #[error("a door room needs at least one key tile")]
    MissingKey,
    #[error("malformed room header line {line}: {text}")]
    BadHeader { line: usize, text: String },
    #[error("room file has no [grid] section")]
    MissingGrid,
    #[error("unknown action name {0:?}")]
    UnknownAction(String),
    #[error("sticky-action probability {0} outside [0, 1]")]
    BadSticky(f64),
    #[error("cannot step from a terminal state")]
    TerminalState,
    #[error("unknown built-in room {0:?}")]
    UnknownRoom(String),
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Jump,
    JumpLeft,
    JumpRight,
    NoOp,
}

impl Action {
    pub const COUNT: usize = 8;
    pub const ALL: [Action; Action::COUNT] = [
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::Jump,
        Action::JumpLeft,
        Action::JumpRight,
        Action::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "Left",
            Action::Right => "Right",
            Action::Up => "Up",
            Action::Down => "Down",
            Action::Jump => "Jump",
            Action::JumpLeft => "JumpLeft",
            Action::JumpRight => "JumpRight",
            Action::NoOp => "NoOp",
        }
    }

    /// Sideways moves cancel conveyor drift.
    fn is_horizontal(self) -> bool {
        matches!(self, Action::Left | Action::Right | Action::JumpLeft | Action::JumpRight)
    }

    /// Parses a whitespace separated action script such as `"Down Down Right"`.
    pub fn parse_script(text: &str) -> Result<Vec<Action>, MdpError> {
        text.split_whitespace().map(str::parse).collect()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = MdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace(['_', '-'], "");
        let action = match lower.as_str() {
            "left" | "l" => Action::Left,
            "right" | "r" => Action::Right,
            "up" | "u" => Action::Up,
            "down" | "d" => Action::Down,
            "jump" | "j" => Action::Jump,
            "jumpleft" | "jl" => Action::JumpLeft,
            "jumpright" | "jr" => Action::JumpRight,
            "noop" | "n" => Action::NoOp,
            _ => return Err(MdpError::UnknownAction(s.to_string())),
        };
        Ok(action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tile {
    Wall,
    Air,
    Platform,
    Start,
    Ladder,
    Rope,
    ConveyorLeft,
    ConveyorRight,
    Hazard,
    Key,
    Door,
    Goal,
    Cliff,
}

impl Tile {
    fn from_char(ch: char) -> Option<Tile> {
        let tile = match ch {
            '#' => Tile::Wall,
            '.' => Tile::Air,
            '-' => Tile::Platform,
            'S' => Tile::Start,
            'H' => Tile::Ladder,
            '|' => Tile::Rope,
            '<' => Tile::ConveyorLeft,
            '>' => Tile::ConveyorRight,
            'x' => Tile::Hazard,
            'k' => Tile::Key,
            'D' => Tile::Door,
            'G' => Tile::Goal,
            'C' => Tile::Cliff,
            _ => return None,
        };
        Some(tile)
    }

    pub fn to_char(self) -> char {
        match self {
            Tile::Wall => '#',
            Tile::Air => '.',
            Tile::Platform => '-',
            Tile::Start => 'S',
            Tile::Ladder => 'H',
            Tile::Rope => '|',
            Tile::ConveyorLeft => '<',
            Tile::ConveyorRight => '>',
            Tile::Hazard => 'x',
            Tile::Key => 'k',
            Tile::Door => 'D',
            Tile::Goal => 'G',
            Tile::Cliff => 'C',
        }
    }

    fn is_climbable(self) -> bool {
        matches!(self, Tile::Ladder | Tile::Rope)
    }

    /// Tiles the agent can occupy while alive.
    fn is_walkable(self) -> bool {
        matches!(
            self,
            Tile::Platform
                | Tile::Start
                | Tile::Ladder
                | Tile::Rope
                | Tile::ConveyorLeft
                | Tile::ConveyorRight
                | Tile::Key
                | Tile::Door
                | Tile::Goal
        )
    }
}

/// Symbolic agent state. Mount flags are derived from the tile under the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub row: usize,
    pub col: usize,
    pub has_key: bool,
    pub on_ladder: bool,
    pub on_rope: bool,
    pub on_conveyor: bool,
    pub alive: bool,
    pub at_goal: bool,
}

impl State {
    pub fn is_terminal(&self) -> bool {
        !self.alive || self.at_goal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub next_state: State,
    pub env_reward: f64,
    pub done: bool,
    pub death: bool,
}

/// Chained sequence of transitions from one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn initial_state(&self) -> Option<State> {
        self.transitions.first().map(|t| t.state)
    }

    pub fn final_state(&self) -> Option<State> {
        self.transitions.last().map(|t| t.next_state)
    }

    pub fn won(&self) -> bool {
        self.transitions.iter().any(|t| t.env_reward > 0.0)
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.transitions.iter().map(|t| t.action)
    }

    /// `next_state` of each transition equals `state` of the following one.
    pub fn is_chained(&self) -> bool {
        self.transitions.windows(2).all(|w| w[0].next_state == w[1].state)
    }
}

/// Parsed room description.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<Tile>,
    pub max_steps: usize,
    pub sticky_prob: f64,
    /// Upper bound on random no-op actions applied at reset; 0 disables random starts.
    pub noop_max: usize,
    /// Scripted action sequence following the room's instruction.
    pub solution: Vec<Action>,
    /// Scripted action sequence reaching the goal off the instructed path, if any.
    pub shortcut: Vec<Action>,
}

impl RoomSpec {
    pub fn parse(text: &str) -> Result<RoomSpec, MdpError> {
        let mut name = String::from("room");
        let mut max_steps = DEFAULT_MAX_STEPS;
        let mut sticky_prob = 0.0;
        let mut noop_max = 0;
        let mut solution = Vec::new();
        let mut shortcut = Vec::new();
        let mut grid_lines: Option<Vec<&str>> = None;

        for (lineno, raw) in text.lines().enumerate() {
            if let Some(grid) = grid_lines.as_mut() {
                let line = raw.trim_end();
                if !line.is_empty() && !line.starts_with(';') {
                    grid.push(line);
                }
                continue;
            }
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            if line == "[grid]" {
                grid_lines = Some(Vec::new());
                continue;
            }
            let bad = || MdpError::BadHeader { line: lineno + 1, text: raw.to_string() };
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let value = value.trim();
            match key.trim() {
                "name" => name = value.to_string(),
                "max_steps" => max_steps = value.parse().map_err(|_| bad())?,
                "sticky" => sticky_prob = value.parse().map_err(|_| bad())?,
                "noop_max" => noop_max = value.parse().map_err(|_| bad())?,
                "solution" => solution = Action::parse_script(value)?,
                "shortcut" => shortcut = Action::parse_script(value)?,
                _ => return Err(bad()),
            }
        }

        let grid = grid_lines.ok_or(MdpError::MissingGrid)?;
        let mut spec = RoomSpec::from_grid(&name, &grid.join("\n"))?;
        spec.max_steps = max_steps;
        spec.sticky_prob = sticky_prob;
        spec.noop_max = noop_max;
        spec.solution = solution;
        spec.shortcut = shortcut;
        Ok(spec)
    }

    /// Builds a spec from tile rows only, with default episode settings.
    pub fn from_grid(name: &str, grid: &str) -> Result<RoomSpec, MdpError> {
        let rows: Vec<&str> = grid.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(MdpError::EmptyGrid);
        }
        let cols = rows[0].chars().count();
        let mut tiles = Vec::with_capacity(rows.len() * cols);
        for (r, line) in rows.iter().enumerate() {
            let found = line.chars().count();
            if found != cols {
                return Err(MdpError::RaggedRow { row: r, found, expected: cols });
            }
            for (c, ch) in line.chars().enumerate() {
                tiles.push(Tile::from_char(ch).ok_or(MdpError::UnknownTile { ch, row: r, col: c })?);
            }
        }
        Ok(RoomSpec {
            name: name.to_string(),
            rows: rows.len(),
            cols,
            tiles,
            max_steps: DEFAULT_MAX_STEPS,
            sticky_prob: 0.0,
            noop_max: 0,
            solution: Vec::new(),
            shortcut: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<RoomSpec, MdpError> {
        let text = std::fs::read_to_string(path).map_err(|e| MdpError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        RoomSpec::parse(&text)
    }

    /// One of the shipped rooms: `A1`, `A2`, `B3` or `chain`.
    pub fn builtin(id: &str) -> Result<RoomSpec, MdpError> {
        let text = match id.to_ascii_lowercase().as_str() {
            "a1" => include_str!("../data/rooms/a1.room"),
            "a2" => include_str!("../data/rooms/a2.room"),
            "b3" => include_str!("../data/rooms/b3.room"),
            "chain" => include_str!("../data/rooms/chain.room"),
            _ => return Err(MdpError::UnknownRoom(id.to_string())),
        };
        RoomSpec::parse(text)
    }

    pub fn grid_text(&self) -> String {
        self.tiles
            .chunks(self.cols)
            .map(|row| row.iter().map(|t| t.to_char()).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Validated room with its transition function.
#[derive(Debug, Clone)]
pub struct Room {
    spec: RoomSpec,
    start: (usize, usize),
    goal: (usize, usize),
}

impl Room {
    pub fn new(spec: RoomSpec) -> Result<Room, MdpError> {
        if spec.tiles.is_empty() {
            return Err(MdpError::EmptyGrid);
        }
        if !(0.0..=1.0).contains(&spec.sticky_prob) {
            return Err(MdpError::BadSticky(spec.sticky_prob));
        }
        let positions = |pred: fn(Tile) -> bool| -> Vec<(usize, usize)> {
            spec.tiles
                .iter()
                .enumerate()
                .filter(|(_, t)| pred(**t))
                .map(|(i, _)| (i / spec.cols, i % spec.cols))
                .collect()
        };
        let starts = positions(|t| t == Tile::Start);
        if starts.len() != 1 {
            return Err(MdpError::StartCount(starts.len()));
        }
        let goals = positions(|t| matches!(t, Tile::Door | Tile::Goal));
        if goals.len() != 1 {
            return Err(MdpError::GoalCount(goals.len()));
        }
        let goal = goals[0];
        if spec.tiles[goal.0 * spec.cols + goal.1] == Tile::Door && positions(|t| t == Tile::Key).is_empty() {
            return Err(MdpError::MissingKey);
        }
        Ok(Room { start: starts[0], goal, spec })
    }

    pub fn builtin(id: &str) -> Result<Room, MdpError> {
        Room::new(RoomSpec::builtin(id)?)
    }

    /// Resolves a room identifier: a built-in name or a path to a room file.
    pub fn resolve(id_or_path: &str) -> Result<Room, MdpError> {
        match RoomSpec::builtin(id_or_path) {
            Ok(spec) => Room::new(spec),
            Err(MdpError::UnknownRoom(_)) if Path::new(id_or_path).exists() => {
                Room::new(RoomSpec::load(Path::new(id_or_path))?)
            }
            Err(e) => Err(e),
        }
    }

    pub fn spec(&self) -> &RoomSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal
    }

    pub fn max_steps(&self) -> usize {
        self.spec.max_steps
    }

    pub fn tile(&self, row: usize, col: usize) -> Tile {
        self.spec.tiles[row * self.spec.cols + col]
    }

    fn tile_at(&self, row: isize, col: isize) -> Option<Tile> {
        if row < 0 || col < 0 || row as usize >= self.spec.rows || col as usize >= self.spec.cols {
            None
        } else {
            Some(self.tile(row as usize, col as usize))
        }
    }

    /// Number of tabular states: every cell, with and without the key.
    pub fn n_states(&self) -> usize {
        self.spec.rows * self.spec.cols * 2
    }

    pub fn state_index(&self, state: &State) -> usize {
        (state.row * self.spec.cols + state.col) * 2 + usize::from(state.has_key)
    }

    pub fn initial_state(&self) -> State {
        self.make_state(self.start.0, self.start.1, false)
    }

    fn make_state(&self, row: usize, col: usize, has_key: bool) -> State {
        let tile = self.tile(row, col);
        State {
            row,
            col,
            has_key,
            on_ladder: tile == Tile::Ladder,
            on_rope: tile == Tile::Rope,
            on_conveyor: matches!(tile, Tile::ConveyorLeft | Tile::ConveyorRight),
            alive: true,
            at_goal: false,
        }
    }

    fn dead_at(&self, row: usize, col: usize, has_key: bool) -> State {
        State {
            row,
            col,
            has_key,
            on_ladder: false,
            on_rope: false,
            on_conveyor: false,
            alive: false,
            at_goal: false,
        }
    }

    /// Outcome of trying to move into `(row, col)`.
    fn enter(&self, from: State, row: isize, col: isize) -> State {
        let Some(tile) = self.tile_at(row, col) else {
            return from;
        };
        let (r, c) = (row as usize, col as usize);
        match tile {
            Tile::Wall => from,
            Tile::Air | Tile::Hazard => self.dead_at(r, c, from.has_key),
            Tile::Cliff => {
                let mut below = r + 1;
                while below < self.spec.rows {
                    match self.tile(below, c) {
                        Tile::Air | Tile::Cliff => below += 1,
                        Tile::Wall => return self.make_state(r, c, from.has_key),
                        Tile::Hazard => return self.dead_at(below, c, from.has_key),
                        _ => return self.enter(from, below as isize, c as isize),
                    }
                }
                self.dead_at(self.spec.rows - 1, c, from.has_key)
            }
            Tile::Door => {
                if from.has_key {
                    let mut s = self.make_state(r, c, true);
                    s.at_goal = true;
                    s
                } else {
                    from
                }
            }
            Tile::Goal => {
                let mut s = self.make_state(r, c, from.has_key);
                s.at_goal = true;
                s
            }
            Tile::Key => self.make_state(r, c, true),
            _ => self.make_state(r, c, from.has_key),
        }
    }

    /// Deterministic tile physics for one action.
    pub fn transition(&self, state: &State, action: Action) -> State {
        let (r, c) = (state.row as isize, state.col as isize);
        let here = self.tile(state.row, state.col);
        let mut next = match action {
            Action::Left => self.enter(*state, r, c - 1),
            Action::Right => self.enter(*state, r, c + 1),
            Action::Up => {
                let above = self.tile_at(r - 1, c);
                let can_climb = here.is_climbable() || above.is_some_and(Tile::is_climbable);
                if can_climb && above.is_some_and(Tile::is_walkable) {
                    self.enter(*state, r - 1, c)
                } else {
                    *state
                }
            }
            Action::Down => {
                let below = self.tile_at(r + 1, c);
                let enters_climbable = below.is_some_and(Tile::is_climbable);
                let leaves_climbable = here.is_climbable() && below.is_some_and(Tile::is_walkable);
                if enters_climbable || leaves_climbable {
                    self.enter(*state, r + 1, c)
                } else {
                    *state
                }
            }
            Action::JumpLeft | Action::JumpRight => {
                let dir = if action == Action::JumpLeft { -1 } else { 1 };
                let over = self.tile_at(r, c + dir);
                if here == Tile::Ladder || over.is_none() || over == Some(Tile::Wall) || self.tile_at(r, c + 2 * dir).is_none() {
                    *state
                } else {
                    self.enter(*state, r, c + 2 * dir)
                }
            }
            Action::Jump | Action::NoOp => *state,
        };

        if next.alive && !next.at_goal && !action.is_horizontal() {
            let drift = match self.tile(next.row, next.col) {
                Tile::ConveyorLeft => Some(-1),
                Tile::ConveyorRight => Some(1),
                _ => None,
            };
            if let Some(dir) = drift {
                next = self.enter(next, next.row as isize, next.col as isize + dir);
            }
        }
        next
    }

    /// True when the transition reached the floor by dropping through a cliff tile.
    pub fn is_cliff_drop(&self, transition: &Transition) -> bool {
        let dir: isize = match transition.action {
            Action::JumpLeft => -2,
            Action::JumpRight => 2,
            Action::Left => -1,
            Action::Right => 1,
            _ => return false,
        };
        let s = transition.state;
        let target = s.col as isize + dir;
        self.tile_at(s.row as isize, target) == Some(Tile::Cliff) && transition.next_state.row > s.row
    }

    /// Replays an action script from the start state without noise.
    pub fn replay(&self, actions: &[Action]) -> Trajectory {
        let mut state = self.initial_state();
        let mut transitions = Vec::new();
        for &action in actions {
            if state.is_terminal() {
                break;
            }
            let t = self.make_transition(state, action);
            state = t.next_state;
            transitions.push(t);
        }
        Trajectory { transitions }
    }

    fn make_transition(&self, state: State, action: Action) -> Transition {
        let next_state = self.transition(&state, action);
        Transition {
            state,
            action,
            next_state,
            env_reward: if next_state.at_goal { 1.0 } else { 0.0 },
            done: next_state.is_terminal(),
            death: !next_state.alive,
        }
    }
}

/// A room plus per-instance episode randomness (sticky actions and random starts).
#[derive(Debug, Clone)]
pub struct Environment {
    room: Arc<Room>,
    rng: ChaCha8Rng,
    last_action: Action,
    sticky_prob: f64,
}

impl Environment {
    pub fn new(room: Arc<Room>) -> Environment {
        let sticky_prob = room.spec.sticky_prob;
        Environment { room, rng: ChaCha8Rng::seed_from_u64(0), last_action: Action::NoOp, sticky_prob }
    }

    pub fn build(spec: RoomSpec) -> Result<Environment, MdpError> {
        Ok(Environment::new(Arc::new(Room::new(spec)?)))
    }

    pub fn with_sticky(mut self, prob: f64) -> Result<Environment, MdpError> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(MdpError::BadSticky(prob));
        }
        self.sticky_prob = prob;
        Ok(self)
    }

    pub fn room(&self) -> &Room {
        &self.room
    }

    pub fn room_arc(&self) -> Arc<Room> {
        Arc::clone(&self.room)
    }

    /// Returns the start state and reseeds the per-episode noise stream.
    pub fn reset(&mut self, seed: u64) -> State {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.last_action = Action::NoOp;
        let mut state = self.room.initial_state();
        if self.room.spec.noop_max > 0 {
            let noops = self.rng.gen_range(0..=self.room.spec.noop_max);
            for _ in 0..noops {
                if state.is_terminal() {
                    break;
                }
                state = self.room.transition(&state, Action::NoOp);
            }
        }
        state
    }

    pub fn step(&mut self, state: &State, action: Action) -> Result<Transition, MdpError> {
        if state.is_terminal() {
            return Err(MdpError::TerminalState);
        }
        let mut executed = action;
        if self.sticky_prob > 0.0 && self.rng.gen::<f64>() < self.sticky_prob {
            executed = self.last_action;
        }
        self.last_action = executed;
        let mut t = self.room.make_transition(*state, executed);
        // the record keeps the action the agent chose
        t.action = action;
        Ok(t)
    }
}

/// Runs `policy` from a fresh reset until the episode ends or `max_steps` transitions were taken.
pub fn rollout<P>(env: &mut Environment, mut policy: P, seed: u64, max_steps: usize) -> Trajectory
where
    P: FnMut(&State) -> Action,
{
    let mut state = env.reset(seed);
    let mut transitions = Vec::new();
    for _ in 0..max_steps.max(1) {
        let action = policy(&state);
        let t = env.step(&state, action).expect("rollout only steps live states");
        state = t.next_state;
        transitions.push(t);
        if t.done {
            break;
        }
    }
    Trajectory { transitions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Environment {
        Environment::build(RoomSpec::from_grid("chain", "SG").unwrap()).unwrap()
    }

    #[test]
    fn one_by_two_chain_wins_with_right() {
        let mut env = chain();
        let s0 = env.reset(0);
        let t = env.step(&s0, Action::Right).unwrap();
        assert!(t.done);
        assert_eq!(t.env_reward, 1.0);
        assert!(t.next_state.at_goal);
    }

    #[test]
    fn two_goals_is_an_error() {
        let spec = RoomSpec::from_grid("bad", "SGG").unwrap();
        assert_eq!(Room::new(spec).unwrap_err(), MdpError::GoalCount(2));
        let spec = RoomSpec::from_grid("bad", "-G-").unwrap();
        assert_eq!(Room::new(spec).unwrap_err(), MdpError::StartCount(0));
        let spec = RoomSpec::from_grid("bad", "S-D").unwrap();
        assert_eq!(Room::new(spec).unwrap_err(), MdpError::MissingKey);
        assert!(matches!(RoomSpec::from_grid("bad", "S?G"), Err(MdpError::UnknownTile { ch: '?', .. })));
    }

    #[test]
    fn noop_on_platform_is_identity() {
        let mut env = Environment::build(RoomSpec::from_grid("p", "S--G").unwrap()).unwrap();
        let s0 = env.reset(3);
        let t = env.step(&s0, Action::NoOp).unwrap();
        assert_eq!(t.next_state, s0);
        assert_eq!(t.env_reward, 0.0);
        assert!(!t.done);
    }

    #[test]
    fn walking_onto_hazard_kills() {
        let mut env = Environment::build(RoomSpec::from_grid("h", "GSx").unwrap()).unwrap();
        let s0 = env.reset(0);
        let t = env.step(&s0, Action::Right).unwrap();
        assert!(t.done && t.death);
        assert_eq!(t.env_reward, 0.0);
        assert!(!t.next_state.alive);
    }

    #[test]
    fn stepping_a_terminal_state_fails() {
        let mut env = chain();
        let s0 = env.reset(0);
        let t = env.step(&s0, Action::Right).unwrap();
        assert_eq!(env.step(&t.next_state, Action::Left), Err(MdpError::TerminalState));
    }

    #[test]
    fn door_needs_key() {
        let room = Room::new(RoomSpec::from_grid("d", "DSk").unwrap()).unwrap();
        let s0 = room.initial_state();
        let blocked = room.transition(&s0, Action::Left);
        assert_eq!(blocked, s0);
        let with_key = room.transition(&s0, Action::Right);
        assert!(with_key.has_key);
        let back = room.transition(&with_key, Action::Left);
        let win = room.transition(&back, Action::Left);
        assert!(win.at_goal);
    }

    #[test]
    fn ladders_climb_and_conveyors_drift() {
        let grid = "\
#######
#S--G.#
#H....#
#-<<<-#
#######";
        let room = Room::new(RoomSpec::from_grid("l", grid).unwrap()).unwrap();
        let s0 = room.initial_state();
        let s1 = room.transition(&s0, Action::Down);
        assert!(s1.on_ladder);
        let s2 = room.transition(&s1, Action::Down);
        assert_eq!((s2.row, s2.col), (3, 1));
        let s3 = room.transition(&s2, Action::Right);
        assert!(s3.on_conveyor);
        assert_eq!((s3.row, s3.col), (3, 2));
        // standing still drifts one cell left
        let s4 = room.transition(&s3, Action::NoOp);
        assert_eq!((s4.row, s4.col), (3, 1));
        let up = room.transition(&s2, Action::Up);
        assert!(up.on_ladder);
    }

    #[test]
    fn cliff_tile_drops_to_floor() {
        let grid = "\
S-.C..G
.......
-------";
        let room = Room::new(RoomSpec::from_grid("c", grid).unwrap()).unwrap();
        let edge = room.transition(&room.initial_state(), Action::Right);
        let t = room.make_transition(edge, Action::JumpRight);
        assert!(t.next_state.alive);
        assert_eq!((t.next_state.row, t.next_state.col), (2, 3));
        assert!(room.is_cliff_drop(&t));
        let fall = room.transition(&edge, Action::Right);
        assert!(!fall.alive);
    }

    #[test]
    fn same_seed_same_sticky_draws() {
        let spec = RoomSpec::builtin("a2").unwrap();
        let env = Environment::build(spec).unwrap().with_sticky(0.25).unwrap();
        let script: Vec<Action> = (0..60).map(|i| Action::ALL[(i * 5 + 3) % 8]).collect();
        let run = |mut env: Environment| {
            let mut k = 0;
            rollout(&mut env, |_| {
                k += 1;
                script[(k - 1) % script.len()]
            }, 7, 60)
        };
        let a = run(env.clone());
        let b = run(env);
        assert_eq!(a, b);
        assert!(a.is_chained());
    }

    #[test]
    fn noop_policy_runs_to_max_steps() {
        let mut env = Environment::build(RoomSpec::builtin("a2").unwrap()).unwrap();
        let traj = rollout(&mut env, |_| Action::NoOp, 1, 50);
        assert_eq!(traj.len(), 50);
        assert!(!traj.won());
    }

    #[test]
    fn reset_returns_start() {
        let mut env = Environment::build(RoomSpec::builtin("a2").unwrap()).unwrap();
        let s0 = env.reset(1);
        assert_eq!((s0.row, s0.col), env.room().start_cell());
        assert!(!s0.has_key);
        assert_eq!(env.reset(1), s0);
    }

    #[test]
    fn room_file_header_round_trip() {
        let text = "name = tiny\nmax_steps = 12\nsolution = Right\n[grid]\nSG\n";
        let spec = RoomSpec::parse(text).unwrap();
        assert_eq!(spec.name, "tiny");
        assert_eq!(spec.max_steps, 12);
        assert_eq!(spec.solution, vec![Action::Right]);
        assert_eq!(spec.grid_text(), "SG");
        assert!(matches!(RoomSpec::parse("SG"), Err(MdpError::BadHeader { .. })));
        assert_eq!(RoomSpec::parse("name = x\n"), Err(MdpError::MissingGrid));
    }

    #[test]
    fn action_names_parse() {
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert!("Fly".parse::<Action>().is_err());
    }
}
