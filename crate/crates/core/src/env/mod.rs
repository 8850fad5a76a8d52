//! Sparse-reward cooperative gridworlds.
//!
//! Five tasks share one grid engine: `pass`, `secret-room`, `push-box`,
//! `island` and `large-island`. A sixth, `twin`, places each agent in its own
//! slippery copy of an empty room so that no interaction is possible; it exists
//! to check that influence rewards vanish without interaction.
//!
//! Movement into a wall, a closed door or the outer boundary leaves the agent
//! in place. Agents may share a cell. Door state is a function of switch
//! occupancy at the start of the step, so a door is open exactly when one of
//! its switches is occupied.

mod layout;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::key::KeyBuilder;

pub use layout::{Cell, Layout, Switch};

/// Health is stored in twelfths so that `1/n` damage is exact for n <= 4.
pub const HEALTH_UNITS: u8 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: u8,
    pub col: u8,
}

impl Pos {
    pub const fn new(row: u8, col: u8) -> Self {
        Self { row, col }
    }

    fn chebyshev(self, other: Pos) -> u8 {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    Pass,
    SecretRoom,
    PushBox,
    Island,
    LargeIsland,
    Twin,
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::Pass => "pass",
            TaskId::SecretRoom => "secret-room",
            TaskId::PushBox => "push-box",
            TaskId::Island => "island",
            TaskId::LargeIsland => "large-island",
            TaskId::Twin => "twin",
        }
    }

    pub fn is_island(self) -> bool {
        matches!(self, TaskId::Island | TaskId::LargeIsland)
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pass" => TaskId::Pass,
            "secret-room" => TaskId::SecretRoom,
            "push-box" | "push-ball" => TaskId::PushBox,
            "island" => TaskId::Island,
            "large-island" => TaskId::LargeIsland,
            "twin" => TaskId::Twin,
            other => return Err(Error::Config(format!("unknown task `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
    Attack = 5,
}

impl Action {
    pub const MOVES: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Up,
            1 => Action::Down,
            2 => Action::Left,
            3 => Action::Right,
            4 => Action::Stay,
            5 => Action::Attack,
            _ => panic!("action index {i} out of range"),
        }
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay | Action::Attack => (0, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction(pub SmallVec<[Action; 4]>);

impl JointAction {
    pub fn new(actions: &[Action]) -> Self {
        Self(actions.iter().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: TaskId,
    pub grid_size: u8,
    pub agents: usize,
    pub horizon: u32,
    pub success_reward: f64,
    pub treasure_reward: f64,
    pub beast_reward: f64,
    pub treasures: usize,
    pub beast_energy: u8,
    pub max_health: u8,
    pub attack_range: u8,
    /// Probability that a `twin` move is replaced by a uniformly random one.
    pub slip: f64,
}

impl TaskConfig {
    pub fn new(task: TaskId) -> Self {
        let base = Self {
            task,
            grid_size: 30,
            agents: 2,
            horizon: 300,
            success_reward: 1000.0,
            treasure_reward: 10.0,
            beast_reward: 300.0,
            treasures: 0,
            beast_energy: 0,
            max_health: 5,
            attack_range: 1,
            slip: 0.0,
        };
        match task {
            TaskId::Pass => base,
            TaskId::SecretRoom => Self { grid_size: 25, ..base },
            TaskId::PushBox => Self { grid_size: 15, ..base },
            TaskId::Island => Self {
                grid_size: 10,
                treasures: 9,
                beast_energy: 8,
                ..base
            },
            TaskId::LargeIsland => Self {
                grid_size: 10,
                agents: 4,
                treasures: 16,
                beast_energy: 16,
                beast_reward: 600.0,
                ..base
            },
            TaskId::Twin => Self {
                grid_size: 4,
                horizon: 20,
                slip: 0.3,
                ..base
            },
        }
    }

    pub fn with_grid(mut self, n: u8) -> Self {
        self.grid_size = n;
        self
    }

    pub fn with_horizon(mut self, h: u32) -> Self {
        self.horizon = h;
        self
    }

    pub fn n_actions(&self) -> usize {
        if self.task.is_island() {
            6
        } else {
            5
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTask(m));
        if self.horizon == 0 {
            return bad("horizon must be > 0".into());
        }
        if self.agents == 0 || self.agents > 8 {
            return bad(format!("agent count {} outside 1..=8", self.agents));
        }
        let min = match self.task {
            TaskId::Pass => 6,
            TaskId::SecretRoom => 9,
            TaskId::PushBox => 5,
            TaskId::Island | TaskId::LargeIsland => 4,
            TaskId::Twin => 2,
        };
        if self.grid_size < min {
            return bad(format!(
                "grid_size {} too small for {} (minimum {min})",
                self.grid_size, self.task
            ));
        }
        if self.task == TaskId::PushBox && self.agents < 2 {
            return bad("push-box needs at least 2 agents".into());
        }
        if self.task.is_island() {
            let cells = self.grid_size as usize * self.grid_size as usize;
            if self.treasures + 1 >= cells {
                return bad(format!("{} treasures do not fit on the island", self.treasures));
            }
            if self.beast_energy == 0 {
                return bad("beast_energy must be > 0".into());
            }
            if self.max_health == 0 || self.max_health as u32 * HEALTH_UNITS as u32 > 255 {
                return bad(format!("max_health {} outside 1..=21", self.max_health));
            }
            if self.agents > 4 {
                return bad("island health arithmetic supports at most 4 agents".into());
            }
            if (self.attack_range as usize * 2 + 1) >= self.grid_size as usize {
                return bad("attack range covers the whole island".into());
            }
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return bad(format!("slip {} outside [0, 1]", self.slip));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    /// Health in units of 1/[`HEALTH_UNITS`]; only used on islands.
    pub health: u8,
    pub alive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Beast {
    pub pos: Pos,
    pub energy: u8,
}

impl Beast {
    pub fn alive(&self) -> bool {
        self.energy > 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct World {
    pub doors_open: Vec<bool>,
    pub box_pos: Option<Pos>,
    pub beast: Option<Beast>,
    pub treasures: Vec<Pos>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub agents: Vec<AgentState>,
    pub world: World,
}

/// What agent `i` observes: itself plus the task-specific extras.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observed {
    pub own: AgentState,
    pub others: Vec<AgentState>,
    pub box_pos: Option<Pos>,
    pub beast_pos: Option<Pos>,
}

impl JointState {
    pub fn observed(&self, i: usize) -> Observed {
        Observed {
            own: self.agents[i],
            others: self
                .agents
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, a)| *a)
                .collect(),
            box_pos: self.world.box_pos,
            beast_pos: self.world.beast.filter(|b| b.alive()).map(|b| b.pos),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFlags {
    pub box_moved: bool,
    pub door_passed: bool,
    pub treasures_found: u8,
    pub beast_caught: bool,
    pub success: bool,
}

impl EventFlags {
    pub fn any_reward_event(&self) -> bool {
        self.treasures_found > 0 || self.beast_caught || self.success
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: JointState,
    pub extrinsic_reward: f64,
    pub done: bool,
    pub info: EventFlags,
}

/// Canonical byte encodings of states for count, value and policy tables.
///
/// * individual state `s_j`: `[row, col]`, plus `[health]` on islands
///   (health 0 marks a dead agent);
/// * joint state `s`: every individual state followed by the dynamic world
///   elements that affect movement (`[box row, box col]` in push-box,
///   `[beast row, beast col, energy]` on islands). The treasure layout only
///   changes rewards, never transitions, and is left out;
/// * observation of agent `i`: its individual state, the others' individual
///   states, then the box or the beast position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codec {
    pub task: TaskId,
    pub agents: usize,
}

impl Codec {
    pub fn new(task: TaskId, agents: usize) -> Self {
        Self { task, agents }
    }

    pub fn individual_len(&self) -> usize {
        if self.task.is_island() {
            3
        } else {
            2
        }
    }

    fn world_len(&self) -> usize {
        match self.task {
            TaskId::PushBox => 2,
            TaskId::Island | TaskId::LargeIsland => 3,
            _ => 0,
        }
    }

    pub fn joint_len(&self) -> usize {
        self.individual_len() * self.agents + self.world_len()
    }

    pub fn write_individual(&self, s: &JointState, j: usize, b: &mut KeyBuilder) {
        let a = &s.agents[j];
        b.push(a.pos.row).push(a.pos.col);
        if self.task.is_island() {
            b.push(if a.alive { a.health } else { 0 });
        }
    }

    fn write_world(&self, s: &JointState, b: &mut KeyBuilder) {
        match self.task {
            TaskId::PushBox => {
                let p = s.world.box_pos.expect("push-box state has a box");
                b.push(p.row).push(p.col);
            }
            TaskId::Island | TaskId::LargeIsland => {
                let beast = s.world.beast.expect("island state has a beast");
                b.push(beast.pos.row).push(beast.pos.col).push(beast.energy);
            }
            _ => {}
        }
    }

    pub fn write_joint(&self, s: &JointState, b: &mut KeyBuilder) {
        for j in 0..s.agents.len() {
            self.write_individual(s, j, b);
        }
        self.write_world(s, b);
    }

    pub fn write_observation(&self, s: &JointState, i: usize, b: &mut KeyBuilder) {
        self.write_individual(s, i, b);
        for j in (0..s.agents.len()).filter(|j| *j != i) {
            self.write_individual(s, j, b);
        }
        match self.task {
            TaskId::PushBox => self.write_world(s, b),
            TaskId::Island | TaskId::LargeIsland => {
                let beast = s.world.beast.expect("island state has a beast");
                if beast.alive() {
                    b.push(beast.pos.row).push(beast.pos.col);
                } else {
                    b.push(u8::MAX).push(u8::MAX);
                }
            }
            _ => {}
        }
    }

    /// Agent positions recorded in a joint-state encoding.
    pub fn positions_from_joint(&self, bytes: &[u8]) -> Vec<Pos> {
        let w = self.individual_len();
        (0..self.agents)
            .map(|j| Pos::new(bytes[j * w], bytes[j * w + 1]))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Environment {
    config: TaskConfig,
    layout: Layout,
    codec: Codec,
    state: JointState,
    t: u32,
    done: bool,
    rng: ChaCha8Rng,
}

/// Builds a task. The layout depends only on `(task, grid_size, agents)`;
/// `seed` drives every stochastic element (island spawn, beast walk, slips).
pub fn make_task(config: TaskConfig, seed: u64) -> Result<Environment> {
    Environment::new(config, seed)
}

impl Environment {
    pub fn new(config: TaskConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.grid_size;
        let layout = match config.task {
            TaskId::Pass => Layout::pass(n, config.agents),
            TaskId::SecretRoom => Layout::secret_room(n, config.agents),
            TaskId::PushBox => Layout::push_box(n, config.agents),
            t @ (TaskId::Island | TaskId::LargeIsland | TaskId::Twin) => {
                Layout::open_field(t, n, config.agents)
            }
        };
        let codec = Codec::new(config.task, config.agents);
        let mut env = Self {
            codec,
            state: JointState {
                agents: Vec::new(),
                world: World::default(),
            },
            layout,
            config,
            t: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn n_agents(&self) -> usize {
        self.config.agents
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions()
    }

    pub fn reset(&mut self, seed: u64) -> &JointState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.done = false;
        let full = self.config.max_health * HEALTH_UNITS;
        let agents: Vec<AgentState> = self
            .layout
            .spawn
            .iter()
            .map(|p| AgentState {
                pos: *p,
                health: if self.config.task.is_island() { full } else { 0 },
                alive: true,
            })
            .collect();
        let mut world = World {
            box_pos: self.layout.box_start,
            ..World::default()
        };
        if self.config.task.is_island() {
            self.spawn_island(&agents, &mut world);
        }
        world.doors_open = self.layout.doors_open(|p| agents.iter().any(|a| a.pos == p));
        self.state = JointState { agents, world };
        &self.state
    }

    fn spawn_island(&mut self, agents: &[AgentState], world: &mut World) {
        let n = self.config.grid_size;
        let range = self.config.attack_range;
        let far: Vec<Pos> = self
            .layout
            .free_cells()
            .filter(|p| agents.iter().all(|a| a.pos.chebyshev(*p) > range))
            .collect();
        let beast = far[self.rng.random_range(0..far.len())];
        world.beast = Some(Beast {
            pos: beast,
            energy: self.config.beast_energy,
        });
        let mut cells: Vec<Pos> = (0..n)
            .flat_map(|r| (0..n).map(move |c| Pos::new(r, c)))
            .filter(|p| agents.iter().all(|a| a.pos != *p))
            .collect();
        // partial Fisher-Yates
        for k in 0..self.config.treasures {
            let j = self.rng.random_range(k..cells.len());
            cells.swap(k, j);
        }
        cells.truncate(self.config.treasures);
        cells.sort();
        world.treasures = cells;
    }

    pub fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone {
                t: self.t,
                horizon: self.config.horizon,
            });
        }
        if action.len() != self.config.agents {
            return Err(Error::ActionArity {
                got: action.len(),
                expected: self.config.agents,
            });
        }
        if !self.config.task.is_island() {
            if let Some(a) = action.0.iter().find(|a| **a == Action::Attack) {
                return Err(Error::InvalidAction {
                    action: *a as u8,
                    task: self.config.task.name(),
                });
            }
        }
        let (reward, info, terminal) = match self.config.task {
            TaskId::Pass | TaskId::SecretRoom => self.step_rooms(action),
            TaskId::PushBox => self.step_push_box(action),
            TaskId::Island | TaskId::LargeIsland => self.step_island(action),
            TaskId::Twin => self.step_twin(action),
        };
        self.t += 1;
        self.done = terminal || self.t >= self.config.horizon;
        Ok(StepOutcome {
            next_state: self.state.clone(),
            extrinsic_reward: reward,
            done: self.done,
            info,
        })
    }

    fn target(&self, pos: Pos, a: Action) -> Option<Pos> {
        let (dr, dc) = a.delta();
        let (r, c) = (pos.row as i32 + dr, pos.col as i32 + dc);
        self.layout
            .in_bounds(r, c)
            .then(|| Pos::new(r as u8, c as u8))
    }

    /// Destination of a move given current door state; blocked moves stay put.
    fn resolve_move(&self, pos: Pos, a: Action, doors_open: &[bool]) -> Pos {
        match self.target(pos, a) {
            None => pos,
            Some(next) => match self.layout.cell(next) {
                Cell::Free => next,
                Cell::Wall => pos,
                Cell::Door(k) if doors_open[k as usize] => next,
                Cell::Door(_) => pos,
            },
        }
    }

    fn refresh_doors(&mut self) {
        let agents = &self.state.agents;
        self.state.world.doors_open = self
            .layout
            .doors_open(|p| agents.iter().any(|a| a.alive && a.pos == p));
    }

    fn step_rooms(&mut self, action: &JointAction) -> (f64, EventFlags, bool) {
        let mut info = EventFlags::default();
        let open = self.state.world.doors_open.clone();
        for (j, a) in action.0.iter().enumerate() {
            let from = self.state.agents[j].pos;
            let to = self.resolve_move(from, *a, &open);
            if to != from
                && (matches!(self.layout.cell(to), Cell::Door(_))
                    || matches!(self.layout.cell(from), Cell::Door(_)))
            {
                info.door_passed = true;
            }
            self.state.agents[j].pos = to;
        }
        self.refresh_doors();
        let success = self
            .state
            .agents
            .iter()
            .all(|a| self.layout.in_target(a.pos));
        if success {
            info.success = true;
            (self.config.success_reward, info, true)
        } else {
            (0.0, info, false)
        }
    }

    fn step_push_box(&mut self, action: &JointAction) -> (f64, EventFlags, bool) {
        let mut info = EventFlags::default();
        let bx = self.state.world.box_pos.expect("push-box has a box");
        // The box moves one cell when every agent stands behind it and pushes
        // the same way in the same tick.
        let first = action.0[0];
        let all_push = first != Action::Stay
            && action.0.iter().all(|a| *a == first)
            && self
                .state
                .agents
                .iter()
                .all(|ag| self.target(ag.pos, first) == Some(bx));
        let mut new_box = bx;
        if all_push {
            if let Some(dest) = self.target(bx, first) {
                if !self.layout.is_wall(dest) {
                    new_box = dest;
                }
            }
        }
        let open = self.state.world.doors_open.clone();
        for (j, a) in action.0.iter().enumerate() {
            let from = self.state.agents[j].pos;
            let mut to = self.resolve_move(from, *a, &open);
            if to == new_box || (to == bx && new_box == bx) {
                to = from;
            }
            self.state.agents[j].pos = to;
        }
        if new_box != bx {
            info.box_moved = true;
            self.state.world.box_pos = Some(new_box);
        }
        if self.layout.against_wall(new_box) {
            info.success = true;
            (self.config.success_reward, info, true)
        } else {
            (0.0, info, false)
        }
    }

    fn step_island(&mut self, action: &JointAction) -> (f64, EventFlags, bool) {
        let mut info = EventFlags::default();
        let mut reward = 0.0;
        let range = self.config.attack_range;
        let mut beast = self.state.world.beast.expect("island has a beast");

        if beast.alive() {
            let attackers = self
                .state
                .agents
                .iter()
                .zip(action.0.iter())
                .filter(|(ag, a)| {
                    ag.alive && **a == Action::Attack && ag.pos.chebyshev(beast.pos) <= range
                })
                .count();
            // Damage doubles when more than one agent attacks at once.
            let damage = if attackers > 1 { 2 * attackers } else { attackers };
            beast.energy = beast.energy.saturating_sub(damage.min(255) as u8);
            if !beast.alive() {
                info.beast_caught = true;
                reward += self.config.beast_reward;
            }
        }

        if beast.alive() {
            let in_range: Vec<usize> = (0..self.state.agents.len())
                .filter(|&j| {
                    let ag = &self.state.agents[j];
                    ag.alive && ag.pos.chebyshev(beast.pos) <= range
                })
                .collect();
            if !in_range.is_empty() {
                let hit = HEALTH_UNITS / in_range.len() as u8;
                for j in in_range {
                    let ag = &mut self.state.agents[j];
                    ag.health = ag.health.saturating_sub(hit);
                    if ag.health == 0 {
                        ag.alive = false;
                    }
                }
            }
        }

        let open = self.state.world.doors_open.clone();
        for (j, a) in action.0.iter().enumerate() {
            let ag = self.state.agents[j];
            if !ag.alive || *a == Action::Attack {
                continue;
            }
            self.state.agents[j].pos = self.resolve_move(ag.pos, *a, &open);
        }

        let agents = &self.state.agents;
        let before = self.state.world.treasures.len();
        self.state
            .world
            .treasures
            .retain(|t| !agents.iter().any(|a| a.alive && a.pos == *t));
        let found = before - self.state.world.treasures.len();
        if found > 0 {
            info.treasures_found = found as u8;
            reward += self.config.treasure_reward * found as f64;
        }

        if beast.alive() {
            let moves: SmallVec<[Pos; 5]> = Action::MOVES
                .iter()
                .filter_map(|a| self.target(beast.pos, *a))
                .collect();
            beast.pos = moves[self.rng.random_range(0..moves.len())];
        }
        self.state.world.beast = Some(beast);

        let everyone_dead = self.state.agents.iter().all(|a| !a.alive);
        let exhausted = !beast.alive() && self.state.world.treasures.is_empty();
        (reward, info, everyone_dead || exhausted)
    }

    fn step_twin(&mut self, action: &JointAction) -> (f64, EventFlags, bool) {
        for (j, a) in action.0.iter().enumerate() {
            let taken = if self.rng.random::<f64>() < self.config.slip {
                Action::MOVES[self.rng.random_range(0..5)]
            } else {
                *a
            };
            let from = self.state.agents[j].pos;
            self.state.agents[j].pos = self.target(from, taken).unwrap_or(from);
        }
        (0.0, EventFlags::default(), false)
    }

    /// Exact `p(s_j' | s_j, a_j)` for the `twin` task, where it also equals
    /// `p(s_j' | s, a)` because the copies never interact.
    pub fn twin_transition_probability(&self, from: Pos, a: Action, to: Pos) -> f64 {
        assert_eq!(self.config.task, TaskId::Twin);
        let slip = self.config.slip;
        Action::MOVES
            .iter()
            .map(|b| {
                let w = if *b == a { 1.0 - slip } else { 0.0 } + slip / 5.0;
                let dest = self.target(from, *b).unwrap_or(from);
                if dest == to {
                    w
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn render(&self) -> String {
        render(&self.layout, &self.state)
    }
}

/// ASCII view: `#` wall, `D`/`d` closed/open door, `S` switch, `,` target zone,
/// `B` box, `X` beast, `$` treasure, digits for agents.
pub fn render(layout: &Layout, s: &JointState) -> String {
    let mut out = String::new();
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let p = Pos::new(r, c);
            let agent = s.agents.iter().position(|a| a.alive && a.pos == p);
            let ch = if let Some(j) = agent {
                char::from_digit(j as u32 % 10, 10).unwrap()
            } else if s.world.box_pos == Some(p) {
                'B'
            } else if s.world.beast.is_some_and(|b| b.alive() && b.pos == p) {
                'X'
            } else if s.world.treasures.contains(&p) {
                '$'
            } else {
                match layout.cell(p) {
                    Cell::Wall => '#',
                    Cell::Door(k) if s.world.doors_open.get(k as usize) == Some(&true) => 'd',
                    Cell::Door(_) => 'D',
                    Cell::Free if layout.switch_at(p).is_some() => 'S',
                    Cell::Free if layout.in_target(p) => ',',
                    Cell::Free => '.',
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}
