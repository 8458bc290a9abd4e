use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::map::{CellKind, GridMap, Pos};
use super::EnvError;

pub const DEFAULT_FIND_TREASURE_STEPS: u32 = 100;
pub const DEFAULT_MOVE_BOX_STEPS: u32 = 300;

// Rewards are accumulated in tenths so a step's total is exact before the
// single conversion to f64.
const COLLISION: i32 = -1;
const GOAL: i32 = 1000;
const FIND_TREASURE_TRAP: i32 = 30;
const MOVE_BOX_TRAP: i32 = 100;
const KEY: i32 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskVariant {
    FindTreasure,
    /// MoveBox task 0 (no key) or tasks 1-3 (key spot `1`..`3` active).
    MoveBox(u8),
}

impl TaskVariant {
    pub fn active_key(self) -> Option<u8> {
        match self {
            Self::MoveBox(k) if k > 0 => Some(k),
            _ => None,
        }
    }

    pub fn default_max_steps(self) -> u32 {
        match self {
            Self::FindTreasure => DEFAULT_FIND_TREASURE_STEPS,
            Self::MoveBox(_) => DEFAULT_MOVE_BOX_STEPS,
        }
    }
}

impl fmt::Display for TaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FindTreasure => write!(f, "findtreasure"),
            Self::MoveBox(k) => write!(f, "movebox-task{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Wait,
}

impl Action {
    /// Enumeration order; greedy tie-breaking follows it.
    pub const ALL: [Action; 5] = [Self::Up, Self::Down, Self::Left, Self::Right, Self::Wait];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Self::Up => (0, -1),
            Self::Down => (0, 1),
            Self::Left => (-1, 0),
            Self::Right => (1, 0),
            Self::Wait => (0, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction(pub [Action; 2]);

impl JointAction {
    pub const COUNT: usize = 25;

    /// Joint index `a0 * 5 + a1`, lexicographic over [`Action::ALL`].
    pub fn index(self) -> usize {
        self.0[0].index() * 5 + self.0[1].index()
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT, "joint action index {i} out of range");
        Self([Action::ALL[i / 5], Action::ALL[i % 5]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationCause {
    Running,
    Goal,
    Trap,
    StepLimit,
}

impl fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Running => "running",
            Self::Goal => "goal",
            Self::Trap => "trap",
            Self::StepLimit => "step_limit",
        };
        f.write_str(s)
    }
}

/// Full environment state. `keys_collected` and `gates_open` are bitsets
/// (bit `k` for key `k`, bit `g` for gate component `g`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_pos: [Pos; 2],
    pub box_pos: Option<Pos>,
    pub carrying: bool,
    pub keys_collected: u8,
    pub gates_open: u32,
    pub step_count: u32,
    pub cause: TerminationCause,
}

impl EnvState {
    pub fn terminated(&self) -> bool {
        self.cause != TerminationCause::Running
    }

    pub fn has_key(&self, key: u8) -> bool {
        self.keys_collected & (1 << key) != 0
    }
}

/// Per-agent observation vectors. Both agents see the same vector:
/// `[x0, y0, x1, y1]` in FindTreasure, extended with
/// `[box_x, box_y, carrying, keys]` in MoveBox.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointObservation {
    pub per_agent: [Vec<i32>; 2],
}

impl JointObservation {
    /// The joint view used by centralized learners.
    pub fn joint(&self) -> &[i32] {
        &self.per_agent[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: JointObservation,
    pub reward: f64,
    /// 1 iff `reward < 0`.
    pub negative_flag: u8,
    pub terminated: bool,
    pub cause: TerminationCause,
}

/// A gridworld bound to a map and a task variant. Stepping is a pure function
/// of `(state, action)`.
#[derive(Clone, Debug)]
pub struct GridEnv {
    map: Arc<GridMap>,
    variant: TaskVariant,
    max_steps: u32,
    all_gates: u32,
}

impl GridEnv {
    pub fn new(map: Arc<GridMap>, variant: TaskVariant, max_steps: u32) -> Result<Self, EnvError> {
        let fail = |reason: &str| {
            Err(EnvError::Variant {
                variant,
                reason: reason.to_string(),
            })
        };
        match variant {
            TaskVariant::FindTreasure => {
                if map.region("treasure").is_none() {
                    return fail("FindTreasure needs a Treasure cell");
                }
                if map.region("lever").is_none() {
                    return fail("FindTreasure needs a Lever cell");
                }
            }
            TaskVariant::MoveBox(k) => {
                if k > 3 {
                    return fail("MoveBox tasks are 0 to 3");
                }
                if map.box_start().is_none() {
                    return fail("MoveBox needs a BoxStart cell");
                }
                if map.region("goal").is_none() {
                    return fail("MoveBox needs a GoalRegion");
                }
                if k > 0 && map.key_spot(k).is_none() {
                    return fail(&format!("key spot {k} is absent from the map"));
                }
            }
        }
        if max_steps == 0 {
            return fail("max_steps must be positive");
        }
        let all_gates = if map.gate_count() >= 32 {
            u32::MAX
        } else {
            (1u32 << map.gate_count()) - 1
        };
        Ok(Self {
            map,
            variant,
            max_steps,
            all_gates,
        })
    }

    pub fn map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn variant(&self) -> TaskVariant {
        self.variant
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    /// Length of the observation vector for this variant.
    pub fn observation_len(&self) -> usize {
        match self.variant {
            TaskVariant::FindTreasure => 4,
            TaskVariant::MoveBox(_) => 8,
        }
    }

    /// Initial state. Transitions are deterministic, so the seed only exists to
    /// keep the reset signature uniform across environments.
    pub fn reset(&self, _seed: u64) -> (EnvState, JointObservation) {
        let agent_pos = self.map.agent_starts();
        let box_pos = match self.variant {
            TaskVariant::MoveBox(_) => self.map.box_start(),
            TaskVariant::FindTreasure => None,
        };
        let mut state = EnvState {
            agent_pos,
            box_pos,
            carrying: false,
            keys_collected: 0,
            gates_open: 0,
            step_count: 0,
            cause: TerminationCause::Running,
        };
        match self.variant {
            TaskVariant::FindTreasure => state.gates_open = self.lever_gates(&state),
            TaskVariant::MoveBox(_) => state.carrying = flanking(&state),
        }
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn observe(&self, state: &EnvState) -> JointObservation {
        let [a, b] = state.agent_pos;
        let mut v = vec![a.x, a.y, b.x, b.y];
        if let TaskVariant::MoveBox(_) = self.variant {
            let bp = state.box_pos.unwrap_or(Pos::new(-1, -1));
            v.extend([bp.x, bp.y, i32::from(state.carrying), i32::from(state.keys_collected)]);
        }
        JointObservation {
            per_agent: [v.clone(), v],
        }
    }

    pub fn step(&self, state: &EnvState, action: JointAction) -> Result<(EnvState, StepOutcome), EnvError> {
        if state.terminated() {
            return Err(EnvError::SteppedTerminatedEnv);
        }
        let mut next = *state;
        let mut tenths = 0;
        match self.variant {
            TaskVariant::FindTreasure => self.step_find_treasure(&mut next, action, &mut tenths),
            TaskVariant::MoveBox(_) => self.step_move_box(&mut next, action, &mut tenths),
        }
        next.step_count += 1;
        if !next.terminated() && next.step_count >= self.max_steps {
            next.cause = TerminationCause::StepLimit;
        }
        let reward = f64::from(tenths) / 10.0;
        let outcome = StepOutcome {
            observation: self.observe(&next),
            reward,
            negative_flag: u8::from(reward < 0.0),
            terminated: next.terminated(),
            cause: next.cause,
        };
        Ok((next, outcome))
    }

    fn passable(&self, p: Pos, gates_open: u32) -> bool {
        match self.map.cell(p) {
            CellKind::Wall => false,
            CellKind::ChannelGate => self
                .map
                .gate_at(p)
                .is_some_and(|g| gates_open & (1 << g) != 0),
            _ => true,
        }
    }

    fn lever_gates(&self, state: &EnvState) -> u32 {
        let on_lever = state
            .agent_pos
            .iter()
            .any(|&p| self.map.cell(p) == CellKind::Lever);
        if on_lever {
            self.all_gates
        } else {
            0
        }
    }

    /// Moves both agents independently. Blocked moves cost one collision each;
    /// agent-agent conflicts and the box simply leave agents in place.
    fn move_agents(&self, state: &mut EnvState, action: JointAction, tenths: &mut i32) {
        let pos = state.agent_pos;
        let mut target = pos;
        for i in 0..2 {
            let a = action.0[i];
            if a == Action::Wait {
                continue;
            }
            let (dx, dy) = a.delta();
            let t = pos[i].offset(dx, dy);
            if !self.passable(t, state.gates_open) {
                *tenths += COLLISION;
            } else if state.box_pos != Some(t) {
                target[i] = t;
            }
        }
        if target[0] == target[1] || (target[0] == pos[1] && target[1] == pos[0]) {
            target = pos;
        } else {
            if target[0] == pos[1] && target[1] == pos[1] {
                target[0] = pos[0];
            }
            if target[1] == pos[0] && target[0] == pos[0] {
                target[1] = pos[1];
            }
        }
        state.agent_pos = target;
    }

    fn step_find_treasure(&self, state: &mut EnvState, action: JointAction, tenths: &mut i32) {
        self.move_agents(state, action, tenths);
        state.gates_open = self.lever_gates(state);
        let kind = |i: usize| self.map.cell(state.agent_pos[i]);
        if (0..2).any(|i| kind(i) == CellKind::Treasure) {
            *tenths += GOAL;
            state.cause = TerminationCause::Goal;
        } else if (kind(0) == CellKind::Lever && kind(1) == CellKind::Trap)
            || (kind(1) == CellKind::Lever && kind(0) == CellKind::Trap)
        {
            *tenths += FIND_TREASURE_TRAP;
            state.cause = TerminationCause::Trap;
        }
    }

    fn step_move_box(&self, state: &mut EnvState, action: JointAction, tenths: &mut i32) {
        let Some(box_pos) = state.box_pos else {
            self.move_agents(state, action, tenths);
            return;
        };
        if !state.carrying {
            self.move_agents(state, action, tenths);
            state.carrying = flanking(state);
            return;
        }
        let [a, b] = action.0;
        if a != b || a == Action::Wait {
            return;
        }
        let (dx, dy) = a.delta();
        let moved = [
            state.agent_pos[0].offset(dx, dy),
            state.agent_pos[1].offset(dx, dy),
            box_pos.offset(dx, dy),
        ];
        if !moved.iter().all(|&p| self.passable(p, state.gates_open)) {
            *tenths += 2 * COLLISION;
            return;
        }
        state.agent_pos = [moved[0], moved[1]];
        state.box_pos = Some(moved[2]);
        match self.map.cell(moved[2]) {
            CellKind::GoalRegion => {
                *tenths += GOAL;
                state.cause = TerminationCause::Goal;
            }
            CellKind::Trap => {
                *tenths += MOVE_BOX_TRAP;
                state.cause = TerminationCause::Trap;
            }
            CellKind::KeySpot(k) if Some(k) == self.variant.active_key() && !state.has_key(k) => {
                *tenths += KEY;
                state.keys_collected |= 1 << k;
                state.gates_open = self.all_gates;
            }
            _ => {}
        }
    }

    /// ASCII dump: agents as `r`/`b`, box as `B`, over the map cells.
    pub fn render(&self, state: &EnvState) -> String {
        let mut out = String::new();
        for y in 0..self.map.height() {
            for x in 0..self.map.width() {
                let p = Pos::new(x, y);
                let c = if p == state.agent_pos[0] {
                    'r'
                } else if p == state.agent_pos[1] {
                    'b'
                } else if state.box_pos == Some(p) {
                    'B'
                } else {
                    match self.map.cell(p) {
                        CellKind::AgentStart(_) | CellKind::BoxStart => '.',
                        CellKind::ChannelGate
                            if self.map.gate_at(p).is_some_and(|g| state.gates_open & (1 << g) != 0) =>
                        {
                            'c'
                        }
                        k => k.to_char(),
                    }
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}

/// Agents occupy the cells immediately left and right of the box.
fn flanking(state: &EnvState) -> bool {
    let Some(bp) = state.box_pos else {
        return false;
    };
    let (l, r) = (bp.offset(-1, 0), bp.offset(1, 0));
    let [a, b] = state.agent_pos;
    (a == l && b == r) || (a == r && b == l)
}
