//! Low-level option policies.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_env::JointAction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("observation has length {got}, learner expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<'a> {
    pub obs: &'a [i32],
    pub action: JointAction,
    pub reward: f64,
    pub next_obs: &'a [i32],
    pub done: bool,
}

/// A policy over joint actions trained from transitions.
pub trait PolicyLearner: Send {
    /// ε-greedy when `explore`, otherwise deterministic.
    fn act(&self, obs: &[i32], explore: bool, rng: &mut dyn RngCore) -> Result<JointAction, LearnerError>;
    fn update(&mut self, t: &Transition<'_>) -> Result<(), LearnerError>;
    fn set_epsilon(&mut self, epsilon: f64);
    fn snapshot(&self) -> QTableSnapshot;
    fn restore(&mut self, snapshot: &QTableSnapshot) -> Result<(), LearnerError>;
}

/// Linear decay from `start` to `end` over the first `fraction` of episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    /// ε for 0-based `episode` out of `total`.
    pub fn value(&self, episode: u64, total: u64) -> f64 {
        let horizon = self.fraction * total as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let t = episode as f64 / horizon;
        if t >= 1.0 {
            return self.end;
        }
        (self.start + (self.end - self.start) * t).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLearningParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for QLearningParams {
    fn default() -> Self {
        Self { alpha: 0.1, gamma: 0.99 }
    }
}

type Row = [f64; JointAction::COUNT];

/// Centralised Q-learning over the joint observation and joint action.
#[derive(Clone, Debug)]
pub struct TabularQLearner {
    obs_len: usize,
    params: QLearningParams,
    epsilon: f64,
    table: HashMap<Vec<i32>, Row>,
}

impl TabularQLearner {
    pub fn new(obs_len: usize, params: QLearningParams) -> Self {
        Self {
            obs_len,
            params,
            epsilon: 1.0,
            table: HashMap::new(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn check(&self, obs: &[i32]) -> Result<(), LearnerError> {
        if obs.len() != self.obs_len {
            return Err(LearnerError::Shape {
                expected: self.obs_len,
                got: obs.len(),
            });
        }
        Ok(())
    }

    pub fn q(&self, obs: &[i32], action: JointAction) -> f64 {
        self.table.get(obs).map_or(0.0, |r| r[action.index()])
    }

    pub fn states_visited(&self) -> usize {
        self.table.len()
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy(&self, obs: &[i32]) -> JointAction {
        let Some(row) = self.table.get(obs) else {
            return JointAction::from_index(0);
        };
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        JointAction::from_index(best)
    }
}

impl PolicyLearner for TabularQLearner {
    fn act(&self, obs: &[i32], explore: bool, rng: &mut dyn RngCore) -> Result<JointAction, LearnerError> {
        self.check(obs)?;
        if explore && rng.random::<f64>() < self.epsilon {
            return Ok(JointAction::from_index(rng.random_range(0..JointAction::COUNT)));
        }
        Ok(self.greedy(obs))
    }

    fn update(&mut self, t: &Transition<'_>) -> Result<(), LearnerError> {
        self.check(t.obs)?;
        self.check(t.next_obs)?;
        let future = if t.done {
            0.0
        } else {
            self.table
                .get(t.next_obs)
                .map_or(0.0, |r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        let QLearningParams { alpha, gamma } = self.params;
        let current = self.q(t.obs, t.action);
        let delta = t.reward + gamma * future - current;
        if delta == 0.0 && !self.table.contains_key(t.obs) {
            return Ok(());
        }
        let row = self.table.entry(t.obs.to_vec()).or_insert([0.0; JointAction::COUNT]);
        row[t.action.index()] = current + alpha * delta;
        Ok(())
    }

    fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    fn snapshot(&self) -> QTableSnapshot {
        let mut entries: Vec<(Vec<i32>, Vec<f64>)> =
            self.table.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        QTableSnapshot {
            obs_len: self.obs_len,
            params: self.params,
            epsilon: self.epsilon,
            entries,
        }
    }

    fn restore(&mut self, s: &QTableSnapshot) -> Result<(), LearnerError> {
        let mut table = HashMap::with_capacity(s.entries.len());
        for (k, v) in &s.entries {
            if k.len() != s.obs_len {
                return Err(LearnerError::Checkpoint(format!("key of length {} in a {}-wide table", k.len(), s.obs_len)));
            }
            let row: Row = v
                .as_slice()
                .try_into()
                .map_err(|_| LearnerError::Checkpoint(format!("row of length {}", v.len())))?;
            if row.iter().any(|x| !x.is_finite()) {
                return Err(LearnerError::Checkpoint("non-finite Q-value".into()));
            }
            table.insert(k.clone(), row);
        }
        self.obs_len = s.obs_len;
        self.params = s.params;
        self.epsilon = s.epsilon;
        self.table = table;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTableSnapshot {
    pub obs_len: usize,
    pub params: QLearningParams,
    pub epsilon: f64,
    /// Sorted by observation.
    pub entries: Vec<(Vec<i32>, Vec<f64>)>,
}

/// All option policies of a run, keyed by option id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub options: BTreeMap<String, QTableSnapshot>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(options: BTreeMap<String, QTableSnapshot>) -> Self {
        Self {
            version: Self::VERSION,
            options,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnerError> {
        let c: Self = serde_json::from_str(text).map_err(|e| LearnerError::Checkpoint(e.to_string()))?;
        if c.version != Self::VERSION {
            return Err(LearnerError::Checkpoint(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::Action;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step<'a>(obs: &'a [i32], a: JointAction, r: f64, next: &'a [i32], done: bool) -> Transition<'a> {
        Transition {
            obs,
            action: a,
            reward: r,
            next_obs: next,
            done,
        }
    }

    #[test]
    fn zero_table_is_up_up() {
        let l = TabularQLearner::new(2, QLearningParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = l.act(&[0, 0], false, &mut rng).unwrap();
        assert_eq!(a, JointAction([Action::Up, Action::Up]));
    }

    #[test]
    fn one_step_update() {
        let mut l = TabularQLearner::new(1, QLearningParams::default());
        let a = JointAction::from_index(7);
        l.update(&step(&[3], a, 105.0, &[4], true)).unwrap();
        assert_eq!(l.q(&[3], a), 0.1 * 105.0);
        let mut z = TabularQLearner::new(1, QLearningParams::default());
        z.update(&step(&[3], a, 0.0, &[4], false)).unwrap();
        assert_eq!(z.states_visited(), 0);
    }

    #[test]
    fn greedy_follows_updates() {
        let mut l = TabularQLearner::new(1, QLearningParams::default());
        let rr = JointAction([Action::Right, Action::Right]);
        for _ in 0..50 {
            l.update(&step(&[0], rr, 10.0, &[1], true)).unwrap();
        }
        assert_eq!(l.greedy(&[0]), rr);
    }

    #[test]
    fn shape_mismatch() {
        let l = TabularQLearner::new(4, QLearningParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            l.act(&[1, 2], false, &mut rng),
            Err(LearnerError::Shape { expected: 4, got: 2 })
        );
    }

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0, 100), 1.0);
        assert!((s.value(25, 100) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(50, 100), 0.05);
        assert_eq!(s.value(99, 100), 0.05);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut l = TabularQLearner::new(2, QLearningParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..200 {
            let a = JointAction::from_index(rng.random_range(0..25));
            let r = rng.random::<f64>() * 3.0 - 1.0;
            l.update(&step(&[i % 7, i % 3], a, r, &[(i + 1) % 7, 0], i % 11 == 0)).unwrap();
        }
        l.set_epsilon(0.3);
        let ck = Checkpoint::new([("so_0".to_string(), l.snapshot())].into_iter().collect());
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let mut m = TabularQLearner::new(2, QLearningParams::default());
        m.restore(&back.options["so_0"]).unwrap();
        for x in 0..7 {
            for y in 0..3 {
                assert_eq!(m.greedy(&[x, y]), l.greedy(&[x, y]));
                for a in 0..25 {
                    let a = JointAction::from_index(a);
                    assert_eq!(m.q(&[x, y], a).to_bits(), l.q(&[x, y], a).to_bits());
                }
            }
        }
        let bad = ck.to_json().replace("\"version\":1", "\"version\":9");
        assert!(Checkpoint::from_json(&bad).is_err());
    }
}
