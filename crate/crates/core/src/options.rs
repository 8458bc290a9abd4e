//! Symbolic options, the plan-driven meta-controller and intrinsic reward.

use std::collections::BTreeMap;
use std::fmt;

use rust_decimal::prelude::{FromPrimitive, ToPrimitive};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_env::{EnvState, StepOutcome};
use crate::knowledge::KnowledgeTree;
use crate::planner::{Plan, PlannerError, RewardLedger};
use crate::symbolic::{AbstractionFn, MatchMode, SymbolicError, SymbolicState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptionError {
    #[error("option {option} is not applicable in the current state {state}")]
    NoApplicableOption { option: String, state: String },
    #[error("unknown option {0:?}")]
    UnknownOption(String),
    #[error("plan uses edges without options: {0:?}")]
    Coverage(Vec<String>),
    #[error("invalid intrinsic reward config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Symbol(#[from] SymbolicError),
}

/// `(s, π, s′)` for one tree edge; `policy` indexes the option's learner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicOption {
    pub id: String,
    pub source: SymbolicState,
    pub target: SymbolicState,
    pub policy: usize,
}

impl SymbolicOption {
    pub fn initiation(&self, f: &AbstractionFn, state: &EnvState, mode: MatchMode) -> Result<bool, SymbolicError> {
        f.satisfies(&self.source, state, mode)
    }

    pub fn termination(&self, f: &AbstractionFn, state: &EnvState, mode: MatchMode) -> Result<bool, SymbolicError> {
        f.satisfies(&self.target, state, mode)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OptionSet {
    options: Vec<SymbolicOption>,
    index: BTreeMap<String, usize>,
}

impl OptionSet {
    /// One option per edge: source is the child subgoal, target the parent's.
    pub fn from_tree(tree: &KnowledgeTree) -> Self {
        let options: Vec<SymbolicOption> = tree
            .edges()
            .iter()
            .enumerate()
            .map(|(i, e)| SymbolicOption {
                id: e.edge_id.clone(),
                source: tree.node(&e.child).expect("validated").subgoal.clone(),
                target: tree.node(&e.parent).expect("validated").subgoal.clone(),
                policy: i,
            })
            .collect();
        let index = options.iter().enumerate().map(|(i, o)| (o.id.clone(), i)).collect();
        Self { options, index }
    }

    pub fn get(&self, id: &str) -> Option<&SymbolicOption> {
        self.index.get(id).map(|&i| &self.options[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &SymbolicOption> {
        self.options.iter()
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.id.as_str())
    }
}

/// How `n` is counted on the terminating step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeCountMode {
    /// Only the terminating step: 1 if its external reward is negative.
    PerStep,
    /// Negative-reward steps since the option started.
    #[default]
    CumulativeCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicRewardConfig {
    pub phi: f64,
    pub c: f64,
    pub n_mode: NegativeCountMode,
}

impl Default for IntrinsicRewardConfig {
    fn default() -> Self {
        Self {
            phi: 5.0,
            c: 0.01,
            n_mode: NegativeCountMode::CumulativeCount,
        }
    }
}

impl IntrinsicRewardConfig {
    pub fn validate(&self) -> Result<(), OptionError> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(OptionError::InvalidConfig(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(OptionError::InvalidConfig(format!("c must be non-negative, got {}", self.c)));
        }
        Ok(())
    }
}

/// `r_e + φ − n·c` when the option terminated, else 0.
///
/// Evaluated in decimal and rounded once, so `-0.1 + 5 - 0.01` is exactly
/// the double nearest 4.89 rather than 4.890000000000001.
pub fn intrinsic_reward(r_e: f64, n: u32, cfg: &IntrinsicRewardConfig, terminated: bool) -> f64 {
    if !terminated {
        return 0.0;
    }
    let dec = |x: f64| Decimal::from_f64(x);
    match (dec(r_e), dec(cfg.phi), dec(cfg.c)) {
        (Some(r), Some(phi), Some(c)) => (r + phi - Decimal::from(n) * c)
            .to_f64()
            .unwrap_or(r_e + cfg.phi - n as f64 * cfg.c),
        // Out of decimal range: plain floating point.
        _ => r_e + cfg.phi - n as f64 * cfg.c,
    }
}

/// `R[id] += r_i`.
pub fn update_ledger(ledger: &mut RewardLedger, option_id: &str, r_i: f64) -> Result<(), OptionError> {
    ledger.add(option_id, r_i).map_err(|e| match e {
        PlannerError::UnknownOption(id) | PlannerError::UnknownMethod(id) => OptionError::UnknownOption(id),
        other => OptionError::UnknownOption(other.to_string()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptionTermination {
    TargetReached,
    EnvTerminal,
    StepLimit,
}

impl fmt::Display for OptionTermination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TargetReached => "target",
            Self::EnvTerminal => "env_terminal",
            Self::StepLimit => "step_limit",
        })
    }
}

/// Book-keeping for one option execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionExecutionRecord {
    pub option_id: String,
    pub steps: u32,
    pub negative_step_count: u32,
    /// External reward of the last step taken.
    pub external_reward: f64,
    pub intrinsic_reward: f64,
    pub terminated_by: Option<OptionTermination>,
}

impl OptionExecutionRecord {
    pub fn start(option_id: impl Into<String>) -> Self {
        Self {
            option_id: option_id.into(),
            steps: 0,
            negative_step_count: 0,
            external_reward: 0.0,
            intrinsic_reward: 0.0,
            terminated_by: None,
        }
    }

    /// Records one environment step and returns its intrinsic reward.
    /// `target_reached` is the option's termination condition after the step.
    pub fn record_step(
        &mut self,
        outcome: &StepOutcome,
        target_reached: bool,
        cfg: &IntrinsicRewardConfig,
        step_budget: u32,
    ) -> f64 {
        self.steps += 1;
        self.external_reward = outcome.reward;
        if outcome.negative_flag != 0 {
            self.negative_step_count += 1;
        }
        let r_i = if target_reached {
            self.terminated_by = Some(OptionTermination::TargetReached);
            let n = match cfg.n_mode {
                NegativeCountMode::CumulativeCount => self.negative_step_count,
                NegativeCountMode::PerStep => u32::from(outcome.negative_flag != 0),
            };
            intrinsic_reward(outcome.reward, n, cfg, true)
        } else {
            if outcome.terminated {
                self.terminated_by = Some(OptionTermination::EnvTerminal);
            } else if self.steps >= step_budget {
                self.terminated_by = Some(OptionTermination::StepLimit);
            }
            0.0
        };
        self.intrinsic_reward = r_i;
        r_i
    }

    pub fn finished(&self) -> bool {
        self.terminated_by.is_some()
    }
}

/// Follows a plan's execution sequence option by option.
#[derive(Clone, Debug)]
pub struct MetaController {
    sequence: Vec<String>,
    cursor: usize,
    mode: MatchMode,
}

impl MetaController {
    pub fn new(plan: &Plan, options: &OptionSet, mode: MatchMode) -> Result<Self, OptionError> {
        let missing: Vec<String> = plan
            .execution_sequence
            .iter()
            .filter(|id| options.get(id).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(OptionError::Coverage(missing));
        }
        Ok(Self {
            sequence: plan.execution_sequence.clone(),
            cursor: 0,
            mode,
        })
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.sequence.len()
    }

    /// The option to run now, or `None` once the plan is exhausted. Options
    /// whose target already holds are skipped; the option at the cursor must
    /// be initiable.
    pub fn select_option<'o>(
        &mut self,
        options: &'o OptionSet,
        f: &AbstractionFn,
        state: &EnvState,
    ) -> Result<Option<&'o SymbolicOption>, OptionError> {
        while let Some(id) = self.sequence.get(self.cursor) {
            let o = options.get(id).ok_or_else(|| OptionError::UnknownOption(id.clone()))?;
            if o.termination(f, state, self.mode)? {
                self.cursor += 1;
                continue;
            }
            if o.initiation(f, state, self.mode)? {
                return Ok(Some(o));
            }
            return Err(OptionError::NoApplicableOption {
                option: id.clone(),
                state: f.abstract_state(state)?.to_string(),
            });
        }
        Ok(None)
    }

    /// Marks the option at the cursor as completed.
    pub fn advance(&mut self) {
        self.cursor += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    Start,
    Terminate,
    Abandon,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Start => "start",
            Self::Terminate => "terminate",
            Self::Abandon => "abandon",
        })
    }
}

/// One line of the option trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: u64,
    pub step: u32,
    pub option_id: String,
    pub event: TraceEvent,
    pub r_i: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "episode,step,option_id,event,r_i";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.episode, self.step, self.option_id, self.event, self.r_i)
    }
}
