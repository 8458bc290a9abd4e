//! Symbolic-option multi-agent reinforcement learning: subgoal trees compiled
//! to HTN problems, a reward-biased planner that sequences options, tabular
//! option learners, and the gridworlds and harness to run them.

pub mod assets;
pub mod grid_env;
pub mod harness;
pub mod hddl;
pub mod knowledge;
pub mod learner;
pub mod options;
pub mod planner;
pub mod symbolic;

pub use grid_env::{Action, EnvState, GridEnv, GridMap, JointAction, TaskVariant, TerminationCause};
pub use harness::{aggregate, emit, run_experiment, run_seed, Ablation, ExperimentConfig, MetricsLog, Setup, Summary};
pub use hddl::{compile_tree, parse_hddl, print_hddl, HtnDomain, HtnProblem};
pub use knowledge::KnowledgeTree;
pub use learner::{PolicyLearner, TabularQLearner};
pub use options::{intrinsic_reward, IntrinsicRewardConfig, MetaController, OptionSet, SymbolicOption};
pub use planner::{solve, Plan, PlannerConfig, RewardLedger, TieBreak};
pub use symbolic::{AbstractionFn, GroundAtom, MatchMode, SymbolicState};
