//! Experiment driver: the plan–execute–learn loop, flat baseline, metrics,
//! aggregation and CSV/SVG output.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::{fs, io};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assets::{self, BUILTIN_PREFIX};
use crate::grid_env::{EnvError, GridEnv, GridMap, MapError, TaskVariant, TerminationCause};
use crate::hddl::{compile_tree, HddlError, HtnProblem};
use crate::knowledge::{KnowledgeError, KnowledgeTree};
use crate::learner::{EpsilonSchedule, LearnerError, PolicyLearner, QLearningParams, TabularQLearner, Transition, Checkpoint};
use crate::options::{
    update_ledger, IntrinsicRewardConfig, MetaController, NegativeCountMode, OptionError, OptionExecutionRecord,
    OptionSet, OptionTermination, TraceEvent, TraceRow,
};
use crate::planner::{solve, MethodCost, PlannerConfig, PlannerError, RewardLedger, TieBreak};
use crate::symbolic::{AbstractionFn, MatchMode, SymbolicError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Symbol(#[from] SymbolicError),
    #[error(transparent)]
    Hddl(#[from] HddlError),
    #[error("episode {episode}: {source}")]
    Planner { episode: u64, source: PlannerError },
    #[error("episode {episode}: {source}")]
    Option { episode: u64, source: OptionError },
    #[error("episode {episode}: {source}")]
    Env { episode: u64, source: EnvError },
    #[error("episode {episode}: {source}")]
    Learner { episode: u64, source: LearnerError },
    #[error("setup: {0}")]
    Setup(String),
    #[error("logs have different lengths: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("plot error: {0}")]
    Plot(String),
}

impl HarnessError {
    /// Problems with inputs rather than with a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Map(_) | Self::Knowledge(_) | Self::Symbol(_) | Self::Hddl(_) | Self::Setup(_)
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    Full,
    /// Learners train on external reward; the ledger stays at zero.
    NoIntrinsic,
    /// One joint learner on external reward, no planner and no options.
    Flat,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoIntrinsic => "no-intrinsic",
            Self::Flat => "flat",
        })
    }
}

impl FromStr for Ablation {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "no-intrinsic" | "no_intrinsic" => Ok(Self::NoIntrinsic),
            "flat" => Ok(Self::Flat),
            _ => Err(HarnessError::Config(format!("unknown ablation {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variant: TaskVariant,
    /// File path or `builtin:<name>`; `None` picks the shipped file.
    pub map: Option<String>,
    pub knowledge: Option<String>,
    pub episodes: u64,
    pub max_steps: u32,
    pub seeds: Vec<u64>,
    pub intrinsic: IntrinsicRewardConfig,
    pub q: QLearningParams,
    pub epsilon: EpsilonSchedule,
    pub ablation: Ablation,
    pub window: usize,
    /// Steps an option may run before it is abandoned.
    pub option_step_budget: u32,
    pub match_mode: MatchMode,
    pub method_cost: MethodCost,
    /// Break planner ties with a per-seed random stream instead of id order.
    pub seeded_tie_break: bool,
    /// Multiply the ledger by this factor before every solve. Off by default.
    pub ledger_decay: Option<f64>,
    /// Write the final option policies next to the logs.
    pub checkpoint: bool,
    /// Ledger file (`id = value` lines or a `ledger.csv`) to start from.
    pub ledger_init: Option<String>,
}

impl ExperimentConfig {
    pub fn new(variant: TaskVariant) -> Self {
        let episodes = match variant {
            TaskVariant::FindTreasure => 5_000,
            TaskVariant::MoveBox(_) => 10_000,
        };
        Self {
            variant,
            map: None,
            knowledge: None,
            episodes,
            max_steps: variant.default_max_steps(),
            seeds: vec![1, 2, 3, 4, 5],
            intrinsic: IntrinsicRewardConfig::default(),
            q: QLearningParams::default(),
            epsilon: EpsilonSchedule::default(),
            ablation: Ablation::Full,
            window: 100,
            option_step_budget: variant.default_max_steps(),
            match_mode: MatchMode::Subset,
            method_cost: MethodCost::Unit,
            seeded_tie_break: true,
            ledger_decay: None,
            checkpoint: false,
            ledger_init: None,
        }
    }

    pub fn env_name(&self) -> &'static str {
        match self.variant {
            TaskVariant::FindTreasure => "findtreasure",
            TaskVariant::MoveBox(_) => "movebox",
        }
    }

    pub fn variant_name(&self) -> String {
        match self.variant {
            TaskVariant::FindTreasure => "default".into(),
            TaskVariant::MoveBox(k) => format!("task{k}"),
        }
    }

    pub fn map_source(&self) -> String {
        self.map.clone().unwrap_or_else(|| {
            let name = match self.variant {
                TaskVariant::FindTreasure => "findtreasure.map",
                TaskVariant::MoveBox(0) => "movebox_task0.map",
                TaskVariant::MoveBox(_) => "movebox_keys.map",
            };
            format!("{BUILTIN_PREFIX}{name}")
        })
    }

    pub fn knowledge_source(&self) -> String {
        self.knowledge.clone().unwrap_or_else(|| {
            let name = match self.variant {
                TaskVariant::FindTreasure => "findtreasure.tree",
                TaskVariant::MoveBox(0) => "movebox_task0.tree",
                TaskVariant::MoveBox(_) => "movebox.tree",
            };
            format!("{BUILTIN_PREFIX}{name}")
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.window == 0 || self.window as u64 > self.episodes {
            return bad(format!("window {} must be in 1..={}", self.window, self.episodes));
        }
        if self.max_steps == 0 || self.option_step_budget == 0 {
            return bad("step limits must be positive".into());
        }
        if let TaskVariant::MoveBox(k) = self.variant {
            if k > 3 {
                return bad(format!("MoveBox task {k} does not exist"));
            }
        }
        let QLearningParams { alpha, gamma } = self.q;
        if !(alpha > 0.0 && alpha <= 1.0) || !(0.0..=1.0).contains(&gamma) {
            return bad(format!("alpha {alpha} / gamma {gamma} out of range"));
        }
        let e = self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.fraction.is_nan() || e.fraction < 0.0 {
            return bad("epsilon schedule out of range".into());
        }
        if let Some(d) = self.ledger_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("ledger_decay {d} must be in (0, 1]"));
            }
        }
        self.intrinsic.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {v:?}")))
        }
        let v = value.trim();
        match key.trim() {
            "env" | "task" => {
                let task = match self.variant {
                    TaskVariant::MoveBox(k) => k,
                    TaskVariant::FindTreasure => 0,
                };
                let (env, task) = if key.trim() == "env" { (v.to_string(), task) } else { (self.env_name().to_string(), num(key, v)?) };
                let variant = match env.as_str() {
                    "findtreasure" => TaskVariant::FindTreasure,
                    "movebox" => TaskVariant::MoveBox(task),
                    _ => return Err(HarnessError::Config(format!("unknown env {env:?}"))),
                };
                // Fields still at the old variant's defaults follow the new one.
                let (old, new) = (Self::new(self.variant), Self::new(variant));
                if self.episodes == old.episodes {
                    self.episodes = new.episodes;
                }
                if self.max_steps == old.max_steps {
                    self.max_steps = new.max_steps;
                }
                if self.option_step_budget == old.option_step_budget {
                    self.option_step_budget = new.option_step_budget;
                }
                self.variant = variant;
            }
            "map" => self.map = Some(v.to_string()),
            "knowledge" => self.knowledge = Some(v.to_string()),
            "episodes" => self.episodes = num(key, v)?,
            "max_steps" => self.max_steps = num(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "phi" => self.intrinsic.phi = num(key, v)?,
            "c" => self.intrinsic.c = num(key, v)?,
            "n_mode" => {
                self.intrinsic.n_mode = match v {
                    "cumulative" => NegativeCountMode::CumulativeCount,
                    "per-step" => NegativeCountMode::PerStep,
                    _ => return Err(HarnessError::Config(format!("unknown n_mode {v:?}"))),
                }
            }
            "alpha" => self.q.alpha = num(key, v)?,
            "gamma" => self.q.gamma = num(key, v)?,
            "epsilon_start" => self.epsilon.start = num(key, v)?,
            "epsilon_end" => self.epsilon.end = num(key, v)?,
            "epsilon_fraction" => self.epsilon.fraction = num(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            "window" => self.window = num(key, v)?,
            "option_step_budget" => self.option_step_budget = num(key, v)?,
            "match_mode" => {
                self.match_mode = match v {
                    "subset" => MatchMode::Subset,
                    "exact" => MatchMode::Exact,
                    _ => return Err(HarnessError::Config(format!("unknown match_mode {v:?}"))),
                }
            }
            "method_cost" => {
                self.method_cost = match v {
                    "unit" => MethodCost::Unit,
                    "primitive-count" => MethodCost::PrimitiveCount,
                    "critical-path" => MethodCost::CriticalPath,
                    _ => return Err(HarnessError::Config(format!("unknown method_cost {v:?}"))),
                }
            }
            "seeded_tie_break" => self.seeded_tie_break = num(key, v)?,
            "ledger_decay" => self.ledger_decay = if v == "off" { None } else { Some(num(key, v)?) },
            "checkpoint" => self.checkpoint = num(key, v)?,
            "ledger_init" => self.ledger_init = if v == "none" { None } else { Some(v.to_string()) },
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults of `env`/`task` if given.
    pub fn from_kv(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::new(TaskVariant::FindTreasure);
        // Environment first so its defaults apply before explicit overrides.
        for key in ["env", "task"] {
            if let Some((k, v)) = pairs.iter().find(|(k, _)| k == key) {
                cfg.set(k, v)?;
            }
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "env" && k != "task") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let task = match self.variant {
            TaskVariant::MoveBox(k) => k,
            TaskVariant::FindTreasure => 0,
        };
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env_name().into());
        kv("task", task.to_string());
        kv("map", self.map_source());
        kv("knowledge", self.knowledge_source());
        kv("episodes", self.episodes.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("seeds", seeds.join(","));
        kv("phi", self.intrinsic.phi.to_string());
        kv("c", self.intrinsic.c.to_string());
        kv(
            "n_mode",
            match self.intrinsic.n_mode {
                NegativeCountMode::CumulativeCount => "cumulative",
                NegativeCountMode::PerStep => "per-step",
            }
            .into(),
        );
        kv("alpha", self.q.alpha.to_string());
        kv("gamma", self.q.gamma.to_string());
        kv("epsilon_start", self.epsilon.start.to_string());
        kv("epsilon_end", self.epsilon.end.to_string());
        kv("epsilon_fraction", self.epsilon.fraction.to_string());
        kv("ablation", self.ablation.to_string());
        kv("window", self.window.to_string());
        kv("option_step_budget", self.option_step_budget.to_string());
        kv(
            "match_mode",
            match self.match_mode {
                MatchMode::Subset => "subset",
                MatchMode::Exact => "exact",
            }
            .into(),
        );
        kv(
            "method_cost",
            match self.method_cost {
                MethodCost::Unit => "unit",
                MethodCost::PrimitiveCount => "primitive-count",
                MethodCost::CriticalPath => "critical-path",
            }
            .into(),
        );
        kv("seeded_tie_break", self.seeded_tie_break.to_string());
        kv("ledger_decay", self.ledger_decay.map_or("off".into(), |d| d.to_string()));
        kv("checkpoint", self.checkpoint.to_string());
        kv("ledger_init", self.ledger_init.clone().unwrap_or_else(|| "none".into()));
        s
    }

    /// `<root>/<env>/<variant>/<ablation>`.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(self.env_name())
            .join(self.variant_name())
            .join(self.ablation.to_string())
    }
}

/// Reads a file path or a `builtin:` asset.
pub fn load_source(source: &str) -> Result<String, HarnessError> {
    if source.starts_with(BUILTIN_PREFIX) {
        return assets::builtin(source)
            .map(str::to_string)
            .ok_or_else(|| HarnessError::Config(format!("no shipped file {source:?}")));
    }
    fs::read_to_string(source).map_err(|e| HarnessError::Read {
        path: source.to_string(),
        source: e,
    })
}

/// Parses ledger values from `id = value` lines, or from a `ledger.csv`
/// written by a run (its last episode is used).
pub fn parse_ledger(text: &str) -> Result<BTreeMap<String, f64>, HarnessError> {
    let bad = |m: String| HarnessError::Config(format!("ledger: {m}"));
    let mut out = BTreeMap::new();
    if text.starts_with("episode,id,value") {
        let mut rows = Vec::new();
        for l in text.lines().skip(1) {
            let f: Vec<&str> = l.split(',').collect();
            let (Some(e), Some(v)) = (f.first().and_then(|x| x.parse::<u64>().ok()), f.get(2).and_then(|x| x.parse::<f64>().ok())) else {
                return Err(bad(format!("malformed line {l:?}")));
            };
            rows.push((e, f[1].to_string(), v));
        }
        let last = rows.iter().map(|r| r.0).max();
        out.extend(rows.into_iter().filter(|r| Some(r.0) == last).map(|r| (r.1, r.2)));
        return Ok(out);
    }
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (id, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected id = value", i + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| bad(format!("line {}: bad value {:?}", i + 1, v.trim())))?;
        out.insert(id.trim().to_string(), v);
    }
    Ok(out)
}

/// Everything a run needs that does not change between episodes.
#[derive(Clone, Debug)]
pub struct Setup {
    pub env: GridEnv,
    pub tree: KnowledgeTree,
    pub problem: HtnProblem,
    pub options: OptionSet,
    pub abstraction: AbstractionFn,
    /// Ledger values at episode 0; empty means all zero.
    pub initial_ledger: BTreeMap<String, f64>,
}

impl Setup {
    pub fn from_texts(variant: TaskVariant, max_steps: u32, map: &str, knowledge: &str) -> Result<Self, HarnessError> {
        let map = Arc::new(GridMap::parse(map)?);
        let env = GridEnv::new(map.clone(), variant, max_steps).map_err(|e| HarnessError::Setup(e.to_string()))?;
        let tree = KnowledgeTree::parse(knowledge)?;
        let abstraction = AbstractionFn::new(map, tree.vocabulary().clone(), tree.objects().clone())?;
        let problem = compile_tree(&tree)?;
        let options = OptionSet::from_tree(&tree);
        let (s0, _) = env.reset(0);
        let init = &tree.initial_leaf().subgoal;
        if !abstraction.satisfies(init, &s0, MatchMode::Subset)? {
            return Err(HarnessError::Setup(format!(
                "initial leaf {init} does not hold in the initial state {}",
                abstraction.abstract_state(&s0)?
            )));
        }
        Ok(Self {
            env,
            tree,
            problem,
            options,
            abstraction,
            initial_ledger: BTreeMap::new(),
        })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let map = load_source(&cfg.map_source())?;
        let knowledge = load_source(&cfg.knowledge_source())?;
        let mut setup = Self::from_texts(cfg.variant, cfg.max_steps, &map, &knowledge)?;
        if let Some(src) = &cfg.ledger_init {
            let values = parse_ledger(&load_source(src)?)?;
            RewardLedger::with_values(&setup.problem, &values).map_err(|e| HarnessError::Config(e.to_string()))?;
            setup.initial_ledger = values;
        }
        Ok(setup)
    }
}

/// How an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeEnd {
    Env(TerminationCause),
    /// The option at the plan cursor could not start.
    NoApplicableOption,
    /// An option used up its step budget.
    OptionStepLimit,
    /// Every planned option finished without reaching a terminal state.
    PlanExhausted,
}

impl fmt::Display for EpisodeEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Env(c) => write!(f, "{c}"),
            Self::NoApplicableOption => f.write_str("no_option"),
            Self::OptionStepLimit => f.write_str("option_limit"),
            Self::PlanExhausted => f.write_str("plan_exhausted"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Sum of external rewards.
    pub ret: f64,
    pub end: EpisodeEnd,
    pub steps: u32,
    /// Environment steps since the start of the run, this episode included.
    pub total_steps: u64,
    /// Empty for the flat baseline.
    pub plan: Vec<String>,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.end == EpisodeEnd::Env(TerminationCause::Goal)
    }
}

/// Everything logged for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub seed: u64,
    pub window: usize,
    pub episodes: Vec<EpisodeRecord>,
    pub trace: Vec<TraceRow>,
    pub ledger_ids: Vec<String>,
    /// Ledger values after each episode, in `ledger_ids` order.
    pub ledger: Vec<Vec<f64>>,
    pub checkpoint: Option<Checkpoint>,
}

/// Trailing mean over at most `window` values.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

impl MetricsLog {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.ret).collect()
    }

    pub fn successes(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| if e.success() { 1.0 } else { 0.0 }).collect()
    }

    pub fn rolling_reward(&self) -> Vec<f64> {
        rolling_mean(&self.returns(), self.window)
    }

    pub fn rolling_success(&self) -> Vec<f64> {
        rolling_mean(&self.successes(), self.window)
    }

    pub fn final_rolling_reward(&self) -> f64 {
        self.rolling_reward().last().copied().unwrap_or(0.0)
    }

    pub fn final_rolling_success(&self) -> f64 {
        self.rolling_success().last().copied().unwrap_or(0.0)
    }

    /// First episode at which the rolling success rate over a full window
    /// reaches `level`.
    pub fn first_success_at(&self, level: f64) -> Option<u64> {
        let r = self.rolling_success();
        let skip = self.window.saturating_sub(1);
        r.iter()
            .enumerate()
            .skip(skip)
            .find(|(_, &x)| x >= level)
            .map(|(i, _)| self.episodes[i].episode)
    }

    /// Episodes whose plan differs from the previous episode's.
    pub fn plan_changes(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut last: Option<&Vec<String>> = None;
        for e in &self.episodes {
            if last != Some(&e.plan) {
                out.push(e.episode);
            }
            last = Some(&e.plan);
        }
        out
    }

    pub fn episodes_csv(&self) -> String {
        let rr = self.rolling_reward();
        let rs = self.rolling_success();
        let mut s = String::from("episode,return,success,cause,steps,total_steps,rolling_reward,rolling_success,plan\n");
        for (i, e) in self.episodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.episode,
                e.ret,
                u8::from(e.success()),
                e.end,
                e.steps,
                e.total_steps,
                rr[i],
                rs[i],
                e.plan.join(";")
            );
        }
        s
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from(TraceRow::CSV_HEADER);
        s.push('\n');
        for r in &self.trace {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    /// Long format: `episode,id,value`.
    pub fn ledger_csv(&self) -> String {
        let mut s = String::from("episode,id,value\n");
        for (e, row) in self.episodes.iter().zip(&self.ledger) {
            for (id, v) in self.ledger_ids.iter().zip(row) {
                let _ = writeln!(s, "{},{id},{v}", e.episode);
            }
        }
        s
    }

    /// The plan at every episode where it changed.
    pub fn plans_txt(&self) -> String {
        let changes = self.plan_changes();
        let mut s = String::new();
        for e in self.episodes.iter().filter(|e| changes.contains(&e.episode)) {
            let _ = writeln!(s, "{} {}", e.episode, e.plan.join(" "));
        }
        s
    }

    /// Writes this log's files into `dir`.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_kv())?;
        fs::write(dir.join("episodes.csv"), self.episodes_csv())?;
        if cfg.ablation != Ablation::Flat {
            fs::write(dir.join("trace.csv"), self.trace_csv())?;
            fs::write(dir.join("ledger.csv"), self.ledger_csv())?;
            fs::write(dir.join("plans.txt"), self.plans_txt())?;
        }
        if let Some(c) = &self.checkpoint {
            fs::write(dir.join("checkpoint.json"), c.to_json())?;
        }
        Ok(())
    }
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut root = ChaCha8Rng::seed_from_u64(seed);
    let actions = ChaCha8Rng::seed_from_u64(root.next_u64());
    let ties = ChaCha8Rng::seed_from_u64(root.next_u64());
    (actions, ties)
}

/// Runs one seed of a SOMARL variant (Full or NoIntrinsic).
pub fn run_seed(cfg: &ExperimentConfig, setup: &Setup, seed: u64) -> Result<MetricsLog, HarnessError> {
    if cfg.ablation == Ablation::Flat {
        return run_flat(cfg, setup, seed);
    }
    let Setup {
        env,
        problem,
        options,
        abstraction: f,
        initial_ledger,
        ..
    } = setup;
    let obs_len = env.observation_len();
    let mut learners: BTreeMap<String, TabularQLearner> = options
        .ids()
        .map(|id| (id.to_string(), TabularQLearner::new(obs_len, cfg.q)))
        .collect();
    let mut ledger = RewardLedger::with_values(problem, initial_ledger)
        .map_err(|source| HarnessError::Planner { episode: 0, source })?;
    let ledger_ids: Vec<String> = ledger.ids().map(str::to_string).collect();
    let (mut rng, mut tie_rng) = rngs(seed);
    let intrinsic = cfg.ablation == Ablation::Full;

    let mut log = MetricsLog {
        seed,
        window: cfg.window,
        episodes: Vec::with_capacity(cfg.episodes as usize),
        trace: Vec::new(),
        ledger_ids,
        ledger: Vec::with_capacity(cfg.episodes as usize),
        checkpoint: None,
    };
    let mut total_steps = 0u64;

    for episode in 0..cfg.episodes {
        let eps = cfg.epsilon.value(episode, cfg.episodes);
        learners.values_mut().for_each(|l| l.set_epsilon(eps));
        if let Some(d) = cfg.ledger_decay {
            ledger.scale(d);
        }
        ledger.set_episode(episode);

        let tie_break = if cfg.seeded_tie_break {
            TieBreak::Seeded(tie_rng.next_u64())
        } else {
            TieBreak::Lexicographic
        };
        let plan_cfg = PlannerConfig {
            method_cost: cfg.method_cost,
            tie_break,
        };
        let plan = solve(problem, &ledger, &plan_cfg).map_err(|source| HarnessError::Planner { episode, source })?;
        let mut mc = MetaController::new(&plan, options, cfg.match_mode)
            .map_err(|source| HarnessError::Option { episode, source })?;

        let (mut state, mut obs) = env.reset(seed);
        let mut ret = 0.0;
        let mut steps = 0u32;
        let end = loop {
            if state.terminated() {
                break EpisodeEnd::Env(state.cause);
            }
            let option = match mc.select_option(options, f, &state) {
                Ok(Some(o)) => o,
                Ok(None) => break EpisodeEnd::PlanExhausted,
                Err(OptionError::NoApplicableOption { .. }) => break EpisodeEnd::NoApplicableOption,
                Err(source) => return Err(HarnessError::Option { episode, source }),
            };
            log.trace.push(TraceRow {
                episode,
                step: steps,
                option_id: option.id.clone(),
                event: TraceEvent::Start,
                r_i: 0.0,
            });
            let learner = learners.get_mut(&option.id).expect("one learner per option");
            let mut record = OptionExecutionRecord::start(option.id.clone());
            while !record.finished() {
                let action = learner
                    .act(obs.joint(), true, &mut rng)
                    .map_err(|source| HarnessError::Learner { episode, source })?;
                let (next, out) = env
                    .step(&state, action)
                    .map_err(|source| HarnessError::Env { episode, source })?;
                steps += 1;
                ret += out.reward;
                let reached = option
                    .termination(f, &next, cfg.match_mode)
                    .map_err(|e| HarnessError::Option {
                        episode,
                        source: e.into(),
                    })?;
                let r_i = record.record_step(&out, reached, &cfg.intrinsic, cfg.option_step_budget);
                let reward = if intrinsic { r_i } else { out.reward };
                learner
                    .update(&Transition {
                        obs: obs.joint(),
                        action,
                        reward,
                        next_obs: out.observation.joint(),
                        done: reached || out.terminated,
                    })
                    .map_err(|source| HarnessError::Learner { episode, source })?;
                state = next;
                obs = out.observation;
            }
            if intrinsic {
                update_ledger(&mut ledger, &option.id, record.intrinsic_reward)
                    .map_err(|source| HarnessError::Option { episode, source })?;
            }
            let reached = record.terminated_by == Some(OptionTermination::TargetReached);
            log.trace.push(TraceRow {
                episode,
                step: steps,
                option_id: option.id.clone(),
                event: if reached { TraceEvent::Terminate } else { TraceEvent::Abandon },
                r_i: record.intrinsic_reward,
            });
            if reached {
                mc.advance();
            } else if record.terminated_by == Some(OptionTermination::StepLimit) && !state.terminated() {
                break EpisodeEnd::OptionStepLimit;
            }
        };
        total_steps += u64::from(steps);
        log.episodes.push(EpisodeRecord {
            episode,
            ret,
            end,
            steps,
            total_steps,
            plan: plan.execution_sequence,
        });
        log.ledger.push(ledger.iter().map(|(_, v)| v).collect());
    }
    if cfg.checkpoint {
        log.checkpoint = Some(Checkpoint::new(
            learners.iter().map(|(id, l)| (id.clone(), l.snapshot())).collect(),
        ));
    }
    Ok(log)
}

/// Flat baseline: one joint learner on external reward, no planner.
pub fn run_flat(cfg: &ExperimentConfig, setup: &Setup, seed: u64) -> Result<MetricsLog, HarnessError> {
    let env = &setup.env;
    let mut learner = TabularQLearner::new(env.observation_len(), cfg.q);
    let (mut rng, _) = rngs(seed);
    let mut log = MetricsLog {
        seed,
        window: cfg.window,
        episodes: Vec::with_capacity(cfg.episodes as usize),
        trace: Vec::new(),
        ledger_ids: Vec::new(),
        ledger: Vec::new(),
        checkpoint: None,
    };
    let mut total_steps = 0u64;
    for episode in 0..cfg.episodes {
        learner.set_epsilon(cfg.epsilon.value(episode, cfg.episodes));
        let (mut state, mut obs) = env.reset(seed);
        let mut ret = 0.0;
        let mut steps = 0u32;
        while !state.terminated() {
            let action = learner
                .act(obs.joint(), true, &mut rng)
                .map_err(|source| HarnessError::Learner { episode, source })?;
            let (next, out) = env
                .step(&state, action)
                .map_err(|source| HarnessError::Env { episode, source })?;
            steps += 1;
            ret += out.reward;
            learner
                .update(&Transition {
                    obs: obs.joint(),
                    action,
                    reward: out.reward,
                    next_obs: out.observation.joint(),
                    done: out.terminated,
                })
                .map_err(|source| HarnessError::Learner { episode, source })?;
            state = next;
            obs = out.observation;
        }
        total_steps += u64::from(steps);
        log.episodes.push(EpisodeRecord {
            episode,
            ret,
            end: EpisodeEnd::Env(state.cause),
            steps,
            total_steps,
            plan: Vec::new(),
        });
    }
    if cfg.checkpoint {
        log.checkpoint = Some(Checkpoint::new([("flat".to_string(), learner.snapshot())].into_iter().collect()));
    }
    Ok(log)
}

/// Runs every seed concurrently; logs come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsLog>, HarnessError> {
    cfg.validate()?;
    let setup = Setup::load(cfg)?;
    std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let setup = &setup;
                s.spawn(move || run_seed(cfg, setup, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed runner panicked"))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub episode: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
}

/// Per-episode mean and population standard deviation across seeds of the
/// rolling reward and rolling success rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(logs: &[MetricsLog]) -> Result<Summary, HarnessError> {
    let lens: Vec<usize> = logs.iter().map(|l| l.episodes.len()).collect();
    if lens.is_empty() || lens.iter().any(|&n| n != lens[0]) {
        return Err(HarnessError::LengthMismatch(lens));
    }
    let rewards: Vec<Vec<f64>> = logs.iter().map(MetricsLog::rolling_reward).collect();
    let success: Vec<Vec<f64>> = logs.iter().map(MetricsLog::rolling_success).collect();
    let rows = (0..lens[0])
        .map(|i| {
            let (reward_mean, reward_std) = mean_std(&rewards.iter().map(|r| r[i]).collect::<Vec<_>>());
            let (success_mean, success_std) = mean_std(&success.iter().map(|r| r[i]).collect::<Vec<_>>());
            SummaryRow {
                episode: logs[0].episodes[i].episode,
                reward_mean,
                reward_std,
                success_mean,
                success_std,
            }
        })
        .collect();
    Ok(Summary { rows })
}

impl Summary {
    pub const CSV_HEADER: &'static str = "episode,reward_mean,reward_std,success_mean,success_std";

    /// The last row: statistics of the final window.
    pub fn final_window(&self) -> Option<&SummaryRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.episode, r.reward_mean, r.reward_std, r.success_mean, r.success_std
            );
        }
        s
    }

    /// Reads back a summary written by [`Summary::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(HarnessError::Config("not a summary CSV".into()));
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || HarnessError::Config(format!("summary line {}: {l:?}", i + 2));
                if f.len() != 5 {
                    return Err(bad());
                }
                let x = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
                Ok(SummaryRow {
                    episode: f[0].parse().map_err(|_| bad())?,
                    reward_mean: x(1)?,
                    reward_std: x(2)?,
                    success_mean: x(3)?,
                    success_std: x(4)?,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Plot,
}

/// Writes `summary.csv`, or `reward.svg` and `success.svg`, into `dir`.
pub fn emit(summary: &Summary, format: EmitFormat, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if summary.rows.is_empty() {
        return Err(HarnessError::Config("empty summary".into()));
    }
    fs::create_dir_all(dir)?;
    match format {
        EmitFormat::Csv => {
            let p = dir.join("summary.csv");
            fs::write(&p, summary.to_csv())?;
            Ok(vec![p])
        }
        EmitFormat::Plot => {
            let reward = dir.join("reward.svg");
            let success = dir.join("success.svg");
            plot(summary, &reward, "rolling reward", |r| (r.reward_mean, r.reward_std))?;
            plot(summary, &success, "success rate", |r| (r.success_mean, r.success_std))?;
            Ok(vec![reward, success])
        }
    }
}

fn plot(summary: &Summary, path: &Path, label: &str, pick: impl Fn(&SummaryRow) -> (f64, f64)) -> Result<(), HarnessError> {
    use plotters::prelude::*;
    let err = |e: &dyn fmt::Display| HarnessError::Plot(e.to_string());
    let pts: Vec<(f64, f64, f64)> = summary
        .rows
        .iter()
        .map(|r| {
            let (m, s) = pick(r);
            (r.episode as f64, m, s)
        })
        .collect();
    let x_max = pts.last().map_or(1.0, |p| p.0).max(1.0);
    let (mut lo, mut hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1 - p.2), hi.max(p.1 + p.2)));
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);

    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, (lo - pad)..(hi + pad))
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("episode")
        .y_desc(label)
        .draw()
        .map_err(|e| err(&e))?;
    let band: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| (p.0, p.1 + p.2))
        .chain(pts.iter().rev().map(|p| (p.0, p.1 - p.2)))
        .collect();
    chart
        .draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.15).filled())))
        .map_err(|e| err(&e))?;
    chart
        .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, p.1)), &BLUE))
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Runs, writes per-seed logs under `out`, and emits the aggregate.
pub fn run_and_write(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<MetricsLog>, Summary), HarnessError> {
    let logs = run_experiment(cfg)?;
    let dir = cfg.run_dir(out);
    for log in &logs {
        log.write(&dir.join(log.seed.to_string()), cfg)?;
    }
    let summary = aggregate(&logs)?;
    emit(&summary, EmitFormat::Csv, &dir)?;
    emit(&summary, EmitFormat::Plot, &dir)?;
    Ok((logs, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: TaskVariant, ablation: Ablation, episodes: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(variant);
        c.episodes = episodes;
        c.window = episodes.min(10) as usize;
        c.seeds = vec![3];
        c.ablation = ablation;
        c
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ExperimentConfig::new(TaskVariant::MoveBox(3));
        c.seeds = vec![7, 9];
        c.ledger_decay = Some(0.5);
        c.ablation = Ablation::NoIntrinsic;
        let back = ExperimentConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back.to_kv(), c.to_kv());
        assert_eq!(back.variant, TaskVariant::MoveBox(3));
        assert_eq!(back.max_steps, 300);
        assert_eq!(back.episodes, 10_000);

        let c = ExperimentConfig::from_kv("# comment\nenv = movebox\ntask = 2\nepisodes = 10\nwindow=5\n").unwrap();
        assert_eq!(c.variant, TaskVariant::MoveBox(2));
        assert_eq!(c.episodes, 10);
        assert!(ExperimentConfig::from_kv("bogus = 1").is_err());
        assert!(ExperimentConfig::from_kv("episodes").is_err());
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::new(TaskVariant::FindTreasure);
        c.validate().unwrap();
        c.window = 10_000;
        assert!(c.validate().is_err());
        c.window = 100;
        c.seeds.clear();
        assert!(c.validate().is_err());
        c.seeds = vec![1];
        c.episodes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ledger_files() {
        let kv = parse_ledger("# warm start\nso_1 = 2.5\nso_4=1\n").unwrap();
        assert_eq!(kv["so_1"], 2.5);
        assert_eq!(kv.len(), 2);
        let csv = parse_ledger("episode,id,value\n0,so_1,1\n0,so_2,0\n1,so_1,3\n1,so_2,0.5\n").unwrap();
        assert_eq!(csv["so_1"], 3.0);
        assert_eq!(csv["so_2"], 0.5);
        assert!(parse_ledger("so_1 2").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.txt");
        fs::write(&path, "so_12 = 7\n").unwrap();
        let mut c = small(TaskVariant::FindTreasure, Ablation::NoIntrinsic, 3);
        c.ledger_init = Some(path.to_string_lossy().into_owned());
        let log = &run_experiment(&c).unwrap()[0];
        let i = log.ledger_ids.iter().position(|id| id == "so_12").unwrap();
        assert!(log.ledger.iter().all(|row| row[i] == 7.0));
        assert!(log.episodes.iter().all(|e| e.plan.last().unwrap() == "so_12"));
        fs::write(&path, "so_99 = 1\n").unwrap();
        assert!(run_experiment(&c).unwrap_err().is_validation());
    }

    #[test]
    fn rolling() {
        assert_eq!(rolling_mean(&[1.0, 0.0, 1.0, 1.0], 2), vec![1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn one_episode() {
        for ab in [Ablation::Full, Ablation::NoIntrinsic, Ablation::Flat] {
            let c = small(TaskVariant::FindTreasure, ab, 1);
            let logs = run_experiment(&c).unwrap();
            assert_eq!(logs.len(), 1);
            assert_eq!(logs[0].episodes.len(), 1);
            let csv = logs[0].episodes_csv();
            assert_eq!(csv.lines().count(), 2);
        }
    }

    #[test]
    fn success_matches_cause() {
        let c = small(TaskVariant::FindTreasure, Ablation::Full, 60);
        let log = &run_experiment(&c).unwrap()[0];
        for e in &log.episodes {
            assert_eq!(e.success(), e.end == EpisodeEnd::Env(TerminationCause::Goal));
            assert!(!e.plan.is_empty());
        }
        assert_eq!(log.ledger.len(), 60);
        // Every start is closed by a terminate or abandon.
        let starts = log.trace.iter().filter(|r| r.event == TraceEvent::Start).count();
        assert_eq!(starts * 2, log.trace.len());
    }

    #[test]
    fn no_intrinsic_freezes_ledger() {
        let c = small(TaskVariant::FindTreasure, Ablation::NoIntrinsic, 30);
        let log = &run_experiment(&c).unwrap()[0];
        assert!(log.ledger.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_aggregates() {
        let mut c = small(TaskVariant::MoveBox(3), Ablation::Full, 20);
        c.seeds = vec![1, 2];
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.episodes_csv(), y.episodes_csv());
            assert_eq!(x.trace_csv(), y.trace_csv());
            assert_eq!(x.ledger_csv(), y.ledger_csv());
        }
        let single = aggregate(&a[..1]).unwrap();
        assert!(single.rows.iter().all(|r| r.reward_std == 0.0 && r.success_std == 0.0));
        let twin = aggregate(&[a[0].clone(), a[0].clone()]).unwrap();
        assert!(twin.rows.iter().all(|r| r.reward_std == 0.0));
        let mut short = a[1].clone();
        short.episodes.pop();
        assert!(matches!(aggregate(&[a[0].clone(), short]), Err(HarnessError::LengthMismatch(_))));
    }

    #[test]
    fn emit_files() {
        let c = small(TaskVariant::FindTreasure, Ablation::Full, 10);
        let logs = run_experiment(&c).unwrap();
        let s = aggregate(&logs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = emit(&s, EmitFormat::Csv, dir.path()).unwrap();
        let text = fs::read_to_string(&csv[0]).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert_eq!(Summary::from_csv(&text).unwrap(), s);
        emit(&s, EmitFormat::Csv, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&csv[0]).unwrap(), text);
        let plots = emit(&s, EmitFormat::Plot, dir.path()).unwrap();
        assert_eq!(plots.len(), 2);
        assert!(plots.iter().all(|p| p.exists()));
        assert!(emit(&Summary { rows: vec![] }, EmitFormat::Csv, dir.path()).is_err());
    }
}
