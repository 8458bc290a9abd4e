use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use somarl_core::harness::{emit, load_source, parse_ledger, EmitFormat, HarnessError, Summary, SummaryRow};
use somarl_core::{compile_tree, print_hddl, solve, ExperimentConfig, KnowledgeTree, PlannerConfig, RewardLedger, Setup, TaskVariant};

#[derive(Parser)]
#[command(name = "somarl", version, about = "Symbolic-option MARL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every seed and write logs, summary and plots.
    Run(RunArgs),
    /// Re-emit summary plots for a finished run directory.
    Plot {
        #[arg(long = "in")]
        dir: PathBuf,
    },
    /// Solve a knowledge tree once under a given ledger.
    Plan {
        #[arg(long)]
        knowledge: String,
        /// `id = value` lines, or a `ledger.csv` (its last episode is used).
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Also print the compiled HDDL domain and problem.
        #[arg(long)]
        hddl: bool,
    },
    /// Check that a map and knowledge tree fit together.
    Validate {
        #[arg(long)]
        map: String,
        #[arg(long)]
        knowledge: String,
        #[arg(long, default_value = "findtreasure")]
        env: String,
        #[arg(long, default_value_t = 0)]
        task: u8,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    task: Option<u8>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    knowledge: Option<String>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    max_steps: Option<u32>,
    /// Comma-separated.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, error: e.into() }
}

fn classify(e: HarnessError) -> Failure {
    if e.is_validation() {
        validation(e)
    } else {
        runtime(e)
    }
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(validation)?;
            ExperimentConfig::from_kv(&text).map_err(validation)?
        }
        None => ExperimentConfig::new(TaskVariant::FindTreasure),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(validation);
    if let Some(v) = &a.env {
        set("env", v.clone())?;
    }
    if let Some(v) = a.task {
        set("task", v.to_string())?;
    }
    let flags = [
        ("map", a.map.clone()),
        ("knowledge", a.knowledge.clone()),
        ("episodes", a.episodes.map(|v| v.to_string())),
        ("max_steps", a.max_steps.map(|v| v.to_string())),
        ("seeds", a.seeds.clone()),
        ("ablation", a.ablation.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set(k, v)?;
        }
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| validation(anyhow!("--set expects KEY=VALUE, got {o:?}")))?;
        set(k, v.to_string())?;
    }
    Ok(cfg)
}

fn run(a: &RunArgs) -> Result<(), Failure> {
    let cfg = build_config(a)?;
    let (logs, summary) = somarl_core::harness::run_and_write(&cfg, &a.out).map_err(classify)?;
    let dir = cfg.run_dir(&a.out);
    println!("wrote {}", dir.display());
    println!("seed  final_reward  final_success  first_success>=0.9  plan_changes");
    for l in &logs {
        let first = l.first_success_at(0.9).map_or("-".to_string(), |e| e.to_string());
        println!(
            "{:<5} {:>12.3} {:>14.3} {:>19} {:>13}",
            l.seed,
            l.final_rolling_reward(),
            l.final_rolling_success(),
            first,
            l.plan_changes().len()
        );
    }
    if let Some(r) = summary.final_window() {
        println!(
            "mean  {:>12.3} {:>14.3}   (std {:.3} / {:.3})",
            r.reward_mean, r.success_mean, r.reward_std, r.success_std
        );
    }
    Ok(())
}

/// Rebuilds the summary from per-seed `episodes.csv` files when
/// `summary.csv` is missing.
fn summary_from_seeds(dir: &Path) -> Result<Summary> {
    let mut columns: Vec<(Vec<u64>, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path().join("episodes.csv")))
        .filter(|p| p.exists())
        .collect();
    entries.sort();
    for p in entries {
        let text = fs::read_to_string(&p)?;
        let mut col = (Vec::new(), Vec::new(), Vec::new());
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || anyhow!("{}: malformed line {line:?}", p.display());
            col.0.push(f.first().ok_or_else(bad)?.parse()?);
            col.1.push(f.get(6).ok_or_else(bad)?.parse()?);
            col.2.push(f.get(7).ok_or_else(bad)?.parse()?);
        }
        columns.push(col);
    }
    if columns.is_empty() {
        return Err(anyhow!("no summary.csv or seed logs in {}", dir.display()));
    }
    let n = columns[0].0.len();
    if columns.iter().any(|c| c.0.len() != n) {
        return Err(HarnessError::LengthMismatch(columns.iter().map(|c| c.0.len()).collect()).into());
    }
    let stat = |xs: Vec<f64>| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        (m, v.sqrt())
    };
    let rows = (0..n)
        .map(|i| {
            let (reward_mean, reward_std) = stat(columns.iter().map(|c| c.1[i]).collect());
            let (success_mean, success_std) = stat(columns.iter().map(|c| c.2[i]).collect());
            SummaryRow {
                episode: columns[0].0[i],
                reward_mean,
                reward_std,
                success_mean,
                success_std,
            }
        })
        .collect();
    Ok(Summary { rows })
}

fn plot(dir: &Path) -> Result<(), Failure> {
    let csv = dir.join("summary.csv");
    let summary = if csv.exists() {
        let text = fs::read_to_string(&csv).map_err(runtime)?;
        Summary::from_csv(&text).map_err(validation)?
    } else {
        let s = summary_from_seeds(dir).map_err(validation)?;
        emit(&s, EmitFormat::Csv, dir).map_err(runtime)?;
        s
    };
    for p in emit(&summary, EmitFormat::Plot, dir).map_err(runtime)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn read_ledger(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_ledger(&text)?)
}

fn plan(knowledge: &str, ledger: Option<&Path>, hddl: bool) -> Result<(), Failure> {
    let text = load_source(knowledge).map_err(validation)?;
    let tree = KnowledgeTree::parse(&text).map_err(validation)?;
    let problem = compile_tree(&tree).map_err(validation)?;
    let ledger = match ledger {
        Some(p) => {
            let values = read_ledger(p).map_err(validation)?;
            RewardLedger::with_values(&problem, &values).map_err(validation)?
        }
        None => RewardLedger::for_problem(&problem),
    };
    let plan = solve(&problem, &ledger, &PlannerConfig::default()).map_err(runtime)?;
    if hddl {
        let (d, p) = print_hddl(&problem);
        println!("{d}\n{p}");
    }
    print!("{}", plan.dump());
    println!("execution_sequence: {}", plan.execution_sequence.join(" "));
    println!("cost: {}  ties: {}", plan.cost, plan.ties);
    Ok(())
}

fn validate(map: &str, knowledge: &str, env: &str, task: u8) -> Result<(), Failure> {
    let variant = match env {
        "findtreasure" => TaskVariant::FindTreasure,
        "movebox" if task <= 3 => TaskVariant::MoveBox(task),
        _ => return Err(validation(anyhow!("unknown environment {env:?} / task {task}"))),
    };
    let map_text = load_source(map).map_err(validation)?;
    let tree_text = load_source(knowledge).map_err(validation)?;
    let setup = Setup::from_texts(variant, variant.default_max_steps(), &map_text, &tree_text).map_err(classify)?;
    println!(
        "ok: {} nodes, {} edges, {} options, {} methods, {} actions",
        setup.tree.nodes().len(),
        setup.tree.edges().len(),
        setup.options.len(),
        setup.problem.domain.methods.len(),
        setup.problem.domain.primitive_tasks.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Plot { dir } => plot(dir),
        Command::Plan { knowledge, ledger, hddl } => plan(knowledge, ledger.as_deref(), *hddl),
        Command::Validate {
            map,
            knowledge,
            env,
            task,
        } => validate(map, knowledge, env, *task),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
