//! End-to-end acceptance checks. Runs as a plain binary so the PASS/FAIL
//! lines always reach the test output.

mod common;

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use somarl_core::assets;
use somarl_core::grid_env::{EnvState, GridEnv, GridMap, JointAction, TaskVariant, TerminationCause};
use somarl_core::harness::{run_and_write, run_experiment, Ablation, ExperimentConfig, MetricsLog};
use somarl_core::planner::{Heuristic, MethodCost};
use somarl_core::{
    compile_tree, intrinsic_reward, parse_hddl, print_hddl, solve, IntrinsicRewardConfig, KnowledgeTree, OptionSet,
    PlannerConfig, RewardLedger,
};

use common::{brute_force_min, random_tree};

const ORACLE_TREES: u64 = 200;
const ORACLE_MAX_NODES: usize = 12;
const ORACLE_TIME_LIMIT_S: f64 = 10.0;
const MONOTONICITY_INSTANCES: u64 = 1_000;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const WINDOW: usize = 100;
const FT_EPISODES: u64 = 5_000;
const FT_SUCCESS: f64 = 0.9;
const MB_EPISODES: u64 = 10_000;
const MB_FULL_SUCCESS: f64 = 0.8;
const MB_FLAT_SUCCESS_MAX: f64 = 0.05;
const MIN_PASSING_SEEDS: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(variant: TaskVariant, ablation: Ablation, episodes: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(variant);
    c.episodes = episodes;
    c.seeds = SEEDS.to_vec();
    c.window = WINDOW;
    c.ablation = ablation;
    c
}

fn planner_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for seed in 0..ORACLE_TREES {
        let (tree, values) = random_tree(seed, ORACLE_MAX_NODES);
        let p = compile_tree(&tree).unwrap();
        let ledger = RewardLedger::with_values(&p, &values).unwrap();
        let plan = solve(&p, &ledger, &PlannerConfig::default()).unwrap();
        let best = brute_force_min(&tree, &values);
        if plan.cost.to_bits() != best.to_bits() {
            mismatches.push(format!("tree {seed}: {} vs {best}", plan.cost));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < ORACLE_TIME_LIMIT_S,
        format!("{ORACLE_TREES} trees, {} mismatches {:?}, {secs:.3} s", mismatches.len(), mismatches),
    )
}

/// Shortest action sequence from reset into the FindTreasure trap.
fn trap_rollout() -> f64 {
    let map = Arc::new(GridMap::parse(assets::FINDTREASURE_MAP).unwrap());
    let env = GridEnv::new(map, TaskVariant::FindTreasure, 100).unwrap();
    let (s0, _) = env.reset(0);
    let mut seen: HashSet<([somarl_core::grid_env::Pos; 2], u32)> = HashSet::new();
    let mut queue: VecDeque<EnvState> = VecDeque::from([s0]);
    while let Some(s) = queue.pop_front() {
        for i in 0..JointAction::COUNT {
            let (n, out) = env.step(&s, JointAction::from_index(i)).unwrap();
            if out.cause == TerminationCause::Trap {
                return out.reward;
            }
            if !n.terminated() && seen.insert((n.agent_pos, n.gates_open)) {
                queue.push_back(n);
            }
        }
    }
    panic!("trap unreachable");
}

fn intrinsic_examples() -> Outcome {
    let cfg = IntrinsicRewardConfig::default();
    let trap_r = trap_rollout();
    let cases = [
        ("r_e=100 n=0", intrinsic_reward(100.0, 0, &cfg, true), 105.0_f64),
        ("not terminated", intrinsic_reward(100.0, 0, &cfg, false), 0.0),
        ("r_e=-0.1 n=1", intrinsic_reward(-0.1, 1, &cfg, true), 4.89),
        ("trap rollout", intrinsic_reward(trap_r, 0, &cfg, true), 8.0),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|c| c.1.to_bits() != c.2.to_bits())
        .map(|c| format!("{}: {:?} != {:?}", c.0, c.1, c.2))
        .collect();
    outcome(
        cfg.phi == 5.0 && cfg.c == 0.01 && bad.is_empty(),
        format!("4 cases bit-exact (trap r_e = {trap_r}) {bad:?}"),
    )
}

fn monotonicity() -> Outcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut seed = 0;
    while checked < MONOTONICITY_INSTANCES {
        seed += 1;
        let (tree, values) = random_tree(seed, ORACLE_MAX_NODES);
        let p = compile_tree(&tree).unwrap();
        if p.domain.methods.is_empty() {
            continue;
        }
        let m = &p.domain.methods[rng.random_range(0..p.domain.methods.len())].id;
        let low = RewardLedger::with_values(&p, &values).unwrap();
        let mut high = low.clone();
        high.add(m, rng.random_range(1e-3..10.0)).unwrap();
        let a = Heuristic::new(&p, &low, MethodCost::Unit).h_madd(m).unwrap();
        let b = Heuristic::new(&p, &high, MethodCost::Unit).h_madd(m).unwrap();
        if b >= a {
            failures.push(format!("tree {seed} {m}: {a} -> {b}"));
        }
        checked += 1;
    }
    outcome(
        failures.is_empty(),
        format!("{checked} instances, {} violations {failures:?}", failures.len()),
    )
}

fn bijection() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, text) in [
        ("findtreasure.tree", assets::FINDTREASURE_TREE),
        ("movebox.tree", assets::MOVEBOX_TREE),
        ("movebox_task0.tree", assets::MOVEBOX_TASK0_TREE),
    ] {
        let tree = KnowledgeTree::parse(text).unwrap();
        let edges: BTreeSet<String> = tree.edges().iter().map(|e| e.edge_id.clone()).collect();
        let p = compile_tree(&tree).unwrap();
        let compiled: BTreeSet<String> = p
            .domain
            .methods
            .iter()
            .map(|m| m.id.clone())
            .chain(p.domain.primitive_tasks.iter().map(|a| a.name.clone()))
            .collect();
        let options: BTreeSet<String> = OptionSet::from_tree(&tree).ids().map(str::to_string).collect();
        let (d, q) = print_hddl(&p);
        let round_trip = parse_hddl(&d, &q).map(|b| b == p).unwrap_or(false);
        let ok = edges == compiled && edges == options && round_trip;
        pass &= ok;
        notes.push(format!("{name}: {} ids, round-trip {round_trip}", edges.len()));
    }
    outcome(pass, notes.join("; "))
}

fn per_seed(logs: &[MetricsLog], f: impl Fn(&MetricsLog) -> String) -> String {
    logs.iter().map(|l| format!("s{}={}", l.seed, f(l))).collect::<Vec<_>>().join(" ")
}

fn findtreasure_end_to_end(full: &[MetricsLog], secs: f64) -> Outcome {
    let passing = full.iter().filter(|l| l.first_success_at(FT_SUCCESS).is_some()).count();
    outcome(
        passing >= MIN_PASSING_SEEDS,
        format!(
            "{passing}/5 seeds reach {FT_SUCCESS} by episode {}; first reached at [{}]; {secs:.1} s for 5 seeds",
            FT_EPISODES,
            per_seed(full, |l| l.first_success_at(FT_SUCCESS).map_or("-".into(), |e| e.to_string()))
        ),
    )
}

fn trap_contrast() -> Outcome {
    let start = Instant::now();
    let variant = TaskVariant::MoveBox(3);
    let full = run_experiment(&config(variant, Ablation::Full, MB_EPISODES)).unwrap();
    let flat = run_experiment(&config(variant, Ablation::Flat, MB_EPISODES)).unwrap();
    let full_ok = full.iter().filter(|l| l.final_rolling_success() >= MB_FULL_SUCCESS).count();
    let flat_ok = flat.iter().all(|l| l.final_rolling_success() <= MB_FLAT_SUCCESS_MAX);
    let trap_share = |l: &MetricsLog| {
        let tail = &l.episodes[l.episodes.len() - WINDOW..];
        let traps = tail
            .iter()
            .filter(|e| e.end == somarl_core::harness::EpisodeEnd::Env(TerminationCause::Trap))
            .count();
        format!("{:.2}", traps as f64 / WINDOW as f64)
    };
    outcome(
        flat_ok && full_ok >= MIN_PASSING_SEEDS,
        format!(
            "full success [{}] ({full_ok}/5 >= {MB_FULL_SUCCESS}); flat success [{}], flat trap share [{}]; {:.1} s",
            per_seed(&full, |l| format!("{:.2}", l.final_rolling_success())),
            per_seed(&flat, |l| format!("{:.2}", l.final_rolling_success())),
            per_seed(&flat, trap_share),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn ablation_ordering(full: &[MetricsLog]) -> Outcome {
    let ablated = run_experiment(&config(TaskVariant::FindTreasure, Ablation::NoIntrinsic, FT_EPISODES)).unwrap();
    let ordered = full
        .iter()
        .zip(&ablated)
        .all(|(a, b)| a.seed == b.seed && a.final_rolling_reward() > b.final_rolling_reward());
    outcome(
        ordered,
        format!(
            "full [{}] vs no-intrinsic [{}]",
            per_seed(full, |l| format!("{:.2}", l.final_rolling_reward())),
            per_seed(&ablated, |l| format!("{:.2}", l.final_rolling_reward()))
        ),
    )
}

fn interpretability(dir: &Path) -> Outcome {
    let cases: [(TaskVariant, u64, &[&str]); 2] = [
        (TaskVariant::FindTreasure, FT_EPISODES, &["so_0", "so_4", "so_8", "so_10", "so_12"]),
        (TaskVariant::MoveBox(3), MB_EPISODES, &["so_1", "so_4", "so_7", "so_10"]),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (variant, episodes, path) in cases {
        let ledger = dir.join(format!("{variant}.ledger"));
        let text: String = path.iter().map(|id| format!("{id} = 5\n")).collect();
        fs::write(&ledger, text).unwrap();
        let mut cfg = config(variant, Ablation::Full, episodes);
        cfg.seeds = vec![1];
        cfg.ledger_init = Some(ledger.to_string_lossy().into_owned());
        let log = &run_experiment(&cfg).unwrap()[0];
        let hits = log.episodes.iter().filter(|e| e.plan == path).count();
        pass &= hits >= 1;
        notes.push(format!(
            "{variant}: {hits}/{episodes} episodes followed [{}], final success {:.2}",
            path.join(", "),
            log.final_rolling_success()
        ));
    }
    outcome(pass, notes.join("; "))
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(dir: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (variant, ablation) in [
        (TaskVariant::FindTreasure, Ablation::Full),
        (TaskVariant::MoveBox(3), Ablation::Full),
        (TaskVariant::MoveBox(3), Ablation::Flat),
    ] {
        let mut cfg = config(variant, ablation, 1_000);
        cfg.seeds = vec![1, 2];
        let (a, b) = (dir.join(format!("a-{variant}-{ablation}")), dir.join(format!("b-{variant}-{ablation}")));
        run_and_write(&cfg, &a).unwrap();
        run_and_write(&cfg, &b).unwrap();
        let (fa, fb) = (read_tree(&a), read_tree(&b));
        let csvs = fa.iter().filter(|f| f.0.ends_with(".csv")).count();
        let same = !fa.is_empty() && fa == fb;
        pass &= same;
        notes.push(format!("{variant}/{ablation}: {} files ({csvs} csv) identical={same}", fa.len()));
    }
    outcome(pass, notes.join("; "))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "planner oracle equivalence", planner_oracle()),
        (2, "intrinsic reward examples", intrinsic_examples()),
        (3, "heuristic monotonicity", monotonicity()),
        (4, "id bijection and HDDL round-trip", bijection()),
    ];

    let start = Instant::now();
    let ft_full = run_experiment(&config(TaskVariant::FindTreasure, Ablation::Full, FT_EPISODES)).unwrap();
    let ft_secs = start.elapsed().as_secs_f64();
    results.push((5, "FindTreasure end-to-end", findtreasure_end_to_end(&ft_full, ft_secs)));
    results.push((6, "MoveBox trap-avoidance contrast", trap_contrast()));
    results.push((7, "ablation ordering", ablation_ordering(&ft_full)));
    results.push((8, "interpretability trace", interpretability(tmp.path())));
    results.push((9, "determinism", determinism(tmp.path())));

    let mut failed = 0;
    for (n, name, o) in &results {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{status}] {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
