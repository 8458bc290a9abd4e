use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn somarl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_somarl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = somarl(
        &["validate", "--map", "builtin:findtreasure.map", "--knowledge", "builtin:findtreasure.tree"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("13 options"));
    let o = somarl(
        &[
            "validate", "--map", "builtin:movebox_keys.map", "--knowledge", "builtin:movebox.tree", "--env", "movebox",
            "--task", "3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tree");
    fs::write(&bad, "predicate at_goal/0\nnode a { at_goal() } root\nnode b { nope() } initial\nedge a -> b : e0\n").unwrap();
    let o = somarl(
        &["validate", "--map", "builtin:findtreasure.map", "--knowledge", bad.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    // The FindTreasure tree names regions the MoveBox map lacks.
    let o = somarl(
        &["validate", "--map", "builtin:movebox_keys.map", "--knowledge", "builtin:findtreasure.tree", "--env", "movebox", "--task", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));

    let o = somarl(&["run", "--episodes", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = somarl(&["run", "--set", "nonsense=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = somarl(&["validate", "--map", "missing.map", "--knowledge", "builtin:findtreasure.tree"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_logs_and_plot_rebuilds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "env = movebox\ntask = 3\nepisodes = 40\nwindow = 10\nseeds = 1,2\n").unwrap();
    let o = somarl(&["run", "--config", "exp.cfg", "--episodes", "30", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let run = dir.path().join("out/movebox/task3/full");
    for f in ["summary.csv", "reward.svg", "success.svg", "1/episodes.csv", "2/trace.csv", "1/ledger.csv", "1/plans.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 31);
    let copied = fs::read_to_string(run.join("1/config.txt")).unwrap();
    assert!(copied.contains("episodes = 30"));
    assert!(copied.contains("seeds = 1,2"));

    fs::remove_file(run.join("summary.csv")).unwrap();
    fs::remove_file(run.join("reward.svg")).unwrap();
    let o = somarl(&["plot", "--in", run.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(fs::read_to_string(run.join("summary.csv")).unwrap(), summary);
    assert!(run.join("reward.svg").exists());
}

#[test]
fn plan_follows_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let o = somarl(&["plan", "--knowledge", "builtin:findtreasure.tree"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("ties: 4"));

    fs::write(dir.path().join("l.txt"), "so_0 = 5\nso_4 = 5\nso_8 = 5\nso_10 = 5\nso_12 = 5\n").unwrap();
    let o = somarl(&["plan", "--knowledge", "builtin:findtreasure.tree", "--ledger", "l.txt", "--hddl"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("execution_sequence: so_0 so_4 so_8 so_10 so_12"), "{out}");
    assert!(out.contains("(define (domain somarl)"));

    fs::write(dir.path().join("bad.txt"), "so_99 = 1\n").unwrap();
    let o = somarl(&["plan", "--knowledge", "builtin:findtreasure.tree", "--ledger", "bad.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
