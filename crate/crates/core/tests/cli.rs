use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atig::automata::{exact_equivalence, fixtures, Dfa};
use atig::grid_env::GridMap;
use atig::irl::{RewardVariant, TrainConfig};
use atig::oracle::{load_demos, TaskSpec};
use atig::orchestrator::{learn_reward, RewardConfig};

fn atig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_env(dir: &Path, name: &str, regions: &str, seed: &str) -> String {
    let out = dir.join(name);
    let o = atig(&[
        "gen-env",
        "--width",
        "12",
        "--height",
        "12",
        "--regions",
        regions,
        "--seed",
        seed,
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn gen_env_is_deterministic_and_labels_regions() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_env(dir.path(), "a.txt", "1", "7");
    let b = gen_env(dir.path(), "b.txt", "1", "7");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let grid = GridMap::load(&a).unwrap();
    assert_eq!(grid.labeled_cells().len(), 4);
    assert_eq!(grid.present_types(), vec![0, 1, 2, 3]);

    let z = gen_env(dir.path(), "z.txt", "0", "7");
    assert!(GridMap::load(&z).unwrap().labeled_cells().is_empty());
}

#[test]
fn infeasible_generation_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.txt");
    let o = atig(&[
        "gen-env",
        "--width",
        "5",
        "--height",
        "5",
        "--regions",
        "3",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let out = dir.path().join("out");
    let o = atig(&[
        "run",
        "--env",
        p(&missing),
        "--task",
        "3",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.txt"));

    // the seed is mandatory
    let env = gen_env(dir.path(), "e.txt", "1", "7");
    let o = atig(&["run", "--env", &env, "--task", "3", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nlearning_rate = 3\n").unwrap();
    let o = atig(&[
        "run",
        "--config",
        p(&cfg),
        "--env",
        &env,
        "--task",
        "3",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));

    let bad_env = dir.path().join("bad_env.txt");
    fs::write(&bad_env, "12 12\nGGG\n").unwrap();
    let o = atig(&[
        "run",
        "--env",
        p(&bad_env),
        "--task",
        "3",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn learn_dfa_recovers_task3() {
    let dir = tempfile::tempdir().unwrap();
    let env = gen_env(dir.path(), "e.txt", "1", "7");
    let out = dir.path().join("ld");
    let o = atig(&[
        "learn-dfa",
        "--env",
        &env,
        "--task",
        "3",
        "--seed",
        "1",
        "--exact",
        "true",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let learned = Dfa::load(out.join("dfa.txt")).unwrap();
    assert!(exact_equivalence(&learned, &fixtures::task3()).unwrap().is_none());
    let grid = GridMap::load(&env).unwrap();
    let demos = load_demos(out.join("demos.txt"), &grid).unwrap();
    assert!(!demos.is_empty());
    let log = fs::read_to_string(out.join("queries.csv")).unwrap();
    assert!(log.lines().count() > 1);
}

#[test]
fn config_file_values_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let env = gen_env(dir.path(), "e.txt", "1", "7");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "env = {env}\ntask = 3\nseed = 1\nexact = true\nmax_iterations = 5\nmin_iterations = 0\nmax_outer = 1\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    // a single outer round cannot finish task 3: non-convergence, reported in the summary
    let o = atig(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], false);
    assert_eq!(summary["seed"], 1);

    // the command line wins over the file
    let o = atig(&[
        "run",
        "--config",
        p(&cfg),
        "--max-outer",
        "4",
        "--max-iterations",
        "300",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn train_matches_in_process_training() {
    let dir = tempfile::tempdir().unwrap();
    let env = gen_env(dir.path(), "e.txt", "1", "7");
    let ld = dir.path().join("ld");
    let o = atig(&[
        "learn-dfa",
        "--env",
        &env,
        "--task",
        "3",
        "--seed",
        "1",
        "--exact",
        "true",
        "--out",
        p(&ld),
    ]);
    assert!(o.status.success());
    let tr = dir.path().join("tr");
    let dfa_path = ld.join("dfa.txt");
    let demos_path = ld.join("demos.txt");
    let o = atig(&[
        "train",
        "--env",
        &env,
        "--task",
        "3",
        "--seed",
        "5",
        "--dfa",
        p(&dfa_path),
        "--demos",
        p(&demos_path),
        "--max-iterations",
        "40",
        "--min-iterations",
        "0",
        "--rollouts",
        "200",
        "--out",
        p(&tr),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let grid = GridMap::load(&env).unwrap();
    let task = TaskSpec::for_grid(fixtures::task3(), "task3", &grid);
    let dfa = Dfa::load(&dfa_path).unwrap();
    let demos = load_demos(&demos_path, &grid).unwrap();
    let cfg = TrainConfig {
        max_iterations: 40,
        min_iterations: 0,
        seed: 5,
        ..TrainConfig::for_variant(RewardVariant::Tabular)
    };
    let lr = learn_reward(
        &grid,
        &task,
        &dfa,
        &demos,
        &RewardConfig::default(),
        &cfg,
        None,
        200,
        96,
        5,
    )
    .unwrap();
    let csv = fs::read_to_string(tr.join("metrics.csv")).unwrap();
    assert_eq!(csv, lr.report.unwrap().metrics_csv());
    assert_eq!(fs::read_to_string(tr.join("model.txt")).unwrap(), lr.model.to_text());
}

#[test]
fn evaluate_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let env = gen_env(dir.path(), "e.txt", "1", "7");
    let out = dir.path().join("run");
    let o = atig(&[
        "run",
        "--env",
        &env,
        "--task",
        "3",
        "--seed",
        "2",
        "--exact",
        "true",
        "--max-iterations",
        "60",
        "--rollouts",
        "300",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for key in ["metrics_path", "model_path", "dfa_path", "env_path", "demos_path"] {
        assert!(Path::new(summary[key].as_str().unwrap()).exists(), "{key}");
    }

    let env_copy = out.join("env.txt");
    let dfa = out.join("dfa.txt");
    let model = out.join("model.txt");
    let o = atig(&[
        "evaluate",
        "--env",
        p(&env_copy),
        "--task",
        "3",
        "--seed",
        "2",
        "--rollouts",
        "300",
        "--dfa",
        p(&dfa),
        "--model",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(eval["beta"], summary["final_beta"]);
}
