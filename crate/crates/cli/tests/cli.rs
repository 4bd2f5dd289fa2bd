use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn twinmig(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinmig")).args(args).current_dir(cwd).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn smoke() -> String {
    configs().join("smoke.toml").display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&twinmig(&[], tmp.path())), 1);
    assert_eq!(code(&twinmig(&["frobnicate"], tmp.path())), 1);
    assert_eq!(code(&twinmig(&["run"], tmp.path())), 1);
    assert_eq!(code(&twinmig(&["baseline", "mo-maddpg", "--config", &smoke()], tmp.path())), 1);
    assert_eq!(code(&twinmig(&["--help"], tmp.path())), 0);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[learner]\ngamma = 7.0\n").unwrap();
    let o = twinmig(&["run", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 2, "{}", text(&o));
    std::fs::write(&bad, "[learner\n").unwrap();
    assert_eq!(code(&twinmig(&["run", "--config", bad.to_str().unwrap()], tmp.path())), 2);
    std::fs::write(&bad, "[bogus]\nx = 1\n").unwrap();
    assert_eq!(code(&twinmig(&["run", "--config", bad.to_str().unwrap()], tmp.path())), 2);
}

#[test]
fn runtime_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twinmig(&["summarize", tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 3, "{}", text(&o));
}

#[test]
fn train_eval_summarize_plot_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twinmig(
        &["train", "--config", &smoke(), "--algo", "mo-maddpg", "--algo", "ga", "--run-id", "r", "--out", "runs"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let dir = tmp.path().join("runs/r");
    for f in [
        "config.toml",
        "meta.json",
        "summary.csv",
        "mo-maddpg.csv",
        "ga.csv",
        "mo-maddpg-seed3.ckpt.json",
        "ga-seed3.ckpt.json",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }

    let emb = tmp.path().join("emb.jsonl");
    let o = twinmig(
        &[
            "eval",
            "--config",
            &smoke(),
            "--algo",
            "mo-maddpg",
            "--checkpoint",
            dir.join("mo-maddpg-seed3.ckpt.json").to_str().unwrap(),
            "--episodes",
            "2",
            "--dump-embeddings",
            emb.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let lines: Vec<serde_json::Value> =
        std::fs::read_to_string(&emb).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 20);
    assert!(lines[0]["embeddings"].as_array().is_some_and(|a| !a.is_empty()));

    let o = twinmig(
        &[
            "eval",
            "--config",
            &smoke(),
            "--algo",
            "ga",
            "--checkpoint",
            dir.join("ga-seed3.ckpt.json").to_str().unwrap(),
            "--dump-embeddings",
            emb.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);

    // A checkpoint is tied to its config.
    let other = tmp.path().join("other.toml");
    std::fs::write(&other, std::fs::read_to_string(smoke()).unwrap().replace("seed = 3", "seed = 4")).unwrap();
    let o = twinmig(
        &[
            "eval",
            "--config",
            other.to_str().unwrap(),
            "--algo",
            "ga",
            "--checkpoint",
            dir.join("ga-seed3.ckpt.json").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 3, "{}", text(&o));

    assert_eq!(code(&twinmig(&["summarize", dir.to_str().unwrap()], tmp.path())), 0);
    let o = twinmig(&["emit-plots", dir.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("warning: no series for algorithm `maddpg`"));
    assert!(dir.join("plots/reward_vs_episode.csv").exists());
}

#[test]
fn baseline_with_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twinmig(
        &["baseline", "madqn", "--config", &smoke(), "--seed", "1", "--seed", "2", "--sweep", "--run-id", "b"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let dir = tmp.path().join("runs/b");
    assert!(dir.join("madqn.csv").exists());
    assert!(dir.join("sweep_demand.csv").exists());
    let o = twinmig(&["emit-plots", dir.to_str().unwrap(), "--out", "p"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("p/energy_vs_demand.csv").exists());
}

#[test]
fn dump_world_writes_the_reset_state_and_every_slot() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twinmig(&["dump-world", "--config", &smoke(), "--steps", "3"], tmp.path());
    assert_eq!(code(&o), 0);
    let rows: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty());
    let steps: std::collections::BTreeSet<u64> = rows.iter().map(|r| r["step"].as_u64().unwrap()).collect();
    assert_eq!(steps.into_iter().collect::<Vec<_>>(), [0, 1, 2, 3]);
}

#[test]
fn verify_equilibrium_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twinmig(&["verify-equilibrium", configs().join("game.toml").to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("equilibrium: yes"));
    let bad = tmp.path().join("g.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&twinmig(&["verify-equilibrium", bad.to_str().unwrap()], tmp.path())), 2);
}
