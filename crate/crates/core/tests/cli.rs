use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcgoppo")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn out_of(dir: &Path, name: &str) -> String {
    format!("output_dir={:?}", dir.join(name).to_str().unwrap())
}

#[test]
fn train_zero_steps_writes_header_and_initial_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "total_steps = 0\n");
    let o = bin(&["train", "--config", &cfg, "--set", &out_of(d.path(), "run")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(d.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with("step,mean_episode_reward,success_rate,actor_loss,critic_loss,entropy,clip_fraction,wallclock_s"));
    assert!(d.path().join("run/checkpoints/step_0.ckpt").exists());
    assert!(d.path().join("run/config.toml").exists());
}

#[test]
fn train_is_byte_reproducible_and_steps_increase() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "total_steps = 1024\neval_episodes = 0\n[env]\nname = \"micro_skirmish\"\n");
    for name in ["a", "b"] {
        let o = bin(&["train", "--config", &cfg, "--set", &out_of(d.path(), name), "--set", "seed=9"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(d.path().join("a/metrics.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b/metrics.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let steps: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps.len(), 4);
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn invalid_config_exits_nonzero_with_message() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "[train]\ngamma = 2.0\n");
    let o = bin(&["train", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    let o = bin(&["train", "--config", d.path().join("missing.toml").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn ippo_checkpoint_has_no_communication_parameters() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "total_steps = 0\n[model]\nmode = \"ippo\"\n");
    assert!(bin(&["train", "--config", &cfg, "--set", &out_of(d.path(), "run")]).status.success());
    let ck = std::fs::read_to_string(d.path().join("run/checkpoints/step_0.ckpt")).unwrap();
    assert!(ck.lines().any(|l| l.starts_with("tensor actor/actor.")));
    assert!(!ck.contains("comm."));
}

#[test]
fn evaluate_random_init_checkpoint_is_near_chance_and_repeatable() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "total_steps = 0\n");
    assert!(bin(&["train", "--config", &cfg, "--set", &out_of(d.path(), "run")]).status.success());
    let ck = d.path().join("run/checkpoints/step_0.ckpt");
    let args = ["evaluate", "--checkpoint", ck.to_str().unwrap(), "--env", "signal_spread", "--episodes", "1000", "--seed", "3"];
    let a = bin(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, bin(&args).stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 1000.0);
    assert!(row[3] < 0.15, "{text}");
    let bad = bin(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--env", "micro_skirmish", "--episodes", "1"]);
    assert!(!bad.status.success());
}

#[test]
fn ablate_rejects_unknown_toggle_before_training() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("abl");
    let cfg = write_config(d.path(), &format!("total_steps = 256\noutput_dir = {:?}\n", out.to_str().unwrap()));
    let grid = d.path().join("grid.toml");
    std::fs::write(&grid, "seeds = [0]\n[[cells]]\ntoggles = { comm = false, shared_brain = true }\n").unwrap();
    let o = bin(&["ablate", "--config", &cfg, "--grid", grid.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("shared_brain"));
    assert!(!out.exists());
}

#[test]
fn ablate_three_modes_three_seeds_gives_nine_rows() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("abl");
    let cfg = write_config(
        d.path(),
        &format!(
            "total_steps = 32\noutput_dir = {:?}\n[rollout]\nsteps_per_update = 8\nn_envs = 2\n",
            out.to_str().unwrap()
        ),
    );
    let grid = d.path().join("grid.toml");
    std::fs::write(&grid, "seeds = [0, 1, 2]\nmodes = [\"ippo\", \"mappo\", \"mcgoppo\", \"ippo\"]\neval_episodes = 3\n").unwrap();
    let o = bin(&["ablate", "--config", &cfg, "--grid", grid.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate"));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 9);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(out.join("mcgoppo/seed_2/metrics.csv").exists());
}
