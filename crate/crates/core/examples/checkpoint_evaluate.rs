//! Trains briefly with artifacts on disk, then reloads the final checkpoint
//! and evaluates it greedily, as `mcgoppo evaluate` does.
//!
//! ```bash
//! cargo run --release --example checkpoint_evaluate
//! ```

use mcgoppo::nn::Checkpoint;
use mcgoppo::run::{evaluate, evaluate_checkpoint, train, RunConfig};

pub fn run() -> mcgoppo::Result<()> {
    let dir = std::env::temp_dir().join(format!("mcgoppo-example-{}", std::process::id()));
    let cfg = RunConfig::from_toml_str(
        "total_steps = 2048\neval_episodes = 50\n[env]\nname = \"micro_skirmish\"",
        &[format!("output_dir={:?}", dir.display().to_string())],
    )?;
    let out = train(&cfg)?;
    let ckpt = dir.join("checkpoints").join("final.ckpt");
    println!("wrote {}", ckpt.display());

    let text = std::fs::read_to_string(&ckpt).map_err(|e| mcgoppo::Error::Io { path: ckpt.clone(), source: e })?;
    let reparsed = Checkpoint::from_text(&text)?;
    println!(
        "checkpoint holds {} actor tensors; round trip identical: {}",
        reparsed.names_with_prefix("actor").count(),
        reparsed.to_text() == text
    );

    let from_disk = evaluate_checkpoint(&ckpt, "micro_skirmish", 50, 1)?;
    let in_memory = evaluate(&out.model, &cfg.env, 50, 1)?;
    println!("from disk: {from_disk:?}");
    println!("in memory: {in_memory:?}");
    assert_eq!(from_disk, in_memory);
    std::fs::remove_dir_all(&dir).map_err(|e| mcgoppo::Error::Io { path: dir, source: e })?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    run()
}
