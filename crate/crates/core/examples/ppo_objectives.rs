//! Returns, advantages and the two clipped objectives on a short hand-made
//! trajectory.
//!
//! ```bash
//! cargo run --release --example ppo_objectives
//! ```

use mcgoppo::ppo::{actor_loss, critic_loss, discounted_returns, gae, normalize, ratio};

pub fn run() -> mcgoppo::Result<()> {
    let rewards = [0.0, -0.01, -0.01, 1.0, -0.01, 0.5];
    let dones = [false, false, false, true, false, false];
    let values = [0.2, 0.3, 0.5, 0.8, 0.1, 0.3, 0.4];

    let returns = discounted_returns(&rewards, &dones, 0.99, values[6]);
    let mut adv = gae(&rewards, &values, &dones, 0.99, 0.95);
    println!("returns    {returns:.4?}");
    println!("advantages {adv:.4?}");
    normalize(&mut adv);
    println!("normalised {adv:.4?}");

    let old_lp = [-1.2, -0.7, -1.6, -0.3, -1.1, -0.9];
    let new_lp = [-1.0, -0.8, -1.6, -0.1, -1.5, -0.85];
    let ratios: Vec<f64> = new_lp.iter().zip(old_lp).map(|(n, o)| ratio(*n, o)).collect();
    let entropy = [1.2; 6];
    println!("ratios     {ratios:.4?}");
    for sigma in [0.0, 0.01] {
        println!(
            "actor loss (clip 0.2, entropy coef {sigma}): {:.5}",
            actor_loss(&ratios, &adv, &entropy, 0.2, sigma)
        );
    }
    let v_new = [0.25, 0.1, 0.9, 0.95, 0.3, 0.2];
    println!("critic loss (clip 0.2): {:.5}", critic_loss(&v_new, &values[..6], &returns, 0.2));
    Ok(())
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    run()
}
