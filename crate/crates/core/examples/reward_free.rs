//! Reward-free exploration on a small random instance, then planning for
//! several reward tables that were never seen during exploration.
//!
//! cargo run --release --example reward_free -- [eps]

use branchrl::branchrfe::{certify, explore, plan, RewardFree, RfeConfig};
use branchrl::instances::random_instance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> branchrl::Result<()> {
    let eps: f64 = std::env::args().nth(1).map_or(Ok(1.0), |s| s.parse()).expect("eps");
    let mdp = random_instance(3, 3, 1, 2, 0)?;
    let res = explore(&mdp, &RfeConfig::new(eps, 0.1, 0)?.with_max_episodes(50_000_000));
    println!("stopped={} after {} episodes, B_1 = {:.3e}", res.stopped, res.episodes_used, res.b1);

    let estimated = res.estimated_mdp(&RewardFree::new(&mdp));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..5 {
        let mut r: Vec<f64> = (0..mdp.num_states * mdp.num_actions).map(|_| rng.gen()).collect();
        r[..mdp.num_actions].iter_mut().for_each(|x| *x = 0.0);
        let policy = plan(&estimated, &r)?;
        println!("reward table {i}: gap {:.2e}", certify(&mdp, &policy, &r)?);
    }
    Ok(())
}
