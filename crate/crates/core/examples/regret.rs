//! Regret minimization with the optimistic learner on the experiment
//! instance. Prints the cumulative regret curve and how often the confidence
//! interval at the root contained `V*`.
//!
//! cargo run --release --example regret -- [episodes] [seed]

use branchrl::branchvi::{run_rm, RmConfig};
use branchrl::instances::experiment_instance;

fn main() -> branchrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map_or(Ok(2000), |s| s.parse()).expect("episodes");
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse()).expect("seed");

    let mdp = experiment_instance(10);
    let trace = run_rm(&mdp, &RmConfig::new(episodes, 0.005, seed)?);
    println!("V* = {}", trace.vstar);
    for k in (0..episodes).step_by((episodes / 10).max(1)) {
        let e = &trace.episodes[k];
        println!(
            "episode {:>6}: cum regret {:>10.2}  vbar1 {:.3}  vlow1 {:.3}",
            k + 1,
            e.cum_regret,
            e.vbar1.unwrap(),
            e.vlow1.unwrap()
        );
    }
    println!("sandwich held in {:.1}% of episodes", 100.0 * trace.optimism_rate(1e-9).unwrap());
    Ok(())
}
