//! Exact planning on the six-state experiment instance, cross-checked
//! against Monte-Carlo rollouts.
//!
//! cargo run --release --example plan

use branchrl::instances::experiment_instance;
use branchrl::planner::{mc_value, occupancy, optimal_values, policy_value};
use branchrl::{PolicyTable, SuperAction};

fn main() -> branchrl::Result<()> {
    let mdp = experiment_instance(10);
    let (vstar, best) = optimal_values(&mdp);
    println!("V*_1 = {}", vstar.get(1, mdp.initial));
    for h in 1..=mdp.horizon {
        println!("  step {h}: action at s1 = {}", best.get(h, 1));
    }

    // The "first two arms" policy only triggers with probability 1/4 per edge.
    let idle = PolicyTable::constant(mdp.horizon, mdp.num_states, SuperAction::new(vec![0, 1])?);
    let v = policy_value(&mdp, &idle).get(1, mdp.initial);
    let (mean, se) = mc_value(&mdp, &idle, 100_000, 7);
    println!("idle policy: exact {v:.6}, monte carlo {mean:.6} +- {se:.6}");

    let w = occupancy(&mdp, &best);
    for h in 1..=mdp.horizon {
        println!("  layer {h}: total edge weight {}", w.layer_total(h));
    }
    Ok(())
}
