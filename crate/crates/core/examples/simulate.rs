//! One rollout of the experiment instance, printed as a tree, followed by
//! empirical trigger estimates from many rollouts.
//!
//! cargo run --release --example simulate

use branchrl::instances::experiment_instance;
use branchrl::planner::optimal_values;
use branchrl::simulator::{rollout, rollout_into_counts, Behavior, Counts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mdp = experiment_instance(10);
    let (_, policy) = optimal_values(&mdp);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let ep = rollout(&mdp, Behavior::Deterministic(&policy), &mut rng);
    for n in &ep.nodes {
        let depth = n.node.layer() - 1;
        println!("{}{} s{} plays {}", "  ".repeat(depth), n.node, n.state, n.action);
    }
    println!("reward {} over {} triggered states", ep.total_reward, ep.omega);

    let mut counts = Counts::for_model(&mdp);
    for _ in 0..20_000 {
        rollout_into_counts(&mdp, Behavior::Mixture { policy: &policy, explore_prob: 0.2 }, &mut rng, &mut counts);
    }
    for a in [0, 8, 9] {
        let (n, j) = (counts.visits(1, a), counts.triggers(1, a));
        println!("s1 a{a}: {j}/{n} triggered (true q = {})", mdp.q(1, a));
    }
}
