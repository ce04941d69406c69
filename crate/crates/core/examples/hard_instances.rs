//! The bandit-state hard instances: with trigger probability `1/m` the
//! always-wrong policy loses `m eta (H-1)` per episode, while with `qbar > 1/m`
//! the loss grows geometrically in `H`. Writes one instance to a model file.
//!
//! cargo run --release --example hard_instances -- [out.json]

use branchrl::branchrfe::certify;
use branchrl::instances::{regret_lb_instance, relaxed_instance};
use branchrl::planner::optimal_values;

fn main() -> branchrl::Result<()> {
    let (m, eta) = (2, 0.05);
    println!("{:>3} {:>12} {:>12}", "H", "bounded gap", "relaxed gap");
    for h in 2..=10 {
        let lb = regret_lb_instance(6, 4, m, h, eta, 0)?;
        let relaxed = relaxed_instance(0.75, 6, 4, m, h, eta, 0)?;
        let gap = |inst: &branchrl::instances::LowerBoundInstance| -> branchrl::Result<f64> {
            certify(&inst.mdp, &inst.always_suboptimal_policy()?, &inst.mdp.r)
        };
        println!("{h:>3} {:>12.6} {:>12.6}", gap(&lb)?, gap(&relaxed)?);
    }

    let lb = regret_lb_instance(6, 4, m, 6, eta, 0)?;
    println!("V* of the bounded instance at H=6: {}", optimal_values(&lb.mdp).0.get(1, 1));
    if let Some(path) = std::env::args().nth(1) {
        lb.mdp.save(&path)?;
        println!("wrote {path}");
    }
    Ok(())
}
