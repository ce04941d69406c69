//! The optimistic learner against the split-bonus and epsilon-greedy
//! baselines, a few replications each, through the same harness the CLI uses.
//!
//! cargo run --release --example baselines -- [episodes] [runs]

use branchrl::cli::{replicate, Algo};
use branchrl::instances::experiment_instance;
use branchrl::stats::Moments;

fn main() -> branchrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map_or(Ok(1000), |s| s.parse()).expect("episodes");
    let runs: u64 = args.next().map_or(Ok(5), |s| s.parse()).expect("runs");

    let mdp = experiment_instance(10);
    for algo in [Algo::Branchvi, Algo::Euler, Algo::Egreedy] {
        let traces = replicate(&mdp, algo, episodes, 0.005, runs, 0, 0.01)?;
        let mut cum = Moments::default();
        traces.iter().for_each(|t| cum.push(t.cumulative_regret()));
        println!("{algo:?}: mean cumulative regret {:.1} +- {:.1}", cum.mean(), cum.stderr());
    }
    Ok(())
}
