//! Comparison learners sharing the episode loop of [`crate::branchvi`].
//!
//! - [`EulerAdaptation`] adds separate bonuses on the trigger probability and
//!   on the conditional transition, `f = (q_hat + b_q)(r + p_hat.V + b_pv)`.
//!   The transition bonus uses the trigger count `J` as its sample size.
//! - [`EpsilonGreedy`] plans greedily on the empirical model and replaces the
//!   planned action by a uniform one at each node with a fixed probability.

use crate::branchvi::{dot, run_learner, EmpiricalModel, EpisodePlan, Learner, RmConfig, RmTrace};
use crate::error::{Error, Result};
use crate::model::{BranchingMdp, PolicyTable, ValueTable};

/// Split-bonus optimistic learner.
#[derive(Clone, Debug)]
pub struct EulerAdaptation {
    pub log_factor: f64,
    /// 1 in normal operation; 0 removes both bonuses.
    pub bonus_scale: f64,
}

impl EulerAdaptation {
    pub fn new(mdp: &BranchingMdp, config: &RmConfig) -> Self {
        let vi = crate::branchvi::BranchVi::new(mdp, config);
        Self {
            log_factor: vi.log_factor,
            bonus_scale: 1.0,
        }
    }

    /// Backward pass; returns `(vbar, vlow, policy)`.
    pub fn backward_pass(&self, mdp: &BranchingMdp, model: &EmpiricalModel) -> (ValueTable, ValueTable, PolicyTable) {
        let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
        let cap = horizon as f64;
        let l = self.log_factor;
        let mut vbar = ValueTable::zeros(horizon, ns);
        let mut vlow = ValueTable::zeros(horizon, ns);
        let mut policy = PolicyTable::constant(horizon, ns, idle_action(mdp));
        let mut f = vec![0.0; na];
        let mut low = vec![0.0; na];
        for h in (1..=horizon).rev() {
            let hi_next = vbar.step(h + 1).to_vec();
            let lo_next = vlow.step(h + 1).to_vec();
            for s in mdp.regular_states() {
                for a in 0..na {
                    if !model.is_visited(s, a) {
                        f[a] = f64::INFINITY;
                        low[a] = 0.0;
                        continue;
                    }
                    let q = model.q(s, a);
                    let row = model.p_row(s, a);
                    let n = model.visits(s, a);
                    let j = model.triggers(s, a).max(1.0);
                    let mean = dot(row, &hi_next);
                    let second: f64 = row.iter().zip(&hi_next).map(|(p, v)| p * v * v).sum();
                    let var = (second - mean * mean).max(0.0);
                    let bq = self.bonus_scale * 4.0 * (l / n).sqrt();
                    let bpv = self.bonus_scale * (4.0 * (var * l / j).sqrt() + 36.0 * cap * l / j);
                    let r = mdp.r(s, a);
                    let up = q + bq;
                    f[a] = up * r + up * (mean + bpv);
                    let down = (q - bq).max(0.0);
                    let rest = dot(row, &lo_next) - bpv;
                    low[a] = if r + rest > 0.0 { down * r + down * rest } else { 0.0 };
                }
                let (best, total) = mdp.actions.argmax_action(&f).expect("decision class validated nonempty");
                let hi = total.min(cap);
                let lo: f64 = best.members().iter().map(|&a| low[a]).sum();
                vbar.set(h, s, hi);
                vlow.set(h, s, lo.max(0.0).min(hi));
                policy.set(h, s, best);
            }
        }
        (vbar, vlow, policy)
    }
}

impl Learner for EulerAdaptation {
    fn plan(&mut self, mdp: &BranchingMdp, model: &EmpiricalModel) -> EpisodePlan {
        let (vbar, vlow, policy) = self.backward_pass(mdp, model);
        EpisodePlan {
            vbar1: Some(vbar.get(1, mdp.initial)),
            vlow1: Some(vlow.get(1, mdp.initial)),
            policy,
            explore_prob: 0.0,
        }
    }
}

fn idle_action(mdp: &BranchingMdp) -> crate::oracle::SuperAction {
    mdp.actions
        .argmax_action(&vec![0.0; mdp.num_actions])
        .expect("decision class validated nonempty")
        .0
}

/// Greedy backward induction on the empirical model, unvisited pairs valued 0
/// and values capped at `H`.
pub fn greedy_plan(mdp: &BranchingMdp, model: &EmpiricalModel) -> (ValueTable, PolicyTable) {
    let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut v = ValueTable::zeros(horizon, ns);
    let mut policy = PolicyTable::constant(horizon, ns, idle_action(mdp));
    let mut g = vec![0.0; na];
    for h in (1..=horizon).rev() {
        let next = v.step(h + 1).to_vec();
        for s in mdp.regular_states() {
            for a in 0..na {
                g[a] = if model.is_visited(s, a) {
                    model.q(s, a) * (mdp.r(s, a) + dot(model.p_row(s, a), &next))
                } else {
                    0.0
                };
            }
            let (best, total) = mdp.actions.argmax_action(&g).expect("decision class validated nonempty");
            v.set(h, s, total.min(horizon as f64));
            policy.set(h, s, best);
        }
    }
    (v, policy)
}

#[derive(Clone, Debug)]
pub struct EpsilonGreedy {
    pub explore_prob: f64,
}

impl EpsilonGreedy {
    pub fn new(explore_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&explore_prob) {
            return Err(Error::InvalidParameter(format!(
                "exploration probability {explore_prob} outside [0, 1]"
            )));
        }
        Ok(Self { explore_prob })
    }
}

impl Learner for EpsilonGreedy {
    fn plan(&mut self, mdp: &BranchingMdp, model: &EmpiricalModel) -> EpisodePlan {
        let (_, policy) = greedy_plan(mdp, model);
        EpisodePlan {
            policy,
            explore_prob: self.explore_prob,
            vbar1: None,
            vlow1: None,
        }
    }
}

pub fn run_euler_adaptation(mdp: &BranchingMdp, config: &RmConfig) -> RmTrace {
    let mut learner = EulerAdaptation::new(mdp, config);
    run_learner(mdp, config, &mut learner)
}

pub fn run_epsilon_greedy(mdp: &BranchingMdp, config: &RmConfig, explore_prob: f64) -> Result<RmTrace> {
    let mut learner = EpsilonGreedy::new(explore_prob)?;
    Ok(run_learner(mdp, config, &mut learner))
}
