//! Reward-free exploration for branching MDPs.
//!
//! Exploration drives an error table `B` (an upper bound on how wrong any
//! value computed on the estimated model can be) and plays the policy that
//! maximizes it, stopping once `4e sqrt(B_1) + B_1 <= eps / 2`. Afterwards any
//! reward table can be planned against the estimated model with [`plan`] and
//! checked against the true model with [`certify`].
//!
//! The explorer only ever sees a [`RewardFree`] view of the model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::branchvi::{dot, EmpiricalModel};
use crate::error::{Error, Result};
use crate::model::{BranchingMdp, PolicyTable, ValueTable};
use crate::oracle::SuperAction;
use crate::planner::{optimal_values, policy_value};
use crate::simulator::{rollout_into_counts, Behavior, Counts};

pub const DEFAULT_MAX_EPISODES: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfeConfig {
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub max_episodes: u64,
}

impl RfeConfig {
    pub fn new(eps: f64, delta: f64, seed: u64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps={eps} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta={delta} must lie in (0, 1)")));
        }
        Ok(Self {
            eps,
            delta,
            seed,
            max_episodes: DEFAULT_MAX_EPISODES,
        })
    }

    pub fn with_max_episodes(mut self, max_episodes: u64) -> Self {
        self.max_episodes = max_episodes;
        self
    }
}

/// A model with its reward table erased.
#[derive(Clone, Debug)]
pub struct RewardFree(BranchingMdp);

impl RewardFree {
    pub fn new(mdp: &BranchingMdp) -> Self {
        let mut d = mdp.clone();
        d.r.iter_mut().for_each(|x| *x = 0.0);
        Self(d)
    }

    pub fn dynamics(&self) -> &BranchingMdp {
        &self.0
    }
}

/// `log(S N / kappa) + S log(8e (t + 1))`.
pub fn beta(t: u64, kappa: f64, num_states: usize, num_actions: usize) -> f64 {
    let s = num_states as f64;
    (s * num_actions as f64 / kappa).ln()
        + s * (8.0 * std::f64::consts::E * (t as f64 + 1.0)).ln()
}

/// Left side of the stopping rule, `4e sqrt(b) + b`.
pub fn stop_statistic(b1: f64) -> f64 {
    4.0 * std::f64::consts::E * b1.sqrt() + b1
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorPlan {
    pub b: ValueTable,
    pub policy: PolicyTable,
}

/// Incremental state of the `B` recursion; per-pair terms are only recomputed
/// when the pair's visit count changes.
struct ErrorRecursion {
    /// `log(S N / delta)`, the count-free part of `beta`.
    log_base: f64,
    beta_scale: f64,
    bonus: Vec<f64>,
    /// Per pair, `(1 + 1/H) min(q_hat, 1/m) p_hat`.
    coef: Vec<f64>,
    seen: Vec<u64>,
    /// States with a refreshed pair since the last pass.
    dirty: Vec<bool>,
    fresh: bool,
    /// Layer 1 only evaluates this state when set; rollouts never read the rest.
    root_only: Option<usize>,
    g: Vec<f64>,
    best: Vec<usize>,
    plan: ErrorPlan,
}

impl ErrorRecursion {
    fn new(mdp: &BranchingMdp, delta: f64, beta_scale: f64) -> Self {
        let pairs = mdp.num_states * mdp.num_actions;
        let (idle, _) = mdp
            .actions
            .argmax_action(&vec![0.0; mdp.num_actions])
            .expect("decision class validated nonempty");
        let ns = mdp.num_states as f64;
        Self {
            log_base: (ns * mdp.num_actions as f64 / delta).ln(),
            beta_scale,
            bonus: vec![f64::INFINITY; pairs],
            coef: vec![0.0; pairs * mdp.num_states],
            seen: vec![0; pairs],
            dirty: vec![false; mdp.num_states],
            fresh: true,
            root_only: None,
            g: vec![0.0; mdp.num_actions],
            best: Vec::with_capacity(mdp.m),
            plan: ErrorPlan {
                b: ValueTable::zeros(mdp.horizon, mdp.num_states),
                policy: PolicyTable::constant(mdp.horizon, mdp.num_states, idle),
            },
        }
    }

    fn pass(&mut self, mdp: &BranchingMdp, counts: &Counts) {
        let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
        let hf = horizon as f64;
        let cap = 1.0 / mdp.m as f64;
        let grow = 1.0 + 1.0 / hf;
        for s in mdp.regular_states() {
            for a in 0..na {
                let k = s * na + a;
                let n = counts.visits(s, a);
                if n == self.seen[k] {
                    continue;
                }
                self.seen[k] = n;
                self.dirty[s] = true;
                let nf = n as f64;
                let b = self.log_base + ns as f64 * (8.0 * std::f64::consts::E * (nf + 1.0)).ln();
                self.bonus[k] = self.beta_scale * 12.0 * hf * hf * b / nf;
                let j = counts.triggers(s, a);
                let row = &mut self.coef[k * ns..(k + 1) * ns];
                if j == 0 {
                    row.iter_mut().for_each(|x| *x = 0.0);
                } else {
                    // (1 + 1/H) min(q_hat, 1/m) p_hat(s')
                    let scale = grow * (j as f64 / nf).min(cap) / j as f64;
                    for (x, &c) in row.iter_mut().zip(counts.transitions(s, a)) {
                        *x = scale * c as f64;
                    }
                }
            }
        }
        // A state is recomputed only if one of its pairs changed or the next
        // layer changed; skipped states would reproduce the same bits.
        let mut next_changed = false;
        for h in (1..=horizon).rev() {
            let mut changed = false;
            for s in mdp.regular_states() {
                if !(self.fresh || next_changed || self.dirty[s]) {
                    continue;
                }
                if h == 1 && self.root_only.is_some_and(|r| r != s) {
                    continue;
                }
                let next = self.plan.b.step(h + 1);
                for a in 0..na {
                    let k = s * na + a;
                    self.g[a] = if self.seen[k] == 0 {
                        f64::INFINITY
                    } else if h == horizon {
                        // B_{H+1} = 0
                        self.bonus[k]
                    } else {
                        self.bonus[k] + dot(&self.coef[k * ns..(k + 1) * ns], next)
                    };
                }
                let total = mdp
                    .actions
                    .argmax_into(&self.g, &mut self.best)
                    .expect("decision class validated nonempty");
                let value = total.min(hf);
                if value.to_bits() != self.plan.b.get(h, s).to_bits() {
                    changed = true;
                    self.plan.b.set(h, s, value);
                }
                if self.plan.policy.get(h, s).members() != self.best.as_slice() {
                    let best = SuperAction::new(self.best.clone()).expect("oracle output is a valid super action");
                    self.plan.policy.set(h, s, best);
                }
            }
            next_changed = changed;
        }
        self.dirty.iter_mut().for_each(|d| *d = false);
        self.fresh = false;
    }
}

/// One evaluation of the error recursion from `counts`. `beta_scale` is 1 in
/// normal operation; 0 removes the confidence term.
pub fn backward_pass_rfe(counts: &Counts, delta: f64, structure: &RewardFree, beta_scale: f64) -> ErrorPlan {
    let mut rec = ErrorRecursion::new(structure.dynamics(), delta, beta_scale);
    rec.pass(structure.dynamics(), counts);
    rec.plan
}

#[derive(Clone, Debug)]
pub struct RfeResult {
    /// Estimates with `q_hat` clipped to `1/m`.
    pub model: EmpiricalModel,
    pub counts: Counts,
    /// Rollouts performed.
    pub episodes_used: u64,
    /// False iff the episode cap was reached first.
    pub stopped: bool,
    /// `B_1` at the initial state at the final check.
    pub b1: f64,
}

impl RfeResult {
    /// The estimated model with the structure of `structure` and zero rewards.
    pub fn estimated_mdp(&self, structure: &RewardFree) -> BranchingMdp {
        let mut out = self.model.to_mdp(structure.dynamics());
        out.assumption1_enforced = true;
        out
    }
}

/// Explores until the stopping rule holds or `max_episodes` rollouts are done.
pub fn explore(mdp: &BranchingMdp, config: &RfeConfig) -> RfeResult {
    explore_reward_free(&RewardFree::new(mdp), config)
}

pub fn explore_reward_free(env: &RewardFree, config: &RfeConfig) -> RfeResult {
    let mdp = env.dynamics();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut counts = Counts::for_model(mdp);
    let mut rec = ErrorRecursion::new(mdp, config.delta, 1.0);
    rec.root_only = Some(mdp.initial);
    let target = config.eps / 2.0;
    let mut used = 0u64;
    let (stopped, b1) = loop {
        rec.pass(mdp, &counts);
        let b1 = rec.plan.b.get(1, mdp.initial);
        if stop_statistic(b1) <= target {
            break (true, b1);
        }
        if used >= config.max_episodes {
            break (false, b1);
        }
        rollout_into_counts(mdp, Behavior::Deterministic(&rec.plan.policy), &mut rng, &mut counts);
        used += 1;
    };
    let mut model = EmpiricalModel::from_counts(&counts, mdp.ending);
    model.clip_trigger(1.0 / mdp.m as f64);
    RfeResult {
        model,
        counts,
        episodes_used: used,
        stopped,
        b1,
    }
}

/// Optimal policy for reward table `r` on an estimated model.
pub fn plan(estimated: &BranchingMdp, r: &[f64]) -> Result<PolicyTable> {
    let model = estimated.with_rewards(r.to_vec())?;
    Ok(optimal_values(&model).1)
}

/// `V*_1 - V^policy_1` at the initial state under the true model with reward `r`.
pub fn certify(mdp_true: &BranchingMdp, policy: &PolicyTable, r: &[f64]) -> Result<f64> {
    let model = mdp_true.with_rewards(r.to_vec())?;
    policy.check(&model)?;
    let (vstar, _) = optimal_values(&model);
    let v = policy_value(&model, policy);
    Ok(vstar.get(1, model.initial) - v.get(1, model.initial))
}
