//! Exact planning by backward induction on the branching Bellman equations,
//! forward occupancy weights, and two independent value oracles (exhaustive
//! outcome enumeration and Monte Carlo) used to cross-check them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BranchingMdp, PolicyTable, ValueTable};
use crate::simulator::{simulate, Behavior, RolloutVisitor};

/// `q(s,a) * (r(s,a) + p(.|s,a)^T next)`: the expected contribution of one edge.
#[inline]
pub(crate) fn edge_value(mdp: &BranchingMdp, s: usize, a: usize, next: &[f64]) -> f64 {
    let row = mdp.p_row(s, a);
    let cont: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
    mdp.q(s, a) * (mdp.r(s, a) + cont)
}

/// `V^pi` for a deterministic policy.
pub fn policy_value(mdp: &BranchingMdp, policy: &PolicyTable) -> ValueTable {
    mixture_value(mdp, policy, 0.0)
}

/// Value of the per-node mixture that follows `policy` with probability
/// `1 - explore_prob` and otherwise plays a uniform super action from the
/// class. `explore_prob = 0` is exactly [`policy_value`].
pub fn mixture_value(mdp: &BranchingMdp, policy: &PolicyTable, explore_prob: f64) -> ValueTable {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let mut v = ValueTable::zeros(mdp.horizon, ns);
    let incl = if explore_prob > 0.0 {
        mdp.actions.inclusion_probabilities(na)
    } else {
        Vec::new()
    };
    let mut f = vec![0.0; na];
    for h in (1..=mdp.horizon).rev() {
        let next = v.step(h + 1).to_vec();
        for s in mdp.regular_states() {
            let greedy: f64 = policy
                .get(h, s)
                .members()
                .iter()
                .map(|&a| edge_value(mdp, s, a, &next))
                .sum();
            let x = if explore_prob > 0.0 {
                for (a, fa) in f.iter_mut().enumerate() {
                    *fa = edge_value(mdp, s, a, &next);
                }
                let uniform: f64 = f.iter().zip(&incl).map(|(x, p)| x * p).sum();
                (1.0 - explore_prob) * greedy + explore_prob * uniform
            } else {
                greedy
            };
            v.set(h, s, x);
        }
    }
    v
}

/// `V*` and a greedy optimal policy. Ties follow the oracle's lexicographic rule.
pub fn optimal_values(mdp: &BranchingMdp) -> (ValueTable, PolicyTable) {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let mut v = ValueTable::zeros(mdp.horizon, ns);
    let zero = vec![0.0; na];
    let (idle, _) = mdp.actions.argmax_action(&zero).expect("decision class validated nonempty");
    let mut policy = PolicyTable::constant(mdp.horizon, ns, idle);
    let mut f = vec![0.0; na];
    for h in (1..=mdp.horizon).rev() {
        let next = v.step(h + 1).to_vec();
        for s in mdp.regular_states() {
            for (a, fa) in f.iter_mut().enumerate() {
                *fa = edge_value(mdp, s, a, &next);
            }
            let (best, total) = mdp.actions.argmax_action(&f).expect("decision class validated nonempty");
            v.set(h, s, total);
            policy.set(h, s, best);
        }
    }
    (v, policy)
}

/// Expected number of layer-`h` edges labelled `(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    num_states: usize,
    num_actions: usize,
    w: Vec<f64>,
}

impl Occupancy {
    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.w[((h - 1) * self.num_states + s) * self.num_actions + a]
    }

    /// Sum over all `(s, a)` at step `h`; equals `m^h`.
    pub fn layer_total(&self, h: usize) -> f64 {
        let k = (h - 1) * self.num_states * self.num_actions;
        self.w[k..k + self.num_states * self.num_actions].iter().sum()
    }
}

/// Forward recursion of node mass from a point mass on the initial state.
/// Ending-state nodes keep their (policy-chosen) edges so every layer carries
/// `m^h` edges of mass.
pub fn occupancy(mdp: &BranchingMdp, policy: &PolicyTable) -> Occupancy {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let mut w = vec![0.0; mdp.horizon * ns * na];
    let mut mass = vec![0.0; ns];
    mass[mdp.initial] = 1.0;
    for h in 1..=mdp.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let mu = mass[s];
            if mu == 0.0 {
                continue;
            }
            for &a in policy.get(h, s).members() {
                w[((h - 1) * ns + s) * na + a] += mu;
                let q = mdp.q(s, a);
                for (t, p) in mdp.p_row(s, a).iter().enumerate() {
                    next[t] += mu * q * p;
                }
                next[mdp.ending] += mu * (1.0 - q);
            }
        }
        mass = next;
    }
    Occupancy {
        num_states: ns,
        num_actions: na,
        w,
    }
}

/// Largest tree (total edge count over all layers) the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_EDGES: usize = 6;
/// Largest state count the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_STATES: usize = 4;

/// Full `m`-ary tree layout in heap order: node `k` owns edges
/// `m*k .. m*k + m`, and edge `e` leads to node `e + 1` when that node exists.
pub(crate) struct TreeLayout {
    pub m: usize,
    pub nodes: usize,
    pub edges: usize,
    pub layer: Vec<usize>,
}

impl TreeLayout {
    pub fn new(mdp: &BranchingMdp) -> Result<Self> {
        let m = mdp.m;
        let mut nodes = 0usize;
        let mut width = 1usize;
        let mut layer = Vec::new();
        for h in 1..=mdp.horizon {
            for _ in 0..width {
                layer.push(h);
            }
            nodes += width;
            width = width
                .checked_mul(m)
                .filter(|&w| w <= 1 << 20)
                .ok_or_else(|| Error::TooLarge("tree width overflows".into()))?;
        }
        let edges = nodes * m;
        if edges > BRUTE_FORCE_MAX_EDGES || mdp.num_states > BRUTE_FORCE_MAX_STATES {
            return Err(Error::TooLarge(format!(
                "{edges} tree edges and {} states (limits {BRUTE_FORCE_MAX_EDGES} and {BRUTE_FORCE_MAX_STATES})",
                mdp.num_states
            )));
        }
        Ok(Self { m, nodes, edges, layer })
    }
}

/// Enumerates every joint assignment of (trigger outcome, successor) to every
/// edge of the full tree under `policy`, calling `visit(prob, node_states,
/// triggered)` for each assignment with nonzero probability.
pub(crate) fn enumerate_outcomes(
    mdp: &BranchingMdp,
    policy: &PolicyTable,
    mut visit: impl FnMut(f64, &[usize], &[bool]),
) -> Result<TreeLayout> {
    let layout = TreeLayout::new(mdp)?;
    let mut states = vec![mdp.ending; layout.nodes];
    states[0] = mdp.initial;
    let mut trig = vec![false; layout.edges];

    fn rec(
        mdp: &BranchingMdp,
        policy: &PolicyTable,
        layout: &TreeLayout,
        e: usize,
        prob: f64,
        states: &mut Vec<usize>,
        trig: &mut Vec<bool>,
        visit: &mut dyn FnMut(f64, &[usize], &[bool]),
    ) {
        if e == layout.edges {
            visit(prob, states, trig);
            return;
        }
        let parent = e / layout.m;
        let s = states[parent];
        let a = policy.get(layout.layer[parent], s).members()[e % layout.m];
        let q = mdp.q(s, a);
        let child = e + 1;
        // Failure: reward 0, successor is the ending state.
        if q < 1.0 {
            trig[e] = false;
            if child < layout.nodes {
                states[child] = mdp.ending;
            }
            rec(mdp, policy, layout, e + 1, prob * (1.0 - q), states, trig, visit);
        }
        if q > 0.0 {
            for (t, &pt) in mdp.p_row(s, a).iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                trig[e] = true;
                if child < layout.nodes {
                    states[child] = t;
                }
                rec(mdp, policy, layout, e + 1, prob * q * pt, states, trig, visit);
            }
        }
        trig[e] = false;
    }

    rec(mdp, policy, &layout, 0, 1.0, &mut states, &mut trig, &mut visit);
    Ok(layout)
}

/// Exact expected total reward by exhaustive enumeration of edge outcomes.
/// Shares no recursion with [`policy_value`].
pub fn brute_force_value(mdp: &BranchingMdp, policy: &PolicyTable) -> Result<f64> {
    let layers = TreeLayout::new(mdp)?.layer;
    let m = mdp.m;
    let mut total = 0.0;
    enumerate_outcomes(mdp, policy, |prob, states, trig| {
        let mut reward = 0.0;
        for (e, &t) in trig.iter().enumerate() {
            if t {
                let parent = e / m;
                let s = states[parent];
                let a = policy.get(layers[parent], s).members()[e % m];
                reward += mdp.r(s, a);
            }
        }
        total += prob * reward;
    })?;
    Ok(total)
}

struct RewardOnly;
impl RolloutVisitor for RewardOnly {
    #[inline]
    fn edge(&mut self, _: usize, _: usize, _: usize, _: usize, _: bool, _: usize) {}
}

/// Sample mean and standard error of the episode reward over `episodes`
/// seeded rollouts.
pub fn mc_value(mdp: &BranchingMdp, policy: &PolicyTable, episodes: u64, seed: u64) -> (f64, f64) {
    assert!(episodes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = crate::stats::Moments::default();
    for _ in 0..episodes {
        let (g, _) = simulate(mdp, Behavior::Deterministic(policy), &mut rng, &mut RewardOnly);
        stats.push(g);
    }
    (stats.mean(), stats.stderr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::oracle::{ActionClass, SuperAction};

    fn sa(v: &[usize]) -> SuperAction {
        SuperAction::new(v.to_vec()).unwrap()
    }

    /// Every deterministic policy of a tiny model.
    fn all_policies(mdp: &BranchingMdp) -> Vec<PolicyTable> {
        let acts: Vec<_> = mdp.actions.enumerate_actions().collect();
        let regular: Vec<usize> = mdp.regular_states().collect();
        let slots = mdp.horizon * regular.len();
        let total = acts.len().pow(slots as u32);
        (0..total)
            .map(|mut code| {
                let mut pol = PolicyTable::constant(mdp.horizon, mdp.num_states, acts[0].clone());
                for h in 1..=mdp.horizon {
                    for &s in &regular {
                        pol.set(h, s, acts[code % acts.len()].clone());
                        code /= acts.len();
                    }
                }
                pol
            })
            .collect()
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut mdp = instances::random_instance(3, 3, 2, 2, 1).unwrap();
        mdp.r.iter_mut().for_each(|r| *r = 0.0);
        let (v, pol) = optimal_values(&mdp);
        for h in 1..=3 {
            for s in 0..3 {
                assert_eq!(v.get(h, s), 0.0);
            }
        }
        assert_eq!(brute_force_value(&mdp, &pol).unwrap(), 0.0);
    }

    #[test]
    fn one_step_brute_force_is_linear() {
        // H = 1, m = 2, q = (0.3, 0.4), r = 1.
        let mut mdp = instances::random_instance(3, 2, 2, 1, 0).unwrap();
        let k = mdp.pair(1, 0);
        mdp.q[k] = 0.3;
        let k = mdp.pair(1, 1);
        mdp.q[k] = 0.4;
        let k = mdp.pair(1, 0);
        mdp.r[k] = 1.0;
        let k = mdp.pair(1, 1);
        mdp.r[k] = 1.0;
        mdp.assumption1_enforced = false;
        let pol = PolicyTable::constant(1, 3, sa(&[0, 1]));
        assert!((brute_force_value(&mdp, &pol).unwrap() - 0.7).abs() < 1e-15);
        assert!((policy_value(&mdp, &pol).get(1, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn one_step_optimum_is_best_subset() {
        let mdp = instances::random_instance(2, 5, 2, 1, 9).unwrap();
        let (v, _) = optimal_values(&mdp);
        let best = mdp
            .actions
            .enumerate_actions()
            .map(|a| a.members().iter().map(|&b| mdp.q(1, b) * mdp.r(1, b)).sum::<f64>())
            .fold(f64::MIN, f64::max);
        assert!((v.get(1, 1) - best).abs() < 1e-15);
    }

    #[test]
    fn brute_force_matches_backward_induction() {
        for seed in 0..20 {
            let mdp = instances::random_instance(3, 3, 2, 2, seed).unwrap();
            for pol in all_policies(&mdp).iter().step_by(37) {
                let exact = policy_value(&mdp, pol).get(1, mdp.initial);
                let bf = brute_force_value(&mdp, pol).unwrap();
                assert!((exact - bf).abs() <= 1e-9, "seed {seed}: {exact} vs {bf}");
            }
        }
    }

    #[test]
    fn optimal_beats_every_policy_on_tiny_models() {
        for seed in 0..5 {
            let mdp = instances::random_instance(3, 3, 2, 2, 100 + seed).unwrap();
            let (v, pol) = optimal_values(&mdp);
            let vstar = v.get(1, mdp.initial);
            assert_eq!(policy_value(&mdp, &pol).get(1, mdp.initial), vstar);
            let best = all_policies(&mdp)
                .iter()
                .map(|p| brute_force_value(&mdp, p).unwrap())
                .fold(f64::MIN, f64::max);
            assert!((best - vstar).abs() <= 1e-9);
        }
    }

    #[test]
    fn brute_force_rejects_large_trees() {
        let mdp = instances::experiment_instance(10);
        let (_, pol) = optimal_values(&mdp);
        assert!(matches!(brute_force_value(&mdp, &pol), Err(Error::TooLarge(_))));
        let mdp = instances::random_instance(5, 3, 1, 2, 0).unwrap();
        let (_, pol) = optimal_values(&mdp);
        assert!(matches!(brute_force_value(&mdp, &pol), Err(Error::TooLarge(_))));
    }

    #[test]
    fn experiment_optimum_uses_the_two_strong_actions() {
        let mdp = instances::experiment_instance(10);
        let (v, pol) = optimal_values(&mdp);
        // Sweep every action at every (h, s) against V*.
        for h in 1..=mdp.horizon {
            for s in mdp.regular_states() {
                assert_eq!(pol.get(h, s), &sa(&[8, 9]));
                for a in mdp.actions.enumerate_actions() {
                    let mut alt = pol.clone();
                    alt.set(h, s, a);
                    assert!(policy_value(&mdp, &alt).get(1, mdp.initial) <= v.get(1, mdp.initial) + 1e-12);
                }
            }
        }
        assert!((v.get(1, mdp.initial) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bellman_consistency_and_bounds() {
        for seed in 0..20 {
            let mdp = instances::random_instance(5, 4, 2, 4, seed).unwrap();
            let pol = PolicyTable::from_fn(4, 5, |h, s| sa(&[(h + s) % 4, (h + s + 1) % 4]));
            let v = policy_value(&mdp, &pol);
            for h in 1..=4 {
                for s in 0..5 {
                    let x = v.get(h, s);
                    assert!(x >= 0.0 && x <= (4 - h + 1) as f64 + 1e-12);
                    if s == mdp.ending {
                        assert_eq!(x, 0.0);
                        continue;
                    }
                    let rhs: f64 = pol
                        .get(h, s)
                        .members()
                        .iter()
                        .map(|&a| {
                            mdp.q(s, a) * mdp.r(s, a)
                                + mdp.q(s, a)
                                    * (0..5).map(|t| mdp.p_row(s, a)[t] * v.get(h + 1, t)).sum::<f64>()
                        })
                        .sum();
                    assert!((x - rhs).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn mixture_reduces_to_policy_value() {
        let mdp = instances::random_instance(4, 4, 2, 3, 2).unwrap();
        let (_, pol) = optimal_values(&mdp);
        assert_eq!(mixture_value(&mdp, &pol, 0.0), policy_value(&mdp, &pol));
        // Full exploration: uniform policy value, checked by averaging all actions.
        let v1 = mixture_value(&mdp, &pol, 1.0);
        let acts: Vec<_> = mdp.actions.enumerate_actions().collect();
        let mut v = ValueTable::zeros(3, 4);
        for h in (1..=3).rev() {
            let next = v.step(h + 1).to_vec();
            for s in mdp.regular_states() {
                let avg = acts
                    .iter()
                    .map(|a| a.members().iter().map(|&b| edge_value(&mdp, s, b, &next)).sum::<f64>())
                    .sum::<f64>()
                    / acts.len() as f64;
                v.set(h, s, avg);
            }
        }
        assert!((v1.get(1, 1) - v.get(1, 1)).abs() < 1e-12);
    }

    #[test]
    fn occupancy_layer_totals_and_first_layer() {
        let mdp = instances::random_instance(4, 5, 2, 4, 3).unwrap();
        let (_, pol) = optimal_values(&mdp);
        let occ = occupancy(&mdp, &pol);
        for h in 1..=4 {
            assert!((occ.layer_total(h) - 2f64.powi(h as i32)).abs() < 1e-9);
        }
        for a in 0..5 {
            let expect = if pol.get(1, 1).contains(a) { 1.0 } else { 0.0 };
            assert_eq!(occ.get(1, 1, a), expect);
        }
    }

    #[test]
    fn occupancy_under_relaxed_trigger_is_m_per_layer() {
        // Experiment instance with optimal policy has q = 1/m on every used pair.
        let mdp = instances::experiment_instance(10);
        let (_, pol) = optimal_values(&mdp);
        let occ = occupancy(&mdp, &pol);
        let mut total = 0.0;
        for h in 1..=6 {
            let layer: f64 = mdp
                .regular_states()
                .flat_map(|s| (0..10).map(move |a| (s, a)))
                .map(|(s, a)| occ.get(h, s, a))
                .sum();
            assert!((layer - 2.0).abs() < 1e-12, "layer {h}: {layer}");
            total += layer;
        }
        assert!(total <= (mdp.m * mdp.horizon) as f64 + 1e-12);
    }

    #[test]
    fn lower_bound_values() {
        let lb = instances::regret_lb_instance(6, 6, 2, 5, 0.15, 3).unwrap();
        let (v, pol) = optimal_values(&lb.mdp);
        assert!((v.get(1, 1) - 5.0).abs() <= 1e-12);
        for x in lb.bandit_states() {
            for h in 1..=5 {
                assert_eq!(pol.get(h, x), lb.optimal_policy().get(h, x));
            }
        }
        let bad = lb.always_suboptimal_policy().unwrap();
        let gap = v.get(1, 1) - policy_value(&lb.mdp, &bad).get(1, 1);
        assert!((gap - 2.0 * 0.15 * 4.0).abs() <= 1e-12);
    }

    #[test]
    fn raising_a_reward_never_lowers_the_optimum() {
        for seed in 0..10 {
            let mdp = instances::random_instance(4, 4, 2, 3, seed).unwrap();
            let base = optimal_values(&mdp).0.get(1, 1);
            for k in 0..mdp.r.len() {
                let mut r = mdp.r.clone();
                r[k] = (r[k] + 0.3).min(1.0);
                let up = optimal_values(&mdp.with_rewards(r).unwrap()).0.get(1, 1);
                assert!(up >= base - 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_value() {
        let mut mdp = instances::experiment_instance(10);
        let (v, pol) = optimal_values(&mdp);
        let (mean, se) = mc_value(&mdp, &pol, 100_000, 17);
        assert!((mean - v.get(1, 1)).abs() <= 4.0 * se, "{mean} +- {se}");
        assert_eq!(mc_value(&mdp, &pol, 1000, 5), mc_value(&mdp, &pol, 1000, 5));
        mdp.q.iter_mut().for_each(|q| *q = 0.0);
        assert_eq!(mc_value(&mdp, &pol, 100, 1), (0.0, 0.0));
    }

    #[test]
    fn partition_class_planning() {
        let lb = instances::regret_lb_instance(5, 4, 2, 2, 0.1, 0).unwrap();
        assert!(matches!(lb.mdp.actions, ActionClass::Partition { .. }));
        let (_, pol) = optimal_values(&lb.mdp);
        assert!(pol.check(&lb.mdp).is_ok());
    }
}
