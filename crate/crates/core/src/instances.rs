//! Generators for the model families used in experiments and checks.
//!
//! State 0 is always the ending state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BranchingMdp, PolicyTable};
use crate::oracle::{ActionClass, SuperAction};

/// Tables for `num_states x num_actions` with the ending state (0) already
/// absorbing and everything else zero.
fn blank(num_states: usize, num_actions: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let q = vec![0.0; num_states * num_actions];
    let r = vec![0.0; num_states * num_actions];
    let mut p = vec![0.0; num_states * num_actions * num_states];
    for a in 0..num_actions {
        p[a * num_states] = 1.0;
    }
    (q, p, r)
}

/// The six-state benchmark: `s1` fans out to `{s2, s3}`, which alternate with
/// `{s4, s5}`. Base actions `N-2` and `N-1` trigger with `1/m`, the rest with
/// `1/(2m)`; every regular reward is 1. `H = 6`, `m = 2`, all 2-subsets.
///
/// `N` is 10 or 15 in the benchmark; any `N >= 2` builds.
pub fn experiment_instance(num_actions: usize) -> BranchingMdp {
    assert!(num_actions >= 2, "need at least two base actions");
    let (ns, na, m, horizon) = (6, num_actions, 2, 6);
    let (mut q, mut p, mut r) = blank(ns, na);
    let succ = |s: usize| -> [usize; 2] {
        match s {
            1 => [2, 3],
            2 | 3 => [4, 5],
            _ => [2, 3],
        }
    };
    for s in 1..ns {
        for a in 0..na {
            let k = s * na + a;
            q[k] = if a + 2 >= na { 1.0 / m as f64 } else { 1.0 / (2 * m) as f64 };
            r[k] = 1.0;
            let row = &mut p[k * ns..(k + 1) * ns];
            row.iter_mut().for_each(|x| *x = 0.0);
            for t in succ(s) {
                row[t] = 0.5;
            }
        }
    }
    BranchingMdp {
        num_states: ns,
        num_actions: na,
        m,
        horizon,
        q,
        p,
        r,
        ending: 0,
        initial: 1,
        actions: ActionClass::TopM { n: na, m },
        assumption1_enforced: true,
    }
}

/// A bandit-state instance together with the hidden optimal block of every
/// bandit state.
///
/// States: 0 ending, 1 start, 2 homogeneous sink, `3..S` bandit states.
#[derive(Clone, Debug)]
pub struct LowerBoundInstance {
    pub mdp: BranchingMdp,
    /// Index into the partition blocks, one per bandit state `3..S`.
    pub optimal_block: Vec<usize>,
    pub eta: f64,
    /// Trigger probability of the good pairs, `alpha + eta`.
    pub qbar: f64,
}

impl LowerBoundInstance {
    pub fn bandit_states(&self) -> std::ops::Range<usize> {
        3..self.mdp.num_states
    }

    fn blocks(&self) -> &[SuperAction] {
        match &self.mdp.actions {
            ActionClass::Partition { blocks } => blocks,
            _ => unreachable!("lower-bound instances use a partition class"),
        }
    }

    /// Optimal block at every bandit state, block 0 elsewhere.
    pub fn optimal_policy(&self) -> PolicyTable {
        let blocks = self.blocks();
        PolicyTable::from_fn(self.mdp.horizon, self.mdp.num_states, |_, s| {
            if s >= 3 {
                blocks[self.optimal_block[s - 3]].clone()
            } else {
                blocks[0].clone()
            }
        })
    }

    /// A wrong block at every bandit state. Needs at least two blocks.
    pub fn always_suboptimal_policy(&self) -> Result<PolicyTable> {
        let blocks = self.blocks();
        if blocks.len() < 2 {
            return Err(Error::InvalidParameter(
                "a single block leaves no suboptimal action".into(),
            ));
        }
        Ok(PolicyTable::from_fn(self.mdp.horizon, self.mdp.num_states, |_, s| {
            if s >= 3 {
                let j = self.optimal_block[s - 3];
                blocks[if j == 0 { 1 } else { 0 }].clone()
            } else {
                blocks[0].clone()
            }
        }))
    }

    /// Closed-form per-episode gap of an always-suboptimal policy:
    /// `m eta * sum_{j=1}^{H-1} (m qbar)^j`, which is `m eta (H-1)` when
    /// `m qbar = 1`.
    pub fn suboptimal_gap(&self) -> f64 {
        let m = self.mdp.m as f64;
        let ratio = m * self.qbar;
        let h = self.mdp.horizon as i32;
        let geometric = if (ratio - 1.0).abs() < 1e-15 {
            (h - 1) as f64
        } else {
            ratio * (ratio.powi(h - 1) - 1.0) / (ratio - 1.0)
        };
        m * self.eta * geometric
    }
}

fn bandit_family(
    qbar: f64,
    num_states: usize,
    num_actions: usize,
    m: usize,
    horizon: usize,
    eta: f64,
    seed: u64,
    enforce: bool,
) -> Result<LowerBoundInstance> {
    if m == 0 || num_actions % m != 0 {
        return Err(Error::InvalidParameter(format!("m={m} must divide N={num_actions}")));
    }
    if num_states < 4 {
        return Err(Error::InvalidParameter(format!("need S >= 4, got {num_states}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("H must be positive".into()));
    }
    if !(eta > 0.0 && eta < qbar) || qbar > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < eta < qbar <= 1, got eta={eta} qbar={qbar}"
        )));
    }
    let (ns, na) = (num_states, num_actions);
    let d = na / m;
    let alpha = qbar - eta;
    let blocks: Vec<SuperAction> = (0..d)
        .map(|j| SuperAction::new((j * m..(j + 1) * m).collect()).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let optimal_block: Vec<usize> = (3..ns).map(|_| rng.gen_range(0..d)).collect();

    let (mut q, mut p, mut r) = blank(ns, na);
    let bandits = (ns - 3) as f64;
    for s in 1..ns {
        for a in 0..na {
            let k = s * na + a;
            r[k] = 1.0;
            let row = &mut p[k * ns..(k + 1) * ns];
            row[0] = 0.0;
            match s {
                1 => {
                    q[k] = qbar;
                    for x in 3..ns {
                        row[x] = 1.0 / bandits;
                    }
                }
                2 => {
                    q[k] = qbar;
                    row[2] = 1.0;
                }
                _ => {
                    q[k] = if a / m == optimal_block[s - 3] { qbar } else { alpha };
                    row[2] = 1.0;
                }
            }
        }
    }
    Ok(LowerBoundInstance {
        mdp: BranchingMdp {
            num_states: ns,
            num_actions: na,
            m,
            horizon,
            q,
            p,
            r,
            ending: 0,
            initial: 1,
            actions: ActionClass::Partition { blocks },
            assumption1_enforced: enforce,
        },
        optimal_block,
        eta,
        qbar,
    })
}

/// Hard instance with `alpha + eta = 1/m`; satisfies the trigger bound.
pub fn regret_lb_instance(
    num_states: usize,
    num_actions: usize,
    m: usize,
    horizon: usize,
    eta: f64,
    seed: u64,
) -> Result<LowerBoundInstance> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be positive".into()));
    }
    bandit_family(1.0 / m as f64, num_states, num_actions, m, horizon, eta, seed, true)
}

/// Same family with `alpha + eta = qbar > 1/m`; the trigger bound is not
/// enforced and values grow geometrically in `H`.
pub fn relaxed_instance(
    qbar: f64,
    num_states: usize,
    num_actions: usize,
    m: usize,
    horizon: usize,
    eta: f64,
    seed: u64,
) -> Result<LowerBoundInstance> {
    if m == 0 || qbar <= 1.0 / m as f64 {
        return Err(Error::InvalidParameter(format!("qbar={qbar} must exceed 1/m")));
    }
    bandit_family(qbar, num_states, num_actions, m, horizon, eta, seed, false)
}

/// Random model respecting the trigger bound: `q ~ U[0, 1/m]`, transition rows
/// are normalized uniform weights over all states, `r ~ U[0, 1]`. Ending
/// state 0, initial state 1, all `m`-subsets.
pub fn random_instance(
    num_states: usize,
    num_actions: usize,
    m: usize,
    horizon: usize,
    seed: u64,
) -> Result<BranchingMdp> {
    if num_states < 2 || m == 0 || m > num_actions || horizon == 0 {
        return Err(Error::InvalidParameter(format!(
            "need S >= 2, 1 <= m <= N, H >= 1; got S={num_states} N={num_actions} m={m} H={horizon}"
        )));
    }
    let (ns, na) = (num_states, num_actions);
    let (mut q, mut p, mut r) = blank(ns, na);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = 1.0 / m as f64;
    for s in 1..ns {
        for a in 0..na {
            let k = s * na + a;
            q[k] = rng.gen::<f64>() * cap;
            let row = &mut p[k * ns..(k + 1) * ns];
            for x in row.iter_mut() {
                *x = rng.gen::<f64>();
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
            r[k] = rng.gen::<f64>();
        }
    }
    Ok(BranchingMdp {
        num_states: ns,
        num_actions: na,
        m,
        horizon,
        q,
        p,
        r,
        ending: 0,
        initial: 1,
        actions: ActionClass::TopM { n: na, m },
        assumption1_enforced: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_instance_shape() {
        let m10 = experiment_instance(10);
        assert!(m10.validate().is_clean());
        assert_eq!(m10.actions.size(), Some(45));
        assert_eq!(experiment_instance(15).actions.size(), Some(105));
        assert_eq!(m10.q(3, 1), 0.25);
        assert_eq!(m10.q(3, 8), 0.5);
        assert_eq!(m10.augmented_next_distribution(1, 8), vec![0.5, 0.0, 0.25, 0.25, 0.0, 0.0]);
        assert_eq!(m10.p_row(4, 0), &[0.0, 0.0, 0.5, 0.5, 0.0, 0.0]);
        assert_eq!(m10.p_row(2, 0), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
        assert!(experiment_instance(15).validate().is_clean());
    }

    #[test]
    fn lower_bound_instances_validate() {
        let lb = regret_lb_instance(6, 6, 2, 5, 0.1, 4).unwrap();
        assert!(lb.mdp.validate().is_clean(), "{:?}", lb.mdp.validate());
        assert_eq!(lb.optimal_block.len(), 3);
        assert!(lb.optimal_block.iter().all(|&j| j < 3));
        let rel = relaxed_instance(0.75, 6, 6, 2, 5, 0.1, 4).unwrap();
        assert!(rel.mdp.validate().is_clean());
        assert!(!rel.mdp.assumption1_enforced);
        let mut strict = rel.mdp.clone();
        strict.assumption1_enforced = true;
        assert!(!strict.validate().is_clean());
    }

    #[test]
    fn generator_parameter_errors() {
        assert!(regret_lb_instance(6, 5, 2, 3, 0.1, 0).is_err());
        assert!(regret_lb_instance(3, 4, 2, 3, 0.1, 0).is_err());
        assert!(regret_lb_instance(5, 4, 2, 3, 0.6, 0).is_err());
        assert!(relaxed_instance(0.4, 5, 4, 2, 3, 0.1, 0).is_err());
        assert!(random_instance(1, 3, 2, 2, 0).is_err());
    }

    #[test]
    fn random_instances_validate_and_repeat() {
        for seed in 0..100 {
            let m = random_instance(4, 4, 2, 3, seed).unwrap();
            assert!(m.validate().is_clean(), "seed {seed}");
        }
        assert_eq!(random_instance(3, 3, 2, 2, 5).unwrap(), random_instance(3, 3, 2, 2, 5).unwrap());
        assert_ne!(random_instance(3, 3, 2, 2, 5).unwrap(), random_instance(3, 3, 2, 2, 6).unwrap());
    }

    #[test]
    fn closed_form_gap_limits() {
        let lb = regret_lb_instance(5, 4, 2, 6, 0.1, 0).unwrap();
        assert!((lb.suboptimal_gap() - 2.0 * 0.1 * 5.0).abs() < 1e-15);
        let rel = relaxed_instance(0.75, 5, 4, 2, 1, 0.1, 0).unwrap();
        assert_eq!(rel.suboptimal_gap(), 0.0);
    }
}
