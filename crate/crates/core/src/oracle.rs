//! Combinatorial decision classes and their linear maximization oracle.
//!
//! Every learner in this crate reduces "pick the best super action at this
//! state" to `max_{A in class} sum_{a in A} w(a)` for a per-base-action
//! weight vector `w`. [`ActionClass::argmax_action`] answers that query
//! without enumerating the class for the `TopM` variant, which is what keeps
//! per-episode cost polynomial in `N` rather than in `C(N, m)`.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of exactly `m` distinct base actions, stored strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuperAction(Vec<usize>);

impl SuperAction {
    /// Builds a super action from members in any order. Duplicates are rejected.
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSuperAction {
                members,
                reason: "duplicate base action".into(),
            });
        }
        Ok(Self(members))
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, a: usize) -> bool {
        self.0.binary_search(&a).is_ok()
    }

    /// Sum of `weights` over the members, accumulated in member order.
    pub fn score(&self, weights: &[f64]) -> f64 {
        self.0.iter().map(|&a| weights[a]).sum()
    }

    fn check(&self, n: usize, m: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidSuperAction {
            members: self.0.clone(),
            reason,
        };
        if self.0.len() != m {
            return Err(bad(format!("expected {m} members, got {}", self.0.len())));
        }
        if self.0.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("members not strictly increasing".into()));
        }
        if let Some(&a) = self.0.iter().find(|&&a| a >= n) {
            return Err(bad(format!("base action {a} out of range [0, {n})")));
        }
        Ok(())
    }
}

impl std::fmt::Display for SuperAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// The collection of feasible super actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionClass {
    /// Every `m`-subset of `{0, .., n-1}`.
    TopM { n: usize, m: usize },
    /// Pairwise-disjoint blocks of size `m`.
    Partition { blocks: Vec<SuperAction> },
    /// An arbitrary nonempty list.
    Explicit { actions: Vec<SuperAction> },
}

impl ActionClass {
    /// Checks the variant invariants against a model with `n` base actions and
    /// super-action size `m`. Returns one message per problem.
    pub fn problems(&self, n: usize, m: usize) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ActionClass::TopM { n: cn, m: cm } => {
                if *cn != n || *cm != m {
                    out.push(format!(
                        "top_m class has (N={cn}, m={cm}) but model has (N={n}, m={m})"
                    ));
                }
                if cm > cn {
                    out.push(format!("top_m requires m <= N, got m={cm} N={cn}"));
                }
                if *cm == 0 {
                    out.push("top_m requires m >= 1".into());
                }
            }
            ActionClass::Partition { blocks } => {
                if blocks.is_empty() {
                    out.push("empty decision class".into());
                }
                let mut seen = vec![false; n];
                for b in blocks {
                    if let Err(e) = b.check(n, m) {
                        out.push(e.to_string());
                        continue;
                    }
                    for &a in b.members() {
                        if seen[a] {
                            out.push(format!("partition blocks overlap at base action {a}"));
                        }
                        seen[a] = true;
                    }
                }
            }
            ActionClass::Explicit { actions } => {
                if actions.is_empty() {
                    out.push("empty decision class".into());
                }
                for a in actions {
                    if let Err(e) = a.check(n, m) {
                        out.push(e.to_string());
                    }
                }
            }
        }
        out
    }

    fn listed(&self) -> Option<&[SuperAction]> {
        match self {
            ActionClass::TopM { .. } => None,
            ActionClass::Partition { blocks } => Some(blocks),
            ActionClass::Explicit { actions } => Some(actions),
        }
    }

    /// Whether `action` belongs to the class.
    pub fn contains(&self, action: &SuperAction) -> bool {
        match self {
            ActionClass::TopM { n, m } => action.check(*n, *m).is_ok(),
            _ => self.listed().unwrap().contains(action),
        }
    }

    /// Number of super actions, `None` if it does not fit in a `u64`.
    pub fn size(&self) -> Option<u64> {
        match self {
            ActionClass::TopM { n, m } => binomial(*n as u64, *m as u64),
            _ => Some(self.listed().unwrap().len() as u64),
        }
    }

    /// Returns the super action maximizing `sum_{a in A} weights[a]` and that sum.
    ///
    /// Ties go to the lexicographically smallest member list. Entries may be
    /// `+inf`; NaN is not allowed.
    pub fn argmax_action(&self, weights: &[f64]) -> Result<(SuperAction, f64)> {
        let mut members = Vec::new();
        let total = self.argmax_into(weights, &mut members)?;
        Ok((SuperAction(members), total))
    }

    /// [`argmax_action`](Self::argmax_action) writing the sorted members into
    /// `out` instead of allocating.
    pub fn argmax_into(&self, weights: &[f64], out: &mut Vec<usize>) -> Result<f64> {
        out.clear();
        match self {
            ActionClass::TopM { n, m } => {
                debug_assert_eq!(weights.len(), *n);
                // Insertion into a running top-m list ordered by descending
                // weight, ascending index among equal weights.
                for a in 0..*n {
                    let w = weights[a];
                    let pos = out
                        .iter()
                        .position(|&b| w.total_cmp(&weights[b]) == Ordering::Greater)
                        .unwrap_or(out.len());
                    if pos < *m {
                        if out.len() == *m {
                            out.pop();
                        }
                        out.insert(pos, a);
                    }
                }
                out.sort_unstable();
                Ok(out.iter().map(|&a| weights[a]).sum())
            }
            _ => {
                let mut best: Option<(&SuperAction, f64)> = None;
                for cand in self.listed().unwrap() {
                    let total = cand.score(weights);
                    best = match best {
                        None => Some((cand, total)),
                        Some((b, bt)) => match total.total_cmp(&bt) {
                            Ordering::Greater => Some((cand, total)),
                            Ordering::Equal if cand < b => Some((cand, total)),
                            _ => Some((b, bt)),
                        },
                    };
                }
                let (a, t) = best.ok_or(Error::EmptyClass)?;
                out.extend_from_slice(a.members());
                Ok(t)
            }
        }
    }

    /// Every super action exactly once, in lexicographic order.
    pub fn enumerate_actions(&self) -> Box<dyn Iterator<Item = SuperAction> + '_> {
        match self {
            ActionClass::TopM { n, m } => Box::new(Combinations::new(*n, *m)),
            _ => {
                let mut all = self.listed().unwrap().to_vec();
                all.sort();
                all.dedup();
                Box::new(all.into_iter())
            }
        }
    }

    /// Draws a super action uniformly from the class.
    pub fn uniform_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SuperAction> {
        match self {
            ActionClass::TopM { n, m } => {
                if m > n {
                    return Err(Error::EmptyClass);
                }
                // Partial Fisher-Yates over the first m slots.
                let mut pool: Vec<usize> = (0..*n).collect();
                for i in 0..*m {
                    let j = rng.gen_range(i..*n);
                    pool.swap(i, j);
                }
                let mut members = pool[..*m].to_vec();
                members.sort_unstable();
                Ok(SuperAction(members))
            }
            _ => {
                let list = self.listed().unwrap();
                if list.is_empty() {
                    return Err(Error::EmptyClass);
                }
                Ok(list[rng.gen_range(0..list.len())].clone())
            }
        }
    }

    /// `P(a in A)` for `A` drawn uniformly from the class, per base action.
    pub fn inclusion_probabilities(&self, n: usize) -> Vec<f64> {
        match self {
            ActionClass::TopM { n: cn, m } => vec![*m as f64 / *cn as f64; n],
            _ => {
                let list = self.listed().unwrap();
                let mut p = vec![0.0; n];
                for a in list {
                    for &b in a.members() {
                        p[b] += 1.0;
                    }
                }
                let total = list.len() as f64;
                p.iter_mut().for_each(|x| *x /= total);
                p
            }
        }
    }
}

/// `C(n, k)` or `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Lexicographic `k`-combinations of `0..n`.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        let current = (k <= n).then(|| (0..k).collect());
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = SuperAction;

    fn next(&mut self) -> Option<SuperAction> {
        let cur = self.current.take()?;
        let out = SuperAction(cur.clone());
        let k = cur.len();
        let mut next = cur;
        let mut i = k;
        while i > 0 {
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                return Some(out);
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sa(v: &[usize]) -> SuperAction {
        SuperAction::new(v.to_vec()).unwrap()
    }

    fn brute_max(class: &ActionClass, w: &[f64]) -> (SuperAction, f64) {
        let mut best: Option<(SuperAction, f64)> = None;
        for a in class.enumerate_actions() {
            let t = a.score(w);
            if best.as_ref().map_or(true, |(_, bt)| t > *bt) {
                best = Some((a, t));
            }
        }
        best.unwrap()
    }

    #[test]
    fn top_m_tie_breaks_toward_smaller_index() {
        let c = ActionClass::TopM { n: 4, m: 2 };
        let (a, t) = c.argmax_action(&[0.1, 0.9, 0.5, 0.9]).unwrap();
        assert_eq!(a, sa(&[1, 3]));
        assert!((t - 1.8).abs() < 1e-15);

        let c = ActionClass::TopM { n: 5, m: 2 };
        let (a, t) = c.argmax_action(&[1.0; 5]).unwrap();
        assert_eq!(a, sa(&[0, 1]));
        assert_eq!(t, 2.0);
    }

    #[test]
    fn top_m_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = ActionClass::TopM { n: 10, m: 2 };
        assert_eq!(c.enumerate_actions().count(), 45);
        for _ in 0..100 {
            let w: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
            let (a, t) = c.argmax_action(&w).unwrap();
            let (b, bt) = brute_max(&c, &w);
            assert_eq!(a, b);
            assert_eq!(t, bt);
        }
    }

    #[test]
    fn infinite_weights_are_preferred() {
        let c = ActionClass::TopM { n: 4, m: 2 };
        let (a, t) = c
            .argmax_action(&[3.0, f64::INFINITY, 1.0, f64::INFINITY])
            .unwrap();
        assert_eq!(a, sa(&[1, 3]));
        assert!(t.is_infinite());
    }

    #[test]
    fn enumeration_order() {
        let got: Vec<_> = ActionClass::TopM { n: 3, m: 2 }.enumerate_actions().collect();
        assert_eq!(got, vec![sa(&[0, 1]), sa(&[0, 2]), sa(&[1, 2])]);

        let p = ActionClass::Partition {
            blocks: vec![sa(&[2, 3]), sa(&[0, 1])],
        };
        let got: Vec<_> = p.enumerate_actions().collect();
        assert_eq!(got, vec![sa(&[0, 1]), sa(&[2, 3])]);

        let e = ActionClass::Explicit {
            actions: vec![sa(&[4])],
        };
        assert_eq!(e.enumerate_actions().collect::<Vec<_>>(), vec![sa(&[4])]);
        assert_eq!(ActionClass::TopM { n: 15, m: 2 }.size(), Some(105));
    }

    #[test]
    fn empty_listed_class_errors() {
        let e = ActionClass::Explicit { actions: vec![] };
        assert!(matches!(e.argmax_action(&[1.0]), Err(Error::EmptyClass)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(e.uniform_action(&mut rng), Err(Error::EmptyClass)));
        assert!(!e.problems(1, 1).is_empty());
    }

    #[test]
    fn class_problems() {
        let p = ActionClass::Partition {
            blocks: vec![sa(&[0, 1]), sa(&[1, 2])],
        };
        assert_eq!(p.problems(4, 2).len(), 1);
        let p = ActionClass::Partition {
            blocks: vec![sa(&[0, 1, 2])],
        };
        assert_eq!(p.problems(4, 2).len(), 1);
        assert!(ActionClass::TopM { n: 3, m: 4 }.problems(3, 4).len() == 1);
        assert!(ActionClass::TopM { n: 4, m: 2 }.problems(4, 2).is_empty());
    }

    #[test]
    fn super_action_rejects_duplicates() {
        assert!(SuperAction::new(vec![1, 1]).is_err());
        assert_eq!(SuperAction::new(vec![3, 1]).unwrap().members(), &[1, 3]);
    }

    #[test]
    fn uniform_singleton_class() {
        let c = ActionClass::TopM { n: 2, m: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(c.uniform_action(&mut rng).unwrap(), sa(&[0, 1]));
        }
    }

    #[test]
    fn uniform_top_m_frequencies() {
        let c = ActionClass::TopM { n: 10, m: 2 };
        let all: Vec<_> = c.enumerate_actions().collect();
        let mut counts = vec![0u64; all.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000u64;
        for _ in 0..draws {
            let a = c.uniform_action(&mut rng).unwrap();
            counts[all.iter().position(|b| *b == a).unwrap()] += 1;
        }
        let p = 1.0 / 45.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for &k in &counts {
            let f = k as f64 / draws as f64;
            assert!((f - p).abs() <= 4.0 * se, "freq {f} vs {p}");
        }
        // chi-square with 44 dof; 99.99th percentile is about 87.
        let expected = draws as f64 * p;
        let chi2: f64 = counts
            .iter()
            .map(|&k| (k as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 87.0, "chi2 = {chi2}");
    }

    #[test]
    fn uniform_partition_frequencies() {
        let c = ActionClass::Partition {
            blocks: vec![sa(&[0, 1]), sa(&[2, 3]), sa(&[4, 5])],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0u64; 3];
        let draws = 30_000;
        for _ in 0..draws {
            let a = c.uniform_action(&mut rng).unwrap();
            counts[a.members()[0] / 2] += 1;
        }
        let se = ((1.0 / 3.0) * (2.0 / 3.0) / draws as f64).sqrt();
        for k in counts {
            assert!((k as f64 / draws as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn inclusion_probabilities_match_enumeration() {
        let classes = [
            ActionClass::TopM { n: 5, m: 3 },
            ActionClass::Explicit {
                actions: vec![sa(&[0, 1]), sa(&[0, 2]), sa(&[3, 4])],
            },
        ];
        for c in classes {
            let all: Vec<_> = c.enumerate_actions().collect();
            let p = c.inclusion_probabilities(5);
            for a in 0..5 {
                let f = all.iter().filter(|x| x.contains(a)).count() as f64 / all.len() as f64;
                assert!((p[a] - f).abs() < 1e-15);
            }
        }
    }

    fn class_strategy() -> impl Strategy<Value = (ActionClass, usize)> {
        (2usize..7, 1usize..4).prop_flat_map(|(n, m)| {
            let m = m.min(n);
            let top = Just((ActionClass::TopM { n, m }, n)).boxed();
            let explicit = proptest::collection::vec(
                proptest::sample::subsequence((0..n).collect::<Vec<_>>(), m),
                1..6,
            )
            .prop_map(move |v| {
                (
                    ActionClass::Explicit {
                        actions: v.into_iter().map(|x| SuperAction::new(x).unwrap()).collect(),
                    },
                    n,
                )
            })
            .boxed();
            prop_oneof![top, explicit]
        })
    }

    proptest! {
        #[test]
        fn argmax_total_equals_enumerated_max(
            (class, n) in class_strategy(),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Coarse grid so ties actually happen.
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64 * 0.25).collect();
            let (a, t) = class.argmax_action(&w).unwrap();
            let (b, bt) = brute_max(&class, &w);
            prop_assert_eq!(t, bt);
            prop_assert_eq!(&a, &b);
            prop_assert!(class.contains(&a));
            let (a2, _) = class.argmax_action(&w).unwrap();
            prop_assert_eq!(a, a2);
        }
    }
}
