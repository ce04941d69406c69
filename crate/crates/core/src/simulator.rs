//! Trajectory-tree rollouts and visit counts.
//!
//! Nodes are expanded breadth-first, layer by layer, children in digit
//! order. Per node the behavior picks a super action, then for each member
//! (ascending) one uniform draw decides the trigger and, on success, a second
//! draw picks the successor. Ending-state nodes are never expanded and
//! consume no randomness. This order is part of the reproducibility contract.

use rand::Rng;

use crate::model::{BranchingMdp, NodeIndex, PolicyTable};
use crate::oracle::SuperAction;

/// How actions are chosen at each realized node.
#[derive(Clone, Copy, Debug)]
pub enum Behavior<'a> {
    Deterministic(&'a PolicyTable),
    /// With probability `explore_prob`, independently at every realized node,
    /// a uniform super action replaces the policy's choice.
    Mixture {
        policy: &'a PolicyTable,
        explore_prob: f64,
    },
}

impl<'a> Behavior<'a> {
    pub fn policy(&self) -> &'a PolicyTable {
        match self {
            Behavior::Deterministic(p) => p,
            Behavior::Mixture { policy, .. } => policy,
        }
    }

    pub fn explore_prob(&self) -> f64 {
        match self {
            Behavior::Deterministic(_) => 0.0,
            Behavior::Mixture { explore_prob, .. } => *explore_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeNode {
    pub node: NodeIndex,
    pub state: usize,
    pub action: SuperAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeEdge {
    /// The parent node of this edge.
    pub node: NodeIndex,
    pub state: usize,
    pub base_action: usize,
    pub triggered: bool,
    pub next_state: usize,
    pub reward: f64,
}

/// One realized trajectory tree. Subtrees rooted at ending-state nodes are
/// implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub nodes: Vec<EpisodeNode>,
    pub edges: Vec<EpisodeEdge>,
    pub total_reward: f64,
    /// Number of non-ending nodes over layers `1..=H`.
    pub omega: usize,
}

/// Callback surface of [`simulate`].
pub trait RolloutVisitor {
    /// A non-ending node. `parent` is `None` for the root; `digit` is 1-based.
    fn node(&mut self, _id: usize, _parent: Option<usize>, _digit: usize, _h: usize, _s: usize, _action: &SuperAction) {}
    fn edge(&mut self, node_id: usize, h: usize, s: usize, a: usize, triggered: bool, next: usize);
}

/// Core rollout loop. Returns `(total_reward, omega)`.
pub fn simulate<R: Rng + ?Sized, V: RolloutVisitor>(
    mdp: &BranchingMdp,
    behavior: Behavior<'_>,
    rng: &mut R,
    visitor: &mut V,
) -> (f64, usize) {
    let policy = behavior.policy();
    let explore = behavior.explore_prob();
    let mut layer: Vec<(usize, usize)> = Vec::with_capacity(8);
    let mut next_layer: Vec<(usize, usize)> = Vec::with_capacity(8);
    let mut total = 0.0;
    let mut omega = 0usize;
    let mut next_id = 1usize;

    if mdp.is_ending(mdp.initial) {
        return (0.0, 0);
    }
    // (node id, state); parent/digit are reported at creation time.
    layer.push((0, mdp.initial));
    let mut pending_parent: Vec<(Option<usize>, usize)> = vec![(None, 0)];
    let mut next_parent: Vec<(Option<usize>, usize)> = Vec::new();

    for h in 1..=mdp.horizon {
        next_layer.clear();
        next_parent.clear();
        for (k, &(id, s)) in layer.iter().enumerate() {
            omega += 1;
            let drawn;
            let action: &SuperAction = if explore > 0.0 && rng.gen::<f64>() < explore {
                drawn = mdp
                    .actions
                    .uniform_action(rng)
                    .expect("decision class validated nonempty");
                &drawn
            } else {
                policy.get(h, s)
            };
            let (parent, digit) = pending_parent[k];
            visitor.node(id, parent, digit, h, s, action);
            for (i, &a) in action.members().iter().enumerate() {
                let q = mdp.q(s, a);
                let triggered = rng.gen::<f64>() < q;
                let next = if triggered {
                    total += mdp.r(s, a);
                    sample_index(mdp.p_row(s, a), rng.gen::<f64>())
                } else {
                    mdp.ending
                };
                visitor.edge(id, h, s, a, triggered, next);
                if h < mdp.horizon && next != mdp.ending {
                    next_layer.push((next_id, next));
                    next_parent.push((Some(id), i + 1));
                    next_id += 1;
                }
            }
        }
        std::mem::swap(&mut layer, &mut next_layer);
        std::mem::swap(&mut pending_parent, &mut next_parent);
        if layer.is_empty() {
            break;
        }
    }
    (total, omega)
}

/// Inverse-CDF draw from a probability row.
fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

struct EpisodeBuilder<'m> {
    mdp: &'m BranchingMdp,
    index: Vec<NodeIndex>,
    nodes: Vec<EpisodeNode>,
    edges: Vec<EpisodeEdge>,
}

impl RolloutVisitor for EpisodeBuilder<'_> {
    fn node(&mut self, id: usize, parent: Option<usize>, digit: usize, _h: usize, s: usize, action: &SuperAction) {
        let node = match parent {
            None => NodeIndex::root(),
            Some(p) => self.index[p]
                .child(digit, self.mdp.m, self.mdp.horizon)
                .expect("simulator never exceeds the horizon"),
        };
        debug_assert_eq!(id, self.index.len());
        self.index.push(node.clone());
        self.nodes.push(EpisodeNode {
            node,
            state: s,
            action: action.clone(),
        });
    }

    fn edge(&mut self, node_id: usize, _h: usize, s: usize, a: usize, triggered: bool, next: usize) {
        self.edges.push(EpisodeEdge {
            node: self.index[node_id].clone(),
            state: s,
            base_action: a,
            triggered,
            next_state: next,
            reward: if triggered { self.mdp.r(s, a) } else { 0.0 },
        });
    }
}

/// Rolls out one episode and materializes the realized tree.
pub fn rollout<R: Rng + ?Sized>(mdp: &BranchingMdp, behavior: Behavior<'_>, rng: &mut R) -> Episode {
    let mut b = EpisodeBuilder {
        mdp,
        index: Vec::new(),
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let (total_reward, omega) = simulate(mdp, behavior, rng, &mut b);
    Episode {
        nodes: b.nodes,
        edges: b.edges,
        total_reward,
        omega,
    }
}

/// Visit, trigger and transition counts over regular states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counts {
    num_states: usize,
    num_actions: usize,
    n: Vec<u64>,
    j: Vec<u64>,
    p: Vec<u64>,
}

impl Counts {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            n: vec![0; num_states * num_actions],
            j: vec![0; num_states * num_actions],
            p: vec![0; num_states * num_actions * num_states],
        }
    }

    pub fn for_model(mdp: &BranchingMdp) -> Self {
        Self::new(mdp.num_states, mdp.num_actions)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.n[s * self.num_actions + a]
    }

    #[inline]
    pub fn triggers(&self, s: usize, a: usize) -> u64 {
        self.j[s * self.num_actions + a]
    }

    #[inline]
    pub fn transitions(&self, s: usize, a: usize) -> &[u64] {
        let k = (s * self.num_actions + a) * self.num_states;
        &self.p[k..k + self.num_states]
    }

    #[inline]
    pub fn record(&mut self, s: usize, a: usize, triggered: bool, next: usize) {
        let k = s * self.num_actions + a;
        self.n[k] += 1;
        if triggered {
            self.j[k] += 1;
            self.p[k * self.num_states + next] += 1;
        }
    }

    /// Adds every edge of `episode` whose parent is not the ending state.
    pub fn update(&mut self, episode: &Episode, ending: usize) {
        for e in &episode.edges {
            if e.state != ending {
                self.record(e.state, e.base_action, e.triggered, e.next_state);
            }
        }
    }
}

struct CountingVisitor<'c> {
    counts: &'c mut Counts,
    ending: usize,
}

impl RolloutVisitor for CountingVisitor<'_> {
    #[inline]
    fn edge(&mut self, _id: usize, _h: usize, s: usize, a: usize, triggered: bool, next: usize) {
        if s != self.ending {
            self.counts.record(s, a, triggered, next);
        }
    }
}

/// `rollout` followed by `Counts::update`, without materializing the tree.
/// Consumes randomness identically to [`rollout`].
pub fn rollout_into_counts<R: Rng + ?Sized>(
    mdp: &BranchingMdp,
    behavior: Behavior<'_>,
    rng: &mut R,
    counts: &mut Counts,
) -> (f64, usize) {
    let mut v = CountingVisitor {
        counts,
        ending: mdp.ending,
    };
    simulate(mdp, behavior, rng, &mut v)
}
