//! Branching (tree-structured) episodic MDPs.
//!
//! A branching MDP plays `m` base actions at once in every state. Each
//! state/base-action edge independently triggers with probability `q(s,a)`,
//! paying `r(s,a)` and moving to `s' ~ p(.|s,a)`; otherwise it falls into an
//! absorbing, reward-free ending state. An episode is therefore an `m`-ary
//! tree of depth `H` rather than a path.
//!
//! The crate provides
//!
//! - the model, decision classes and a linear maximization oracle
//!   ([`model`], [`oracle`]),
//! - exact planning, occupancy weights and independent value oracles
//!   ([`planner`]), rollouts and visit counts ([`simulator`]),
//! - the optimistic regret learner [`branchvi`], the reward-free explorer
//!   [`branchrfe`], and two baselines ([`baselines`]),
//! - instance generators ([`instances`]) and numerical checks of the
//!   structural identities of branching MDPs ([`diagnostics`]),
//! - a command-line harness ([`cli`]).
//!
//! Randomness is always ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`; replication `i` of a run with master seed `s`
//! uses seed `s ^ i`.

pub mod error;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod simulator;
pub mod stats;
pub mod instances;
pub mod branchvi;
pub mod baselines;
pub mod branchrfe;
pub mod diagnostics;
pub mod cli;

pub use error::{Error, Result};
pub use model::{BranchingMdp, NodeIndex, PolicyTable, ValidationReport, ValueTable};
pub use oracle::{ActionClass, SuperAction};
