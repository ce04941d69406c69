//! Numerical checks of three structural identities of branching MDPs:
//!
//! - the value difference of two models under one policy equals the
//!   occupancy-weighted sum of per-edge deviations,
//! - the variance of the per-node mean reward collected along the realized
//!   tree equals the occupancy-weighted conditional variance of the next-step
//!   values, and is bounded by the second moment of the number of triggered
//!   states,
//! - under the trigger bound `q <= 1/m`, the number of triggered states `omega`
//!   has `E[omega] <= H` and `E[omega^2] <= 3 H^2`.
//!
//! Monte-Carlo checks pass within four standard errors. They split the
//! rollouts into [`MC_CHUNKS`] chunks, chunk `i` drawing from ChaCha8 stream
//! `i` of the given seed, and merge the chunks in order, so results do not
//! depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instances;
use crate::model::{BranchingMdp, PolicyTable};
use crate::oracle::SuperAction;
use crate::planner::{enumerate_outcomes, occupancy, optimal_values, policy_value, TreeLayout};
use crate::simulator::{simulate, Behavior, RolloutVisitor};
use crate::stats::Moments;

pub const MC_CHUNKS: u64 = 16;
/// Width of every Monte-Carlo acceptance band, in standard errors.
pub const MC_SIGMAS: f64 = 4.0;
pub const EXACT_TOL: f64 = 1e-9;

/// One line of a check report.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub pass: bool,
}

impl std::fmt::Display for CheckRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "name={} lhs={:.12e} rhs={:.12e} gap={:.3e} pass={}",
            self.name, self.lhs, self.rhs, self.gap, self.pass
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueDifference {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

fn same_structure(a: &BranchingMdp, b: &BranchingMdp) -> Result<()> {
    let mut diffs = Vec::new();
    if (a.num_states, a.num_actions, a.m, a.horizon) != (b.num_states, b.num_actions, b.m, b.horizon) {
        diffs.push("dimensions");
    }
    if a.ending != b.ending || a.initial != b.initial {
        diffs.push("ending or initial state");
    }
    if a.r != b.r {
        diffs.push("reward table");
    }
    if a.actions != b.actions {
        diffs.push("decision class");
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Mismatch(diffs.join(", ")))
    }
}

/// `V'^pi_1 - V''^pi_1` against the sum over `(h, s, a)` of the `M''`
/// occupancy times `(q' - q'') r + (q' p' - q'' p'')^T V'^pi_{h+1}`.
pub fn check_value_difference(
    first: &BranchingMdp,
    second: &BranchingMdp,
    policy: &PolicyTable,
) -> Result<ValueDifference> {
    same_structure(first, second)?;
    policy.check(first)?;
    let v1 = policy_value(first, policy);
    let v2 = policy_value(second, policy);
    let lhs = v1.get(1, first.initial) - v2.get(1, first.initial);
    let w = occupancy(second, policy);
    let (ns, na) = (first.num_states, first.num_actions);
    let mut rhs = 0.0;
    for h in 1..=first.horizon {
        let next = v1.step(h + 1);
        for s in 0..ns {
            for a in 0..na {
                let weight = w.get(h, s, a);
                if weight == 0.0 {
                    continue;
                }
                let (q1, q2) = (first.q(s, a), second.q(s, a));
                let mut dev = (q1 - q2) * first.r(s, a);
                for (t, &v) in next.iter().enumerate() {
                    dev += (q1 * first.p_row(s, a)[t] - q2 * second.p_row(s, a)[t]) * v;
                }
                rhs += weight * dev;
            }
        }
    }
    Ok(ValueDifference {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LtvMode {
    /// Enumerate every outcome of the full tree; small instances only.
    Exact,
    /// Average over this many rollouts.
    MonteCarlo { rollouts: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LtvResult {
    /// Occupancy-weighted conditional variance; always computed exactly.
    pub lhs: f64,
    /// `E[(G - V^pi_1)^2]`, `G` the per-node mean reward summed over the realized tree.
    pub mid: f64,
    /// `E[omega^2]`.
    pub rhs_bound: f64,
    /// Standard errors of `mid` and `rhs_bound`; zero in exact mode.
    pub mid_stderr: f64,
    pub rhs_stderr: f64,
}

impl LtvResult {
    /// `lhs` is exact, so the equality band is the standard error of `mid`.
    pub fn combined_stderr(&self) -> f64 {
        self.mid_stderr
    }

    pub fn equality_holds(&self) -> bool {
        let tol = if self.mid_stderr == 0.0 {
            EXACT_TOL
        } else {
            MC_SIGMAS * self.combined_stderr()
        };
        (self.lhs - self.mid).abs() <= tol
    }

    pub fn bound_holds(&self) -> bool {
        let slack = MC_SIGMAS * self.mid_stderr.hypot(self.rhs_stderr) + EXACT_TOL;
        self.mid <= self.rhs_bound + slack
    }
}

/// Sum of `q(s,a) r(s,a)` over the super action played at one node.
fn node_mean_reward(mdp: &BranchingMdp, s: usize, action: &SuperAction) -> f64 {
    action.members().iter().map(|&a| mdp.q(s, a) * mdp.r(s, a)).sum()
}

/// Occupancy-weighted variance of `V^pi_{h+1}` under the augmented successor law.
fn ltv_lhs(mdp: &BranchingMdp, policy: &PolicyTable) -> f64 {
    let v = policy_value(mdp, policy);
    let w = occupancy(mdp, policy);
    let mut lhs = 0.0;
    for h in 1..=mdp.horizon {
        let next = v.step(h + 1);
        for s in mdp.regular_states() {
            for a in 0..mdp.num_actions {
                let weight = w.get(h, s, a);
                if weight == 0.0 {
                    continue;
                }
                let law = mdp.augmented_next_distribution(s, a);
                let mean: f64 = law.iter().zip(next).map(|(p, x)| p * x).sum();
                let var: f64 = law.iter().zip(next).map(|(p, x)| p * (x - mean) * (x - mean)).sum();
                lhs += weight * var;
            }
        }
    }
    lhs
}

struct TreeStats<'m> {
    mdp: &'m BranchingMdp,
    g: f64,
}

impl RolloutVisitor for TreeStats<'_> {
    #[inline]
    fn node(&mut self, _id: usize, _parent: Option<usize>, _digit: usize, _h: usize, s: usize, action: &SuperAction) {
        self.g += node_mean_reward(self.mdp, s, action);
    }

    #[inline]
    fn edge(&mut self, _: usize, _: usize, _: usize, _: usize, _: bool, _: usize) {}
}

/// Runs `rollouts` episodes split over [`MC_CHUNKS`] deterministic streams and
/// returns merged moments of `(G - center)^2`, `omega` and `omega^2`.
fn mc_tree_moments(
    mdp: &BranchingMdp,
    policy: &PolicyTable,
    rollouts: u64,
    seed: u64,
    center: f64,
) -> (Moments, Moments, Moments) {
    let chunks: Vec<(Moments, Moments, Moments)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let share = rollouts / MC_CHUNKS + u64::from(i < rollouts % MC_CHUNKS);
            let (mut dev, mut om, mut om2) = (Moments::default(), Moments::default(), Moments::default());
            for _ in 0..share {
                let mut v = TreeStats { mdp, g: 0.0 };
                let (_, omega) = simulate(mdp, Behavior::Deterministic(policy), &mut rng, &mut v);
                dev.push((v.g - center) * (v.g - center));
                om.push(omega as f64);
                om2.push((omega * omega) as f64);
            }
            (dev, om, om2)
        })
        .collect();
    let mut out = (Moments::default(), Moments::default(), Moments::default());
    for (a, b, c) in &chunks {
        out.0.merge(a);
        out.1.merge(b);
        out.2.merge(c);
    }
    out
}

pub fn check_ltv(mdp: &BranchingMdp, policy: &PolicyTable, mode: LtvMode) -> Result<LtvResult> {
    policy.check(mdp)?;
    let lhs = ltv_lhs(mdp, policy);
    let value = policy_value(mdp, policy).get(1, mdp.initial);
    match mode {
        LtvMode::Exact => {
            let layout = TreeLayout::new(mdp)?;
            let mut mid = 0.0;
            let mut om2 = 0.0;
            enumerate_outcomes(mdp, policy, |prob, states, _| {
                let mut g = 0.0;
                let mut omega = 0usize;
                for (k, &s) in states.iter().enumerate() {
                    if s != mdp.ending {
                        omega += 1;
                        g += node_mean_reward(mdp, s, policy.get(layout.layer[k], s));
                    }
                }
                mid += prob * (g - value) * (g - value);
                om2 += prob * (omega * omega) as f64;
            })?;
            Ok(LtvResult {
                lhs,
                mid,
                rhs_bound: om2,
                mid_stderr: 0.0,
                rhs_stderr: 0.0,
            })
        }
        LtvMode::MonteCarlo { rollouts, seed } => {
            if rollouts < 2 {
                return Err(Error::InvalidParameter("need at least 2 rollouts".into()));
            }
            let (dev, _, om2) = mc_tree_moments(mdp, policy, rollouts, seed, value);
            Ok(LtvResult {
                lhs,
                mid: dev.mean(),
                rhs_bound: om2.mean(),
                mid_stderr: dev.stderr(),
                rhs_stderr: om2.stderr(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriggeredMoments {
    pub mean_omega: f64,
    pub mean_omega_sq: f64,
    pub stderr_omega: f64,
    pub stderr_omega_sq: f64,
    /// `mean_omega <= H + 4 se`.
    pub first_bound: bool,
    /// `mean_omega_sq <= 3 H^2 + 4 se`.
    pub second_bound: bool,
    /// `|mean_omega - H| <= 4 se`, reported when every regular pair has `q = 1/m`.
    pub saturated_equality: Option<bool>,
}

/// Largest `q(s,a) - 1/m` over regular pairs, if positive.
fn trigger_excess(mdp: &BranchingMdp) -> Option<(usize, usize, f64)> {
    let cap = 1.0 / mdp.m as f64;
    let mut worst: Option<(usize, usize, f64)> = None;
    for s in mdp.regular_states() {
        for a in 0..mdp.num_actions {
            let excess = mdp.q(s, a) - cap;
            if excess > crate::model::PROB_TOL && worst.map_or(true, |w| excess > w.2) {
                worst = Some((s, a, excess));
            }
        }
    }
    worst
}

/// Monte-Carlo moments of the number of triggered states. Refuses models that
/// violate the trigger bound unless `force` is set; the bounds are still
/// evaluated (and may fail) in that case.
pub fn check_triggered_moments(
    mdp: &BranchingMdp,
    policy: &PolicyTable,
    rollouts: u64,
    seed: u64,
    force: bool,
) -> Result<TriggeredMoments> {
    policy.check(mdp)?;
    if let Some((s, a, excess)) = trigger_excess(mdp) {
        if !force {
            return Err(Error::AssumptionViolated(format!(
                "q({s},{a}) exceeds 1/m by {excess:.3e}"
            )));
        }
    }
    if rollouts < 2 {
        return Err(Error::InvalidParameter("need at least 2 rollouts".into()));
    }
    let (_, om, om2) = mc_tree_moments(mdp, policy, rollouts, seed, 0.0);
    let h = mdp.horizon as f64;
    let cap = 1.0 / mdp.m as f64;
    let saturated = mdp
        .regular_states()
        .all(|s| (0..mdp.num_actions).all(|a| (mdp.q(s, a) - cap).abs() <= crate::model::PROB_TOL));
    // A constant sample has zero stderr; compare exactly then.
    let band = |se: f64| MC_SIGMAS * se + EXACT_TOL;
    Ok(TriggeredMoments {
        mean_omega: om.mean(),
        mean_omega_sq: om2.mean(),
        stderr_omega: om.stderr(),
        stderr_omega_sq: om2.stderr(),
        first_bound: om.mean() <= h + band(om.stderr()),
        second_bound: om2.mean() <= 3.0 * h * h + band(om2.stderr()),
        saturated_equality: saturated.then(|| (om.mean() - h).abs() <= band(om.stderr())),
    })
}

/// Named check corpora for [`run_preset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Random tiny instances, exact oracles only.
    TinyExact,
    /// The experiment instance, Monte-Carlo checks.
    PaperMc,
    /// Instances with `q > 1/m`, showing `E[omega]` growing with `H`.
    RelaxedWitness,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny-exact" => Ok(Preset::TinyExact),
            "paper-mc" => Ok(Preset::PaperMc),
            "relaxed-witness" => Ok(Preset::RelaxedWitness),
            other => Err(Error::Parse(format!(
                "unknown preset {other:?} (expected tiny-exact, paper-mc or relaxed-witness)"
            ))),
        }
    }
}

fn random_policy(mdp: &BranchingMdp, seed: u64) -> PolicyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PolicyTable::from_fn(mdp.horizon, mdp.num_states, |_, _| {
        mdp.actions.uniform_action(&mut rng).expect("decision class validated nonempty")
    })
}

fn exact_record(name: String, lhs: f64, rhs: f64) -> CheckRecord {
    let gap = (lhs - rhs).abs();
    CheckRecord {
        name,
        lhs,
        rhs,
        gap,
        pass: gap <= EXACT_TOL,
    }
}

/// Records for a single model and policy: value difference against a
/// perturbed copy, the variance identity and bound, and the moment bounds.
pub fn model_report(mdp: &BranchingMdp, policy: &PolicyTable, rollouts: u64, seed: u64) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    let mut other = mdp.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    {
        use rand::Rng;
        let cap = 1.0 / mdp.m as f64;
        for s in mdp.regular_states() {
            for a in 0..mdp.num_actions {
                let k = other.pair(s, a);
                other.q[k] = rng.gen::<f64>() * cap;
            }
        }
    }
    let vd = check_value_difference(mdp, &other, policy)?;
    out.push(exact_record("value-difference".into(), vd.lhs, vd.rhs));
    let mode = if TreeLayout::new(mdp).is_ok() {
        LtvMode::Exact
    } else {
        LtvMode::MonteCarlo { rollouts, seed }
    };
    out.extend(ltv_records("ltv", mdp, policy, mode)?);
    match check_triggered_moments(mdp, policy, rollouts, seed, false) {
        Ok(tm) => out.extend(moment_records("omega", mdp, &tm)),
        Err(Error::AssumptionViolated(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}

fn ltv_records(prefix: &str, mdp: &BranchingMdp, policy: &PolicyTable, mode: LtvMode) -> Result<Vec<CheckRecord>> {
    let r = check_ltv(mdp, policy, mode)?;
    Ok(vec![
        CheckRecord {
            name: format!("{prefix}-equality"),
            lhs: r.lhs,
            rhs: r.mid,
            gap: (r.lhs - r.mid).abs(),
            pass: r.equality_holds(),
        },
        CheckRecord {
            name: format!("{prefix}-bound"),
            lhs: r.mid,
            rhs: r.rhs_bound,
            gap: r.mid - r.rhs_bound,
            pass: r.bound_holds(),
        },
    ])
}

fn moment_records(prefix: &str, mdp: &BranchingMdp, tm: &TriggeredMoments) -> Vec<CheckRecord> {
    let h = mdp.horizon as f64;
    let mut out = vec![
        CheckRecord {
            name: format!("{prefix}-first-moment"),
            lhs: tm.mean_omega,
            rhs: h,
            gap: tm.mean_omega - h,
            pass: tm.first_bound,
        },
        CheckRecord {
            name: format!("{prefix}-second-moment"),
            lhs: tm.mean_omega_sq,
            rhs: 3.0 * h * h,
            gap: tm.mean_omega_sq - 3.0 * h * h,
            pass: tm.second_bound,
        },
    ];
    if let Some(eq) = tm.saturated_equality {
        out.push(CheckRecord {
            name: format!("{prefix}-equals-horizon"),
            lhs: tm.mean_omega,
            rhs: h,
            gap: (tm.mean_omega - h).abs(),
            pass: eq,
        });
    }
    out
}

/// `mdp` with every regular trigger probability set to `1/m`.
pub fn saturated_instance(mdp: &BranchingMdp) -> BranchingMdp {
    let mut out = mdp.clone();
    let cap = 1.0 / mdp.m as f64;
    for s in mdp.regular_states() {
        for a in 0..mdp.num_actions {
            let k = out.pair(s, a);
            out.q[k] = cap;
        }
    }
    out
}

/// Runs a preset corpus. `rollouts` is the Monte-Carlo budget per check.
pub fn run_preset(preset: Preset, rollouts: u64, seed: u64) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    match preset {
        Preset::TinyExact => {
            for i in 0..50u64 {
                let a = instances::random_instance(3, 3, 2, 3, seed ^ (2 * i))?;
                let mut b = instances::random_instance(3, 3, 2, 3, seed ^ (2 * i + 1))?;
                b.r = a.r.clone();
                let pol = random_policy(&a, seed ^ i);
                let vd = check_value_difference(&a, &b, &pol)?;
                out.push(exact_record(format!("value-difference[{i}]"), vd.lhs, vd.rhs));
            }
            for i in 0..50u64 {
                let mdp = instances::random_instance(3, 3, 2, 2, seed ^ i)?;
                let pol = random_policy(&mdp, seed ^ i);
                out.extend(ltv_records(&format!("ltv[{i}]"), &mdp, &pol, LtvMode::Exact)?);
            }
        }
        Preset::PaperMc => {
            let mdp = instances::experiment_instance(10);
            let (_, pol) = optimal_values(&mdp);
            out.extend(ltv_records("ltv", &mdp, &pol, LtvMode::MonteCarlo { rollouts, seed })?);
            let tm = check_triggered_moments(&mdp, &pol, rollouts, seed, false)?;
            out.extend(moment_records("omega", &mdp, &tm));
            let saturated = saturated_instance(&mdp);
            let tm = check_triggered_moments(&saturated, &pol, rollouts, seed, false)?;
            out.extend(moment_records("omega-saturated", &saturated, &tm));
        }
        Preset::RelaxedWitness => {
            let mut means = Vec::new();
            for h in [3usize, 6] {
                let inst = instances::relaxed_instance(0.75, 4, 4, 2, h, 0.1, seed)?;
                let tm = check_triggered_moments(&inst.mdp, &inst.optimal_policy(), rollouts, seed, true)?;
                means.push((h, tm));
            }
            let (lo, hi) = (means[0].1, means[1].1);
            let band = MC_SIGMAS * lo.stderr_omega.hypot(hi.stderr_omega);
            out.push(CheckRecord {
                name: "relaxed-omega-growth".into(),
                lhs: hi.mean_omega,
                rhs: lo.mean_omega,
                gap: hi.mean_omega - lo.mean_omega,
                pass: hi.mean_omega > lo.mean_omega + band,
            });
            for (h, tm) in means {
                out.push(CheckRecord {
                    name: format!("relaxed-first-moment[H={h}]"),
                    lhs: tm.mean_omega,
                    rhs: h as f64,
                    gap: tm.mean_omega - h as f64,
                    pass: tm.mean_omega > h as f64,
                });
            }
        }
    }
    Ok(out)
}
