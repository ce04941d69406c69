//! The branching-MDP data model.
//!
//! States and base actions are dense indices. The ending state is an ordinary
//! index that absorbs, never triggers and pays nothing. Tables are stored
//! row-major: `q[s * N + a]`, `r[s * N + a]`, `p[(s * N + a) * S + s']`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{ActionClass, SuperAction};

/// Absolute tolerance for every stochasticity check.
pub const PROB_TOL: f64 = 1e-12;

/// A time-homogeneous branching MDP with deterministic rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchingMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Super-action size.
    pub m: usize,
    pub horizon: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub ending: usize,
    pub initial: usize,
    pub actions: ActionClass,
    /// When set, `validate` also requires `q <= 1/m` everywhere.
    pub assumption1_enforced: bool,
}

impl BranchingMdp {
    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    #[inline]
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[self.pair(s, a)]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.r[self.pair(s, a)]
    }

    #[inline]
    pub fn p_row(&self, s: usize, a: usize) -> &[f64] {
        let k = self.pair(s, a) * self.num_states;
        &self.p[k..k + self.num_states]
    }

    pub fn is_ending(&self, s: usize) -> bool {
        s == self.ending
    }

    /// All states except the ending state, ascending.
    pub fn regular_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_states).filter(move |&s| s != self.ending)
    }

    /// Same dynamics and structure, different reward table.
    pub fn with_rewards(&self, r: Vec<f64>) -> Result<Self> {
        if r.len() != self.num_states * self.num_actions {
            return Err(Error::InvalidParameter(format!(
                "reward table has {} entries, expected {}",
                r.len(),
                self.num_states * self.num_actions
            )));
        }
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let v = r[s * self.num_actions + a];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::RewardOutOfRange {
                        state: s,
                        action: a,
                        value: v,
                    });
                }
            }
        }
        let mut out = self.clone();
        out.r = r;
        for a in 0..out.num_actions {
            let k = out.pair(out.ending, a);
            out.r[k] = 0.0;
        }
        Ok(out)
    }

    /// Successor law mixing failure mass `1 - q` on the ending state with `q * p`.
    pub fn augmented_next_distribution(&self, s: usize, a: usize) -> Vec<f64> {
        let q = self.q(s, a);
        let mut out: Vec<f64> = self.p_row(s, a).iter().map(|&p| q * p).collect();
        out[self.ending] += 1.0 - q;
        out
    }

    /// `sum_{s'} q(s,a) p(s'|s,a) v[s']`, the triggered continuation mean.
    #[inline]
    pub fn continuation(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let row = self.p_row(s, a);
        self.q(s, a) * row.iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut out = ValidationReport::default();
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 || self.m == 0 || self.horizon == 0 {
            out.push("dims", None, 0.0, "S, N, m and H must all be positive");
            return out;
        }
        if self.q.len() != ns * na || self.r.len() != ns * na || self.p.len() != ns * na * ns {
            out.push("dims", None, 0.0, "table sizes do not match S and N");
            return out;
        }
        if self.ending >= ns || self.initial >= ns {
            out.push("ending/initial", None, 0.0, "state index out of range");
            return out;
        }
        if ns > 1 && self.ending == self.initial {
            out.push("initial", None, 0.0, "initial state coincides with ending state");
        }
        for msg in self.actions.problems(na, self.m) {
            out.push("action_class", None, 0.0, msg);
        }
        let cap = 1.0 / self.m as f64;
        for s in 0..ns {
            for a in 0..na {
                let loc = Some((s, a));
                let q = self.q(s, a);
                let r = self.r(s, a);
                if !(0.0..=1.0).contains(&q) {
                    out.push("q", loc, q, "trigger probability outside [0, 1]");
                }
                if !(0.0..=1.0).contains(&r) {
                    out.push("r", loc, r, "reward outside [0, 1]");
                }
                let row = self.p_row(s, a);
                if let Some(&neg) = row.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
                    out.push("p", loc, neg, "negative or non-finite transition probability");
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    out.push("p", loc, sum, format!("transition row sums to {sum}"));
                }
                if s == self.ending {
                    if q != 0.0 {
                        out.push("q", loc, q, "ending state must have zero trigger probability");
                    }
                    if (row[self.ending] - 1.0).abs() > PROB_TOL {
                        out.push("p", loc, row[self.ending], "ending state must absorb");
                    }
                    if r != 0.0 {
                        out.push("r", loc, r, "ending state must have zero reward");
                    }
                } else if self.assumption1_enforced && q > cap + PROB_TOL {
                    out.push("q", loc, q, format!("q exceeds 1/m = {cap}"));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: String,
    /// `(state, base action)` when the violation is local to a pair.
    pub location: Option<(usize, usize)>,
    pub magnitude: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((s, a)) => write!(
                f,
                "{} at (s={s}, a={a}): {} [value {}]",
                self.field, self.message, self.magnitude
            ),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(
        &mut self,
        field: &str,
        location: Option<(usize, usize)>,
        magnitude: f64,
        message: impl Into<String>,
    ) {
        self.violations.push(Violation {
            field: field.into(),
            location,
            magnitude,
            message: message.into(),
        });
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Position of a node in the trajectory tree: the root is the empty string,
/// child `i` (1-based) of `sigma` is `sigma` followed by `i`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIndex(Vec<u16>);

impl NodeIndex {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn digits(&self) -> &[u16] {
        &self.0
    }

    /// The step this node sits at; the root is at step 1.
    pub fn layer(&self) -> usize {
        self.0.len() + 1
    }

    pub fn child(&self, i: usize, m: usize, horizon: usize) -> Result<Self> {
        if i == 0 || i > m {
            return Err(Error::NodeDigit { digit: i, m });
        }
        if self.layer() >= horizon {
            return Err(Error::NodeDepth {
                layer: self.layer(),
                horizon,
            });
        }
        let mut d = self.0.clone();
        d.push(i as u16);
        Ok(Self(d))
    }
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<")?;
        for (k, d) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ">")
    }
}

/// A deterministic policy: one super action per `(step, state)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyTable {
    num_states: usize,
    horizon: usize,
    choice: Vec<SuperAction>,
}

impl PolicyTable {
    /// Every entry set to `action`.
    pub fn constant(horizon: usize, num_states: usize, action: SuperAction) -> Self {
        Self {
            num_states,
            horizon,
            choice: vec![action; horizon * num_states],
        }
    }

    pub fn from_fn(
        horizon: usize,
        num_states: usize,
        mut f: impl FnMut(usize, usize) -> SuperAction,
    ) -> Self {
        let mut choice = Vec::with_capacity(horizon * num_states);
        for h in 1..=horizon {
            for s in 0..num_states {
                choice.push(f(h, s));
            }
        }
        Self {
            num_states,
            horizon,
            choice,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Action at step `h` (1-based) in state `s`.
    #[inline]
    pub fn get(&self, h: usize, s: usize) -> &SuperAction {
        &self.choice[(h - 1) * self.num_states + s]
    }

    pub fn set(&mut self, h: usize, s: usize, action: SuperAction) {
        self.choice[(h - 1) * self.num_states + s] = action;
    }

    /// Checks shape and class membership against `mdp`.
    pub fn check(&self, mdp: &BranchingMdp) -> Result<()> {
        if self.horizon != mdp.horizon || self.num_states != mdp.num_states {
            return Err(Error::InvalidPolicy(format!(
                "policy shape (H={}, S={}) does not match model (H={}, S={})",
                self.horizon, self.num_states, mdp.horizon, mdp.num_states
            )));
        }
        for h in 1..=self.horizon {
            for s in 0..self.num_states {
                let a = self.get(h, s);
                if !mdp.actions.contains(a) {
                    return Err(Error::InvalidPolicy(format!(
                        "action {a} at (h={h}, s={s}) is not in the decision class"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PolicyFile {
            horizon: self.horizon,
            num_states: self.num_states,
            choice: self
                .choice
                .chunks(self.num_states)
                .map(|row| row.to_vec())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.choice.len() != file.horizon
            || file.choice.iter().any(|row| row.len() != file.num_states)
        {
            return Err(Error::Parse("policy table shape does not match H and S".into()));
        }
        Ok(Self {
            num_states: file.num_states,
            horizon: file.horizon,
            choice: file.choice.into_iter().flatten().collect(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    #[serde(rename = "H")]
    horizon: usize,
    #[serde(rename = "S")]
    num_states: usize,
    choice: Vec<Vec<SuperAction>>,
}

/// Per-step, per-state values for steps `1..=H+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    num_states: usize,
    horizon: usize,
    v: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(horizon: usize, num_states: usize) -> Self {
        Self {
            num_states,
            horizon,
            v: vec![0.0; (horizon + 1) * num_states],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.v[(h - 1) * self.num_states + s]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, x: f64) {
        self.v[(h - 1) * self.num_states + s] = x;
    }

    /// Values of every state at step `h`.
    #[inline]
    pub fn step(&self, h: usize) -> &[f64] {
        let k = (h - 1) * self.num_states;
        &self.v[k..k + self.num_states]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ActionClassFile {
    TopM,
    Partition { blocks: Vec<Vec<usize>> },
    Explicit { actions: Vec<Vec<usize>> },
}

/// On-disk layout of a model.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "N")]
    num_actions: usize,
    m: usize,
    #[serde(rename = "H")]
    horizon: usize,
    ending: usize,
    initial: usize,
    q: Vec<Vec<f64>>,
    p: Vec<Vec<Vec<f64>>>,
    r: Vec<Vec<f64>>,
    action_class: ActionClassFile,
    assumption1_enforced: bool,
}

impl From<&BranchingMdp> for ModelFile {
    fn from(m: &BranchingMdp) -> Self {
        let (ns, na) = (m.num_states, m.num_actions);
        let action_class = match &m.actions {
            ActionClass::TopM { .. } => ActionClassFile::TopM,
            ActionClass::Partition { blocks } => ActionClassFile::Partition {
                blocks: blocks.iter().map(|b| b.members().to_vec()).collect(),
            },
            ActionClass::Explicit { actions } => ActionClassFile::Explicit {
                actions: actions.iter().map(|b| b.members().to_vec()).collect(),
            },
        };
        ModelFile {
            num_states: ns,
            num_actions: na,
            m: m.m,
            horizon: m.horizon,
            ending: m.ending,
            initial: m.initial,
            q: m.q.chunks(na).map(|c| c.to_vec()).collect(),
            p: (0..ns)
                .map(|s| (0..na).map(|a| m.p_row(s, a).to_vec()).collect())
                .collect(),
            r: m.r.chunks(na).map(|c| c.to_vec()).collect(),
            action_class,
            assumption1_enforced: m.assumption1_enforced,
        }
    }
}

impl TryFrom<ModelFile> for BranchingMdp {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let (ns, na) = (f.num_states, f.num_actions);
        let shape_err = |what: &str| Error::Parse(format!("{what} does not have shape implied by S={ns}, N={na}"));
        if f.q.len() != ns || f.q.iter().any(|row| row.len() != na) {
            return Err(shape_err("q"));
        }
        if f.r.len() != ns || f.r.iter().any(|row| row.len() != na) {
            return Err(shape_err("r"));
        }
        if f.p.len() != ns
            || f
                .p
                .iter()
                .any(|rows| rows.len() != na || rows.iter().any(|row| row.len() != ns))
        {
            return Err(shape_err("p"));
        }
        let to_sa = |v: Vec<usize>| SuperAction::new(v).map_err(|e| Error::Parse(e.to_string()));
        let actions = match f.action_class {
            ActionClassFile::TopM => ActionClass::TopM { n: na, m: f.m },
            ActionClassFile::Partition { blocks } => ActionClass::Partition {
                blocks: blocks.into_iter().map(to_sa).collect::<Result<_>>()?,
            },
            ActionClassFile::Explicit { actions } => ActionClass::Explicit {
                actions: actions.into_iter().map(to_sa).collect::<Result<_>>()?,
            },
        };
        Ok(BranchingMdp {
            num_states: ns,
            num_actions: na,
            m: f.m,
            horizon: f.horizon,
            q: f.q.into_iter().flatten().collect(),
            p: f.p.into_iter().flatten().flatten().collect(),
            r: f.r.into_iter().flatten().collect(),
            ending: f.ending,
            initial: f.initial,
            actions,
            assumption1_enforced: f.assumption1_enforced,
        })
    }
}

/// Reads a reward table file: `{"r": [[...], ...]}` with shape `S x N`.
pub fn load_reward_table(path: impl AsRef<Path>, num_states: usize, num_actions: usize) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct RewardFile {
        r: Vec<Vec<f64>>,
    }
    let file: RewardFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.r.len() != num_states || file.r.iter().any(|row| row.len() != num_actions) {
        return Err(Error::Parse(format!(
            "reward table must have shape {num_states} x {num_actions}"
        )));
    }
    Ok(file.r.into_iter().flatten().collect())
}

pub fn reward_table_json(r: &[f64], num_actions: usize) -> Result<String> {
    let rows: Vec<Vec<f64>> = r.chunks(num_actions).map(|c| c.to_vec()).collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({ "r": rows }))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// S = 3 with ending 0; q = 0.5 everywhere regular, p uniform over {1, 2}.
    fn small(q: f64) -> BranchingMdp {
        let (ns, na) = (3, 2);
        let mut p = vec![0.0; ns * na * ns];
        let mut qv = vec![q; ns * na];
        let mut r = vec![1.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let k = (s * na + a) * ns;
                if s == 0 {
                    p[k] = 1.0;
                    qv[s * na + a] = 0.0;
                    r[s * na + a] = 0.0;
                } else {
                    p[k + 1] = 0.5;
                    p[k + 2] = 0.5;
                }
            }
        }
        BranchingMdp {
            num_states: ns,
            num_actions: na,
            m: 2,
            horizon: 2,
            q: qv,
            p,
            r,
            ending: 0,
            initial: 1,
            actions: ActionClass::TopM { n: 2, m: 2 },
            assumption1_enforced: true,
        }
    }

    #[test]
    fn augmented_distribution_formula() {
        let m = small(0.5);
        assert_eq!(m.augmented_next_distribution(1, 0), vec![0.5, 0.25, 0.25]);
        assert_eq!(m.augmented_next_distribution(0, 1), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn validate_flags_trigger_cap() {
        let mut m = small(0.5);
        assert!(m.validate().is_clean());
        let k = m.pair(1, 0);
        m.q[k] = 0.6;
        let rep = m.validate();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].location, Some((1, 0)));
        assert!(rep.violations[0].message.contains("q exceeds 1/m"));
        m.assumption1_enforced = false;
        assert!(m.validate().is_clean());
    }

    #[test]
    fn validate_flags_bad_row() {
        let mut m = small(0.5);
        let k = m.pair(2, 1) * 3;
        m.p[k + 1] = 0.4;
        let rep = m.validate();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].location, Some((2, 1)));
        assert!((rep.violations[0].magnitude - 0.9).abs() < 1e-12);
    }

    #[test]
    fn validate_flags_ending_and_reward() {
        let mut m = small(0.5);
        let k = m.pair(0, 0);
        m.r[k] = 0.5;
        let k = m.pair(1, 1);
        m.r[k] = 1.5;
        let rep = m.validate();
        assert_eq!(rep.violations.len(), 2);
        let mut m = small(0.5);
        m.initial = 0;
        assert_eq!(m.validate().violations.len(), 1);
    }

    #[test]
    fn node_children() {
        let root = NodeIndex::root();
        assert_eq!(root.layer(), 1);
        let c = root.child(2, 2, 3).unwrap();
        assert_eq!(c.digits(), &[2]);
        assert_eq!(c.layer(), 2);
        let c = c.child(1, 2, 3).unwrap();
        assert_eq!(c.layer(), 3);
        assert_eq!(c.to_string(), "<2,1>");
        assert!(matches!(c.child(1, 2, 3), Err(Error::NodeDepth { .. })));
        assert!(matches!(root.child(3, 2, 3), Err(Error::NodeDigit { .. })));
        assert!(matches!(root.child(0, 2, 3), Err(Error::NodeDigit { .. })));
    }

    #[test]
    fn model_file_round_trip() {
        let mut m = small(1.0 / 3.0);
        let k = m.pair(2, 0);
        m.r[k] = 0.1 + 0.2;
        let back = BranchingMdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);

        m.actions = ActionClass::Explicit {
            actions: vec![SuperAction::new(vec![0, 1]).unwrap()],
        };
        let back = BranchingMdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn model_file_shape_errors() {
        let m = small(0.5);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["q"] = serde_json::json!([[0.5]]);
        assert!(matches!(
            BranchingMdp::from_json(&v.to_string()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(BranchingMdp::from_json("{\"S\": 3,"), Err(Error::Json(_))));
    }

    #[test]
    fn policy_file_round_trip() {
        let a = SuperAction::new(vec![0, 1]).unwrap();
        let pol = PolicyTable::constant(2, 3, a);
        let back = PolicyTable::from_json(&pol.to_json().unwrap()).unwrap();
        assert_eq!(back, pol);
        assert!(pol.check(&small(0.5)).is_ok());
        let bad = PolicyTable::constant(2, 3, SuperAction::new(vec![0]).unwrap());
        assert!(bad.check(&small(0.5)).is_err());
    }
}
