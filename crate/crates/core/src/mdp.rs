//! Finite-horizon tabular MDPs with exact dynamic-programming oracles,
//! seeded Monte-Carlo rollouts, and exact visitation distributions.
//!
//! Steps are 1-based: h runs over 1..=H and the convention Q_{H+1} = 0
//! closes the backward recursion. All values are immutable after
//! construction and safe to share across threads.

use crate::seeding::sample_categorical;
use crate::{Error, Result};
use rand::Rng;
use serde::Deserialize;
use std::fmt::Write as _;

const SIMPLEX_TOL: f64 = 1e-12;

/// Initial-state condition: a fixed state or a distribution over states.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Initial {
    Fixed(usize),
    Distribution(Vec<f64>),
}

/// Finite-horizon MDP with per-step transitions and rewards, plus a per-step
/// anchor pair whose reward is exactly zero.
///
/// Constructing through [`TabularMdp::new`] validates every invariant; the
/// fields are public for read access and direct construction in tests, which
/// bypasses validation.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TabularMdp {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// transitions[h-1][s][a][s'], each row a distribution over s'.
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// rewards[h-1][s][a] in [0,1].
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub initial: Initial,
    /// anchor[h-1] = (s_f, a_f) with rewards[h-1][s_f][a_f] == 0.
    pub anchor: Vec<(usize, usize)>,
}

impl TabularMdp {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        rewards: Vec<Vec<Vec<f64>>>,
        initial: Initial,
        anchor: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            horizon,
            num_states,
            num_actions,
            transitions,
            rewards,
            initial,
            anchor,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (hh, ss, aa) = (self.horizon, self.num_states, self.num_actions);
        if hh == 0 || ss == 0 || aa == 0 {
            return Err(Error::Dimension {
                context: "mdp",
                detail: format!("horizon {hh}, states {ss}, actions {aa} must be positive"),
            });
        }
        if self.transitions.len() != hh || self.rewards.len() != hh || self.anchor.len() != hh {
            return Err(Error::Dimension {
                context: "mdp",
                detail: format!(
                    "per-step tables have lengths {}, {}, {}, expected horizon {hh}",
                    self.transitions.len(),
                    self.rewards.len(),
                    self.anchor.len()
                ),
            });
        }
        for h in 1..=hh {
            let p = &self.transitions[h - 1];
            let r = &self.rewards[h - 1];
            if p.len() != ss || r.len() != ss {
                return Err(Error::StepDimension {
                    h,
                    context: "mdp",
                    detail: format!("state dimension {} or {}, expected {ss}", p.len(), r.len()),
                });
            }
            for s in 0..ss {
                if p[s].len() != aa || r[s].len() != aa {
                    return Err(Error::StepDimension {
                        h,
                        context: "mdp",
                        detail: format!(
                            "action dimension {} or {} at state {s}, expected {aa}",
                            p[s].len(),
                            r[s].len()
                        ),
                    });
                }
                for a in 0..aa {
                    let row = &p[s][a];
                    if row.len() != ss {
                        return Err(Error::StepDimension {
                            h,
                            context: "mdp",
                            detail: format!("successor dimension {} at ({s},{a})", row.len()),
                        });
                    }
                    for (sp, &v) in row.iter().enumerate() {
                        if v < 0.0 || !v.is_finite() {
                            return Err(Error::NegativeTransition { h, s, a, sp });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::BadTransitionRow { h, s, a, sum });
                    }
                    let rv = r[s][a];
                    if !(0.0..=1.0).contains(&rv) || !rv.is_finite() {
                        return Err(Error::RewardOutOfRange { h, s, a, value: rv });
                    }
                }
            }
            let (sf, af) = self.anchor[h - 1];
            if sf >= ss || af >= aa {
                return Err(Error::StepDimension {
                    h,
                    context: "anchor",
                    detail: format!("({sf},{af}) outside {ss}x{aa}"),
                });
            }
            if r[sf][af] != 0.0 {
                return Err(Error::AnchorRewardNonzero {
                    h,
                    value: r[sf][af],
                });
            }
        }
        match &self.initial {
            Initial::Fixed(s0) => {
                if *s0 >= ss {
                    return Err(Error::Dimension {
                        context: "initial state",
                        detail: format!("{s0} outside 0..{ss}"),
                    });
                }
            }
            Initial::Distribution(xi) => validate_distribution(xi, ss)?,
        }
        Ok(())
    }

    /// Initial distribution over states; a fixed state becomes a point mass.
    pub fn initial_distribution(&self) -> Vec<f64> {
        match &self.initial {
            Initial::Fixed(s0) => {
                let mut xi = vec![0.0; self.num_states];
                xi[*s0] = 1.0;
                xi
            }
            Initial::Distribution(xi) => xi.clone(),
        }
    }

    /// r_h(s,a). `h` is 1-based.
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[h - 1][s][a]
    }

    /// P_h(.|s,a). `h` is 1-based.
    pub fn transition(&self, h: usize, s: usize, a: usize) -> &[f64] {
        &self.transitions[h - 1][s][a]
    }

    /// (s_f, a_f) at step h.
    pub fn anchor_pair(&self, h: usize) -> (usize, usize) {
        self.anchor[h - 1]
    }

    /// Serializes to the documented JSON schema with floats at 17 significant
    /// digits, enough to round-trip every f64 bit pattern.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push('{');
        write!(
            out,
            "\"horizon\":{},\"num_states\":{},\"num_actions\":{}",
            self.horizon, self.num_states, self.num_actions
        )
        .unwrap();
        out.push_str(",\"transitions\":");
        write_nested4(&mut out, &self.transitions);
        out.push_str(",\"rewards\":");
        write_nested3(&mut out, &self.rewards);
        out.push_str(",\"initial\":");
        match &self.initial {
            Initial::Fixed(s0) => write!(out, "{s0}").unwrap(),
            Initial::Distribution(xi) => write_vec(&mut out, xi),
        }
        out.push_str(",\"anchor\":[");
        for (i, (s, a)) in self.anchor.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "[{s},{a}]").unwrap();
        }
        out.push_str("]}");
        out
    }

    /// Parses and validates the JSON schema produced by [`TabularMdp::to_json`].
    pub fn from_json(s: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(s)?;
        mdp.validate()?;
        Ok(mdp)
    }
}

fn validate_distribution(p: &[f64], expected_len: usize) -> Result<()> {
    if p.len() != expected_len {
        return Err(Error::Dimension {
            context: "distribution",
            detail: format!("length {}, expected {expected_len}", p.len()),
        });
    }
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "distribution entries",
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::BadDistribution { sum });
    }
    Ok(())
}

fn write_float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn write_vec(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_float(out, *x);
    }
    out.push(']');
}

fn write_nested3(out: &mut String, v: &[Vec<Vec<f64>>]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, y) in x.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write_vec(out, y);
        }
        out.push(']');
    }
    out.push(']');
}

fn write_nested4(out: &mut String, v: &[Vec<Vec<Vec<f64>>>]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_nested3(out, x);
    }
    out.push(']');
}

/// Per-step tabular policy: probs[h-1][s] is a distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl Policy {
    pub fn from_table(probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let horizon = probs.len();
        if horizon == 0 {
            return Err(Error::Empty {
                what: "policy table",
            });
        }
        let num_states = probs[0].len();
        if num_states == 0 {
            return Err(Error::Empty {
                what: "policy state dimension",
            });
        }
        let num_actions = probs[0][0].len();
        for (hi, step) in probs.iter().enumerate() {
            let h = hi + 1;
            if step.len() != num_states {
                return Err(Error::StepDimension {
                    h,
                    context: "policy",
                    detail: format!("state dimension {}, expected {num_states}", step.len()),
                });
            }
            for (s, row) in step.iter().enumerate() {
                if row.len() != num_actions {
                    return Err(Error::StepDimension {
                        h,
                        context: "policy",
                        detail: format!("action dimension {} at state {s}", row.len()),
                    });
                }
                if row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: "policy probabilities",
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::BadPolicyRow { h, s, sum });
                }
            }
        }
        Ok(Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Policy {
            horizon,
            num_states,
            num_actions,
            probs: vec![vec![vec![p; num_actions]; num_states]; horizon],
        }
    }

    /// Seeded random stochastic policy: softmax of uniform logits per row,
    /// with the row sum corrected to land exactly on 1.
    pub fn seeded_random(horizon: usize, num_states: usize, num_actions: usize, seed: u64) -> Self {
        let mut rng = crate::seeding::rng_for(seed, "random-policy");
        let probs = (0..horizon)
            .map(|_| {
                (0..num_states)
                    .map(|_| {
                        let mut row: Vec<f64> = (0..num_actions)
                            .map(|_| (rng.random::<f64>() * 2.0).exp())
                            .collect();
                        let sum: f64 = row.iter().sum();
                        for v in &mut row {
                            *v /= sum;
                        }
                        let s2: f64 = row.iter().sum();
                        row[num_actions - 1] += 1.0 - s2;
                        row
                    })
                    .collect()
            })
            .collect();
        Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    /// Deterministic policy from a choice table: choices[h-1][s] = action.
    pub fn deterministic(num_actions: usize, choices: Vec<Vec<usize>>) -> Self {
        let horizon = choices.len();
        let num_states = choices[0].len();
        let probs = choices
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&a| {
                        let mut p = vec![0.0; num_actions];
                        p[a] = 1.0;
                        p
                    })
                    .collect()
            })
            .collect();
        Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    /// pi_h(.|s). `h` is 1-based.
    pub fn action_distribution(&self, h: usize, s: usize) -> &[f64] {
        &self.probs[h - 1][s]
    }
}

/// One sampled transition: (h, s_h, a_h, r_h, s_{h+1}).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub h: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A length-H episode. Consecutive states chain: steps[i].next_state ==
/// steps[i+1].state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|t| t.reward).sum()
    }
}

pub fn check_compatible(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    if policy.horizon != mdp.horizon {
        return Err(Error::Dimension {
            context: "policy horizon",
            detail: format!("{} vs mdp {}", policy.horizon, mdp.horizon),
        });
    }
    for h in 1..=mdp.horizon {
        if policy.probs[h - 1].len() != mdp.num_states
            || policy.probs[h - 1][0].len() != mdp.num_actions
        {
            return Err(Error::StepDimension {
                h,
                context: "policy",
                detail: format!(
                    "{}x{} vs mdp {}x{}",
                    policy.probs[h - 1].len(),
                    policy.probs[h - 1][0].len(),
                    mdp.num_states,
                    mdp.num_actions
                ),
            });
        }
    }
    Ok(())
}

/// Exact Q_h(s,a) for all steps by backward recursion:
/// Q_H = r_H and Q_h = r_h + sum_{s'} P_h(s'|s,a) sum_{a'} pi_{h+1}(a'|s') Q_{h+1}(s',a').
/// Returned as tables[h-1][s][a].
pub fn exact_q_function(mdp: &TabularMdp, policy: &Policy) -> Result<Vec<Vec<Vec<f64>>>> {
    check_compatible(mdp, policy)?;
    let (hh, ss, aa) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut q = vec![vec![vec![0.0; aa]; ss]; hh];
    for h in (1..=hh).rev() {
        for s in 0..ss {
            for a in 0..aa {
                let mut v = mdp.reward(h, s, a);
                if h < hh {
                    let row = mdp.transition(h, s, a);
                    for sp in 0..ss {
                        if row[sp] == 0.0 {
                            continue;
                        }
                        let pi = policy.action_distribution(h + 1, sp);
                        let mut vnext = 0.0;
                        for ap in 0..aa {
                            vnext += pi[ap] * q[h][sp][ap];
                        }
                        v += row[sp] * vnext;
                    }
                }
                q[h - 1][s][a] = v;
            }
        }
    }
    Ok(q)
}

/// v^pi = E[sum_h r_h] with s_1 ~ xi, computed by exact dynamic programming.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    let q = exact_q_function(mdp, policy)?;
    let xi = mdp.initial_distribution();
    let mut v = 0.0;
    for s in 0..mdp.num_states {
        if xi[s] == 0.0 {
            continue;
        }
        let pi = policy.action_distribution(1, s);
        for a in 0..mdp.num_actions {
            v += xi[s] * pi[a] * q[0][s][a];
        }
    }
    Ok(v)
}

/// Samples one episode. Consumes one uniform variate per categorical draw,
/// so a fixed seed yields a fixed trajectory.
pub fn rollout<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Trajectory {
    let xi = mdp.initial_distribution();
    let mut s = sample_categorical(&xi, rng);
    let mut steps = Vec::with_capacity(mdp.horizon);
    for h in 1..=mdp.horizon {
        let a = sample_categorical(policy.action_distribution(h, s), rng);
        let r = mdp.reward(h, s, a);
        let sp = sample_categorical(mdp.transition(h, s, a), rng);
        steps.push(TrajectoryStep {
            h,
            state: s,
            action: a,
            reward: r,
            next_state: sp,
        });
        s = sp;
    }
    Trajectory { steps }
}

/// Exact state-action occupancy q_h(s,a) under `policy`, by forward
/// propagation of the state marginal. Returned as table[s][a]; sums to 1.
pub fn visitation_distribution(
    mdp: &TabularMdp,
    policy: &Policy,
    h: usize,
) -> Result<Vec<Vec<f64>>> {
    check_compatible(mdp, policy)?;
    if h == 0 || h > mdp.horizon {
        return Err(Error::StepOutOfRange {
            h,
            horizon: mdp.horizon,
        });
    }
    let (ss, aa) = (mdp.num_states, mdp.num_actions);
    let mut d = mdp.initial_distribution();
    for t in 1..h {
        let mut next = vec![0.0; ss];
        for s in 0..ss {
            if d[s] == 0.0 {
                continue;
            }
            let pi = policy.action_distribution(t, s);
            for a in 0..aa {
                if pi[a] == 0.0 {
                    continue;
                }
                let row = mdp.transition(t, s, a);
                let w = d[s] * pi[a];
                for sp in 0..ss {
                    next[sp] += w * row[sp];
                }
            }
        }
        d = next;
    }
    let mut q = vec![vec![0.0; aa]; ss];
    for s in 0..ss {
        let pi = policy.action_distribution(h, s);
        for a in 0..aa {
            q[s][a] = d[s] * pi[a];
        }
    }
    Ok(q)
}
