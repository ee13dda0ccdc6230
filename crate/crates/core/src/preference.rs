//! Softmax choice model over candidate rewards: the probability of picking
//! candidate i among M offered pairs is exp(r_i) / sum_j exp(r_j).
//!
//! The pipeline uses M = 3 with the zero-reward anchor always in slot 2, but
//! everything here is generic in M. All log-sum-exp computations subtract the
//! max first, which also makes the outputs exactly invariant under a common
//! shift of the rewards whenever the shifted inputs are exactly representable.

use crate::seeding::sample_categorical;
use crate::{Error, Result};
use rand::Rng;

/// A distribution over the M offered candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProbabilities(Vec<f64>);

impl ChoiceProbabilities {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax of the candidate rewards, computed with max subtraction.
pub fn choice_probabilities(rewards: &[f64]) -> Result<ChoiceProbabilities> {
    if rewards.is_empty() {
        return Err(Error::Empty {
            what: "candidate rewards",
        });
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite {
            context: "candidate rewards",
        });
    }
    let m = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards.iter().map(|r| (r - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(ChoiceProbabilities(
        exps.into_iter().map(|e| e / z).collect(),
    ))
}

/// Inverse-CDF draw of a candidate index; one uniform variate per call.
pub fn sample_choice<R: Rng + ?Sized>(probs: &ChoiceProbabilities, rng: &mut R) -> usize {
    sample_categorical(&probs.0, rng)
}

/// -log P(label | rewards): log-sum-exp of the rewards minus the chosen one.
pub fn nll_term(rewards: &[f64], label: usize) -> f64 {
    debug_assert!(label < rewards.len());
    let m = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = rewards.iter().map(|r| (r - m).exp()).sum();
    m + z.ln() - rewards[label]
}

/// Gradient of [`nll_term`] in the reward values: p_i - 1{i == label}.
pub fn nll_term_gradient(rewards: &[f64], label: usize) -> Vec<f64> {
    let probs = choice_probabilities(rewards).expect("finite rewards");
    let mut g = probs.0;
    g[label] -= 1.0;
    g
}

/// Total negative log-likelihood of a slice of labeled candidate-reward
/// tuples: sum over samples of -[r_y - log sum_j exp r_j].
pub fn negative_log_likelihood(samples: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (rewards, label) in samples {
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite {
                context: "candidate rewards",
            });
        }
        total += nll_term(rewards, *label);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "negative log-likelihood",
        });
    }
    Ok(total)
}
